use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dds_core::dataset::{
    average_annotation_map, histogram, object_stats, split, DatasetManifest, ManifestRecord, Split,
};
use dds_core::equirect::{canonicalize_image, synth_scene, BinaryMask, Resolution, SaliencyMap, SceneSpec};
use dds_core::io::{read_image, read_mask, write_image, write_mask, write_saliency};
use dds_core::metrics::{aggregate, evaluate_image, ImageMetrics};
use dds_core::network::{Checkpoint, DdsNetwork};
use dds_core::supervision::train;
use dds_core::{DdsError, Result};

use crate::config::{CheckpointInfo, Cli, Command, FileConfig, RunConfig, SplitChoice};
use crate::error::CliResult;

pub fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let checkpoint = match &cli.command {
        Command::Eval(a) => Some(Checkpoint::load(&a.checkpoint)?),
        Command::Predict(a) => Some(Checkpoint::load(&a.checkpoint)?),
        _ => None,
    };
    let info = checkpoint.as_ref().map(|c| CheckpointInfo {
        profile: c.network.config.profile,
        blocks: c.network.config.blocks,
    });
    let run = RunConfig::resolve(&cli, &file, info)?;
    run.save()?;
    match cli.command {
        Command::Synth(_) => synth(&run)?,
        Command::Train(_) => train_cmd(&run)?,
        Command::Eval(_) => eval(&run, &checkpoint.expect("loaded above").network)?,
        Command::Predict(_) => predict(&run, &checkpoint.expect("loaded above").network)?,
        Command::Stats(_) => stats(&run)?,
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| DdsError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| DdsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    m.validate()?;
    Ok(m)
}

/// Scene `i` of a dataset drawn with `seed`.
fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(i as u64)
}

fn synth(run: &RunConfig) -> Result<()> {
    let opts = run.synth.as_ref().expect("resolved for synth");
    let spec = SceneSpec::default().with_resolution(opts.resolution.0);
    let mut records = Vec::with_capacity(opts.count);
    for i in 0..opts.count {
        let (image, mask) = synth_scene(scene_seed(run.seed, i), &spec)?;
        let image_rel = PathBuf::from(format!("images/{i:04}.png"));
        let mask_rel = PathBuf::from(format!("masks/{i:04}.png"));
        write_image(&run.out.join(&image_rel), &image)?;
        write_mask(&run.out.join(&mask_rel), &mask)?;
        records.push(ManifestRecord {
            image: image_rel,
            mask: mask_rel,
            split: None,
            source: "synthetic".into(),
        });
        eprintln!("synth: {}/{}", i + 1, opts.count);
    }
    let mut manifest = DatasetManifest::new(records, &run.out);
    if opts.count >= 2 {
        manifest = split(&manifest, opts.split_ratio, run.seed)?;
    }
    manifest.save(&run.out.join("manifest.json"))?;
    println!("{} pairs written to {}", opts.count, run.out.display());
    Ok(())
}

/// Records of `choice`. A manifest without split tags counts as all-train.
fn select(manifest: &DatasetManifest, choice: SplitChoice) -> Vec<&ManifestRecord> {
    let tagged = manifest.records.iter().any(|r| r.split.is_some());
    manifest
        .records
        .iter()
        .filter(|r| match choice {
            SplitChoice::All => true,
            SplitChoice::Train if !tagged => true,
            SplitChoice::Train => r.split == Some(Split::Train),
            SplitChoice::Test => r.split == Some(Split::Test),
        })
        .collect()
}

fn train_cmd(run: &RunConfig) -> Result<()> {
    let opts = run.train.as_ref().expect("resolved for train");
    let cfg = &opts.config;
    let manifest = load_manifest(&opts.manifest)?;
    let samples = select(&manifest, SplitChoice::Train)
        .into_iter()
        .map(|r| manifest.load_sample(r, cfg.input))
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(DdsError::Data(format!("{} has no training records", opts.manifest.display())));
    }
    eprintln!(
        "train: {} images at {}, {} iterations, profile {}",
        samples.len(),
        cfg.input,
        cfg.iterations,
        cfg.network.profile
    );
    let every = opts.log_every;
    let outcome = train(cfg, &samples, Some(&run.out), &mut |row| {
        if (row.iteration + 1) % every == 0 || row.iteration == 0 {
            eprintln!(
                "iter {:>6}  loss {:>10.4}  side1 {:>10.4}  lr {:.3e}",
                row.iteration + 1,
                row.losses.total,
                row.losses.sides[0],
                row.lr
            );
        }
    })?;
    let last = outcome.curve.last().map(|r| r.losses.total).unwrap_or(f64::NAN);
    println!("final loss {last:.4}; checkpoint {}", run.out.join("final.ckpt").display());
    Ok(())
}

/// Saliency map at the image's own size, with the network run at `input`.
fn infer(network: &DdsNetwork, image_path: &Path, input: Resolution) -> Result<SaliencyMap> {
    let image = read_image(image_path)?;
    let out = network.forward(&canonicalize_image(&image, input)?)?;
    Ok(out.final_map.resize_bilinear(image.height(), image.width()))
}

fn eval(run: &RunConfig, network: &DdsNetwork) -> Result<()> {
    let opts = run.eval.as_ref().expect("resolved for eval");
    let manifest = load_manifest(&opts.manifest)?;
    let records = select(&manifest, opts.split);
    let mut results: Vec<(String, Result<ImageMetrics>)> = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let gt = read_mask(&manifest.resolve(&r.mask))?;
        let pred = infer(network, &manifest.resolve(&r.image), opts.resolution.0)?;
        results.push((stem(&r.image), evaluate_image(&pred, &gt)));
        eprintln!("eval: {}/{}", i + 1, records.len());
    }
    let report = aggregate(results, opts.aggregation)?;
    let table = report.table(&format!("DDS ({})", run.profile));
    write_text(&run.out.join("metrics.txt"), &table)?;
    write_text(&run.out.join("metrics.csv"), &report.csv())?;
    print!("{table}");
    Ok(())
}

fn predict(run: &RunConfig, network: &DdsNetwork) -> Result<()> {
    let opts = run.predict.as_ref().expect("resolved for predict");
    let map = infer(network, &opts.image, opts.resolution.0)?;
    write_saliency(&opts.output, &map)?;
    println!("{}", opts.output.display());
    Ok(())
}

/// Bar chart of `counts`, one 16-pixel column per bin, tallest bar full height.
fn render_histogram(counts: &[usize]) -> BinaryMask {
    const BAR: usize = 16;
    const HEIGHT: usize = 100;
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let bars: Vec<usize> = counts.iter().map(|&c| (c * HEIGHT).div_ceil(max)).collect();
    BinaryMask::from_fn(HEIGHT, BAR * counts.len().max(1), |y, x| {
        let bin = x / BAR;
        bin < bars.len() && x % BAR != BAR - 1 && HEIGHT - y <= bars[bin]
    })
}

fn histogram_rows(out: &mut String, name: &str, edges: &[f64], counts: &[usize]) {
    for (i, c) in counts.iter().enumerate() {
        writeln!(out, "{name},{},{},{c}", edges[i], edges[i + 1]).unwrap();
    }
}

fn stats(run: &RunConfig) -> Result<()> {
    let opts = run.stats.as_ref().expect("resolved for stats");
    let manifest = load_manifest(&opts.manifest)?;
    let masks = manifest
        .records
        .iter()
        .map(|r| read_mask(&manifest.resolve(&r.mask)))
        .collect::<Result<Vec<_>>>()?;
    let aam = average_annotation_map(&masks, opts.resolution.0)?;
    write_saliency(&run.out.join("aam.png"), &aam)?;

    let mut objects = String::from("image,objects,area_fractions\n");
    let mut counts = Vec::with_capacity(masks.len());
    let mut areas = Vec::new();
    for (r, mask) in manifest.records.iter().zip(&masks) {
        let s = object_stats(mask);
        let fractions: Vec<String> = s.area_fractions.iter().map(f64::to_string).collect();
        writeln!(objects, "{},{},{}", stem(&r.mask), s.count, fractions.join(";")).unwrap();
        counts.push(s.count as f64);
        areas.extend(s.area_fractions);
    }
    let count_hist = histogram(&counts, &opts.count_edges)?;
    let area_hist = histogram(&areas, &opts.area_edges)?;
    let mut csv = String::from("histogram,lower,upper,count\n");
    histogram_rows(&mut csv, "objects_per_image", &opts.count_edges, &count_hist);
    histogram_rows(&mut csv, "object_area_fraction", &opts.area_edges, &area_hist);
    write_text(&run.out.join("objects.csv"), &objects)?;
    write_text(&run.out.join("histograms.csv"), &csv)?;
    write_mask(&run.out.join("hist_objects.png"), &render_histogram(&count_hist))?;
    write_mask(&run.out.join("hist_areas.png"), &render_histogram(&area_hist))?;
    print!("{csv}");
    Ok(())
}
