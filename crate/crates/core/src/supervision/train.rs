use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{total_loss_with_grads, LossReport};
use super::optimizer::Sgd;
use crate::dataset::Sample;
use crate::equirect::{hflip, Resolution};
use crate::error::{DdsError, Result};
use crate::network::{Checkpoint, DdsNetwork, NetworkConfig, NetworkParams, ProfileName, STAGES};
use crate::tensor::Tensor;

/// Optimization recipe. The network shape travels with it so that a run is
/// reproducible from this struct and the data alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Learning rate of the backbone group.
    pub base_lr: f64,
    /// Multiplier applied to every non-backbone group.
    pub head_lr_mult: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub poly_power: f64,
    pub input: Resolution,
    pub seed: u64,
    pub network: NetworkConfig,
    /// When false only side output 1 is back-propagated; all five losses are
    /// still reported.
    pub deep_supervision: bool,
    pub hflip_prob: f64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn for_profile(profile: ProfileName) -> Self {
        let (iterations, base_lr, input) = match profile {
            ProfileName::Mini => (3000, 1e-6, Resolution::new(128, 64)),
            ProfileName::Resnet50Dilated => (50_000, 5e-9, Resolution::CANONICAL),
        };
        Self {
            iterations,
            batch_size: 1,
            base_lr,
            head_lr_mult: 10.0,
            weight_decay: 5e-4,
            momentum: 0.9,
            poly_power: 0.9,
            input,
            seed: 0,
            network: NetworkConfig::for_profile(profile),
            deep_supervision: true,
            hflip_prob: 0.5,
            checkpoint_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DdsError::Configuration(msg));
        if self.iterations == 0 || self.batch_size == 0 {
            return bad(format!(
                "iterations ({}) and batch size ({}) must be positive",
                self.iterations, self.batch_size
            ));
        }
        if !(self.base_lr > 0.0) || !(self.head_lr_mult > 0.0) || !(self.poly_power >= 0.0) {
            return bad(format!(
                "learning rate {} x{} with power {} is invalid",
                self.base_lr, self.head_lr_mult, self.poly_power
            ));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("weight decay {} / momentum {}", self.weight_decay, self.momentum));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad(format!("flip probability {}", self.hflip_prob));
        }
        self.network.validate()?;
        self.network.check_input(self.input.height, self.input.width)
    }
}

/// `base_lr * (1 - iter/max)^power`.
pub fn poly_lr(iter: usize, cfg: &TrainConfig) -> Result<f64> {
    if iter > cfg.iterations {
        return Err(DdsError::Schedule {
            iter,
            max: cfg.iterations,
        });
    }
    let frac = 1.0 - iter as f64 / cfg.iterations as f64;
    Ok(cfg.base_lr * frac.powf(cfg.poly_power))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub iteration: usize,
    pub losses: LossReport,
    /// Backbone learning rate used for this iteration.
    pub lr: f64,
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("iteration,l1,l2,l3,l4,l5,total,lr\n");
    for r in rows {
        write!(out, "{}", r.iteration).unwrap();
        for l in &r.losses.sides {
            write!(out, ",{l}").unwrap();
        }
        writeln!(out, ",{},{}", r.losses.total, r.lr).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: DdsNetwork,
    pub curve: Vec<CurveRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    /// Mean total loss over the first and last `window` iterations.
    pub fn loss_trend(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.curve.len()).max(1);
        let mean = |rows: &[CurveRow]| rows.iter().map(|r| r.losses.total).sum::<f64>() / rows.len() as f64;
        (mean(&self.curve[..w]), mean(&self.curve[self.curve.len() - w..]))
    }
}

fn check_samples(cfg: &TrainConfig, samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(DdsError::Data("the training split is empty".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.image.resolution() != cfg.input || (s.mask.height(), s.mask.width()) != (cfg.input.height, cfg.input.width) {
            return Err(DdsError::Data(format!(
                "sample {i} is {}x{}, training expects {}",
                s.image.width(),
                s.image.height(),
                cfg.input
            )));
        }
    }
    Ok(())
}

/// Train from scratch on in-memory samples (already at `cfg.input`).
///
/// With `out_dir` set, checkpoints go to `out_dir/checkpoints/` and the final
/// network to `out_dir/final.ckpt`, next to the loss curve `loss.csv`.
pub fn train(
    cfg: &TrainConfig,
    samples: &[Sample],
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&CurveRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_samples(cfg, samples)?;
    let mut network = DdsNetwork::init(cfg.network.clone(), cfg.seed)?;
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da7a);
    let mut order: Vec<usize> = Vec::new();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();

    for it in 0..cfg.iterations {
        let lr = poly_lr(it, cfg)?;
        let mut sides = [0.0; STAGES];
        let mut grads: Option<NetworkParams> = None;
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..samples.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let sample = &samples[order.pop().expect("refilled")];
            let flipped;
            let (image, mask) = if rng.random_bool(cfg.hflip_prob) {
                flipped = hflip(&sample.image, &sample.mask)?;
                (&flipped.0, &flipped.1)
            } else {
                (&sample.image, &sample.mask)
            };
            let (out, trace) = network.forward_traced(image.pixels())?;
            let (report, mut side_grads) = total_loss_with_grads(&out.logits, mask)?;
            if !cfg.deep_supervision {
                for g in &mut side_grads[1..] {
                    *g = Tensor::zeros(g.channels(), g.height(), g.width());
                }
            }
            let g = network.backward(&trace, &side_grads)?;
            for (acc, l) in sides.iter_mut().zip(report.sides) {
                *acc += l;
            }
            grads = Some(match grads {
                None => g,
                Some(mut acc) => {
                    acc.add_assign(&g);
                    acc
                }
            });
        }
        let report = LossReport::from_sides(sides);
        if !report.total.is_finite() {
            return Err(DdsError::Numerical(format!("loss became {} at iteration {it}", report.total)));
        }
        let grads = grads.expect("batch is non-empty");
        let mult = cfg.head_lr_mult;
        opt.step(&mut network.params, &grads, |g| if g.is_backbone() { lr } else { lr * mult });

        let row = CurveRow {
            iteration: it,
            losses: report,
            lr,
        };
        progress(&row);
        curve.push(row);

        let done = it + 1;
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.iterations {
                let path = dir.join("checkpoints").join(format!("iter_{done:06}.ckpt"));
                Checkpoint::new(network.clone(), done as u64).save(&path)?;
                checkpoints.push(path);
            }
        }
    }

    if !network_is_finite(&network) {
        return Err(DdsError::Numerical("parameters diverged".into()));
    }
    if let Some(dir) = out_dir {
        let path = dir.join("final.ckpt");
        Checkpoint::new(network.clone(), cfg.iterations as u64).save(&path)?;
        checkpoints.push(path);
        let csv = dir.join("loss.csv");
        fs::write(&csv, curve_csv(&curve)).map_err(|e| DdsError::io(&csv, e))?;
    }
    Ok(TrainOutcome {
        network,
        curve,
        checkpoints,
    })
}

fn network_is_finite(net: &DdsNetwork) -> bool {
    let mut ok = true;
    net.params.visit(&mut |_, _, v| ok &= v.iter().all(|x| x.is_finite()));
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equirect::{synth_scene, SceneSpec};

    fn samples(n: usize, res: Resolution) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let (image, mask) = synth_scene(i as u64, &SceneSpec::default().with_resolution(res)).unwrap();
                Sample { image, mask }
            })
            .collect()
    }

    fn tiny_config() -> TrainConfig {
        let mut cfg = TrainConfig::for_profile(ProfileName::Mini);
        cfg.input = Resolution::new(64, 32);
        cfg.iterations = 4;
        cfg
    }

    #[test]
    fn poly_schedule_values() {
        let mut cfg = TrainConfig::for_profile(ProfileName::Mini);
        cfg.iterations = 1000;
        cfg.base_lr = 2.0;
        assert_eq!(poly_lr(0, &cfg).unwrap(), 2.0);
        assert_eq!(poly_lr(1000, &cfg).unwrap(), 0.0);
        assert!((poly_lr(500, &cfg).unwrap() / 2.0 - 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((0.5f64.powf(0.9) - 0.5359).abs() < 1e-4);
        assert!(matches!(poly_lr(1001, &cfg), Err(DdsError::Schedule { iter: 1001, max: 1000 })));
    }

    #[test]
    fn empty_training_set_is_a_data_error() {
        let err = train(&tiny_config(), &[], None, &mut |_| {}).unwrap_err();
        assert!(matches!(err, DdsError::Data(_)));
    }

    #[test]
    fn wrong_resolution_is_a_data_error() {
        let err = train(&tiny_config(), &samples(1, Resolution::new(128, 64)), None, &mut |_| {}).unwrap_err();
        assert!(matches!(err, DdsError::Data(_)));
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = tiny_config();
        let data = samples(3, cfg.input);
        let a = train(&cfg, &data, None, &mut |_| {}).unwrap();
        let b = train(&cfg, &data, None, &mut |_| {}).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.curve, b.curve);
        let mut other = cfg.clone();
        other.seed = 1;
        let c = train(&other, &data, None, &mut |_| {}).unwrap();
        assert_ne!(a.network, c.network);
    }

    #[test]
    fn batch_losses_add_up() {
        let mut cfg = tiny_config();
        cfg.iterations = 1;
        cfg.batch_size = 2;
        cfg.hflip_prob = 0.0;
        let data = samples(2, cfg.input);
        let out = train(&cfg, &data, None, &mut |_| {}).unwrap();
        let net = DdsNetwork::init(cfg.network.clone(), cfg.seed).unwrap();
        let total: f64 = data
            .iter()
            .map(|s| super::super::total_loss(&net.forward(&s.image).unwrap(), &s.mask).unwrap().total)
            .sum();
        assert!((out.curve[0].losses.total - total).abs() < 1e-9 * total);
    }

    #[test]
    fn writes_checkpoints_and_curve() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.iterations = 5;
        cfg.checkpoint_every = 2;
        let out = train(&cfg, &samples(2, cfg.input), Some(dir.path()), &mut |_| {}).unwrap();
        let names: Vec<_> = out
            .checkpoints
            .iter()
            .map(|p| p.strip_prefix(dir.path()).unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["checkpoints/iter_000002.ckpt", "checkpoints/iter_000004.ckpt", "final.ckpt"]);
        let loaded = Checkpoint::load(&dir.path().join("final.ckpt")).unwrap();
        assert_eq!(loaded.network, out.network);
        assert_eq!(loaded.iteration, 5);
        let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.starts_with("iteration,l1,l2,l3,l4,l5,total,lr\n0,"));
    }
}
