use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::equirect::{canonicalize_image, Resolution};
use crate::error::{DdsError, Result};
use crate::io::{read_image, read_mask};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = DdsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DdsError::Configuration(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Relative paths are resolved against the manifest's directory.
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub split_seed: Option<u64>,
    pub records: Vec<ManifestRecord>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, root: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            split_seed: None,
            records,
            root: root.into(),
        }
    }

    /// Directory that relative record paths are resolved against.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DdsError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(DdsError::Data(format!(
                "{}: schema version {} is not supported",
                path.display(),
                m.schema_version
            )));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| DdsError::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| DdsError::io(path, e))
    }

    /// Pair `dir/images/*.png` with `dir/masks/*.png` by file name, in sorted order.
    pub fn from_directory(dir: &Path, source: &str) -> Result<Self> {
        let images = dir.join("images");
        let entries = fs::read_dir(&images).map_err(|e| DdsError::io(&images, e))?;
        let mut names = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| DdsError::io(&images, e))?;
            let name = entry.file_name();
            if Path::new(&name).extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
                names.push(name);
            }
        }
        names.sort();
        let mut records = Vec::with_capacity(names.len());
        for name in names {
            let mask = Path::new("masks").join(&name);
            if !dir.join(&mask).is_file() {
                return Err(DdsError::PairedData(format!("no mask for {}", name.to_string_lossy())));
            }
            records.push(ManifestRecord {
                image: Path::new("images").join(&name),
                mask,
                split: None,
                source: source.to_string(),
            });
        }
        Ok(Self::new(records, dir))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.root.join(path)
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    /// Check that every pair exists, decodes and agrees in size.
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            let image = read_image(&self.resolve(&r.image))?;
            let mask = read_mask(&self.resolve(&r.mask))?;
            if (image.height(), image.width()) != (mask.height(), mask.width()) {
                return Err(DdsError::PairedData(format!(
                    "{}: image {}x{} vs mask {}x{}",
                    r.image.display(),
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                )));
            }
        }
        Ok(())
    }

    /// Load one record, resampled to `resolution` (bilinear image, nearest mask).
    pub fn load_sample(&self, record: &ManifestRecord, resolution: Resolution) -> Result<Sample> {
        let image = read_image(&self.resolve(&record.image))?;
        let mask = read_mask(&self.resolve(&record.mask))?;
        if (image.height(), image.width()) != (mask.height(), mask.width()) {
            return Err(DdsError::PairedData(format!(
                "{} and {} differ in size",
                record.image.display(),
                record.mask.display()
            )));
        }
        Ok(Sample {
            image: canonicalize_image(&image, resolution)?,
            mask: mask.resize_nearest(resolution.height, resolution.width),
        })
    }

    /// All samples of one split; `None` loads every record.
    pub fn load_samples(&self, split: Option<Split>, resolution: Resolution) -> Result<Vec<Sample>> {
        self.records
            .iter()
            .filter(|r| split.is_none() || r.split == split)
            .map(|r| self.load_sample(r, resolution))
            .collect()
    }
}

/// Tag `floor(ratio * n)` records as train and the rest as test after a
/// seeded shuffle.
pub fn split(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    let n = manifest.records.len();
    if n < 2 {
        return Err(DdsError::Split(format!("need at least 2 records, got {n}")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DdsError::Split(format!("ratio {ratio} is outside (0, 1)")));
    }
    // the epsilon keeps exact products such as 0.8 * 500 from rounding down
    let train = ((ratio * n as f64) + 1e-9).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.records[i].split = Some(if rank < train { Split::Train } else { Split::Test });
    }
    out.split_seed = Some(seed);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn manifest(n: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| ManifestRecord {
                image: format!("images/{i:04}.png").into(),
                mask: format!("masks/{i:04}.png").into(),
                split: None,
                source: "test".into(),
            })
            .collect();
        DatasetManifest::new(records, "")
    }

    #[test]
    fn five_hundred_split_four_hundred_to_one_hundred() {
        let m = split(&manifest(500), 0.8, 42).unwrap();
        assert_eq!(m.records_in(Split::Train).count(), 400);
        assert_eq!(m.records_in(Split::Test).count(), 100);
        assert_eq!(m.split_seed, Some(42));
    }

    #[test]
    fn split_is_seeded_partition() {
        let a = split(&manifest(37), 0.7, 9).unwrap();
        let b = split(&manifest(37), 0.7, 9).unwrap();
        let c = split(&manifest(37), 0.7, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records, c.records);
        let train: HashSet<_> = a.records_in(Split::Train).map(|r| &r.image).collect();
        let test: HashSet<_> = a.records_in(Split::Test).map(|r| &r.image).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 37);
        assert_eq!(train.len(), 25);
    }

    #[test]
    fn split_rejects_tiny_sets_and_bad_ratios() {
        assert!(matches!(split(&manifest(1), 0.8, 0), Err(DdsError::Split(_))));
        assert!(matches!(split(&manifest(10), 1.0, 0), Err(DdsError::Split(_))));
        assert!(matches!(split(&manifest(10), 0.0, 0), Err(DdsError::Split(_))));
    }

    #[test]
    fn json_round_trip_resolves_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/manifest.json");
        let m = split(&manifest(4), 0.5, 1).unwrap();
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        assert_eq!(back.records, m.records);
        assert_eq!(back.resolve(Path::new("x.png")), dir.path().join("sub/x.png"));
    }

    #[test]
    fn unknown_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"schema_version": 99, "records": []}"#).unwrap();
        assert!(matches!(DatasetManifest::load(&path), Err(DdsError::Data(_))));
    }
}
