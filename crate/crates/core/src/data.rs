//! Multi-exit dataset representation and its on-disk format.
//!
//! A dataset directory holds a `manifest.json` plus two headerless binary
//! files per split:
//!
//! * logits: `N * J * C` little-endian `f32`, sample-major, then exit, then class
//! * labels: `N` little-endian `u32`
//!
//! All dimensions live in the manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Named partition of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Calib,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Calib, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Calib => "calib",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "calib" => Ok(Split::Calib),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidManifest {
                field: "splits".into(),
                reason: format!("unknown split name `{other}` (expected calib, val or test)"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDescriptor {
    pub num_samples: usize,
    pub logits: String,
    pub labels: String,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub num_exits: usize,
    /// Cumulative compute cost up to and including each exit.
    pub exit_costs: Vec<f64>,
    pub splits: BTreeMap<String, SplitDescriptor>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidManifest {
                field: "num_classes".into(),
                reason: format!("need at least 2 classes, got {}", self.num_classes),
            });
        }
        if self.num_exits < 2 {
            return Err(Error::InvalidManifest {
                field: "num_exits".into(),
                reason: format!("need at least 2 exits, got {}", self.num_exits),
            });
        }
        validate_costs(&self.exit_costs, self.num_exits)?;
        for name in self.splits.keys() {
            name.parse::<Split>()?;
        }
        Ok(())
    }
}

fn validate_costs(costs: &[f64], num_exits: usize) -> Result<()> {
    if costs.len() != num_exits {
        return Err(Error::InvalidManifest {
            field: "exit_costs".into(),
            reason: format!("expected {num_exits} entries, got {}", costs.len()),
        });
    }
    for (j, &c) in costs.iter().enumerate() {
        if !c.is_finite() || c < 0.0 {
            return Err(Error::InvalidManifest {
                field: "exit_costs".into(),
                reason: format!("entry {j} must be a non-negative finite number, got {c}"),
            });
        }
        if j > 0 && c <= costs[j - 1] {
            return Err(Error::NonIncreasingCosts { index: j, value: c });
        }
    }
    Ok(())
}

/// Raw per-exit logits, shape `[N, J, C]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitTensor {
    values: Vec<f32>,
    num_samples: usize,
    num_exits: usize,
    num_classes: usize,
}

impl LogitTensor {
    pub fn new(
        values: Vec<f32>,
        num_samples: usize,
        num_exits: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let expected = num_samples * num_exits * num_classes;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            values,
            num_samples,
            num_exits,
            num_classes,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_exits(&self) -> usize {
        self.num_exits
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Logits of exit `exit` for sample `sample`.
    pub fn row(&self, sample: usize, exit: usize) -> &[f32] {
        let start = (sample * self.num_exits + exit) * self.num_classes;
        &self.values[start..start + self.num_classes]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    /// Keep only the samples at the given indices, in that order.
    pub fn select(&self, indices: &[usize]) -> LogitTensor {
        let stride = self.num_exits * self.num_classes;
        let mut values = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            values.extend_from_slice(&self.values[i * stride..(i + 1) * stride]);
        }
        LogitTensor {
            values,
            num_samples: indices.len(),
            num_exits: self.num_exits,
            num_classes: self.num_classes,
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Ground-truth class per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<u32>);

impl LabelVector {
    pub fn new(labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if let Some((index, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::LabelOutOfRange {
                path: PathBuf::from("<memory>"),
                index,
                label,
                num_classes,
            });
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector(indices.iter().map(|&i| self.0[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub logits: LogitTensor,
    pub labels: LabelVector,
}

impl SplitData {
    pub fn new(logits: LogitTensor, labels: LabelVector) -> Result<Self> {
        if logits.num_samples() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: logits.num_samples(),
                actual: labels.len(),
            });
        }
        Ok(Self { logits, labels })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn correctness(&self) -> CorrectnessMatrix {
        correctness(&self.logits, &self.labels)
    }
}

/// Logits, labels and compute costs for every available split.
///
/// Immutable once built; share it freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiExitDataset {
    num_classes: usize,
    exit_costs: Vec<f64>,
    splits: BTreeMap<Split, SplitData>,
}

impl MultiExitDataset {
    pub fn new(
        num_classes: usize,
        exit_costs: Vec<f64>,
        splits: BTreeMap<Split, SplitData>,
    ) -> Result<Self> {
        let manifest = DatasetManifest {
            num_classes,
            num_exits: exit_costs.len(),
            exit_costs: exit_costs.clone(),
            splits: BTreeMap::new(),
        };
        manifest.validate()?;
        for (split, data) in &splits {
            let l = &data.logits;
            if l.num_exits() != exit_costs.len() || l.num_classes() != num_classes {
                return Err(Error::InvalidManifest {
                    field: format!("splits.{split}"),
                    reason: format!(
                        "logit tensor has {} exits x {} classes, dataset declares {} x {}",
                        l.num_exits(),
                        l.num_classes(),
                        exit_costs.len(),
                        num_classes
                    ),
                });
            }
            if let Some(&label) = data.labels.as_slice().iter().find(|&&x| x as usize >= num_classes) {
                return Err(Error::InvalidManifest {
                    field: format!("splits.{split}"),
                    reason: format!("label {label} out of range for {num_classes} classes"),
                });
            }
        }
        Ok(Self {
            num_classes,
            exit_costs,
            splits,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_exits(&self) -> usize {
        self.exit_costs.len()
    }

    pub fn exit_costs(&self) -> &[f64] {
        &self.exit_costs
    }

    pub fn split(&self, split: Split) -> Result<&SplitData> {
        self.splits
            .get(&split)
            .ok_or_else(|| Error::MissingSplit(split.to_string()))
    }

    pub fn splits(&self) -> impl Iterator<Item = (Split, &SplitData)> {
        self.splits.iter().map(|(s, d)| (*s, d))
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            num_classes: self.num_classes,
            num_exits: self.num_exits(),
            exit_costs: self.exit_costs.clone(),
            splits: self
                .splits
                .iter()
                .map(|(s, d)| {
                    (
                        s.to_string(),
                        SplitDescriptor {
                            num_samples: d.num_samples(),
                            logits: format!("{s}_logits.f32"),
                            labels: format!("{s}_labels.u32"),
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Per-sample, per-exit correctness of the argmax prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessMatrix {
    y: Vec<bool>,
    num_samples: usize,
    num_exits: usize,
}

impl CorrectnessMatrix {
    /// Build from row-major `[N, J]` flags.
    pub fn from_rows(y: Vec<bool>, num_exits: usize) -> Result<Self> {
        if num_exits == 0 || !y.len().is_multiple_of(num_exits) {
            return Err(Error::LengthMismatch {
                expected: num_exits.max(1) * (y.len() / num_exits.max(1)),
                actual: y.len(),
            });
        }
        Ok(Self {
            num_samples: y.len() / num_exits,
            y,
            num_exits,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_exits(&self) -> usize {
        self.num_exits
    }

    pub fn get(&self, sample: usize, exit: usize) -> bool {
        self.y[sample * self.num_exits + exit]
    }

    pub fn row(&self, sample: usize) -> &[bool] {
        &self.y[sample * self.num_exits..(sample + 1) * self.num_exits]
    }

    pub fn column(&self, exit: usize) -> Vec<bool> {
        (0..self.num_samples).map(|i| self.get(i, exit)).collect()
    }

    /// Standalone accuracy of one exit over all samples.
    pub fn accuracy(&self, exit: usize) -> f64 {
        if self.num_samples == 0 {
            return 0.0;
        }
        let hits = (0..self.num_samples).filter(|&i| self.get(i, exit)).count();
        hits as f64 / self.num_samples as f64
    }
}

pub fn correctness(logits: &LogitTensor, labels: &LabelVector) -> CorrectnessMatrix {
    let (n, j) = (logits.num_samples(), logits.num_exits());
    let mut y = Vec::with_capacity(n * j);
    for i in 0..n {
        for e in 0..j {
            y.push(argmax(logits.row(i, e)) == labels.get(i));
        }
    }
    CorrectnessMatrix {
        y,
        num_samples: n,
        num_exits: j,
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_len(path: &Path, bytes: &[u8], expected: u64) -> Result<()> {
    if bytes.len() as u64 != expected {
        return Err(Error::ShapeMismatch {
            what: path.display().to_string(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

/// Load and validate a dataset directory.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<MultiExitDataset> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST_FILE);
    let raw = read_file(&manifest_path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&raw).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    manifest.validate()?;

    let (j, c) = (manifest.num_exits, manifest.num_classes);
    let mut splits = BTreeMap::new();
    for (name, desc) in &manifest.splits {
        let split: Split = name.parse()?;
        let n = desc.num_samples;

        let logits_path = root.join(&desc.logits);
        let bytes = read_file(&logits_path)?;
        check_len(&logits_path, &bytes, (n * j * c * 4) as u64)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLogit {
                path: logits_path,
                index,
            });
        }

        let labels_path = root.join(&desc.labels);
        let bytes = read_file(&labels_path)?;
        check_len(&labels_path, &bytes, (n * 4) as u64)?;
        let labels: Vec<u32> = bytes
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(index) = labels.iter().position(|&l| l as usize >= c) {
            return Err(Error::LabelOutOfRange {
                path: labels_path,
                index,
                label: labels[index],
                num_classes: c,
            });
        }

        let data = SplitData {
            logits: LogitTensor {
                values,
                num_samples: n,
                num_exits: j,
                num_classes: c,
            },
            labels: LabelVector(labels),
        };
        splits.insert(split, data);
    }
    MultiExitDataset::new(c, manifest.exit_costs, splits)
}

/// Write a dataset directory; creates `root` if needed.
pub fn save_dataset(dataset: &MultiExitDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let manifest = dataset.manifest();
    for (split, data) in dataset.splits() {
        let desc = &manifest.splits[split.as_str()];
        let path = root.join(&desc.logits);
        fs::write(&path, data.logits.to_le_bytes()).map_err(|e| Error::io(&path, e))?;
        let path = root.join(&desc.labels);
        let bytes: Vec<u8> = data
            .labels
            .as_slice()
            .iter()
            .flat_map(|l| l.to_le_bytes())
            .collect();
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let path = root.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> MultiExitDataset {
        let (n, j, c) = (10, 3, 4);
        let values: Vec<f32> = (0..n * j * c).map(|k| (k as f32 * 0.37).sin() * 3.0).collect();
        let labels: Vec<u32> = (0..n as u32).map(|i| i % c as u32).collect();
        let data = SplitData::new(
            LogitTensor::new(values, n, j, c).unwrap(),
            LabelVector::new(labels, c).unwrap(),
        )
        .unwrap();
        let mut splits = BTreeMap::new();
        splits.insert(Split::Test, data.clone());
        splits.insert(Split::Val, data);
        MultiExitDataset::new(c, vec![1.0, 2.5, 4.0], splits).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.num_exits(), 3);
        assert_eq!(back.num_classes(), 4);
        assert_eq!(back.split(Split::Test).unwrap().num_samples(), 10);
    }

    #[test]
    fn label_equal_to_num_classes_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(), dir.path()).unwrap();
        let path = dir.path().join("test_labels.u32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&4u32.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::LabelOutOfRange { index, label, .. }) => {
                assert_eq!((index, label), (2, 4));
            }
            other => panic!("expected LabelOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn decreasing_costs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: DatasetManifest = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        m.exit_costs = vec![3.0, 2.0, 5.0];
        fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::NonIncreasingCosts { index: 1, .. })
        ));
    }

    #[test]
    fn truncated_logits_are_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(), dir.path()).unwrap();
        let path = dir.path().join("val_logits.f32");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::ShapeMismatch { what, expected, actual }) => {
                assert!(what.ends_with("val_logits.f32"));
                assert_eq!(expected, 480);
                assert_eq!(actual, 476);
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }
    }

    #[test]
    fn nan_logit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(), dir.path()).unwrap();
        let path = dir.path().join("test_logits.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::NonFiniteLogit { index: 5, .. })
        ));
    }

    #[test]
    fn missing_files_are_named() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MissingFile { .. })));
        save_dataset(&tiny_dataset(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("val_labels.u32")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingFile { path }) => assert!(path.ends_with("val_labels.u32")),
            other => panic!("expected MissingFile, got {other:?}"),
        }
    }

    #[test]
    fn unknown_split_name_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"val\"", "\"train\"");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::InvalidManifest { .. })));
    }

    #[test]
    fn save_below_a_regular_file_fails_with_io() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("blocker");
        fs::write(&blocker, b"x").unwrap();
        assert!(matches!(
            save_dataset(&tiny_dataset(), blocker.join("out")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn correctness_matches_toy_rows() {
        let crossing = [0.65f32, 0.34, -1.03];
        assert_eq!(argmax(&crossing), 0);
        assert_eq!(argmax(&[0.0f32, 0.0, 0.0]), 0);

        let image_a = [-0.7985f32, -0.9163, -2.3026, -2.9957];
        let logits = LogitTensor::new(image_a.repeat(2), 2, 1, 4).unwrap();
        let labels = LabelVector::new(vec![0, 1], 4).unwrap();
        let y = correctness(&logits, &labels);
        assert!(y.get(0, 0));
        assert!(!y.get(1, 0));

        let zeros = LogitTensor::new(vec![0.0; 3], 1, 1, 3).unwrap();
        let y = correctness(&zeros, &LabelVector::new(vec![2], 3).unwrap());
        assert!(!y.get(0, 0));
    }
}
