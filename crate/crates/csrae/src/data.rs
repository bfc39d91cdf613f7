//! Dataset plumbing: synthetic generators (1D two-Gaussian target, 2D
//! pinwheel), IDX image loading, seeded splits, binarization policies and a
//! small labelled-CSV reader.

use std::io::Read as _;
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Full,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizePolicy {
    None,
    Static,
    Dynamic,
}

impl BinarizePolicy {
    pub fn none() -> Self {
        BinarizePolicy::None
    }
}

/// Feature matrix with optional integer labels (one column per output).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Option<Array2<i64>>,
    pub split: Split,
    pub binarization: BinarizePolicy,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Option<Array2<i64>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.nrows() != features.nrows() {
                return Err(Error::ShapeMismatch(format!(
                    "{} feature rows but {} label rows",
                    features.nrows(),
                    l.nrows()
                )));
            }
            if l.iter().any(|v| *v < 0) {
                return Err(Error::Data("negative label value".into()));
            }
        }
        Ok(Dataset {
            features,
            labels,
            split: Split::Full,
            binarization: BinarizePolicy::None,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Row subset in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let features = Array2::from_shape_fn((idx.len(), self.features.ncols()), |(i, j)| {
            self.features[[idx[i], j]]
        });
        let labels = self.labels.as_ref().map(|l| {
            Array2::from_shape_fn((idx.len(), l.ncols()), |(i, j)| l[[idx[i], j]])
        });
        Dataset {
            features,
            labels,
            split: self.split,
            binarization: self.binarization,
        }
    }
}

/// i.i.d. draws from the bimodal target 0.5 N(-3, 1) + 0.5 N(3, 1); labels
/// record the component of each draw.
pub fn gen_two_gaussian_1d(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::arg("n must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, 1));
    let mut labels = Array2::zeros((n, 1));
    for i in 0..n {
        let c = usize::from(rng.gen::<f64>() < 0.5);
        let mean = if c == 0 { -3.0 } else { 3.0 };
        let eps: f64 = StandardNormal.sample(&mut rng);
        features[[i, 0]] = mean + eps;
        labels[[i, 0]] = c as i64;
    }
    Dataset::new(features, Some(labels))
}

pub const PINWHEEL_DEFAULT_N: usize = 4000;
pub const PINWHEEL_DEFAULT_CLUSTERS: usize = 4;
pub const PINWHEEL_DEFAULT_RADIAL_STD: f64 = 0.05;
pub const PINWHEEL_DEFAULT_TANGENTIAL_STD: f64 = 0.25;
pub const PINWHEEL_DEFAULT_RATE: f64 = 0.25;
pub const TWO_GAUSSIAN_DEFAULT_N: usize = 2000;

// serde default helpers for the config layer
pub fn pinwheel_default_n() -> usize {
    PINWHEEL_DEFAULT_N
}
pub fn pinwheel_default_clusters() -> usize {
    PINWHEEL_DEFAULT_CLUSTERS
}
pub fn pinwheel_default_radial_std() -> f64 {
    PINWHEEL_DEFAULT_RADIAL_STD
}
pub fn pinwheel_default_tangential_std() -> f64 {
    PINWHEEL_DEFAULT_TANGENTIAL_STD
}
pub fn pinwheel_default_rate() -> f64 {
    PINWHEEL_DEFAULT_RATE
}
pub fn two_gaussian_default_n() -> usize {
    TWO_GAUSSIAN_DEFAULT_N
}

/// Spiral-warped Gaussian clusters in 2D. Each cluster is a Gaussian around
/// unit radius with the given radial/tangential standard deviations, rotated
/// to its angular position plus a linear warp proportional to the radius.
pub fn gen_pinwheel(
    n: usize,
    clusters: usize,
    radial_std: f64,
    tangential_std: f64,
    rate: f64,
    seed: u64,
) -> Result<Dataset> {
    if clusters == 0 || n % clusters != 0 {
        return Err(Error::arg(format!(
            "n = {n} must be divisible by the cluster count {clusters}"
        )));
    }
    let per = n / clusters;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, 2));
    let mut labels = Array2::zeros((n, 1));
    for k in 0..clusters {
        let base = 2.0 * std::f64::consts::PI * k as f64 / clusters as f64;
        for i in 0..per {
            let dr: f64 = StandardNormal.sample(&mut rng);
            let dt: f64 = StandardNormal.sample(&mut rng);
            let r = 1.0 + radial_std * dr;
            let t = tangential_std * dt;
            let angle = base + rate * r;
            let (sin, cos) = angle.sin_cos();
            let row = k * per + i;
            features[[row, 0]] = r * cos - t * sin;
            features[[row, 1]] = r * sin + t * cos;
            labels[[row, 0]] = k as i64;
        }
    }
    Dataset::new(features, Some(labels))
}

pub fn gen_pinwheel_default(seed: u64) -> Result<Dataset> {
    gen_pinwheel(
        PINWHEEL_DEFAULT_N,
        PINWHEEL_DEFAULT_CLUSTERS,
        PINWHEEL_DEFAULT_RADIAL_STD,
        PINWHEEL_DEFAULT_TANGENTIAL_STD,
        PINWHEEL_DEFAULT_RATE,
        seed,
    )
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

fn idx_error(path: &Path, offset: u64, what: &str) -> Error {
    Error::Data(format!(
        "{}: {what} at byte offset {offset}",
        path.display()
    ))
}

/// Raster image file (magic 0x00000803, big-endian dims) flattened to rows in
/// [0, 1], optionally paired with a label file (magic 0x00000801).
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(images_path)?);
    let magic = f
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(images_path, 0, "truncated magic"))?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(idx_error(
            images_path,
            0,
            &format!("bad magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        ));
    }
    let n = f
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(images_path, 4, "truncated item count"))? as usize;
    let rows = f
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(images_path, 8, "truncated row count"))? as usize;
    let cols = f
        .read_u32::<BigEndian>()
        .map_err(|_| idx_error(images_path, 12, "truncated column count"))? as usize;
    let mut raw = vec![0u8; n * rows * cols];
    f.read_exact(&mut raw).map_err(|_| {
        idx_error(images_path, 16, "truncated pixel data starting")
    })?;
    let features = Array2::from_shape_fn((n, rows * cols), |(i, j)| {
        raw[i * rows * cols + j] as f64 / 255.0
    });

    let labels = match labels_path {
        None => None,
        Some(path) => {
            let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
            let magic = f
                .read_u32::<BigEndian>()
                .map_err(|_| idx_error(path, 0, "truncated magic"))?;
            if magic != IDX_LABEL_MAGIC {
                return Err(idx_error(
                    path,
                    0,
                    &format!("bad magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
                ));
            }
            let ln = f
                .read_u32::<BigEndian>()
                .map_err(|_| idx_error(path, 4, "truncated item count"))? as usize;
            if ln != n {
                return Err(Error::Data(format!(
                    "{} labels for {n} images",
                    ln
                )));
            }
            let mut raw = vec![0u8; ln];
            f.read_exact(&mut raw)
                .map_err(|_| idx_error(path, 8, "truncated label data starting"))?;
            Some(Array2::from_shape_fn((ln, 1), |(i, _)| raw[i] as i64))
        }
    };
    Dataset::new(features, labels)
}

pub const MNIST_SPLIT: (usize, usize, usize) = (45_000, 5_000, 10_000);

/// Disjoint seeded shuffle split into train/val/test of the given sizes.
pub fn split(
    dataset: &Dataset,
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (n_train, n_val, n_test) = counts;
    let total = n_train + n_val + n_test;
    if total > dataset.len() {
        return Err(Error::arg(format!(
            "split asks for {total} examples, dataset has {}",
            dataset.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    idx.shuffle(&mut rng);
    let mut take = |n: usize, tag: Split| {
        let part: Vec<usize> = idx.drain(..n).collect();
        let mut d = dataset.subset(&part);
        d.split = tag;
        d
    };
    let train = take(n_train, Split::Train);
    let val = take(n_val, Split::Val);
    let test = take(n_test, Split::Test);
    Ok((train, val, test))
}

/// Seed for one (epoch, batch) of dynamic binarization, derived with a
/// SplitMix64-style mix so nearby inputs decorrelate.
pub fn derive_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((batch as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Binarize a batch of intensities in [0, 1]. STATIC thresholds at 0.5 and is
/// constant across epochs; DYNAMIC draws Bernoulli(pixel) with a seed derived
/// from (seed, epoch, batch index). NONE passes through.
pub fn binarize(
    batch: &Array2<f64>,
    policy: BinarizePolicy,
    epoch: usize,
    batch_index: usize,
    seed: u64,
) -> Result<Array2<f64>> {
    if policy != BinarizePolicy::None && batch.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::arg("binarize expects values in [0, 1]"));
    }
    match policy {
        BinarizePolicy::None => Ok(batch.clone()),
        BinarizePolicy::Static => Ok(batch.mapv(|v| f64::from(v >= 0.5))),
        BinarizePolicy::Dynamic => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch, batch_index));
            Ok(batch.mapv(|v| f64::from(rng.gen::<f64>() < v)))
        }
    }
}

/// Rectangular numeric CSV with the listed columns taken as integer labels
/// and the rest as features.
pub fn load_csv_labeled(path: &Path, label_cols: &[usize], has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .from_path(path)?;
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<Vec<i64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Data(format!(
                    "row {row}: ragged row with {} cells, expected {w}",
                    record.len()
                )));
            }
            _ => {}
        }
        if label_cols.iter().any(|c| *c >= record.len()) {
            return Err(Error::arg(format!(
                "label column out of range for {}-column file",
                record.len()
            )));
        }
        let mut frow = Vec::new();
        let mut lrow = Vec::new();
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!("row {row}: non-numeric cell {cell:?}"))
            })?;
            if label_cols.contains(&col) {
                if value.fract() != 0.0 {
                    return Err(Error::Data(format!(
                        "row {row}: non-integer label {value}"
                    )));
                }
                lrow.push(value as i64);
            } else {
                frow.push(value);
            }
        }
        features.push(frow);
        labels.push(lrow);
    }
    if features.is_empty() {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let d = features[0].len();
    let features =
        Array2::from_shape_fn((labels.len(), d), |(i, j)| features[i][j]);
    let label_arr = if label_cols.is_empty() {
        None
    } else {
        Some(Array2::from_shape_fn(
            (labels.len(), label_cols.len()),
            |(i, j)| labels[i][j],
        ))
    };
    Dataset::new(features, label_arr)
}
