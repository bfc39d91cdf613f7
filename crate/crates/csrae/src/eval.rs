//! Evaluation metrics: importance-sampled log-likelihood, latent embeddings,
//! kNN classification with deterministic tie-breaking, classification error,
//! F1, and the Fréchet distance between Gaussian-fitted feature sets.
//!
//! The Fréchet distance here operates on caller-supplied feature matrices
//! (raw pixels, latent embeddings, ...), not Inception activations, so the
//! numbers are NOT comparable to published FID scores.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Value;
use crate::error::{Error, Result};
use crate::models::{encode, posterior_log_pdf, prior_log_pdf, reparameterize, MlpDecoder, MlpEncoder, Prior};

/// Mean and covariance fitted to a feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl FeatureStats {
    /// Fit from rows of `features` with the 1/N covariance normalizer.
    pub fn fit(features: &Array2<f64>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::arg("cannot fit statistics to an empty matrix"));
        }
        let mean = features.mean_axis(Axis(0)).unwrap();
        let d = features.ncols();
        let mut cov = Array2::zeros((d, d));
        for row in features.rows() {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in i..d {
                    cov[[i, j]] += di * (row[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                cov[[i, j]] /= n as f64;
                cov[[j, i]] = cov[[i, j]];
            }
        }
        Ok(FeatureStats { mean, cov })
    }

    pub fn from_parts(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "mean has {} dims, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(FeatureStats { mean, cov })
    }
}

/// Importance-sampled estimate of the mean log-marginal likelihood over the
/// batch, using the encoder as proposal with S draws per example.
pub fn importance_sampled_ll(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    prior: &Prior,
    x: &Array2<f64>,
    s: usize,
    seed: u64,
) -> Result<f64> {
    if s == 0 {
        return Err(Error::arg("importance sampling needs S >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = encode(enc, x)?;
    let (b, d) = q.mu.shape();
    let mut log_weights: Option<Value> = None;
    for _ in 0..s {
        let eps = Array2::from_shape_fn((b, d), |_| StandardNormal.sample(&mut rng));
        let z = reparameterize(&q, &eps)?;
        let lw = dec
            .log_likelihood(&z, x)?
            .add(&prior_log_pdf(&z, prior, Some(enc))?)?
            .sub(&posterior_log_pdf(&z, &q)?)?;
        log_weights = Some(match log_weights {
            None => lw,
            Some(acc) => acc.concat(&lw)?,
        });
    }
    let per_example = log_weights
        .unwrap()
        .logsumexp_rows()
        .add_scalar(-(s as f64).ln());
    let mean = per_example.data().mean().unwrap();
    Ok(mean)
}

/// Deterministic latent embedding: the posterior means.
pub fn latent_embed(enc: &MlpEncoder, features: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(encode(enc, features)?.mu.data().clone())
}

/// Stochastic embedding variant: one reparameterized draw per example.
pub fn latent_embed_sampled(
    enc: &MlpEncoder,
    features: &Array2<f64>,
    seed: u64,
) -> Result<Array2<f64>> {
    let q = encode(enc, features)?;
    let (b, d) = q.mu.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = Array2::from_shape_fn((b, d), |_| StandardNormal.sample(&mut rng));
    Ok(reparameterize(&q, &eps)?.data().clone())
}

/// k-nearest-neighbour classification under the Euclidean metric with
/// majority vote. Vote ties are broken by the smaller mean distance to the
/// query among the tied classes, then by the smaller label.
pub fn knn_classify(
    train: &Array2<f64>,
    train_labels: &[i64],
    queries: &Array2<f64>,
    k: usize,
) -> Result<Vec<i64>> {
    if k == 0 {
        return Err(Error::arg("k must be >= 1"));
    }
    if k > train.nrows() {
        return Err(Error::arg(format!(
            "k = {k} exceeds {} training points",
            train.nrows()
        )));
    }
    if train_labels.len() != train.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} training points",
            train_labels.len(),
            train.nrows()
        )));
    }
    if queries.ncols() != train.ncols() {
        return Err(Error::dim(format!(
            "queries have {} dims, training points {}",
            queries.ncols(),
            train.ncols()
        )));
    }
    let mut out = Vec::with_capacity(queries.nrows());
    for query in queries.rows() {
        let mut dists: Vec<(f64, usize)> = train
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let d = row
                    .iter()
                    .zip(query.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, i)
            })
            .collect();
        // stable order: distance, then training index
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let neighbours = &dists[..k];
        let mut votes: std::collections::BTreeMap<i64, (usize, f64)> =
            std::collections::BTreeMap::new();
        for (d, i) in neighbours {
            let e = votes.entry(train_labels[*i]).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += d.sqrt();
        }
        let best = votes
            .iter()
            .map(|(label, (count, dist_sum))| (*label, *count, dist_sum / *count as f64))
            .min_by(|a, b| {
                // most votes first, then smaller mean distance, then smaller label
                b.1.cmp(&a.1)
                    .then(a.2.partial_cmp(&b.2).unwrap())
                    .then(a.0.cmp(&b.0))
            })
            .unwrap();
        out.push(best.0);
    }
    Ok(out)
}

/// Fraction of mismatched predictions.
pub fn classification_error(pred: &[i64], truth: &[i64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("empty prediction list"));
    }
    let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Binary F1 with label 1 as the positive class; 0 when precision and recall
/// are both 0.
pub fn f1_score(pred: &[i64], truth: &[i64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        match (*p == 1, *t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / denom as f64)
}

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;

/// Eigenvalues and eigenvectors of a symmetric matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues, column eigenvectors).
fn jacobi_eigh(a: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    let scale = a.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[[i, j]] * m[[i, j]])
            .sum();
        if off.sqrt() < 1e-14 * scale {
            let eig = (0..n).map(|i| m[[i, i]]).collect();
            return Ok((eig, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[[i, p]];
                    let miq = m[[i, q]];
                    m[[i, p]] = c * mip - s * miq;
                    m[[i, q]] = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m[[p, j]];
                    let mqj = m[[q, j]];
                    m[[p, j]] = c * mpj - s * mqj;
                    m[[q, j]] = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    Err(Error::Numerical(
        "Jacobi eigendecomposition failed to converge".into(),
    ))
}

fn check_covariance(c: &Array2<f64>, name: &str) -> Result<()> {
    let n = c.nrows();
    if n != c.ncols() {
        return Err(Error::ShapeMismatch(format!("{name} covariance not square")));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (c[[i, j]] - c[[j, i]]).abs() > SYMMETRY_TOL {
                return Err(Error::arg(format!(
                    "{name} covariance asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Symmetric PSD square root via eigendecomposition, with eigenvalues below
/// the tolerance clamped to zero.
fn psd_sqrt(c: &Array2<f64>, name: &str) -> Result<Array2<f64>> {
    let (eig, v) = jacobi_eigh(c)?;
    if eig.iter().any(|e| *e < -PSD_TOL) {
        return Err(Error::arg(format!(
            "{name} covariance is not positive semidefinite (eigenvalue {})",
            eig.iter().cloned().fold(f64::INFINITY, f64::min)
        )));
    }
    let n = c.nrows();
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let root = eig[k].max(0.0).sqrt();
        if root == 0.0 {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += root * v[[i, k]] * v[[j, k]];
            }
        }
    }
    Ok(out)
}

/// Squared Fréchet distance between the Gaussians (m, C) and (m_w, C_w):
/// `||m - m_w||^2 + Tr(C + C_w - 2 (C C_w)^{1/2})`, with the matrix root
/// evaluated on the symmetrized product sqrt(C) C_w sqrt(C).
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::dim(format!(
            "feature statistics of dimension {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    check_covariance(&a.cov, "first")?;
    check_covariance(&b.cov, "second")?;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let sqrt_a = psd_sqrt(&a.cov, "first")?;
    // PSD check on b happens inside its own sqrt path: eigenvalues of the
    // symmetrized product alone cannot distinguish a non-PSD C_w
    psd_sqrt(&b.cov, "second")?;
    let product = sqrt_a.dot(&b.cov).dot(&sqrt_a);
    // symmetrize away round-off before the final eigendecomposition
    let product = (&product + &product.t()) * 0.5;
    let (eig, _) = jacobi_eigh(&product)?;
    let trace_root: f64 = eig.iter().map(|e| e.max(0.0).sqrt()).sum();
    let trace_a: f64 = (0..a.cov.nrows()).map(|i| a.cov[[i, i]]).sum();
    let trace_b: f64 = (0..b.cov.nrows()).map(|i| b.cov[[i, i]]).sum();
    Ok(mean_term + trace_a + trace_b - 2.0 * trace_root)
}
