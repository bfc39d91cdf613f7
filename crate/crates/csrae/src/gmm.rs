//! Diagonal Gaussians, diagonal-covariance Gaussian mixtures and the
//! divergences between them.
//!
//! The Cauchy-Schwarz divergence is the one quantity here with a closed form
//! for mixtures; everything else (Simpson quadrature, Monte-Carlo KL) exists
//! to cross-check it.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

/// Variance floor for Gaussians built from unconstrained learned parameters.
pub const VAR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim(format!(
                "mean has {} dims, var has {}",
                mean.len(),
                var.len()
            )));
        }
        if mean.is_empty() {
            return Err(Error::arg("Gaussian must have at least one dimension"));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::arg(format!("variance must be positive, got {v}")));
        }
        Ok(Self { mean, var })
    }

    /// Builds a Gaussian from learned (unconstrained) parameters, flooring
    /// variances at [`VAR_FLOOR`] so overlaps stay non-singular.
    pub fn from_learned(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        let var = var.into_iter().map(|v| v.max(VAR_FLOOR)).collect();
        Self::new(mean, var)
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }
}

/// Diagonal Gaussian mixture with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    weights: Vec<f64>,
    components: Vec<DiagGaussian>,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, components: Vec<DiagGaussian>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidMixture("mixture needs K >= 1 components".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights for {} components",
                weights.len(),
                components.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| **w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidMixture(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::InvalidMixture(
                "components have differing dimensions".into(),
            ));
        }
        Ok(Self { weights, components })
    }

    /// Uniform-weight mixture.
    pub fn uniform(components: Vec<DiagGaussian>) -> Result<Self> {
        let k = components.len();
        if k == 0 {
            return Err(Error::InvalidMixture("mixture needs K >= 1 components".into()));
        }
        Self::new(vec![1.0 / k as f64; k], components)
    }

    pub fn single(g: DiagGaussian) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![g],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[DiagGaussian] {
        &self.components
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        let terms: Vec<f64> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| Ok(w.max(f64::MIN_POSITIVE).ln() + log_pdf(c, x)?))
            .collect::<Result<_>>()?;
        Ok(log_sum_exp(&terms))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = GmmDoc {
            weights: self.weights.clone(),
            means: self.components.iter().map(|c| c.mean.clone()).collect(),
            vars: self.components.iter().map(|c| c.var.clone()).collect(),
        };
        serde_json::to_value(doc).expect("mixture serialization cannot fail")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: GmmDoc = serde_json::from_value(value.clone())?;
        if doc.means.len() != doc.vars.len() {
            return Err(Error::InvalidMixture(
                "means and vars have different component counts".into(),
            ));
        }
        let components = doc
            .means
            .into_iter()
            .zip(doc.vars)
            .map(|(m, v)| DiagGaussian::new(m, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.weights, components)
    }
}

#[derive(Serialize, Deserialize)]
struct GmmDoc {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
}

/// Composite-Simpson settings for the 1D quadrature oracle.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub lower: f64,
    pub upper: f64,
    pub panels: usize,
}

impl QuadratureSpec {
    pub fn new(lower: f64, upper: f64, panels: usize) -> Result<Self> {
        if !(lower < upper) {
            return Err(Error::arg(format!("bad quadrature range [{lower}, {upper}]")));
        }
        if panels < 2 || panels % 2 != 0 {
            return Err(Error::arg(format!("panels must be even and >= 2, got {panels}")));
        }
        Ok(Self { lower, upper, panels })
    }

    /// Bounds wide enough for both mixtures: min/max component mean padded
    /// by ten times the largest standard deviation.
    pub fn covering(q: &DiagGmm, p: &DiagGmm, panels: usize) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut max_std: f64 = 0.0;
        for c in q.components().iter().chain(p.components()) {
            lo = lo.min(c.mean()[0]);
            hi = hi.max(c.mean()[0]);
            max_std = max_std.max(c.var()[0].sqrt());
        }
        Self::new(lo - 10.0 * max_std, hi + 10.0 * max_std, panels)
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Log-density of a diagonal Gaussian at `x`.
pub fn log_pdf(g: &DiagGaussian, x: &[f64]) -> Result<f64> {
    if x.len() != g.dim() {
        return Err(Error::dim(format!(
            "point has {} dims, Gaussian has {}",
            x.len(),
            g.dim()
        )));
    }
    let mut acc = 0.0;
    for d in 0..g.dim() {
        let v = g.var[d];
        let delta = x[d] - g.mean[d];
        acc += -0.5 * (LN_2PI + v.ln()) - delta * delta / (2.0 * v);
    }
    Ok(acc)
}

/// log z_{a,b} = log N(mean_a | mean_b, diag(var_a + var_b)); symmetric.
pub fn gaussian_overlap(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!(
            "overlap between {}-dim and {}-dim Gaussians",
            a.dim(),
            b.dim()
        )));
    }
    let mut acc = 0.0;
    for d in 0..a.dim() {
        let s = a.var[d] + b.var[d];
        let delta = a.mean[d] - b.mean[d];
        acc += -0.5 * (LN_2PI + s.ln()) - delta * delta / (2.0 * s);
    }
    Ok(acc)
}

/// Pointwise product of two Gaussian densities as `exp(log_scale) * N(result)`.
pub fn product_of_gaussians(a: &DiagGaussian, b: &DiagGaussian) -> Result<(f64, DiagGaussian)> {
    let log_scale = gaussian_overlap(a, b)?;
    let dim = a.dim();
    let mut mean = Vec::with_capacity(dim);
    let mut var = Vec::with_capacity(dim);
    for d in 0..dim {
        let (va, vb) = (a.var[d], b.var[d]);
        mean.push((a.mean[d] / va + b.mean[d] / vb) / (1.0 / va + 1.0 / vb));
        var.push(va * vb / (va + vb));
    }
    Ok((log_scale, DiagGaussian::new(mean, var)?))
}

fn log_self_overlap_sum(m: &DiagGmm) -> Result<f64> {
    let k = m.len();
    let mut terms = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let lw = m.weights[i].max(f64::MIN_POSITIVE).ln()
                + m.weights[j].max(f64::MIN_POSITIVE).ln();
            terms.push(lw + gaussian_overlap(&m.components[i], &m.components[j])?);
        }
    }
    Ok(log_sum_exp(&terms))
}

/// Closed-form Cauchy-Schwarz divergence between two diagonal Gaussian
/// mixtures: `-log Σ w v z_qp + 0.5 log Σ w w' z_qq + 0.5 log Σ v v' z_pp`,
/// every sum taken in the log domain.
pub fn cs_divergence(q: &DiagGmm, p: &DiagGmm) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::dim(format!(
            "mixtures have dims {} and {}",
            q.dim(),
            p.dim()
        )));
    }
    let mut cross = Vec::with_capacity(q.len() * p.len());
    for (wq, cq) in q.weights.iter().zip(&q.components) {
        for (wp, cp) in p.weights.iter().zip(&p.components) {
            let lw = wq.max(f64::MIN_POSITIVE).ln() + wp.max(f64::MIN_POSITIVE).ln();
            cross.push(lw + gaussian_overlap(cq, cp)?);
        }
    }
    let log_cross = log_sum_exp(&cross);
    Ok(-log_cross + 0.5 * log_self_overlap_sum(q)? + 0.5 * log_self_overlap_sum(p)?)
}

/// Closed-form KL divergence between diagonal Gaussians, summed over dims.
pub fn kl_diag_gaussians(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::dim(format!(
            "KL between {}-dim and {}-dim Gaussians",
            q.dim(),
            p.dim()
        )));
    }
    let mut acc = 0.0;
    for d in 0..q.dim() {
        let (vq, vp) = (q.var[d], p.var[d]);
        let delta = q.mean[d] - p.mean[d];
        acc += 0.5 * ((vp / vq).ln() + (vq + delta * delta) / vp - 1.0);
    }
    Ok(acc)
}

/// Monte-Carlo estimate of KL(q || p) with x ~ q. Deterministic given seed.
pub fn mc_kl(q: &DiagGmm, p: &DiagGmm, samples: usize, rng_seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::arg("mc_kl needs samples >= 1"));
    }
    if q.dim() != p.dim() {
        return Err(Error::dim("mc_kl dimension mismatch"));
    }
    let (xs, _) = sample_gmm(q, samples, rng_seed, None)?;
    let dim = q.dim();
    let mut acc = 0.0;
    let mut point = vec![0.0; dim];
    for i in 0..samples {
        for d in 0..dim {
            point[d] = xs[[i, d]];
        }
        acc += q.log_pdf(&point)? - p.log_pdf(&point)?;
    }
    Ok(acc / samples as f64)
}

/// Simpson-rule evaluation of `-log ∫qp + 0.5 log ∫q² + 0.5 log ∫p²` in 1D.
pub fn cs_divergence_quadrature_1d(q: &DiagGmm, p: &DiagGmm, spec: &QuadratureSpec) -> Result<f64> {
    if q.dim() != 1 || p.dim() != 1 {
        return Err(Error::dim("quadrature oracle is 1D only"));
    }
    for c in q.components().iter().chain(p.components()) {
        let std = c.var()[0].sqrt();
        let m = c.mean()[0];
        if m - 8.0 * std < spec.lower || m + 8.0 * std > spec.upper {
            return Err(Error::arg(format!(
                "quadrature range [{}, {}] does not cover 8 std around mean {m}",
                spec.lower, spec.upper
            )));
        }
    }
    let n = spec.panels;
    let h = (spec.upper - spec.lower) / n as f64;
    let mut int_qp = 0.0;
    let mut int_qq = 0.0;
    let mut int_pp = 0.0;
    for i in 0..=n {
        let x = spec.lower + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let qx = q.log_pdf(&[x])?.exp();
        let px = p.log_pdf(&[x])?.exp();
        int_qp += w * qx * px;
        int_qq += w * qx * qx;
        int_pp += w * px * px;
    }
    let scale = h / 3.0;
    Ok(-(scale * int_qp).ln() + 0.5 * (scale * int_qq).ln() + 0.5 * (scale * int_pp).ln())
}

/// Ancestral sampling from a mixture; a fixed `component` restricts sampling
/// to that component. Returns samples and per-row component labels.
pub fn sample_gmm(
    p: &DiagGmm,
    n: usize,
    rng_seed: u64,
    component: Option<usize>,
) -> Result<(Array2<f64>, Vec<usize>)> {
    if let Some(k) = component {
        if k >= p.len() {
            return Err(Error::arg(format!(
                "component {k} out of range for K={}",
                p.len()
            )));
        }
    }
    let dim = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = match component {
            Some(k) => k,
            None => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut chosen = p.len() - 1;
                for (j, w) in p.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = j;
                        break;
                    }
                }
                chosen
            }
        };
        let c = &p.components[k];
        for d in 0..dim {
            let eps: f64 = StandardNormal.sample(&mut rng);
            out[[i, d]] = c.mean[d] + c.var[d].sqrt() * eps;
        }
        labels.push(k);
    }
    Ok((out, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_mixture_1d(rng: &mut ChaCha8Rng, max_k: usize) -> DiagGmm {
        let k = rng.gen_range(1..=max_k);
        let mut raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        for w in &mut raw {
            *w /= total;
        }
        // renormalize exactly so the simplex invariant holds at 1e-12
        let total: f64 = raw.iter().sum();
        let last = raw.len() - 1;
        raw[last] += 1.0 - total;
        let comps = (0..k)
            .map(|_| {
                DiagGaussian::new(
                    vec![rng.gen_range(-4.0..4.0)],
                    vec![rng.gen_range(0.2..3.0)],
                )
                .unwrap()
            })
            .collect();
        DiagGmm::new(raw, comps).unwrap()
    }

    #[test]
    fn log_pdf_standard_normal() {
        let g = DiagGaussian::standard(1);
        assert_relative_eq!(log_pdf(&g, &[0.0]).unwrap(), -0.9189385332046727, epsilon = 1e-12);
        assert_relative_eq!(log_pdf(&g, &[1.0]).unwrap(), -1.4189385332046727, epsilon = 1e-12);
        let g2 = DiagGaussian::standard(2);
        assert_relative_eq!(log_pdf(&g2, &[0.0, 0.0]).unwrap(), -1.8378770664093453, epsilon = 1e-12);
    }

    #[test]
    fn log_pdf_dimension_mismatch() {
        let g = DiagGaussian::standard(2);
        assert!(log_pdf(&g, &[0.0]).is_err());
    }

    #[test]
    fn overlap_values() {
        let half = DiagGaussian::new(vec![0.0], vec![0.5]).unwrap();
        assert_relative_eq!(
            gaussian_overlap(&half, &half).unwrap(),
            -0.9189385332046727,
            epsilon = 1e-12
        );
        let a = DiagGaussian::standard(1);
        let b = DiagGaussian::new(vec![3.0], vec![1.0]).unwrap();
        // log N(0 | 3, 2) = -0.5 log(4 pi) - 9/4
        let expect = -0.5 * (4.0 * std::f64::consts::PI).ln() - 2.25;
        assert_relative_eq!(gaussian_overlap(&a, &b).unwrap(), expect, epsilon = 1e-12);
        assert_relative_eq!(
            gaussian_overlap(&a, &b).unwrap(),
            gaussian_overlap(&b, &a).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn product_closed_form() {
        let a = DiagGaussian::standard(1);
        let (log_scale, r) = product_of_gaussians(&a, &a).unwrap();
        // N(0,1)*N(0,1) = 1/(2 sqrt(pi)) * N(0, 0.5)
        assert_relative_eq!(log_scale, -(2.0 * std::f64::consts::PI.sqrt()).ln(), epsilon = 1e-12);
        assert_relative_eq!(r.mean()[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(r.var()[0], 0.5, epsilon = 1e-14);

        let b = DiagGaussian::new(vec![1.5], vec![0.7]).unwrap();
        let (log_scale, b2) = product_of_gaussians(&b, &b).unwrap();
        assert_relative_eq!(b2.mean()[0], 1.5, epsilon = 1e-12);

        // pointwise identity at random points
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ls, r) = product_of_gaussians(&a, &b).unwrap();
        for _ in 0..10 {
            let x = [rng.gen_range(-5.0..5.0)];
            let lhs = log_pdf(&a, &x).unwrap() + log_pdf(&b, &x).unwrap();
            let rhs = ls + log_pdf(&r, &x).unwrap();
            assert_relative_eq!(lhs, rhs, epsilon = 1e-10);
        }
        let _ = log_scale;
    }

    #[test]
    fn cs_divergence_identity_and_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_mixture_1d(&mut rng, 4);
            assert!(cs_divergence(&q, &q).unwrap().abs() < 1e-10);
        }
        // equal-variance single Gaussians: D_CS = delta^2 / (4 sigma^2)
        let q = DiagGmm::single(DiagGaussian::standard(1));
        let p = DiagGmm::single(DiagGaussian::new(vec![3.0], vec![1.0]).unwrap());
        assert_relative_eq!(cs_divergence(&q, &p).unwrap(), 2.25, epsilon = 1e-12);
    }

    #[test]
    fn cs_divergence_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q = random_mixture_1d(&mut rng, 3);
            let p = random_mixture_1d(&mut rng, 4);
            let spec = QuadratureSpec::covering(&q, &p, 20_000).unwrap();
            let exact = cs_divergence(&q, &p).unwrap();
            let quad = cs_divergence_quadrature_1d(&q, &p, &spec).unwrap();
            assert_relative_eq!(exact, quad, max_relative = 1e-6, epsilon = 1e-9);
        }
    }

    #[test]
    fn quadrature_reference_cases() {
        let std1 = DiagGmm::single(DiagGaussian::standard(1));
        let spec = QuadratureSpec::covering(&std1, &std1, 20_000).unwrap();
        assert!(cs_divergence_quadrature_1d(&std1, &std1, &spec).unwrap().abs() < 1e-8);
        let shifted = DiagGmm::single(DiagGaussian::new(vec![3.0], vec![1.0]).unwrap());
        let spec = QuadratureSpec::covering(&std1, &shifted, 20_000).unwrap();
        assert_relative_eq!(
            cs_divergence_quadrature_1d(&std1, &shifted, &spec).unwrap(),
            2.25,
            epsilon = 1e-6
        );
    }

    #[test]
    fn quadrature_coverage_error() {
        let q = DiagGmm::single(DiagGaussian::standard(1));
        let spec = QuadratureSpec::new(-2.0, 2.0, 100).unwrap();
        assert!(cs_divergence_quadrature_1d(&q, &q, &spec).is_err());
    }

    #[test]
    fn kl_closed_form_values() {
        let std = DiagGaussian::standard(1);
        assert_relative_eq!(kl_diag_gaussians(&std, &std).unwrap(), 0.0, epsilon = 1e-14);
        let one = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        assert_relative_eq!(kl_diag_gaussians(&one, &std).unwrap(), 0.5, epsilon = 1e-14);
        let wide = DiagGaussian::new(vec![0.0], vec![4.0]).unwrap();
        assert_relative_eq!(
            kl_diag_gaussians(&wide, &std).unwrap(),
            0.5 * (4.0 - 1.0 - 4.0f64.ln()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn mc_kl_statistics() {
        let std = DiagGmm::single(DiagGaussian::standard(1));
        let est = mc_kl(&std, &std, 100_000, 42).unwrap();
        assert!(est.abs() < 0.02, "self KL estimate {est}");
        let one = DiagGmm::single(DiagGaussian::new(vec![1.0], vec![1.0]).unwrap());
        let est = mc_kl(&one, &std, 200_000, 42).unwrap();
        assert!((est - 0.5).abs() < 0.01, "KL estimate {est}");
        assert_eq!(
            mc_kl(&one, &std, 1000, 9).unwrap(),
            mc_kl(&one, &std, 1000, 9).unwrap()
        );
    }

    #[test]
    fn sampling_statistics() {
        let std = DiagGmm::single(DiagGaussian::standard(1));
        let (xs, labels) = sample_gmm(&std, 0, 1, None).unwrap();
        assert_eq!(xs.nrows(), 0);
        assert!(labels.is_empty());

        let (xs, _) = sample_gmm(&std, 100_000, 5, None).unwrap();
        let mean = xs.column(0).mean().unwrap();
        let var = xs.column(0).mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        assert!(mean.abs() < 0.02, "sample mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "sample var {var}");

        let two = DiagGmm::uniform(vec![
            DiagGaussian::new(vec![-3.0], vec![1.0]).unwrap(),
            DiagGaussian::new(vec![3.0], vec![1.0]).unwrap(),
        ])
        .unwrap();
        let (_, labels) = sample_gmm(&two, 100_000, 6, None).unwrap();
        let frac = labels.iter().filter(|l| **l == 0).count() as f64 / labels.len() as f64;
        assert!((frac - 0.5).abs() < 0.01, "component frequency {frac}");

        assert!(sample_gmm(&two, 10, 1, Some(2)).is_err());
        let (_, labels) = sample_gmm(&two, 10, 1, Some(1)).unwrap();
        assert!(labels.iter().all(|l| *l == 1));
    }

    #[test]
    fn dimension_additivity_for_single_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let d = 4;
            let (mut mq, mut vq, mut mp, mut vp) = (vec![], vec![], vec![], vec![]);
            let mut sum_1d = 0.0;
            for _ in 0..d {
                let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(0.3..2.0));
                let (c, e) = (rng.gen_range(-3.0..3.0), rng.gen_range(0.3..2.0));
                sum_1d += cs_divergence(
                    &DiagGmm::single(DiagGaussian::new(vec![a], vec![b]).unwrap()),
                    &DiagGmm::single(DiagGaussian::new(vec![c], vec![e]).unwrap()),
                )
                .unwrap();
                mq.push(a);
                vq.push(b);
                mp.push(c);
                vp.push(e);
            }
            let full = cs_divergence(
                &DiagGmm::single(DiagGaussian::new(mq, vq).unwrap()),
                &DiagGmm::single(DiagGaussian::new(mp, vp).unwrap()),
            )
            .unwrap();
            assert_relative_eq!(full, sum_1d, epsilon = 1e-10);
        }
    }

    #[test]
    fn json_round_trip() {
        let m = DiagGmm::uniform(vec![
            DiagGaussian::new(vec![-1.0, 0.5], vec![1.0, 2.0]).unwrap(),
            DiagGaussian::new(vec![2.0, -0.25], vec![0.5, 0.75]).unwrap(),
        ])
        .unwrap();
        let back = DiagGmm::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn variance_floor_applied() {
        let g = DiagGaussian::from_learned(vec![0.0], vec![0.0]).unwrap();
        assert_eq!(g.var()[0], VAR_FLOOR);
    }

    #[test]
    fn triangle_inequality_counterexample() {
        // Found by random search over 1D singles; kept as a regression case
        // showing D_CS is not a metric: D(a,c) > D(a,b) + D(b,c).
        let a = DiagGmm::single(DiagGaussian::new(vec![0.0], vec![1.0]).unwrap());
        let b = DiagGmm::single(DiagGaussian::new(vec![2.0], vec![1.0]).unwrap());
        let c = DiagGmm::single(DiagGaussian::new(vec![4.0], vec![1.0]).unwrap());
        let dab = cs_divergence(&a, &b).unwrap();
        let dbc = cs_divergence(&b, &c).unwrap();
        let dac = cs_divergence(&a, &c).unwrap();
        assert!(dac > dab + dbc, "{dac} vs {} ", dab + dbc);
    }
}
