//! Encoders, decoders, priors and the training objectives: ELBO and the
//! beta-weighted variant, the importance-weighted bound, CSRAE and
//! MixtureCSRAE, plus the warm-up schedule and the model-selection score.
//!
//! All losses are minimization objectives: `RE` is the negative expected
//! reconstruction log-likelihood, `CS`/`KL` the divergence term, and the
//! total is `RE + coefficient * divergence`.

use ndarray::{Array2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{glorot_init, ParamStore, Value};
use crate::error::{Error, Result};
use crate::gmm::{self, DiagGaussian, DiagGmm, QuadratureSpec};

const LN_2PI: f64 = 1.8378770664093453;
pub const VAR_CLAMP_LO: f64 = 1e-8;
pub const VAR_CLAMP_HI: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, v: &Value) -> Value {
        match self {
            Activation::Relu => v.relu(),
            Activation::Softplus => v.softplus(),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v.clone(),
        }
    }
}

/// Affine layer; weights Glorot-initialized, biases zero.
pub struct Dense {
    pub w: Value,
    pub b: Value,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.insert(format!("{name}.w"), Value::new(glorot_init(in_dim, out_dim, rng)));
        let b = store.insert(format!("{name}.b"), Value::new(Array2::zeros((1, out_dim))));
        Dense { w, b }
    }

    pub fn forward(&self, x: &Value) -> Result<Value> {
        x.matmul(&self.w)?.add(&self.b)
    }
}

/// Fully-connected trunk with one activation between layers.
pub struct Mlp {
    layers: Vec<Dense>,
    activation: Activation,
    out_dim: usize,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut dim = in_dim;
        for (i, h) in hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{prefix}.fc{i}"), dim, *h, rng));
            dim = *h;
        }
        Mlp {
            layers,
            activation,
            out_dim: dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Value) -> Result<Value> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = self.activation.apply(&layer.forward(&h)?);
        }
        Ok(h)
    }
}

/// Shared-trunk encoder with mean and log-variance heads of latent size D.
pub struct MlpEncoder {
    trunk: Mlp,
    mu_head: Dense,
    logvar_head: Dense,
    input_dim: usize,
    latent_dim: usize,
}

impl MlpEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        latent_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let trunk = Mlp::new(store, &format!("{prefix}.trunk"), input_dim, hidden, activation, rng);
        let mu_head = Dense::new(store, &format!("{prefix}.mu"), trunk.out_dim(), latent_dim, rng);
        let logvar_head =
            Dense::new(store, &format!("{prefix}.logvar"), trunk.out_dim(), latent_dim, rng);
        MlpEncoder {
            trunk,
            mu_head,
            logvar_head,
            input_dim,
            latent_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// Forward pass from an already-built input value (used when the input
    /// carries gradients, e.g. relaxed labels in the semi-supervised path).
    pub fn encode_value(&self, x: &Value) -> Result<EncoderOutput> {
        let h = self.trunk.forward(x)?;
        let mu = self.mu_head.forward(&h)?;
        let logvar = self.logvar_head.forward(&h)?;
        let var = logvar.exp().clamp(VAR_CLAMP_LO, VAR_CLAMP_HI);
        for (b, row) in mu.data().rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite encoder mean at batch index {b}"
                )));
            }
        }
        for (b, row) in var.data().rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite encoder variance at batch index {b}"
                )));
            }
        }
        Ok(EncoderOutput { mu, var })
    }
}

/// Per-example posterior parameters, shape (B, D) each.
pub struct EncoderOutput {
    pub mu: Value,
    pub var: Value,
}

/// q_phi(z|x) for a data batch.
pub fn encode(enc: &MlpEncoder, x: &Array2<f64>) -> Result<EncoderOutput> {
    if x.ncols() != enc.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "encoder expects {} input dims, batch has {}",
            enc.input_dim(),
            x.ncols()
        )));
    }
    enc.encode_value(&Value::new(x.clone()))
}

/// z = mu + sqrt(var) * eps.
pub fn reparameterize(out: &EncoderOutput, eps: &Array2<f64>) -> Result<Value> {
    out.mu.add(&out.var.sqrt().mul(&Value::new(eps.clone()))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LikelihoodKind {
    Bernoulli,
    Gaussian,
}

/// Decoder MLP with a Bernoulli-logit head or Gaussian mean/log-variance
/// heads over data space.
pub struct MlpDecoder {
    trunk: Mlp,
    mean_head: Dense,
    logvar_head: Option<Dense>,
    likelihood: LikelihoodKind,
    output_dim: usize,
    input_dim: usize,
}

impl MlpDecoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        latent_dim: usize,
        hidden: &[usize],
        activation: Activation,
        output_dim: usize,
        likelihood: LikelihoodKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let trunk = Mlp::new(store, &format!("{prefix}.trunk"), latent_dim, hidden, activation, rng);
        let mean_head = Dense::new(store, &format!("{prefix}.mean"), trunk.out_dim(), output_dim, rng);
        let logvar_head = match likelihood {
            LikelihoodKind::Gaussian => Some(Dense::new(
                store,
                &format!("{prefix}.logvar"),
                trunk.out_dim(),
                output_dim,
                rng,
            )),
            LikelihoodKind::Bernoulli => None,
        };
        MlpDecoder {
            trunk,
            mean_head,
            logvar_head,
            likelihood,
            output_dim,
            input_dim: latent_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn likelihood(&self) -> LikelihoodKind {
        self.likelihood
    }

    /// Per-example log p(x|z), shape (B, 1).
    pub fn log_likelihood(&self, z: &Value, x: &Array2<f64>) -> Result<Value> {
        let h = self.trunk.forward(z)?;
        match self.likelihood {
            LikelihoodKind::Bernoulli => {
                let logits = self.mean_head.forward(&h)?;
                bernoulli_ll(x, &logits)
            }
            LikelihoodKind::Gaussian => {
                let mean = self.mean_head.forward(&h)?;
                let logvar = self.logvar_head.as_ref().unwrap().forward(&h)?;
                gaussian_ll(x, &mean, &logvar)
            }
        }
    }

    /// Decoder mean in data space (Bernoulli probabilities or Gaussian mean).
    pub fn decode_mean(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        let h = self.trunk.forward(&Value::new(z.clone()))?;
        let out = self.mean_head.forward(&h)?;
        let data = match self.likelihood {
            LikelihoodKind::Bernoulli => out.sigmoid().data().clone(),
            LikelihoodKind::Gaussian => out.data().clone(),
        };
        Ok(data)
    }
}

/// Per-example Bernoulli log-likelihood from logits, shape (B, 1).
/// Uses the `x*l - softplus(l)` form, stable at large |l|.
pub fn bernoulli_ll(x: &Array2<f64>, logits: &Value) -> Result<Value> {
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::arg("bernoulli_ll expects data in [0, 1]"));
    }
    let xv = Value::new(x.clone());
    xv.mul(logits)?.sub(&logits.softplus()).map(|v| v.sum_rows())
}

/// Per-example diagonal Gaussian log-likelihood, shape (B, 1).
pub fn gaussian_ll(x: &Array2<f64>, mean: &Value, logvar: &Value) -> Result<Value> {
    let xv = Value::new(x.clone());
    let delta_sq = xv.sub(mean)?.square();
    let inv_two_var = logvar.neg().exp().scale(0.5);
    let term = logvar
        .add_scalar(LN_2PI)
        .scale(-0.5)
        .sub(&delta_sq.mul(&inv_two_var)?)?;
    Ok(term.sum_rows())
}

/// Prior over the latent space.
pub enum Prior {
    /// N(0, I).
    StandardNormal { dim: usize },
    /// Trainable mixture means and log-variances, fixed uniform weights.
    MoG { mu: Value, logvar: Value },
    /// Fixed pseudo-inputs pushed through the current encoder.
    VampData { pseudo_inputs: Array2<f64> },
}

impl Prior {
    pub fn standard(dim: usize) -> Self {
        Prior::StandardNormal { dim }
    }

    /// MoG prior with means drawn from N(0, I) and log-variances at zero.
    pub fn mog(store: &mut ParamStore, k: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mu = Array2::from_shape_fn((k, dim), |_| StandardNormal.sample(rng));
        Prior::MoG {
            mu: store.insert("prior.mu", Value::new(mu)),
            logvar: store.insert("prior.logvar", Value::new(Array2::zeros((k, dim)))),
        }
    }

    pub fn vamp(pseudo_inputs: Array2<f64>) -> Self {
        Prior::VampData { pseudo_inputs }
    }

    pub fn num_components(&self) -> usize {
        match self {
            Prior::StandardNormal { .. } => 1,
            Prior::MoG { mu, .. } => mu.shape().0,
            Prior::VampData { pseudo_inputs } => pseudo_inputs.nrows(),
        }
    }

    pub fn is_mixture(&self) -> bool {
        !matches!(self, Prior::StandardNormal { .. })
    }

    /// Component parameters as (K, D) values; VampPrior components are the
    /// encoder's posteriors at the pseudo-inputs and therefore carry
    /// gradients into the encoder.
    pub fn components(&self, enc: Option<&MlpEncoder>) -> Result<(Value, Value)> {
        match self {
            Prior::StandardNormal { dim } => Ok((
                Value::new(Array2::zeros((1, *dim))),
                Value::new(Array2::ones((1, *dim))),
            )),
            Prior::MoG { mu, logvar } => {
                Ok((mu.clone(), logvar.exp().clamp(VAR_CLAMP_LO, VAR_CLAMP_HI)))
            }
            Prior::VampData { pseudo_inputs } => {
                let enc = enc.ok_or_else(|| {
                    Error::arg("VampPrior components require the encoder")
                })?;
                let out = enc.encode_value(&Value::new(pseudo_inputs.clone()))?;
                Ok((out.mu, out.var))
            }
        }
    }

    /// Snapshot of the prior as a plain mixture (for sampling and oracles).
    pub fn to_gmm(&self, enc: Option<&MlpEncoder>) -> Result<DiagGmm> {
        let (mu, var) = self.components(enc)?;
        let mu = mu.data().clone();
        let var = var.data().clone();
        let comps = mu
            .axis_iter(Axis(0))
            .zip(var.axis_iter(Axis(0)))
            .map(|(m, v)| DiagGaussian::from_learned(m.to_vec(), v.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        DiagGmm::uniform(comps)
    }
}

/// Per-example log p(z) under the prior, shape (B, 1).
pub fn prior_log_pdf(z: &Value, prior: &Prior, enc: Option<&MlpEncoder>) -> Result<Value> {
    let (mu_p, var_p) = prior.components(enc)?;
    let k = prior.num_components() as f64;
    let zero_var = Value::new(Array2::zeros({
        let (b, d) = z.shape();
        (b, d)
    }));
    let log_dens = Value::pairwise_log_overlap(z, &zero_var, &mu_p, &var_p)?;
    Ok(log_dens.logsumexp_rows().add_scalar(-k.ln()))
}

/// Per-example log q(z|x), shape (B, 1).
pub fn posterior_log_pdf(z: &Value, q: &EncoderOutput) -> Result<Value> {
    let delta_sq = z.sub(&q.mu)?.square();
    let term = q
        .var
        .log()
        .add_scalar(LN_2PI)
        .scale(-0.5)
        .sub(&delta_sq.div(&q.var.scale(2.0))?)?;
    Ok(term.sum_rows())
}

/// Per-example closed-form CS divergence between the posterior single
/// Gaussians (rows of `q`) and the uniform mixture prior, shape (B, 1).
pub fn cs_per_example(q: &EncoderOutput, prior: &Prior, enc: Option<&MlpEncoder>) -> Result<Value> {
    let (mu_p, var_p) = prior.components(enc)?;
    let k = prior.num_components() as f64;

    // -log sum_k (1/K) z_{q,k}
    let cross = Value::pairwise_log_overlap(&q.mu, &q.var, &mu_p, &var_p)?;
    let log_cross = cross.logsumexp_rows().add_scalar(-k.ln());

    // 0.5 log z_{q,q}: single-Gaussian self-overlap = prod_d N(0 | 0, 2 var_d)
    let log_self_q = q
        .var
        .log()
        .add_scalar(LN_2PI + std::f64::consts::LN_2)
        .scale(-0.5)
        .sum_rows();

    // 0.5 log sum_{k,k'} (1/K^2) z_{k,k'}
    let pp = Value::pairwise_log_overlap(&mu_p, &var_p, &mu_p, &var_p)?;
    let log_self_p = pp
        .logsumexp_rows()
        .transpose()
        .logsumexp_rows()
        .add_scalar(-2.0 * k.ln());

    log_cross
        .neg()
        .add(&log_self_q.scale(0.5))?
        .add(&log_self_p.scale(0.5))
}

/// Loss, reconstruction error and divergence term, each a scalar batch mean.
pub struct LossParts {
    pub loss: Value,
    pub re: Value,
    pub divergence: Value,
}

/// beta-weighted ELBO loss `RE + beta * KL` with the closed-form Gaussian KL.
/// Only defined for the standard-normal prior.
pub fn elbo_loss(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    prior: &Prior,
    x: &Array2<f64>,
    beta: f64,
    noise: &Array2<f64>,
) -> Result<LossParts> {
    if prior.is_mixture() {
        return Err(Error::arg(
            "elbo_loss requires a single-Gaussian prior: the mixture KL has no closed form",
        ));
    }
    let q = encode(enc, x)?;
    let z = reparameterize(&q, noise)?;
    let re = dec.log_likelihood(&z, x)?.mean().neg();
    // KL(N(mu, var) || N(0, I)) = 0.5 sum(var + mu^2 - 1 - log var)
    let kl = q
        .var
        .add(&q.mu.square())?
        .add_scalar(-1.0)
        .sub(&q.var.log())?
        .scale(0.5)
        .sum_rows()
        .mean();
    let loss = re.add(&kl.scale(beta))?;
    Ok(LossParts {
        loss,
        re,
        divergence: kl,
    })
}

/// Importance-weighted bound (negated into a loss): mean over the batch of
/// `-(logsumexp_s log w_s - log S)`.
pub fn iwae_bound(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    prior: &Prior,
    x: &Array2<f64>,
    noise: &[Array2<f64>],
) -> Result<Value> {
    if noise.is_empty() {
        return Err(Error::arg("iwae_bound needs n_iw >= 1 noise draws"));
    }
    let q = encode(enc, x)?;
    let mut log_weights: Option<Value> = None;
    for eps in noise {
        let z = reparameterize(&q, eps)?;
        let lw = dec
            .log_likelihood(&z, x)?
            .add(&prior_log_pdf(&z, prior, Some(enc))?)?
            .sub(&posterior_log_pdf(&z, &q)?)?;
        log_weights = Some(match log_weights {
            None => lw,
            Some(acc) => acc.concat(&lw)?,
        });
    }
    let lw = log_weights.unwrap();
    let bound = lw
        .logsumexp_rows()
        .add_scalar(-(noise.len() as f64).ln())
        .mean();
    Ok(bound.neg())
}

/// CSRAE loss `RE + lambda * D_CS(q(z|x) || p(z))` with the closed-form CS
/// term; differentiable through encoder, decoder and prior parameters.
pub fn csrae_loss(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    prior: &Prior,
    x: &Array2<f64>,
    lambda: f64,
    noise: &Array2<f64>,
) -> Result<LossParts> {
    let q = encode(enc, x)?;
    let z = reparameterize(&q, noise)?;
    let re = dec.log_likelihood(&z, x)?.mean().neg();
    let cs = cs_per_example(&q, prior, Some(enc))?.mean();
    let loss = re.add(&cs.scale(lambda))?;
    Ok(LossParts {
        loss,
        re,
        divergence: cs,
    })
}

/// MixtureCSRAE: the same objective evaluated against a K-component mixture
/// prior (MoG or VampPrior components).
pub fn mixture_csrae_loss(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    prior: &Prior,
    x: &Array2<f64>,
    lambda: f64,
    noise: &Array2<f64>,
) -> Result<LossParts> {
    csrae_loss(enc, dec, prior, x, lambda, noise)
}

/// Linear warm-up: `target * min(1, epoch / W)`; `W = 0` disables warm-up.
pub fn warmup_coefficient(epoch: usize, warmup_epochs: usize, target: f64) -> f64 {
    if warmup_epochs == 0 {
        return target;
    }
    target * (epoch as f64 / warmup_epochs as f64).min(1.0)
}

/// Validation model-selection score: reconstruction error plus unweighted CS
/// divergence, lower is better.
pub fn model_selection_score(re: f64, cs: f64) -> f64 {
    re + cs
}

/// Quadrature check of the loss decomposition into log-marginal likelihood,
/// posterior KL, prior KL and the weighted CS term, for D = 1 models.
/// Returns the absolute residual.
pub fn decomposition_check_1d(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    prior: &Prior,
    x: &Array2<f64>,
    lambda: f64,
    grid: &QuadratureSpec,
) -> Result<f64> {
    if enc.latent_dim() != 1 {
        return Err(Error::arg("decomposition check requires latent dimension 1"));
    }
    if x.nrows() != 1 {
        return Err(Error::arg("decomposition check takes a single example"));
    }
    let q = encode(enc, x)?;
    let (q_mu, q_var) = (q.mu.data()[[0, 0]], q.var.data()[[0, 0]]);
    let q_gauss = DiagGaussian::new(vec![q_mu], vec![q_var])?;
    let prior_gmm = prior.to_gmm(Some(enc))?;
    if prior_gmm.dim() != 1 {
        return Err(Error::arg("decomposition check requires a 1D prior"));
    }
    let q_std = q_var.sqrt();
    if q_mu - 8.0 * q_std < grid.lower || q_mu + 8.0 * q_std > grid.upper {
        return Err(Error::arg("grid does not cover the posterior"));
    }
    for c in prior_gmm.components() {
        let std = c.var()[0].sqrt();
        if c.mean()[0] - 8.0 * std < grid.lower || c.mean()[0] + 8.0 * std > grid.upper {
            return Err(Error::arg("grid does not cover the prior"));
        }
    }

    let n = grid.panels;
    let h = (grid.upper - grid.lower) / n as f64;
    let zs: Vec<f64> = (0..=n).map(|i| grid.lower + i as f64 * h).collect();
    let simpson = |i: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };

    // decoder log-likelihood over the grid in one batch
    let z_batch = Array2::from_shape_vec((n + 1, 1), zs.clone()).unwrap();
    let x_rep = {
        let mut rep = Array2::zeros((n + 1, x.ncols()));
        for mut row in rep.rows_mut() {
            row.assign(&x.row(0));
        }
        rep
    };
    let ll_grid: Vec<f64> = dec
        .log_likelihood(&Value::new(z_batch), &x_rep)?
        .data()
        .column(0)
        .to_vec();

    let mut log_px_terms = Vec::with_capacity(n + 1);
    let mut re_ll = 0.0;
    let mut kl_prior = 0.0;
    let mut int_qp = 0.0;
    let mut int_qq = 0.0;
    let mut int_pp = 0.0;
    let mut joint_under_q = 0.0; // int q(z) [ll(z) + log p(z)] dz
    let mut entropy_term = 0.0; // int q log q
    for (i, &z) in zs.iter().enumerate() {
        let w = simpson(i) * h / 3.0;
        let log_q = gmm::log_pdf(&q_gauss, &[z])?;
        let log_p = prior_gmm.log_pdf(&[z])?;
        let qz = log_q.exp();
        let pz = log_p.exp();
        log_px_terms.push(w.ln() + ll_grid[i] + log_p);
        re_ll += w * qz * ll_grid[i];
        kl_prior += w * qz * (log_q - log_p);
        joint_under_q += w * qz * (ll_grid[i] + log_p);
        entropy_term += w * qz * log_q;
        int_qp += w * qz * pz;
        int_qq += w * qz * qz;
        int_pp += w * pz * pz;
    }
    let log_px = gmm::log_sum_exp(&log_px_terms);
    // KL(q || p(z|x)) = int q log q - int q [ll + log p] + log p(x)
    let kl_post = entropy_term - joint_under_q + log_px;
    let cs = -int_qp.ln() + 0.5 * int_qq.ln() + 0.5 * int_pp.ln();

    let l_csrae = re_ll - lambda * cs;
    let decomposed = log_px - kl_post + kl_prior - lambda * cs;
    Ok((l_csrae - decomposed).abs())
}
