//! Semi-supervised objectives: the labelled loss (observed class, decoder
//! conditioned on a label embedding), the unlabelled marginalization over
//! classes, the combined objective with a classification term, and the
//! Gumbel-Softmax single-sample path for multi-output labels.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Value};
use crate::error::{Error, Result};
use crate::models::{encode, reparameterize, Activation, Dense, Mlp, MlpDecoder, MlpEncoder, Prior};

/// How the unlabelled marginal is formed from the per-class labelled losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabelledMode {
    /// Classifier-weighted expectation minus classifier entropy (default).
    QWeighted,
    /// Plain unweighted sum of the per-class losses.
    LiteralSum,
}

/// Weights and knobs of the semi-supervised objective.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SslConfig {
    pub lambda: f64,
    pub beta: f64,
    pub alpha: f64,
    pub tau: f64,
    /// Class prior; `None` means uniform. For multi-output heads the same
    /// prior applies to every output.
    pub prior_y: Option<Vec<f64>>,
    pub mode: UnlabelledMode,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            lambda: 1.0,
            beta: 1.0,
            alpha: 1.0,
            tau: 0.5,
            prior_y: None,
            mode: UnlabelledMode::QWeighted,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("alpha", self.alpha),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::arg(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::arg("tau must be finite and > 0"));
        }
        if let Some(p) = &self.prior_y {
            if p.iter().any(|v| *v <= 0.0) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
                return Err(Error::arg("class prior must be positive and sum to 1"));
            }
        }
        Ok(())
    }

    fn prior_for(&self, classes: usize) -> Result<Vec<f64>> {
        match &self.prior_y {
            None => Ok(vec![1.0 / classes as f64; classes]),
            Some(p) => {
                if p.len() != classes {
                    return Err(Error::arg(format!(
                        "class prior has {} entries, head has {classes} classes",
                        p.len()
                    )));
                }
                Ok(p.clone())
            }
        }
    }
}

/// q_phi(y|x): shared MLP trunk with one logit head per output.
/// Single-label models use one output with K classes; multi-label models use
/// L outputs with 2 classes each.
pub struct ClassifierHead {
    trunk: Mlp,
    heads: Vec<Dense>,
    classes: usize,
}

impl ClassifierHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        outputs: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if outputs == 0 || classes < 2 {
            return Err(Error::arg("classifier needs >= 1 output with >= 2 classes"));
        }
        let trunk = Mlp::new(store, &format!("{prefix}.trunk"), input_dim, hidden, activation, rng);
        let heads = (0..outputs)
            .map(|l| Dense::new(store, &format!("{prefix}.out{l}"), trunk.out_dim(), classes, rng))
            .collect();
        Ok(ClassifierHead {
            trunk,
            heads,
            classes,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.heads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    /// Per-output logits, each (B, classes).
    pub fn logits(&self, x: &Array2<f64>) -> Result<Vec<Value>> {
        let h = self.trunk.forward(&Value::new(x.clone()))?;
        self.heads.iter().map(|head| head.forward(&h)).collect()
    }

    /// Predicted class per output, by argmax of the logits.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<Vec<usize>>> {
        let logits = self.logits(x)?;
        Ok(logits
            .iter()
            .map(|l| {
                l.data()
                    .rows()
                    .into_iter()
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                            .unwrap()
                            .0
                    })
                    .collect()
            })
            .collect())
    }
}

/// h_y: MLP embedding of the (possibly relaxed) labels, concatenated over
/// outputs, fed to the decoder alongside z.
pub struct LabelEmbedding {
    net: Mlp,
    input_dim: usize,
}

impl LabelEmbedding {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        outputs: usize,
        classes: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let input_dim = outputs * classes;
        let net = Mlp::new(store, prefix, input_dim, hidden, activation, rng);
        LabelEmbedding { net, input_dim }
    }

    pub fn out_dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn embed(&self, ys: &[Value]) -> Result<Value> {
        let mut joined = ys
            .first()
            .ok_or_else(|| Error::arg("label embedding needs at least one output"))?
            .clone();
        for y in &ys[1..] {
            joined = joined.concat(y)?;
        }
        if joined.shape().1 != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "label embedding expects {} label dims, got {}",
                self.input_dim,
                joined.shape().1
            )));
        }
        self.net.forward(&joined)
    }
}

fn check_one_hot(y: &Array2<f64>) -> Result<()> {
    for (i, row) in y.rows().into_iter().enumerate() {
        let ones = row.iter().filter(|v| **v == 1.0).count();
        let zeros = row.iter().filter(|v| **v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::arg(format!("malformed one-hot label at row {i}")));
        }
    }
    Ok(())
}

/// KL(Cat(softmax(logits)) || Cat(prior)) per example, shape (B, 1).
pub fn categorical_kl(logits: &Value, prior: &[f64]) -> Result<Value> {
    if logits.shape().1 != prior.len() {
        return Err(Error::dim(format!(
            "logits have {} classes, prior has {}",
            logits.shape().1,
            prior.len()
        )));
    }
    let log_prior = Value::row(&prior.iter().map(|p| p.ln()).collect::<Vec<_>>());
    let probs = logits.softmax_rows();
    let diff = logits.log_softmax_rows()?.sub(&log_prior)?;
    Ok(probs.mul(&diff)?.sum_rows())
}

/// Per-example labelled loss for already-built (possibly relaxed) labels:
/// `-log p(x|z, h_y) + lambda * CS + beta * sum_l KL(q(y_l|x) || prior)`.
#[allow(clippy::too_many_arguments)]
fn labelled_per_example(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    head: &ClassifierHead,
    embed: &LabelEmbedding,
    prior: &Prior,
    x: &Array2<f64>,
    ys: &[Value],
    cfg: &SslConfig,
    noise: &Array2<f64>,
) -> Result<Value> {
    let q = encode(enc, x)?;
    let z = reparameterize(&q, noise)?;
    let h_y = embed.embed(ys)?;
    let ll = dec.log_likelihood(&z.concat(&h_y)?, x)?;
    let mut per = ll.neg();
    if cfg.lambda != 0.0 {
        let cs = crate::models::cs_per_example(&q, prior, Some(enc))?;
        per = per.add(&cs.scale(cfg.lambda))?;
    }
    if cfg.beta != 0.0 {
        let prior_y = cfg.prior_for(head.num_classes())?;
        for logits in head.logits(x)? {
            per = per.add(&categorical_kl(&logits, &prior_y)?.scale(cfg.beta))?;
        }
    }
    Ok(per)
}

/// Labelled loss (batch mean) for observed one-hot labels, one array per
/// classifier output.
#[allow(clippy::too_many_arguments)]
pub fn labelled_loss(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    head: &ClassifierHead,
    embed: &LabelEmbedding,
    prior: &Prior,
    x: &Array2<f64>,
    y: &[Array2<f64>],
    cfg: &SslConfig,
    noise: &Array2<f64>,
) -> Result<Value> {
    cfg.validate()?;
    if y.len() != head.num_outputs() {
        return Err(Error::arg(format!(
            "expected {} label arrays, got {}",
            head.num_outputs(),
            y.len()
        )));
    }
    let ys: Vec<Value> = y
        .iter()
        .map(|arr| {
            check_one_hot(arr)?;
            Ok(Value::new(arr.clone()))
        })
        .collect::<Result<_>>()?;
    Ok(labelled_per_example(enc, dec, head, embed, prior, x, &ys, cfg, noise)?.mean())
}

const MAX_ENUMERATION: usize = 64;

/// Unlabelled loss (batch mean) by exact enumeration over the classes of a
/// single-output head.
pub fn unlabelled_loss(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    head: &ClassifierHead,
    embed: &LabelEmbedding,
    prior: &Prior,
    x: &Array2<f64>,
    cfg: &SslConfig,
    noise: &Array2<f64>,
) -> Result<Value> {
    cfg.validate()?;
    if head.num_outputs() != 1 {
        return Err(Error::arg(
            "enumeration handles a single output; use multilabel_unlabelled_loss",
        ));
    }
    let k = head.num_classes();
    if k > MAX_ENUMERATION {
        return Err(Error::arg(format!(
            "{k} classes is too many to enumerate; use the Gumbel-Softmax path"
        )));
    }
    let b = x.nrows();
    let mut per_class: Option<Value> = None;
    for c in 0..k {
        let mut y = Array2::zeros((b, k));
        y.column_mut(c).fill(1.0);
        let l_c = labelled_per_example(
            enc,
            dec,
            head,
            embed,
            prior,
            x,
            &[Value::new(y)],
            cfg,
            noise,
        )?;
        per_class = Some(match per_class {
            None => l_c,
            Some(acc) => acc.concat(&l_c)?,
        });
    }
    let losses = per_class.unwrap(); // (B, K)
    match cfg.mode {
        UnlabelledMode::LiteralSum => Ok(losses.sum_rows().mean()),
        UnlabelledMode::QWeighted => {
            let logits = &head.logits(x)?[0];
            let q = logits.softmax_rows();
            let log_q = logits.log_softmax_rows()?;
            // E_q[L_ssl] - H(q) = sum_c q_c L_c + sum_c q_c log q_c
            let expected = q.mul(&losses)?.sum_rows();
            let neg_entropy = q.mul(&log_q)?.sum_rows();
            Ok(expected.add(&neg_entropy)?.mean())
        }
    }
}

/// A labelled minibatch: inputs, per-output one-hot labels, and z noise.
pub struct LabelledBatch<'a> {
    pub x: &'a Array2<f64>,
    pub y: &'a [Array2<f64>],
    pub noise: &'a Array2<f64>,
}

/// An unlabelled minibatch: inputs and z noise.
pub struct UnlabelledBatch<'a> {
    pub x: &'a Array2<f64>,
    pub noise: &'a Array2<f64>,
}

/// J = E_lab[L_ssl] + E_unlab[U_ssl] + alpha * E_lab[-log q(y|x)].
#[allow(clippy::too_many_arguments)]
pub fn combined_objective(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    head: &ClassifierHead,
    embed: &LabelEmbedding,
    prior: &Prior,
    labelled: Option<LabelledBatch<'_>>,
    unlabelled: Option<UnlabelledBatch<'_>>,
    cfg: &SslConfig,
) -> Result<Value> {
    cfg.validate()?;
    let labelled = labelled.filter(|b| b.x.nrows() > 0);
    let unlabelled = unlabelled.filter(|b| b.x.nrows() > 0);
    if labelled.is_none() && unlabelled.is_none() {
        return Err(Error::arg("both batches are empty"));
    }
    let mut total: Option<Value> = None;
    let mut accumulate = |term: Value| {
        total = Some(match total.take() {
            None => term,
            Some(acc) => acc.add(&term).unwrap(),
        });
    };
    if let Some(batch) = &labelled {
        accumulate(labelled_loss(
            enc, dec, head, embed, prior, batch.x, batch.y, cfg, batch.noise,
        )?);
        if cfg.alpha != 0.0 {
            // cross-entropy of the observed labels under the classifier
            let logits = head.logits(batch.x)?;
            for (l, y) in batch.y.iter().enumerate() {
                let ce = Value::new(y.clone())
                    .mul(&logits[l].log_softmax_rows()?)?
                    .sum_rows()
                    .mean()
                    .neg();
                accumulate(ce.scale(cfg.alpha));
            }
        }
    }
    if let Some(batch) = &unlabelled {
        accumulate(unlabelled_loss(
            enc, dec, head, embed, prior, batch.x, cfg, batch.noise,
        )?);
    }
    Ok(total.unwrap())
}

/// Draw standard Gumbel noise of the given shape.
pub fn sample_gumbel(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        -(-u.ln()).ln()
    })
}

/// Relaxed categorical sample softmax((h + g) / tau) for given Gumbel noise.
pub fn gumbel_softmax_with_noise(logits: &Value, tau: f64, g: &Array2<f64>) -> Result<Value> {
    if !(tau > 0.0) {
        return Err(Error::arg("tau must be > 0"));
    }
    Ok(logits.add(&Value::new(g.clone()))?.scale(1.0 / tau).softmax_rows())
}

/// Relaxed categorical sample with fresh Gumbel noise.
pub fn gumbel_softmax_sample(logits: &Value, tau: f64, rng: &mut ChaCha8Rng) -> Result<Value> {
    let (rows, cols) = logits.shape();
    let g = sample_gumbel(rows, cols, rng);
    gumbel_softmax_with_noise(logits, tau, &g)
}

/// Single-sample unlabelled loss for multi-output labels: one relaxed
/// Gumbel-Softmax draw per output replaces the exponential enumeration.
/// `gumbel` holds frozen noise per output (same shape as the logits);
/// differentiable end-to-end with the relaxed labels fed to the decoder.
#[allow(clippy::too_many_arguments)]
pub fn multilabel_unlabelled_loss(
    enc: &MlpEncoder,
    dec: &MlpDecoder,
    head: &ClassifierHead,
    embed: &LabelEmbedding,
    prior: &Prior,
    x: &Array2<f64>,
    cfg: &SslConfig,
    noise: &Array2<f64>,
    gumbel: &[Array2<f64>],
) -> Result<Value> {
    cfg.validate()?;
    if gumbel.len() != head.num_outputs() {
        return Err(Error::arg(format!(
            "expected {} Gumbel noise arrays, got {}",
            head.num_outputs(),
            gumbel.len()
        )));
    }
    let logits = head.logits(x)?;
    let mut ys = Vec::with_capacity(logits.len());
    // sampled log q(y|x), the single-draw counterpart of the negative entropy
    let mut log_q_sample: Option<Value> = None;
    for (l, lg) in logits.iter().enumerate() {
        let y = gumbel_softmax_with_noise(lg, cfg.tau, &gumbel[l])?;
        let term = y.mul(&lg.log_softmax_rows()?)?.sum_rows();
        log_q_sample = Some(match log_q_sample {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
        ys.push(y);
    }
    let per = labelled_per_example(enc, dec, head, embed, prior, x, &ys, cfg, noise)?;
    match cfg.mode {
        UnlabelledMode::LiteralSum => Ok(per.mean()),
        UnlabelledMode::QWeighted => Ok(per.add(&log_q_sample.unwrap())?.mean()),
    }
}

/// Stream of class-balanced minibatches, cycling over outputs round-robin.
/// Batch `t` targets output `t mod L` and draws half its rows from that
/// output's positive examples and half from the negatives, undersampling the
/// majority class.
pub struct BalancedBatchIter {
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
    batch_size: usize,
    rng: ChaCha8Rng,
    step: usize,
}

impl BalancedBatchIter {
    /// `labels` is (N, L) with entries 0/1.
    pub fn new(labels: &Array2<f64>, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(Error::arg("batch size must be even and positive"));
        }
        let l = labels.ncols();
        if l == 0 || labels.nrows() == 0 {
            return Err(Error::arg("labels must be non-empty"));
        }
        let mut positives = vec![Vec::new(); l];
        let mut negatives = vec![Vec::new(); l];
        for (i, row) in labels.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v == 1.0 {
                    positives[j].push(i);
                } else if *v == 0.0 {
                    negatives[j].push(i);
                } else {
                    return Err(Error::arg(format!(
                        "label at ({i}, {j}) is not 0 or 1"
                    )));
                }
            }
        }
        for j in 0..l {
            if positives[j].is_empty() {
                return Err(Error::Data(format!("output {j} has no positive examples")));
            }
            if negatives[j].is_empty() {
                return Err(Error::Data(format!("output {j} has no negative examples")));
            }
        }
        Ok(BalancedBatchIter {
            positives,
            negatives,
            batch_size,
            rng: rand::SeedableRng::seed_from_u64(seed),
            step: 0,
        })
    }

    pub fn num_outputs(&self) -> usize {
        self.positives.len()
    }

    fn draw(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if pool.len() >= n {
            rand::seq::index::sample(rng, pool.len(), n)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        } else {
            // minority class smaller than half a batch: sample with replacement
            (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        }
    }
}

impl Iterator for BalancedBatchIter {
    /// (active output, example indices); the first half of the indices are
    /// positives for that output, the second half negatives.
    type Item = (usize, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        let output = self.step % self.positives.len();
        self.step += 1;
        let half = self.batch_size / 2;
        let mut idx = Self::draw(&self.positives[output], half, &mut self.rng);
        idx.extend(Self::draw(&self.negatives[output], half, &mut self.rng));
        Some((output, idx))
    }
}
