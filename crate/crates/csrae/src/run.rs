//! Experiment engine: dataset assembly, model construction, the training
//! loop with warm-up and early stopping, checkpointing, metric logging, and
//! the toy-fit / lambda-sweep / eval / sample entry points used by the CLI.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::{AdamState, ParamStore, Value};
use crate::config::{DatasetSpec, ExperimentConfig, ObjectiveSpec, PriorSpec};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::eval;
use crate::gmm;
use crate::models::{
    self, cs_per_example, encode, reparameterize, MlpDecoder, MlpEncoder, Prior,
};
use crate::semisup::{
    combined_objective, ClassifierHead, LabelEmbedding, LabelledBatch, SslConfig, UnlabelledBatch,
};

// independent seed streams derived from the experiment seed
const STREAM_SHUFFLE: usize = 1;
const STREAM_NOISE: usize = 2;
const STREAM_EVAL: usize = 3;
const STREAM_LABELMASK: usize = 4;

fn stream_seed(seed: u64, stream: usize, epoch: usize, batch: usize) -> u64 {
    data::derive_seed(seed.wrapping_add(stream as u64), epoch, batch)
}

/// Classifier and label-embedding half of a semi-supervised model.
pub struct SslModel {
    pub head: ClassifierHead,
    pub embed: LabelEmbedding,
    pub cfg: SslConfig,
    pub labelled_fraction: f64,
}

/// A fully assembled model: parameters plus the networks borrowing them.
pub struct Model {
    pub store: ParamStore,
    pub enc: MlpEncoder,
    pub dec: MlpDecoder,
    pub prior: Prior,
    pub ssl: Option<SslModel>,
}

/// Materialize the dataset named by the config.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let mut d = match &config.dataset.source {
        DatasetSpec::Pinwheel {
            n,
            clusters,
            radial_std,
            tangential_std,
            rate,
        } => data::gen_pinwheel(*n, *clusters, *radial_std, *tangential_std, *rate, config.seed)?,
        DatasetSpec::TwoGaussian1d { n } => data::gen_two_gaussian_1d(*n, config.seed)?,
        DatasetSpec::Idx { images, labels } => data::load_idx(images, labels.as_deref())?,
        DatasetSpec::Csv {
            path,
            label_cols,
            has_header,
        } => data::load_csv_labeled(path, label_cols, *has_header)?,
    };
    d.binarization = config.dataset.binarization;
    Ok(d)
}

/// Seeded train/val/test split; defaults to 80/10/10 when the config does not
/// fix the sizes.
pub fn split_dataset(config: &ExperimentConfig, full: &Dataset) -> Result<(Dataset, Dataset, Dataset)> {
    let counts = match config.dataset.split {
        Some(c) => c,
        None => {
            let n = full.len();
            let train = n * 8 / 10;
            let val = n / 10;
            (train, val, n - train - val)
        }
    };
    data::split(full, counts, config.seed)
}

fn label_arity(train: &Dataset) -> Result<(usize, usize)> {
    let labels = train
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("semi-supervised objective needs labels".into()))?;
    let outputs = labels.ncols();
    let classes = if outputs == 1 {
        (labels.iter().copied().max().unwrap_or(0) + 1).max(2) as usize
    } else {
        if labels.iter().any(|v| *v > 1) {
            return Err(Error::Data(
                "multi-output labels must be binary (0/1)".into(),
            ));
        }
        2
    };
    Ok((outputs, classes))
}

/// Build the model described by the config, deterministically from its seed.
/// `train` supplies the input dimension, VampPrior pseudo-inputs and label
/// arity.
pub fn build_model(config: &ExperimentConfig, train: &Dataset) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let input_dim = train.dim();
    let m = &config.model;
    let enc = MlpEncoder::new(
        &mut store,
        "enc",
        input_dim,
        &m.encoder_hidden,
        m.activation,
        m.latent_dim,
        &mut rng,
    );

    let ssl_spec = match &config.objective {
        ObjectiveSpec::Ssl {
            lambda,
            beta,
            alpha,
            tau,
            mode,
            labelled_fraction,
            classifier_hidden,
            embed_hidden,
        } => {
            let (outputs, classes) = label_arity(train)?;
            let embed = LabelEmbedding::new(
                &mut store,
                "embed",
                outputs,
                classes,
                embed_hidden,
                m.activation,
                &mut rng,
            );
            Some((
                embed,
                classifier_hidden.clone(),
                outputs,
                classes,
                SslConfig {
                    lambda: *lambda,
                    beta: *beta,
                    alpha: *alpha,
                    tau: *tau,
                    mode: mode.unwrap_or(crate::semisup::UnlabelledMode::QWeighted),
                    prior_y: None,
                },
                *labelled_fraction,
            ))
        }
        _ => None,
    };

    let dec_input = m.latent_dim
        + ssl_spec
            .as_ref()
            .map(|(embed, ..)| embed.out_dim())
            .unwrap_or(0);
    let dec = MlpDecoder::new(
        &mut store,
        "dec",
        dec_input,
        &m.decoder_hidden,
        m.activation,
        input_dim,
        m.likelihood,
        &mut rng,
    );

    let ssl = match ssl_spec {
        None => None,
        Some((embed, classifier_hidden, outputs, classes, cfg, labelled_fraction)) => {
            let head = ClassifierHead::new(
                &mut store,
                "cls",
                input_dim,
                &classifier_hidden,
                m.activation,
                outputs,
                classes,
                &mut rng,
            )?;
            Some(SslModel {
                head,
                embed,
                cfg,
                labelled_fraction,
            })
        }
    };

    let prior = match &config.prior {
        PriorSpec::Standard => Prior::standard(m.latent_dim),
        PriorSpec::Mog { k } => Prior::mog(&mut store, *k, m.latent_dim, &mut rng),
        PriorSpec::Vamp { k } => {
            if *k > train.len() {
                return Err(Error::arg(format!(
                    "VampPrior wants {k} pseudo-inputs, training split has {}",
                    train.len()
                )));
            }
            let idx: Vec<usize> = (0..*k).collect();
            Prior::vamp(train.subset(&idx).features)
        }
    };

    Ok(Model {
        store,
        enc,
        dec,
        prior,
        ssl,
    })
}

fn gaussian_noise(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

fn one_hot_labels(labels: &Array2<i64>, rows: &[usize], outputs: usize, classes: usize) -> Vec<Array2<f64>> {
    (0..outputs)
        .map(|l| {
            let mut y = Array2::zeros((rows.len(), classes));
            for (i, &r) in rows.iter().enumerate() {
                y[[i, labels[[r, l]] as usize]] = 1.0;
            }
            y
        })
        .collect()
}

/// Which training rows keep their labels, drawn once per experiment.
fn labelled_mask(n: usize, fraction: f64, seed: u64) -> Vec<bool> {
    let count = (fraction * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, STREAM_LABELMASK, 0, 0));
    idx.shuffle(&mut rng);
    let mut mask = vec![false; n];
    for &i in idx.iter().take(count) {
        mask[i] = true;
    }
    mask
}

#[allow(clippy::too_many_arguments)]
fn minibatch_loss(
    model: &Model,
    config: &ExperimentConfig,
    train: &Dataset,
    batch_rows: &[usize],
    mask: &[bool],
    weight: f64,
    epoch: usize,
    batch_index: usize,
) -> Result<Value> {
    let x = train.subset(batch_rows).features;
    let x = data::binarize(&x, train.binarization, epoch, batch_index, config.seed)?;
    let latent = config.model.latent_dim;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(stream_seed(
        config.seed,
        STREAM_NOISE,
        epoch,
        batch_index,
    ));
    match &config.objective {
        ObjectiveSpec::Elbo { beta } => {
            let eps = gaussian_noise(x.nrows(), latent, &mut noise_rng);
            let scaled = if config.optimizer.warmup_epochs > 0 {
                models::warmup_coefficient(epoch, config.optimizer.warmup_epochs, *beta)
            } else {
                *beta
            };
            Ok(models::elbo_loss(&model.enc, &model.dec, &model.prior, &x, scaled, &eps)?.loss)
        }
        ObjectiveSpec::Iwae { n_iw } => {
            let eps: Vec<Array2<f64>> = (0..*n_iw)
                .map(|_| gaussian_noise(x.nrows(), latent, &mut noise_rng))
                .collect();
            models::iwae_bound(&model.enc, &model.dec, &model.prior, &x, &eps)
        }
        ObjectiveSpec::Csrae { .. } | ObjectiveSpec::MixtureCsrae { .. } => {
            let eps = gaussian_noise(x.nrows(), latent, &mut noise_rng);
            Ok(models::csrae_loss(&model.enc, &model.dec, &model.prior, &x, weight, &eps)?.loss)
        }
        ObjectiveSpec::Ssl { .. } => {
            let ssl = model.ssl.as_ref().unwrap();
            let labels = train.labels.as_ref().unwrap();
            let (outputs, classes) = label_arity(train)?;
            let mut cfg = ssl.cfg.clone();
            cfg.lambda = weight;
            let lab_rows: Vec<usize> = batch_rows.iter().copied().filter(|r| mask[*r]).collect();
            let unlab_rows: Vec<usize> =
                batch_rows.iter().copied().filter(|r| !mask[*r]).collect();
            let x_lab = train.subset(&lab_rows).features;
            let y_lab = one_hot_labels(labels, &lab_rows, outputs, classes);
            let noise_lab = gaussian_noise(x_lab.nrows(), latent, &mut noise_rng);
            let x_unlab = train.subset(&unlab_rows).features;
            let noise_unlab = gaussian_noise(x_unlab.nrows(), latent, &mut noise_rng);
            combined_objective(
                &model.enc,
                &model.dec,
                &ssl.head,
                &ssl.embed,
                &model.prior,
                Some(LabelledBatch {
                    x: &x_lab,
                    y: &y_lab,
                    noise: &noise_lab,
                }),
                Some(UnlabelledBatch {
                    x: &x_unlab,
                    noise: &noise_unlab,
                }),
                &cfg,
            )
        }
    }
}

/// Per-example decoder input for measurement passes: plain z, or z with the
/// embedding of the classifier's predicted labels for SSL models.
fn measurement_ll(model: &Model, z: &Value, x: &Array2<f64>) -> Result<Value> {
    match &model.ssl {
        None => model.dec.log_likelihood(z, x),
        Some(ssl) => {
            let preds = ssl.head.predict(x)?;
            let classes = ssl.head.num_classes();
            let ys: Vec<Value> = preds
                .iter()
                .map(|per_output| {
                    let mut y = Array2::zeros((x.nrows(), classes));
                    for (i, c) in per_output.iter().enumerate() {
                        y[[i, *c]] = 1.0;
                    }
                    Value::new(y)
                })
                .collect();
            let h_y = ssl.embed.embed(&ys)?;
            model.dec.log_likelihood(&z.concat(&h_y)?, x)
        }
    }
}

/// Reconstruction error and unweighted divergence (KL for the ELBO objective,
/// CS otherwise), averaged over `dataset`.
pub fn measure(
    model: &Model,
    config: &ExperimentConfig,
    dataset: &Dataset,
    epoch: usize,
) -> Result<(f64, f64)> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::arg("cannot measure an empty dataset"));
    }
    let latent = config.model.latent_dim;
    let batch = config.optimizer.batch_size;
    let mut re_sum = 0.0;
    let mut div_sum = 0.0;
    let rows: Vec<usize> = (0..n).collect();
    for (bi, chunk) in rows.chunks(batch).enumerate() {
        let x = dataset.subset(chunk).features;
        let x = data::binarize(&x, dataset.binarization, 0, bi, config.seed)?;
        let mut rng =
            ChaCha8Rng::seed_from_u64(stream_seed(config.seed, STREAM_EVAL, epoch, bi));
        let eps = gaussian_noise(x.nrows(), latent, &mut rng);
        let q = encode(&model.enc, &x)?;
        let z = reparameterize(&q, &eps)?;
        let ll = measurement_ll(model, &z, &x)?;
        re_sum += -ll.data().column(0).sum();
        let div = match &config.objective {
            ObjectiveSpec::Elbo { .. } => q
                .var
                .add(&q.mu.square())?
                .add_scalar(-1.0)
                .sub(&q.var.log())?
                .scale(0.5)
                .sum_rows(),
            _ => cs_per_example(&q, &model.prior, Some(&model.enc))?,
        };
        div_sum += div.data().column(0).sum();
    }
    Ok((re_sum / n as f64, div_sum / n as f64))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub re: f64,
    pub divergence: f64,
    pub total: f64,
    pub score: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_score: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub records: Vec<EpochRecord>,
}

/// Train per the config, logging one JSONL record per epoch and retaining the
/// checkpoint with the best validation score (`RE + unweighted divergence`).
/// `init_checkpoint` warm-starts the parameters (e.g. phase-two
/// semi-supervised training on top of an unsupervised run).
pub fn cmd_train(
    config: &ExperimentConfig,
    out_dir: &Path,
    init_checkpoint: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let full = load_dataset(config)?;
    let (train, val, _test) = split_dataset(config, &full)?;
    let mut model = build_model(config, &train)?;
    if let Some(path) = init_checkpoint {
        model.store.load(path)?;
    }
    let mask = match &model.ssl {
        Some(ssl) => labelled_mask(train.len(), ssl.labelled_fraction, config.seed),
        None => vec![false; train.len()],
    };

    let metrics_path = out_dir.join("metrics.jsonl");
    let checkpoint_path = out_dir.join("best.ckpt");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    model.store.save(&checkpoint_path)?;

    let opt = &config.optimizer;
    let mut adam = AdamState::new(opt.learning_rate);
    let target = config.divergence_weight();
    let mut best_score = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut records = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 0..opt.epochs {
        epochs_run = epoch + 1;
        let weight = models::warmup_coefficient(epoch, opt.warmup_epochs, target);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(stream_seed(config.seed, STREAM_SHUFFLE, epoch, 0));
        order.shuffle(&mut shuffle_rng);
        for (bi, chunk) in order.chunks(opt.batch_size).enumerate() {
            let loss = minibatch_loss(&model, config, &train, chunk, &mask, weight, epoch, bi)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss {value} at epoch {epoch}, batch {bi}"
                )));
            }
            model.store.zero_grads();
            loss.backward()?;
            adam.step(&model.store)?;
        }

        let (re, divergence) = measure(&model, config, &val, epoch)?;
        let score = models::model_selection_score(re, divergence);
        let record = EpochRecord {
            epoch,
            re,
            divergence,
            total: re + weight * divergence,
            score,
        };
        writeln!(metrics, "{}", serde_json::to_string(&record)?)?;
        records.push(record);
        if score < best_score {
            best_score = score;
            best_epoch = epoch;
            model.store.save(&checkpoint_path)?;
        } else if epoch - best_epoch >= opt.patience {
            break;
        }
    }
    metrics.flush()?;
    Ok(TrainOutcome {
        best_score,
        best_epoch,
        epochs_run,
        metrics_path,
        checkpoint_path,
        records,
    })
}

/// Rebuild the model for a config and load a checkpoint into it.
pub fn load_model(config: &ExperimentConfig, checkpoint: &Path) -> Result<(Model, Dataset, Dataset, Dataset)> {
    config.validate()?;
    let full = load_dataset(config)?;
    let (train, val, test) = split_dataset(config, &full)?;
    let mut model = build_model(config, &train)?;
    model.store.load(checkpoint)?;
    Ok((model, train, val, test))
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub importance_sampled_ll: f64,
    pub knn_error: Vec<(usize, f64)>,
    pub re: f64,
    pub divergence: f64,
    pub score: f64,
    pub classifier_error: Option<f64>,
}

/// Test-set metrics for a trained checkpoint.
pub fn cmd_eval(config: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    let (model, train, _val, test) = load_model(config, checkpoint)?;
    let (re, divergence) = measure(&model, config, &test, 0)?;
    let score = models::model_selection_score(re, divergence);
    // IS-LL only covers the unconditional decoder
    let importance_sampled_ll = if model.ssl.is_none() {
        eval::importance_sampled_ll(
            &model.enc,
            &model.dec,
            &model.prior,
            &test.features,
            config.eval.is_samples,
            stream_seed(config.seed, STREAM_EVAL, 0, usize::MAX),
        )?
    } else {
        f64::NAN
    };

    let mut knn_error = Vec::new();
    let mut classifier_error = None;
    if let (Some(train_labels), Some(test_labels)) = (&train.labels, &test.labels) {
        if train_labels.ncols() == 1 {
            let embed_train = if config.eval.mean_embedding {
                eval::latent_embed(&model.enc, &train.features)?
            } else {
                eval::latent_embed_sampled(&model.enc, &train.features, config.seed)?
            };
            let embed_test = if config.eval.mean_embedding {
                eval::latent_embed(&model.enc, &test.features)?
            } else {
                eval::latent_embed_sampled(&model.enc, &test.features, config.seed + 1)?
            };
            let train_l: Vec<i64> = train_labels.column(0).to_vec();
            let test_l: Vec<i64> = test_labels.column(0).to_vec();
            for &k in &config.eval.knn_k {
                let pred = eval::knn_classify(&embed_train, &train_l, &embed_test, k)?;
                knn_error.push((k, eval::classification_error(&pred, &test_l)?));
            }
            if let Some(ssl) = &model.ssl {
                let pred = ssl.head.predict(&test.features)?;
                let pred: Vec<i64> = pred[0].iter().map(|c| *c as i64).collect();
                classifier_error = Some(eval::classification_error(&pred, &test_l)?);
            }
        }
    }
    Ok(EvalReport {
        importance_sampled_ll,
        knn_error,
        re,
        divergence,
        score,
        classifier_error,
    })
}

/// Draw n prior samples (optionally from one component), decode, and return
/// the decoder means in data space.
pub fn cmd_sample(
    config: &ExperimentConfig,
    checkpoint: &Path,
    n: usize,
    component: Option<usize>,
) -> Result<Array2<f64>> {
    let (model, ..) = load_model(config, checkpoint)?;
    let prior = model.prior.to_gmm(Some(&model.enc))?;
    if let Some(c) = component {
        if c >= prior.len() {
            return Err(Error::arg(format!(
                "component {c} out of range for a {}-component prior",
                prior.len()
            )));
        }
    }
    if n == 0 {
        return Ok(Array2::zeros((0, model.dec.output_dim())));
    }
    let (z, _) = gmm::sample_gmm(&prior, n, config.seed, component)?;
    match &model.ssl {
        None => model.dec.decode_mean(&z),
        Some(ssl) => {
            // condition on class 0 for every output
            let classes = ssl.head.num_classes();
            let ys: Vec<Value> = (0..ssl.head.num_outputs())
                .map(|_| {
                    let mut y = Array2::zeros((n, classes));
                    y.column_mut(0).fill(1.0);
                    Value::new(y)
                })
                .collect();
            let h_y = ssl.embed.embed(&ys)?;
            let zed = Value::new(z).concat(&h_y)?;
            let zed_data = zed.data().clone();
            model.dec.decode_mean(&zed_data)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub re: f64,
    pub cs: f64,
    pub score: f64,
}

/// Train one model per lambda and record the test-set trade-off.
pub fn cmd_sweep_lambda(
    config: &ExperimentConfig,
    lambdas: &[f64],
    out_dir: &Path,
) -> Result<Vec<SweepRow>> {
    if lambdas.len() < 2 {
        return Err(Error::arg("sweep needs at least 2 lambda values"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let mut cfg = config.clone();
        cfg.objective = match &config.objective {
            ObjectiveSpec::Csrae { .. } => ObjectiveSpec::Csrae { lambda },
            ObjectiveSpec::MixtureCsrae { .. } => ObjectiveSpec::MixtureCsrae { lambda },
            _ => {
                return Err(Error::arg(
                    "lambda sweep applies to csrae / mixture_csrae objectives",
                ))
            }
        };
        let run_dir = out_dir.join(format!("lambda_{lambda}"));
        let outcome = cmd_train(&cfg, &run_dir, None)?;
        let (model, _train, _val, test) = load_model(&cfg, &outcome.checkpoint_path)?;
        let (re, cs) = measure(&model, &cfg, &test, 0)?;
        rows.push(SweepRow {
            lambda,
            re,
            cs,
            score: models::model_selection_score(re, cs),
        });
    }
    let mut csv = String::from("lambda,re,cs,score\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.lambda, r.re, r.cs, r.score));
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct ToySummary {
    pub kl_final_mean: f64,
    pub kl_final_sigma: f64,
    pub kl_final_value: f64,
    pub cs_final_means: (f64, f64),
    pub cs_final_divergence: f64,
}

fn toy_target() -> (Array2<f64>, Array2<f64>) {
    let mu = Array2::from_shape_vec((2, 1), vec![-3.0, 3.0]).unwrap();
    let var = Array2::ones((2, 1));
    (mu, var)
}

/// log p(z) of the bimodal toy target for a column of points, as a graph node.
fn toy_log_p(z: &Value) -> Result<Value> {
    let (mu, var) = toy_target();
    let zeros = {
        let (r, c) = z.shape();
        Value::new(Array2::zeros((r, c)))
    };
    let overlaps = Value::pairwise_log_overlap(z, &zeros, &Value::new(mu), &Value::new(var))?;
    Ok(overlaps.logsumexp_rows().add_scalar(-(2f64.ln())))
}

/// Fit the bimodal 1D target two ways with plain gradient descent (lr 0.001):
/// a single Gaussian by Monte-Carlo KL (mode-seeking; optimizes mean and
/// variance directly) and a two-component mixture by the closed-form CS
/// divergence (covers both modes). Writes per-step trajectories as CSV.
pub fn cmd_fit_toy(out_dir: &Path, seed: u64) -> Result<ToySummary> {
    std::fs::create_dir_all(out_dir)?;
    let lr = 0.001;

    // (a) KL, single Gaussian from (mu, sigma) = (0.5, 1)
    let mu = Value::scalar(0.5);
    let var = Value::scalar(1.0);
    let mc = 100;
    let steps_kl = 8000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kl_csv = String::from("step,mu,sigma,kl\n");
    let mut kl_value = f64::NAN;
    for step in 0..steps_kl {
        let eps = gaussian_noise(mc, 1, &mut rng);
        let var_c = var.clamp(models::VAR_CLAMP_LO, models::VAR_CLAMP_HI);
        let sigma = var_c.sqrt();
        let z = mu.add(&sigma.mul(&Value::new(eps))?)?;
        // log q(z) for z = mu + sigma*eps
        let log_q = z
            .sub(&mu)?
            .square()
            .div(&var_c.scale(2.0))?
            .neg()
            .sub(&var_c.log().scale(0.5).add_scalar(0.5 * (2.0 * std::f64::consts::PI).ln()))?;
        let kl = log_q.sub(&toy_log_p(&z)?)?.mean();
        kl_value = kl.item();
        kl_csv.push_str(&format!(
            "{},{},{},{}\n",
            step,
            mu.item(),
            sigma.item(),
            kl_value
        ));
        mu.zero_grad();
        var.zero_grad();
        kl.backward()?;
        let g_mu = mu.grad()[[0, 0]];
        let g_var = var.grad()[[0, 0]];
        mu.update_data(|d| d[[0, 0]] -= lr * g_mu);
        var.update_data(|d| d[[0, 0]] = (d[[0, 0]] - lr * g_var).max(1e-6));
    }
    std::fs::write(out_dir.join("toy_kl.csv"), kl_csv)?;

    // (b) closed-form CS, two components from (-0.5, 0.5)
    let mu2 = Value::new(Array2::from_shape_vec((2, 1), vec![-0.5, 0.5]).unwrap());
    let logvar2 = Value::new(Array2::zeros((2, 1)));
    let (pm, pv) = toy_target();
    let p_mu = Value::new(pm);
    let p_var = Value::new(pv);
    let steps_cs = 20_000;
    let mut cs_csv = String::from("step,mu1,mu2,var1,var2,cs\n");
    let mut cs_value = f64::NAN;
    for step in 0..steps_cs {
        let q_var = logvar2.exp().clamp(models::VAR_CLAMP_LO, models::VAR_CLAMP_HI);
        let cross = Value::pairwise_log_overlap(&mu2, &q_var, &p_mu, &p_var)?
            .logsumexp_rows()
            .transpose()
            .logsumexp_rows()
            .add_scalar(-(4f64.ln()));
        let self_q = Value::pairwise_log_overlap(&mu2, &q_var, &mu2, &q_var)?
            .logsumexp_rows()
            .transpose()
            .logsumexp_rows()
            .add_scalar(-(4f64.ln()));
        let self_p = Value::pairwise_log_overlap(&p_mu, &p_var, &p_mu, &p_var)?
            .logsumexp_rows()
            .transpose()
            .logsumexp_rows()
            .add_scalar(-(4f64.ln()));
        let cs = cross
            .neg()
            .add(&self_q.scale(0.5))?
            .add(&self_p.scale(0.5))?;
        cs_value = cs.item();
        cs_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            step,
            mu2.data()[[0, 0]],
            mu2.data()[[1, 0]],
            q_var.data()[[0, 0]],
            q_var.data()[[1, 0]],
            cs_value
        ));
        mu2.zero_grad();
        logvar2.zero_grad();
        cs.backward()?;
        let g_mu = mu2.grad().clone();
        let g_lv = logvar2.grad().clone();
        mu2.update_data(|d| *d -= &(g_mu * lr));
        logvar2.update_data(|d| *d -= &(g_lv * lr));
    }
    std::fs::write(out_dir.join("toy_cs.csv"), cs_csv)?;

    let (m1, m2) = (mu2.data()[[0, 0]], mu2.data()[[1, 0]]);
    Ok(ToySummary {
        kl_final_mean: mu.item(),
        kl_final_sigma: var.item().max(0.0).sqrt(),
        kl_final_value: kl_value,
        cs_final_means: if m1 <= m2 { (m1, m2) } else { (m2, m1) },
        cs_final_divergence: cs_value,
    })
}

/// Mean Euclidean distance from each posterior mean to the nearest prior
/// component mean; the λ-sweep acceptance check uses this as its
/// prior-matching measure.
pub fn mean_distance_to_prior(model: &Model, features: &Array2<f64>) -> Result<f64> {
    let embed = eval::latent_embed(&model.enc, features)?;
    let prior = model.prior.to_gmm(Some(&model.enc))?;
    let mut total = 0.0;
    for row in embed.axis_iter(Axis(0)) {
        let nearest = prior
            .components()
            .iter()
            .map(|c| {
                c.mean()
                    .iter()
                    .zip(row.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    Ok(total / embed.nrows() as f64)
}
