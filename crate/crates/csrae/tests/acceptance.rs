//! End-to-end acceptance gate: ten numbered criteria covering the closed-form
//! divergence against a quadrature oracle, analytic properties, gradient
//! oracles for every objective, the loss decomposition identity, internal
//! consistency between the loss layer and the mixture core, the 1D toy fits,
//! the pinwheel lambda sweep, semi-supervised training, metric oracles and
//! bit-exact reproducibility. Each test prints a single pass/fail line.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use csrae::autodiff::{grad_check, ParamStore};
use csrae::config::{ExperimentConfig, ObjectiveSpec};
use csrae::eval::{
    classification_error, frechet_distance, importance_sampled_ll, knn_classify, FeatureStats,
};
use csrae::gmm::{
    cs_divergence, cs_divergence_quadrature_1d, DiagGaussian, DiagGmm, QuadratureSpec,
};
use csrae::models::{
    csrae_loss, decomposition_check_1d, elbo_loss, encode, iwae_bound, mixture_csrae_loss,
    Activation, LikelihoodKind, MlpDecoder, MlpEncoder, Prior,
};
use csrae::run;
use csrae::semisup::{
    labelled_loss, multilabel_unlabelled_loss, sample_gumbel, unlabelled_loss, ClassifierHead,
    LabelEmbedding, SslConfig, UnlabelledMode,
};

/// Runs one criterion, printing a single pass/fail line with the elapsed
/// time, and re-raises the panic so the test still fails loudly.
fn criterion<F: FnOnce()>(number: usize, title: &str, budget: Duration, body: F) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let status = if outcome.is_ok() && elapsed <= budget {
        "pass"
    } else {
        "fail"
    };
    println!("criterion {number} ({title}): {status} [{elapsed:.2?}]");
    if let Err(payload) = outcome {
        resume_unwind(payload);
    }
    assert!(
        elapsed <= budget,
        "criterion {number} exceeded its {budget:?} budget: {elapsed:?}"
    );
}

fn random_gmm(rng: &mut ChaCha8Rng, max_components: usize) -> DiagGmm {
    let k = rng.gen_range(1..=max_components);
    let mut weights = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    for _ in 0..k {
        weights.push(rng.gen_range(0.2..1.0));
        let mean = rng.gen_range(-3.0..3.0);
        let var = rng.gen_range(0.3..2.0);
        components.push(DiagGaussian::new(vec![mean], vec![var]).unwrap());
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    DiagGmm::new(weights, components).unwrap()
}

#[test]
fn criterion_01_quadrature_oracle() {
    criterion(1, "closed form vs quadrature", Duration::from_secs(10), || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for case in 0..100 {
            let q = random_gmm(&mut rng, 5);
            let p = random_gmm(&mut rng, 5);
            let exact = cs_divergence(&q, &p).unwrap();
            let spec = QuadratureSpec::covering(&q, &p, 6000).unwrap();
            let numeric = cs_divergence_quadrature_1d(&q, &p, &spec).unwrap();
            let rel = (exact - numeric).abs() / exact.abs().max(1.0);
            assert!(rel < 1e-6, "case {case}: exact {exact}, quadrature {numeric}");
        }
    });
}

#[test]
fn criterion_02_divergence_properties() {
    criterion(2, "divergence property suite", Duration::from_secs(30), || {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for _ in 0..50 {
            let q = random_gmm(&mut rng, 4);
            let p = random_gmm(&mut rng, 4);
            let qp = cs_divergence(&q, &p).unwrap();
            let pq = cs_divergence(&p, &q).unwrap();
            assert!((qp - pq).abs() < 1e-10, "symmetry violated: {qp} vs {pq}");
            assert!(qp >= -1e-10, "negative divergence {qp}");
            let qq = cs_divergence(&q, &q).unwrap();
            assert!(qq.abs() < 1e-10, "self-divergence {qq}");
        }
        // analytic single-Gaussian case: D(N(0,1), N(3,1)) = 9/4
        let a = DiagGmm::single(DiagGaussian::new(vec![0.0], vec![1.0]).unwrap());
        let b = DiagGmm::single(DiagGaussian::new(vec![3.0], vec![1.0]).unwrap());
        let d = cs_divergence(&a, &b).unwrap();
        assert!((d - 2.25).abs() < 1e-9, "analytic case: {d}");
        // not a metric: unit-variance Gaussians at 0, 2, 4 give
        // D(a,c) = 4 > D(a,b) + D(b,c) = 2
        let g = |m: f64| DiagGmm::single(DiagGaussian::new(vec![m], vec![1.0]).unwrap());
        let d_ac = cs_divergence(&g(0.0), &g(4.0)).unwrap();
        let d_ab = cs_divergence(&g(0.0), &g(2.0)).unwrap();
        let d_bc = cs_divergence(&g(2.0), &g(4.0)).unwrap();
        assert!(
            d_ac > d_ab + d_bc + 1e-6,
            "triangle counterexample failed: {d_ac} vs {} ", d_ab + d_bc
        );
    });
}

struct ToyModel {
    store: ParamStore,
    enc: MlpEncoder,
    dec: MlpDecoder,
    rng: ChaCha8Rng,
}

fn toy_model(seed: u64, input_dim: usize, latent_dim: usize, dec_in: usize) -> ToyModel {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = MlpEncoder::new(
        &mut store,
        "enc",
        input_dim,
        &[4, 4],
        Activation::Softplus,
        latent_dim,
        &mut rng,
    );
    let dec = MlpDecoder::new(
        &mut store,
        "dec",
        dec_in,
        &[4, 4],
        Activation::Softplus,
        input_dim,
        LikelihoodKind::Gaussian,
        &mut rng,
    );
    ToyModel {
        store,
        enc,
        dec,
        rng,
    }
}

fn frozen(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

#[test]
fn criterion_03_gradient_oracle() {
    criterion(3, "objective gradient oracle", Duration::from_secs(120), || {
        let batch = 4;
        let (input_dim, latent) = (3, 2);
        let tol = 1e-4;
        let eps = 1e-5;

        // ELBO and beta-VAE
        for beta in [1.0, 4.0] {
            let mut m = toy_model(10, input_dim, latent, latent);
            let x = frozen(&mut m.rng, batch, input_dim);
            let noise = frozen(&mut m.rng, batch, latent);
            let prior = Prior::standard(latent);
            let err = grad_check(
                |_| Ok(elbo_loss(&m.enc, &m.dec, &prior, &x, beta, &noise)?.loss),
                &m.store,
                eps,
            )
            .unwrap();
            assert!(err < tol, "elbo beta {beta}: {err}");
        }

        // IWAE, 5 importance samples
        {
            let mut m = toy_model(11, input_dim, latent, latent);
            let x = frozen(&mut m.rng, batch, input_dim);
            let noise: Vec<Array2<f64>> =
                (0..5).map(|_| frozen(&mut m.rng, batch, latent)).collect();
            let prior = Prior::standard(latent);
            let err = grad_check(
                |_| iwae_bound(&m.enc, &m.dec, &prior, &x, &noise),
                &m.store,
                eps,
            )
            .unwrap();
            assert!(err < tol, "iwae: {err}");
        }

        // CSRAE with the standard prior
        {
            let mut m = toy_model(12, input_dim, latent, latent);
            let x = frozen(&mut m.rng, batch, input_dim);
            let noise = frozen(&mut m.rng, batch, latent);
            let prior = Prior::standard(latent);
            let err = grad_check(
                |_| Ok(csrae_loss(&m.enc, &m.dec, &prior, &x, 1.5, &noise)?.loss),
                &m.store,
                eps,
            )
            .unwrap();
            assert!(err < tol, "csrae: {err}");
        }

        // MixtureCSRAE with learned MoG priors of several sizes; the prior
        // parameters live in the store, so the check covers them too
        for k in [1usize, 4, 10] {
            let mut m = toy_model(13 + k as u64, input_dim, latent, latent);
            let prior = Prior::mog(&mut m.store, k, latent, &mut m.rng);
            let x = frozen(&mut m.rng, batch, input_dim);
            let noise = frozen(&mut m.rng, batch, latent);
            let err = grad_check(
                |_| Ok(mixture_csrae_loss(&m.enc, &m.dec, &prior, &x, 1.0, &noise)?.loss),
                &m.store,
                eps,
            )
            .unwrap();
            assert!(err < tol, "mixture csrae k {k}: {err}");
        }

        // VampPrior variant: components flow through the encoder
        {
            let mut m = toy_model(20, input_dim, latent, latent);
            let pseudo = frozen(&mut m.rng, 3, input_dim);
            let prior = Prior::vamp(pseudo);
            let x = frozen(&mut m.rng, batch, input_dim);
            let noise = frozen(&mut m.rng, batch, latent);
            let err = grad_check(
                |_| Ok(mixture_csrae_loss(&m.enc, &m.dec, &prior, &x, 1.0, &noise)?.loss),
                &m.store,
                eps,
            )
            .unwrap();
            assert!(err < tol, "vamp csrae: {err}");
        }

        // semi-supervised labelled and unlabelled losses (single output)
        {
            let classes = 3;
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let enc = MlpEncoder::new(
                &mut store, "enc", input_dim, &[4], Activation::Softplus, latent, &mut rng,
            );
            let embed = LabelEmbedding::new(
                &mut store, "embed", 1, classes, &[4], Activation::Softplus, &mut rng,
            );
            let dec = MlpDecoder::new(
                &mut store,
                "dec",
                latent + embed.out_dim(),
                &[4],
                Activation::Softplus,
                input_dim,
                LikelihoodKind::Gaussian,
                &mut rng,
            );
            let head = ClassifierHead::new(
                &mut store, "head", input_dim, &[4], Activation::Softplus, 1, classes, &mut rng,
            )
            .unwrap();
            let x = frozen(&mut rng, batch, input_dim);
            let noise = frozen(&mut rng, batch, latent);
            let mut y = Array2::zeros((batch, classes));
            for i in 0..batch {
                y[[i, i % classes]] = 1.0;
            }
            let prior = Prior::standard(latent);
            let cfg = SslConfig::default();
            let err = grad_check(
                |_| labelled_loss(&enc, &dec, &head, &embed, &prior, &x, &[y.clone()], &cfg, &noise),
                &store,
                eps,
            )
            .unwrap();
            assert!(err < tol, "labelled loss: {err}");
            for mode in [UnlabelledMode::QWeighted, UnlabelledMode::LiteralSum] {
                let cfg = SslConfig { mode, ..SslConfig::default() };
                let err = grad_check(
                    |_| unlabelled_loss(&enc, &dec, &head, &embed, &prior, &x, &cfg, &noise),
                    &store,
                    eps,
                )
                .unwrap();
                assert!(err < tol, "unlabelled loss {mode:?}: {err}");
            }
        }

        // multi-output Gumbel-Softmax path with frozen Gumbel noise
        {
            let (outputs, classes) = (2, 3);
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(22);
            let enc = MlpEncoder::new(
                &mut store, "enc", input_dim, &[4], Activation::Softplus, latent, &mut rng,
            );
            let embed = LabelEmbedding::new(
                &mut store, "embed", outputs, classes, &[4], Activation::Softplus, &mut rng,
            );
            let dec = MlpDecoder::new(
                &mut store,
                "dec",
                latent + embed.out_dim(),
                &[4],
                Activation::Softplus,
                input_dim,
                LikelihoodKind::Gaussian,
                &mut rng,
            );
            let head = ClassifierHead::new(
                &mut store, "head", input_dim, &[4], Activation::Softplus, outputs, classes,
                &mut rng,
            )
            .unwrap();
            let x = frozen(&mut rng, batch, input_dim);
            let noise = frozen(&mut rng, batch, latent);
            let gumbel: Vec<Array2<f64>> = (0..outputs)
                .map(|_| sample_gumbel(batch, classes, &mut rng))
                .collect();
            let cfg = SslConfig::default();
            let err = grad_check(
                |_| {
                    multilabel_unlabelled_loss(
                        &enc, &dec, &head, &embed, &prior_std(latent), &x, &cfg, &noise, &gumbel,
                    )
                },
                &store,
                eps,
            )
            .unwrap();
            assert!(err < tol, "multilabel gumbel loss: {err}");
        }
    });
}

fn prior_std(dim: usize) -> Prior {
    Prior::standard(dim)
}

#[test]
fn criterion_04_decomposition_identity() {
    criterion(4, "loss decomposition identity", Duration::from_secs(60), || {
        for seed in 0..5u64 {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let enc =
                MlpEncoder::new(&mut store, "enc", 2, &[4], Activation::Softplus, 1, &mut rng);
            let dec = MlpDecoder::new(
                &mut store,
                "dec",
                1,
                &[4],
                Activation::Softplus,
                2,
                LikelihoodKind::Gaussian,
                &mut rng,
            );
            let prior = if seed % 2 == 0 {
                Prior::standard(1)
            } else {
                Prior::mog(&mut store, 2, 1, &mut rng)
            };
            let x = frozen(&mut rng, 1, 2);
            let grid = QuadratureSpec::new(-25.0, 25.0, 40_000).unwrap();
            let lambda = 0.5 + seed as f64 * 0.5;
            let residual = decomposition_check_1d(&enc, &dec, &prior, &x, lambda, &grid).unwrap();
            assert!(residual < 1e-3, "seed {seed}: residual {residual}");
        }
    });
}

#[test]
fn criterion_05_mixture_loss_consistency() {
    criterion(5, "loss vs mixture core consistency", Duration::from_secs(60), || {
        for k in [1usize, 10, 100] {
            let mut m = toy_model(500 + k as u64, 3, 2, 2);
            let prior = Prior::mog(&mut m.store, k, 2, &mut m.rng);
            let x = frozen(&mut m.rng, 1, 3);
            let noise = frozen(&mut m.rng, 1, 2);
            let parts = mixture_csrae_loss(&m.enc, &m.dec, &prior, &x, 1.0, &noise).unwrap();
            let q = encode(&m.enc, &x).unwrap();
            let q_gmm = DiagGmm::single(
                DiagGaussian::new(
                    q.mu.data().row(0).to_vec(),
                    q.var.data().row(0).to_vec(),
                )
                .unwrap(),
            );
            let p_gmm = prior.to_gmm(Some(&m.enc)).unwrap();
            let direct = cs_divergence(&q_gmm, &p_gmm).unwrap();
            let loss_cs = parts.divergence.item();
            assert!(
                (loss_cs - direct).abs() < 1e-10,
                "k {k}: loss CS {loss_cs} vs core {direct}"
            );
            if k == 1 {
                let single = csrae_loss(&m.enc, &m.dec, &prior, &x, 1.0, &noise).unwrap();
                assert!(
                    (parts.loss.item() - single.loss.item()).abs() < 1e-12,
                    "k=1 does not reduce to the single-component objective"
                );
            }
        }
    });
}

#[test]
fn criterion_06_toy_fit() {
    criterion(6, "bimodal toy fits", Duration::from_secs(120), || {
        let dir = tempfile::tempdir().unwrap();
        let summary = run::cmd_fit_toy(dir.path(), 0).unwrap();
        let (m1, m2) = summary.cs_final_means;
        assert!((m1 + 3.0).abs() < 0.2, "CS left mean {m1}");
        assert!((m2 - 3.0).abs() < 0.2, "CS right mean {m2}");
        assert!(
            summary.cs_final_divergence < 0.01,
            "final CS divergence {}",
            summary.cs_final_divergence
        );
        assert!(
            (2.5..=3.5).contains(&summary.kl_final_mean),
            "KL fit mean {} is not on the mode",
            summary.kl_final_mean
        );
        assert!(dir.path().join("toy_kl.csv").exists());
        assert!(dir.path().join("toy_cs.csv").exists());
    });
}

fn sweep_config() -> ExperimentConfig {
    serde_json::from_value(serde_json::json!({
        "seed": 3,
        "dataset": {"kind": "pinwheel", "n": 2000},
        "model": {
            "encoder_hidden": [64],
            "decoder_hidden": [64],
            "latent_dim": 2,
            "activation": "softplus",
            "likelihood": "gaussian"
        },
        "objective": {"kind": "csrae", "lambda": 1.0},
        "prior": {"kind": "standard"},
        "optimizer": {"learning_rate": 1e-3, "epochs": 200, "batch_size": 100, "warmup_epochs": 100},
        "eval": {"is_samples": 20, "knn_k": [5]}
    }))
    .unwrap()
}

#[test]
fn criterion_07_lambda_sweep_tradeoff() {
    criterion(7, "lambda sweep trade-off", Duration::from_secs(900), || {
        let cfg = sweep_config();
        let lambdas = [0.5, 5.0, 20.0];
        let dir = tempfile::tempdir().unwrap();
        let rows = run::cmd_sweep_lambda(&cfg, &lambdas, dir.path()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(
            rows[0].cs > rows[1].cs && rows[1].cs > rows[2].cs,
            "CS not strictly decreasing: {:?}",
            rows.iter().map(|r| r.cs).collect::<Vec<_>>()
        );
        assert!(
            rows[0].re < rows[1].re && rows[1].re < rows[2].re,
            "RE not strictly increasing: {:?}",
            rows.iter().map(|r| r.re).collect::<Vec<_>>()
        );

        let mut distances = Vec::new();
        for &lambda in &lambdas {
            let mut c = cfg.clone();
            c.objective = ObjectiveSpec::Csrae { lambda };
            let ckpt = dir.path().join(format!("lambda_{lambda}")).join("best.ckpt");
            let (model, _train, _val, test) = run::load_model(&c, &ckpt).unwrap();
            distances.push(run::mean_distance_to_prior(&model, &test.features).unwrap());
        }
        assert!(
            distances[2] < 0.5 * distances[0],
            "posterior means did not tighten onto the prior: {distances:?}"
        );
    });
}

#[test]
fn criterion_08_semisupervised() {
    criterion(8, "semi-supervised sanity", Duration::from_secs(900), || {
        let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "seed": 5,
            "dataset": {"kind": "pinwheel", "n": 2000},
            "model": {
                "encoder_hidden": [32],
                "decoder_hidden": [32],
                "latent_dim": 2,
                "activation": "softplus",
                "likelihood": "gaussian"
            },
            "objective": {
                "kind": "ssl",
                "lambda": 1.0,
                "beta": 0.1,
                "alpha": 2.0,
                "tau": 0.5,
                "mode": "q_weighted",
                "labelled_fraction": 0.1,
                "classifier_hidden": [32],
                "embed_hidden": [16]
            },
            "prior": {"kind": "standard"},
            "optimizer": {"learning_rate": 1e-3, "epochs": 30, "batch_size": 100, "warmup_epochs": 5},
            "eval": {"is_samples": 10, "knn_k": [5]}
        }))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let outcome = run::cmd_train(&cfg, dir.path(), None).unwrap();
        let report = run::cmd_eval(&cfg, &outcome.checkpoint_path).unwrap();
        let err = report.classifier_error.expect("classifier error missing");
        assert!(err < 0.15, "classifier test error {err}");

        // Gumbel argmax frequencies match the softmax distribution
        let logits = [0.5f64, 1.2, -0.3, 0.0];
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let probs: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let draws = 50_000;
        let mut rng = ChaCha8Rng::seed_from_u64(808);
        let g = sample_gumbel(draws, logits.len(), &mut rng);
        let mut counts = vec![0usize; logits.len()];
        for i in 0..draws {
            let mut best = 0;
            for j in 1..logits.len() {
                if logits[j] + g[[i, j]] > logits[best] + g[[i, best]] {
                    best = j;
                }
            }
            counts[best] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!(
                (freq - probs[j]).abs() < 0.02,
                "class {j}: frequency {freq} vs probability {}",
                probs[j]
            );
        }
    });
}

#[test]
fn criterion_09_metric_oracles() {
    criterion(9, "estimator and metric oracles", Duration::from_secs(120), || {
        // importance-sampled log-likelihood is exact on the conjugate
        // linear-Gaussian model where every importance weight is constant
        let s2 = 0.49;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let enc = MlpEncoder::new(&mut store, "enc", 1, &[], Activation::Identity, 1, &mut rng);
        let dec = MlpDecoder::new(
            &mut store,
            "dec",
            1,
            &[],
            Activation::Identity,
            1,
            LikelihoodKind::Gaussian,
            &mut rng,
        );
        let set = |name: &str, value: f64| {
            store.get(name).unwrap().update_data(|d| d.fill(value));
        };
        set("enc.mu.w", 1.0 / (1.0 + s2));
        set("enc.mu.b", 0.0);
        set("enc.logvar.w", 0.0);
        set("enc.logvar.b", (s2 / (1.0 + s2)).ln());
        set("dec.mean.w", 1.0);
        set("dec.mean.b", 0.0);
        set("dec.logvar.w", 0.0);
        set("dec.logvar.b", s2.ln());
        let prior = Prior::standard(1);
        let x = array![[0.7], [-1.3], [2.4]];
        let exact: f64 = x
            .column(0)
            .iter()
            .map(|xi| {
                let var = 1.0 + s2;
                -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + xi * xi / var)
            })
            .sum::<f64>()
            / 3.0;
        let est = importance_sampled_ll(&enc, &dec, &prior, &x, 1, 5).unwrap();
        assert!((est - exact).abs() < 1e-10, "S=1: {est} vs {exact}");
        let est = importance_sampled_ll(&enc, &dec, &prior, &x, 64, 99).unwrap();
        assert!((est - exact).abs() < 1e-10, "S=64: {est} vs {exact}");

        // kNN agrees with a brute-force scan on 200 queries
        let mut rng = ChaCha8Rng::seed_from_u64(909);
        let train = Array2::from_shape_fn((300, 3), |_| StandardNormal.sample(&mut rng));
        let labels: Vec<i64> = (0..300).map(|_| rng.gen_range(0..4)).collect();
        let queries = Array2::from_shape_fn((200, 3), |_| StandardNormal.sample(&mut rng));
        for k in [3usize, 5, 10] {
            let fast = knn_classify(&train, &labels, &queries, k).unwrap();
            for (qi, query) in queries.rows().into_iter().enumerate() {
                let mut dists: Vec<(f64, usize)> = train
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(ti, t)| {
                        let d: f64 = t
                            .iter()
                            .zip(query.iter())
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d, ti)
                    })
                    .collect();
                dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let neigh = &dists[..k];
                // votes, then mean distance, then smaller label
                let mut best: Option<(usize, f64, i64)> = None;
                for class in 0..4i64 {
                    let members: Vec<&(f64, usize)> = neigh
                        .iter()
                        .filter(|(_, ti)| labels[*ti] == class)
                        .collect();
                    if members.is_empty() {
                        continue;
                    }
                    let votes = members.len();
                    let mean_d =
                        members.iter().map(|(d, _)| d.sqrt()).sum::<f64>() / votes as f64;
                    let better = match &best {
                        None => true,
                        Some((bv, bd, _)) => votes > *bv || (votes == *bv && mean_d < *bd),
                    };
                    if better {
                        best = Some((votes, mean_d, class));
                    }
                }
                assert_eq!(
                    fast[qi],
                    best.unwrap().2,
                    "query {qi} (k={k}) disagrees with the exhaustive scan"
                );
            }
        }

        // Frechet distance closed forms
        let a = FeatureStats::from_parts(array![0.0], array![[1.0]]).unwrap();
        let b = FeatureStats::from_parts(array![3.0], array![[1.0]]).unwrap();
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 9.0).abs() < 1e-8, "1D shifted case: {d}");
        let mut rng = ChaCha8Rng::seed_from_u64(910);
        for _ in 0..10 {
            let dim = 4;
            let ca: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.1..3.0)).collect();
            let cb: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.1..3.0)).collect();
            let ma: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mb: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = FeatureStats::from_parts(
                Array1::from(ma.clone()),
                Array2::from_diag(&Array1::from(ca.clone())),
            )
            .unwrap();
            let b = FeatureStats::from_parts(
                Array1::from(mb.clone()),
                Array2::from_diag(&Array1::from(cb.clone())),
            )
            .unwrap();
            let expect: f64 = (0..dim)
                .map(|i| {
                    let dm = ma[i] - mb[i];
                    let dc = ca[i].sqrt() - cb[i].sqrt();
                    dm * dm + dc * dc
                })
                .sum();
            let got = frechet_distance(&a, &b).unwrap();
            assert!((got - expect).abs() < 1e-8, "diagonal case: {got} vs {expect}");
        }

        // error / F1 sanity
        assert_eq!(classification_error(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(classification_error(&[1, 2, 3], &[1, 2, 4]).unwrap(), 1.0 / 3.0);
    });
}

#[test]
fn criterion_10_reproducibility() {
    criterion(10, "byte-identical reruns", Duration::from_secs(300), || {
        let cfg: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "seed": 17,
            "dataset": {"kind": "pinwheel", "n": 400},
            "model": {
                "encoder_hidden": [8],
                "decoder_hidden": [8],
                "latent_dim": 2,
                "activation": "softplus",
                "likelihood": "gaussian"
            },
            "objective": {"kind": "mixture_csrae", "lambda": 1.0},
            "prior": {"kind": "mog", "k": 4},
            "optimizer": {"epochs": 5, "batch_size": 100, "warmup_epochs": 2},
        }))
        .unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        run::cmd_train(&cfg, d1.path(), None).unwrap();
        run::cmd_train(&cfg, d2.path(), None).unwrap();
        let m1 = std::fs::read(d1.path().join("metrics.jsonl")).unwrap();
        let m2 = std::fs::read(d2.path().join("metrics.jsonl")).unwrap();
        assert_eq!(m1, m2, "metrics logs differ between identical runs");
        let c1 = std::fs::read(d1.path().join("best.ckpt")).unwrap();
        let c2 = std::fs::read(d2.path().join("best.ckpt")).unwrap();
        assert_eq!(c1, c2, "checkpoints differ between identical runs");
    });
}
