use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Value};
use crate::error::Result;

/// Central-difference gradient verification. Evaluates `loss_fn` once for the
/// analytic gradients, then perturbs a seeded random subsample of at most 200
/// coordinates and returns the maximum relative error.
///
/// `loss_fn` must be deterministic: any sampling noise has to be frozen
/// outside the closure.
pub fn grad_check<F>(mut loss_fn: F, store: &ParamStore, eps: f64) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<Value>,
{
    store.zero_grads();
    let loss = loss_fn(store)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|(_, v)| v.grad().iter().cloned().collect())
        .collect();

    let mut coords: Vec<(usize, usize)> = Vec::new();
    for (pi, (_, v)) in store.iter().enumerate() {
        let (r, c) = v.shape();
        for i in 0..r * c {
            coords.push((pi, i));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e0c);
    coords.shuffle(&mut rng);
    coords.truncate(200);

    let params: Vec<Value> = store.iter().map(|(_, v)| v.clone()).collect();
    let mut max_rel = 0.0f64;
    for (pi, flat) in coords {
        let v = &params[pi];
        let cols = v.shape().1;
        let (i, j) = (flat / cols, flat % cols);
        let orig = v.data()[[i, j]];

        v.update_data(|d| d[[i, j]] = orig + eps);
        let plus = loss_fn(store)?.item();
        v.update_data(|d| d[[i, j]] = orig - eps);
        let minus = loss_fn(store)?.item();
        v.update_data(|d| d[[i, j]] = orig);

        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[pi][flat];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
