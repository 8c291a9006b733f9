use rand::seq::index::sample;
use rand::SeedableRng;
use serde::Serialize;

use super::{Graph, ParamStore, Result, Var};

const EPS: f64 = 1e-5;
const MAX_COORDS: usize = 256;
// floor on the relative-error denominator so near-zero gradients are
// compared in absolute terms; central differences at EPS carry roughly
// 1e-10·|loss| of rounding noise
const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub passed: bool,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub worst_param: Option<String>,
}

/// Compares reverse-mode gradients with central finite differences.
///
/// `build` must be a deterministic function of the store. Stores with more
/// than 256 scalars are checked on a random 256-coordinate subsample drawn
/// with `seed` (default 0). Existing gradient buffers are restored.
pub fn grad_check<F>(store: &mut ParamStore, build: F, tolerance: f64, seed: Option<u64>) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_params(store, build, tolerance, seed, |_| true)
}

/// [`grad_check`] restricted to parameters whose name passes `select`.
///
/// Needed for losses with stop-gradients: a coordinate that reaches the loss
/// only through a detached path has an analytic gradient of zero but a
/// nonzero finite difference.
pub fn grad_check_params<F, S>(store: &mut ParamStore, build: F, tolerance: f64, seed: Option<u64>, select: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
    S: Fn(&str) -> bool,
{
    let saved = store.clone();
    store.zero_grad();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;

    let mut coords = Vec::new();
    for id in store.ids() {
        if !select(store.name(id)) {
            continue;
        }
        for j in 0..store.value(id).len() {
            coords.push((id, j));
        }
    }
    if coords.len() > MAX_COORDS {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        let mut picked: Vec<usize> = sample(&mut rng, coords.len(), MAX_COORDS).into_vec();
        picked.sort_unstable();
        coords = picked.into_iter().map(|i| coords[i]).collect();
    }

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, store)?;
        Ok(g.scalar_value(l))
    };

    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &(id, j) in &coords {
        let analytic = store.grad(id).data()[j];
        let orig = store.value(id).data()[j];
        store.value_mut(id).data_mut()[j] = orig + EPS;
        let plus = eval(store)?;
        store.value_mut(id).data_mut()[j] = orig - EPS;
        let minus = eval(store)?;
        store.value_mut(id).data_mut()[j] = orig;
        let numeric = (plus - minus) / (2.0 * EPS);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if rel > max_rel || rel.is_nan() {
            max_rel = if rel.is_nan() { f64::INFINITY } else { rel };
            worst = Some(format!("{}[{j}]", store.name(id)));
        }
    }
    *store = saved;
    Ok(GradCheckReport {
        passed: max_rel < tolerance,
        tolerance,
        max_rel_err: max_rel,
        coords_checked: coords.len(),
        worst_param: worst,
    })
}
