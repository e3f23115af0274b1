use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    pub rel_tol: f64,
    /// Entries whose absolute error is below this pass regardless of `rel_tol`.
    pub abs_tol: f64,
    /// When set, only this many randomly chosen entries per tensor are probed.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-6, rel_tol: 1e-4, abs_tol: 1e-8, max_coords_per_param: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Parameter name and flat index of the entry with the largest relative
    /// error among those that exceeded `abs_tol`.
    pub worst: Option<(String, usize)>,
    pub passed: bool,
}

/// Compares analytic gradients with central differences.
///
/// `f(store, with_grads)` must return the scalar loss and, when `with_grads`
/// is true, accumulate `dL/dθ` into the store's gradient buffers (which are
/// zeroed beforehand).
pub fn grad_check<F>(store: &mut ParamStore<f64>, mut f: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&mut ParamStore<f64>, bool) -> f64,
{
    store.zero_grads();
    f(store, true);
    let analytic: Vec<_> = store.params().iter().map(|p| p.grad.clone()).collect();
    store.zero_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { max_abs_err: 0.0, max_rel_err: 0.0, checked: 0, worst: None, passed: true };
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let len = store.value(id).len();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(m) if m < len => sample(&mut rng, len, m).into_vec(),
            _ => (0..len).collect(),
        };
        for i in coords {
            let orig = store.value(id).iter().nth(i).copied().unwrap();
            set_flat(store, id, i, orig + opts.eps);
            let up = f(store, false);
            set_flat(store, id, i, orig - opts.eps);
            let down = f(store, false);
            set_flat(store, id, i, orig);
            let numeric = (up - down) / (2.0 * opts.eps);
            let a = analytic[k].iter().nth(i).copied().unwrap();
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            report.max_abs_err = report.max_abs_err.max(abs);
            if abs > opts.abs_tol {
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = Some((store.param(id).name.clone(), i));
                }
                if rel > opts.rel_tol {
                    report.passed = false;
                }
            }
        }
    }
    store.zero_grads();
    report
}

fn set_flat(store: &mut ParamStore<f64>, id: super::ParamId, i: usize, v: f64) {
    if let Some(x) = store.value_mut(id).iter_mut().nth(i) {
        *x = v;
    }
}
