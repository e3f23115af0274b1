//! Diagonal Gaussian policy math. `mean` is `(rows, d)`; `log_std` is a
//! single `(1, d)` row shared across the batch.

use ndarray::{Array1, Array2, Zip};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{cast, Scalar};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Per-row log-density of `actions`.
pub fn gaussian_log_prob<S: Scalar>(mean: &Array2<S>, log_std: &Array2<S>, actions: &Array2<S>) -> Array1<S> {
    let half: S = cast(0.5);
    let c: S = cast(0.5 * LN_2PI);
    let mut out = Array1::zeros(mean.nrows());
    for ((m, a), o) in mean.rows().into_iter().zip(actions.rows()).zip(out.iter_mut()) {
        let mut acc = S::zero();
        for ((&m, &a), &ls) in m.iter().zip(a.iter()).zip(log_std.row(0).iter()) {
            let z = (a - m) / ls.exp();
            acc = acc - half * z * z - ls - c;
        }
        *o = acc;
    }
    out
}

/// Elementwise `(d logp / d mean, d logp / d log_std)`, both `(rows, d)`.
/// The log-std gradient is per row; callers reduce over the batch.
pub fn gaussian_log_prob_grads<S: Scalar>(mean: &Array2<S>, log_std: &Array2<S>, actions: &Array2<S>) -> (Array2<S>, Array2<S>) {
    let mut d_mean = Array2::zeros(mean.raw_dim());
    let mut d_ls = Array2::zeros(mean.raw_dim());
    let inv_var = log_std.mapv(|ls| (-(ls + ls)).exp());
    Zip::indexed(&mut d_mean).and(&mut d_ls).and(mean).and(actions).for_each(|(_, j), dm, dl, &m, &a| {
        let diff = a - m;
        *dm = diff * inv_var[[0, j]];
        *dl = diff * diff * inv_var[[0, j]] - S::one();
    });
    (d_mean, d_ls)
}

/// Differential entropy of the distribution (independent of the mean).
pub fn gaussian_entropy<S: Scalar>(log_std: &Array2<S>) -> S {
    let c: S = cast(0.5 * (LN_2PI + 1.0));
    log_std.iter().fold(S::zero(), |acc, &ls| acc + ls + c)
}

pub fn sample_gaussian<S: Scalar, R: Rng + ?Sized>(mean: &Array2<S>, log_std: &Array2<S>, rng: &mut R) -> Array2<S> {
    let mut out = mean.clone();
    for mut row in out.rows_mut() {
        for (x, &ls) in row.iter_mut().zip(log_std.row(0).iter()) {
            let n: f64 = StandardNormal.sample(rng);
            *x = *x + ls.exp() * cast::<S>(n);
        }
    }
    out
}
