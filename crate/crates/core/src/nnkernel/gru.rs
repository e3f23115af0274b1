use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{check_cols, Linear, NnError, ParamId, ParamStore, Scalar};

/// One GRU layer. Input and hidden weights are stored gate-concatenated as
/// `[reset | update | candidate]` column blocks:
///
/// ```text
/// r = sigmoid(x W_ir + b_ir + h W_hr + b_hr)
/// z = sigmoid(x W_iz + b_iz + h W_hz + b_hz)
/// n = tanh(x W_in + b_in + r * (h W_hn + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GruCell {
    pub w_input: ParamId,
    pub b_input: ParamId,
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

#[derive(Debug, Clone)]
pub struct GruStepCache<S> {
    x: Array2<S>,
    h_prev: Array2<S>,
    r: Array2<S>,
    z: Array2<S>,
    n: Array2<S>,
    /// `h W_hn + b_hn`, needed for the reset-gate gradient.
    gh_n: Array2<S>,
}

impl GruCell {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let input = Linear::new(store, &format!("{name}.input"), input_size, 3 * hidden_size, 1.0, rng);
        let hidden = Linear::new(store, &format!("{name}.hidden"), hidden_size, 3 * hidden_size, 1.0, rng);
        Self { w_input: input.w, b_input: input.b, w_hidden: hidden.w, b_hidden: hidden.b, input_size, hidden_size }
    }

    pub fn step<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: ArrayView2<S>,
        h_prev: ArrayView2<S>,
    ) -> Result<(Array2<S>, GruStepCache<S>), NnError> {
        check_cols("gru input", &x, self.input_size)?;
        check_cols("gru hidden", &h_prev, self.hidden_size)?;
        if x.nrows() != h_prev.nrows() {
            return Err(NnError::ShapeMismatch {
                op: "gru batch",
                expected: format!("{} rows", x.nrows()),
                got: format!("{} rows", h_prev.nrows()),
            });
        }
        let h = self.hidden_size;
        let mut gi = x.dot(store.value(self.w_input));
        gi += store.value(self.b_input);
        let mut gh = h_prev.dot(store.value(self.w_hidden));
        gh += store.value(self.b_hidden);
        let sigmoid = |v: S| S::one() / (S::one() + (-v).exp());
        let r = (&gi.slice(s![.., 0..h]) + &gh.slice(s![.., 0..h])).mapv(sigmoid);
        let z = (&gi.slice(s![.., h..2 * h]) + &gh.slice(s![.., h..2 * h])).mapv(sigmoid);
        let gh_n = gh.slice(s![.., 2 * h..]).to_owned();
        let mut n = gi.slice(s![.., 2 * h..]).to_owned();
        Zip::from(&mut n).and(&r).and(&gh_n).for_each(|n, &r, &g| *n = (*n + r * g).tanh());
        let mut h_new = Array2::zeros(n.raw_dim());
        Zip::from(&mut h_new).and(&n).and(&z).and(&h_prev).for_each(|o, &n, &z, &hp| *o = (S::one() - z) * n + z * hp);
        let cache = GruStepCache { x: x.to_owned(), h_prev: h_prev.to_owned(), r, z, n, gh_n };
        Ok((h_new, cache))
    }

    /// Given `dL/dh'`, accumulates parameter gradients and returns
    /// `(dL/dx, dL/dh_prev)`.
    pub fn step_backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &GruStepCache<S>,
        dh: &Array2<S>,
        need_dx: bool,
    ) -> (Option<Array2<S>>, Array2<S>) {
        let h = self.hidden_size;
        let rows = dh.nrows();
        let one = S::one();
        let mut dgi = Array2::<S>::zeros((rows, 3 * h));
        let mut dgh = Array2::<S>::zeros((rows, 3 * h));
        let mut dh_prev = Array2::<S>::zeros((rows, h));
        for b in 0..rows {
            for j in 0..h {
                let d = dh[[b, j]];
                let (r, z, n, gn, hp) = (
                    cache.r[[b, j]],
                    cache.z[[b, j]],
                    cache.n[[b, j]],
                    cache.gh_n[[b, j]],
                    cache.h_prev[[b, j]],
                );
                let dn_pre = d * (one - z) * (one - n * n);
                let dz_pre = d * (hp - n) * z * (one - z);
                let dr_pre = dn_pre * gn * r * (one - r);
                dgi[[b, j]] = dr_pre;
                dgi[[b, h + j]] = dz_pre;
                dgi[[b, 2 * h + j]] = dn_pre;
                dgh[[b, j]] = dr_pre;
                dgh[[b, h + j]] = dz_pre;
                dgh[[b, 2 * h + j]] = dn_pre * r;
                dh_prev[[b, j]] = d * z;
            }
        }
        general_mat_mul(one, &cache.x.t(), &dgi, one, store.grad_mut(self.w_input));
        *store.grad_mut(self.b_input) += &dgi.sum_axis(Axis(0)).insert_axis(Axis(0));
        general_mat_mul(one, &cache.h_prev.t(), &dgh, one, store.grad_mut(self.w_hidden));
        *store.grad_mut(self.b_hidden) += &dgh.sum_axis(Axis(0)).insert_axis(Axis(0));
        general_mat_mul(one, &dgh, &store.value(self.w_hidden).t(), one, &mut dh_prev);
        let dx = need_dx.then(|| dgi.dot(&store.value(self.w_input).t()));
        (dx, dh_prev)
    }
}

/// Stacked GRU; layer `l + 1` consumes the hidden state of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub cells: Vec<GruCell>,
}

impl Gru {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        layers: usize,
        rng: &mut R,
    ) -> Self {
        let cells = (0..layers)
            .map(|l| {
                let input = if l == 0 { input_size } else { hidden_size };
                GruCell::new(store, &format!("{name}.{l}"), input, hidden_size, rng)
            })
            .collect();
        Self { cells }
    }

    pub fn hidden_size(&self) -> usize {
        self.cells[0].hidden_size
    }

    pub fn layers(&self) -> usize {
        self.cells.len()
    }

    pub fn zero_state<S: Scalar>(&self, batch: usize) -> Vec<Array2<S>> {
        vec![Array2::zeros((batch, self.hidden_size())); self.layers()]
    }

    /// One time step through all layers. Returns the top-layer output and the
    /// new per-layer states.
    pub fn step<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        x: ArrayView2<S>,
        state: &[Array2<S>],
    ) -> Result<(Array2<S>, Vec<Array2<S>>, Vec<GruStepCache<S>>), NnError> {
        let mut input = x.to_owned();
        let mut new_state = Vec::with_capacity(self.cells.len());
        let mut caches = Vec::with_capacity(self.cells.len());
        for (cell, h) in self.cells.iter().zip(state) {
            let (h_new, cache) = cell.step(store, input.view(), h.view())?;
            input = h_new.clone();
            new_state.push(h_new);
            caches.push(cache);
        }
        Ok((input, new_state, caches))
    }

    /// Backpropagation through time over a cached unroll. `d_outputs[t]` is
    /// the gradient w.r.t. the top-layer output at step `t`. When
    /// `carry[t][b]` is false the state of row `b` was reset after step `t`,
    /// so no gradient flows back across that boundary. Returns the gradients
    /// w.r.t. each step's input when requested.
    pub fn backward_through_time<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        caches: &[Vec<GruStepCache<S>>],
        d_outputs: &[Array2<S>],
        carry_mask: Option<&[Vec<bool>]>,
        need_dx: bool,
    ) -> Vec<Option<Array2<S>>> {
        let layers = self.cells.len();
        let rows = d_outputs.first().map_or(0, |d| d.nrows());
        let mut carry: Vec<Array2<S>> = vec![Array2::zeros((rows, self.hidden_size())); layers];
        let mut d_inputs = vec![None; caches.len()];
        for t in (0..caches.len()).rev() {
            if let Some(mask) = carry_mask {
                for (b, &keep) in mask[t].iter().enumerate() {
                    if !keep {
                        for c in carry.iter_mut() {
                            c.row_mut(b).fill(S::zero());
                        }
                    }
                }
            }
            let mut from_above = d_outputs[t].clone();
            for l in (0..layers).rev() {
                let dh = &carry[l] + &from_above;
                let want_dx = l > 0 || need_dx;
                let (dx, dh_prev) = self.cells[l].step_backward(store, &caches[t][l], &dh, want_dx);
                carry[l] = dh_prev;
                match dx {
                    Some(dx) if l > 0 => from_above = dx,
                    dx => d_inputs[t] = dx,
                }
            }
        }
        d_inputs
    }
}
