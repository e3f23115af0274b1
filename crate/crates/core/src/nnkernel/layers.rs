use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cast, check_cols, NnError, ParamId, ParamStore, Scalar};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Self::Identity => x,
            Self::LeakyRelu => {
                if x > S::zero() {
                    x
                } else {
                    x * cast(LEAKY_SLOPE)
                }
            }
            Self::Sigmoid => S::one() / (S::one() + (-x).exp()),
            Self::Tanh => x.tanh(),
        }
    }

    pub fn forward<S: Scalar>(self, x: &Array2<S>) -> Array2<S> {
        if self == Self::Identity {
            return x.clone();
        }
        x.mapv(|v| self.apply(v))
    }

    /// Derivative at pre-activation `pre` with output `post`.
    fn derivative<S: Scalar>(self, pre: S, post: S) -> S {
        match self {
            Self::Identity => S::one(),
            Self::LeakyRelu => {
                if pre > S::zero() {
                    S::one()
                } else {
                    cast(LEAKY_SLOPE)
                }
            }
            Self::Sigmoid => post * (S::one() - post),
            Self::Tanh => S::one() - post * post,
        }
    }

    pub fn backward<S: Scalar>(self, pre: &Array2<S>, post: &Array2<S>, dy: &Array2<S>) -> Array2<S> {
        if self == Self::Identity {
            return dy.clone();
        }
        let mut dx = dy.clone();
        ndarray::Zip::from(&mut dx).and(pre).and(post).for_each(|d, &p, &q| *d = *d * self.derivative(p, q));
        dx
    }
}

/// `y = x W + b` with `W` of shape `(in, out)` and `b` of shape `(1, out)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Scaled-uniform init with variance `gain^2 / in_dim`; zero bias.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let a = gain * (3.0 / in_dim as f64).sqrt();
        let w = Array2::from_shape_fn((in_dim, out_dim), |_| cast::<S>(rng.random_range(-a..=a)));
        let w = store.add(format!("{name}.w"), w);
        let b = store.add(format!("{name}.b"), Array2::zeros((1, out_dim)));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: ArrayView2<S>) -> Result<Array2<S>, NnError> {
        check_cols("linear", &x, self.in_dim)?;
        let mut y = x.dot(store.value(self.w));
        y += store.value(self.b);
        Ok(y)
    }

    /// Accumulates `dW`, `db`; returns `dx` when requested.
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        x: ArrayView2<S>,
        dy: ArrayView2<S>,
        need_dx: bool,
    ) -> Option<Array2<S>> {
        let dx = need_dx.then(|| dy.dot(&store.value(self.w).t()));
        general_mat_mul(S::one(), &x.t(), &dy, S::one(), store.grad_mut(self.w));
        let db = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        *store.grad_mut(self.b) += &db;
        dx
    }
}

/// Stack of linear layers, `hidden` activation between them and `output`
/// activation after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

#[derive(Debug, Clone)]
pub struct MlpCache<S> {
    inputs: Vec<Array2<S>>,
    pre: Vec<Array2<S>>,
    post: Vec<Array2<S>>,
}

impl<S: Scalar> MlpCache<S> {
    pub fn output(&self) -> &Array2<S> {
        self.post.last().unwrap()
    }
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`. Hidden layers use `gain_hidden`, the last
    /// layer `gain_out`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        gain_hidden: f64,
        gain_out: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { gain_out } else { gain_hidden };
                Linear::new(store, &format!("{name}.{i}"), sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers, hidden, output }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    fn activation(&self, i: usize) -> Activation {
        if i + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, x: ArrayView2<S>) -> Result<Array2<S>, NnError> {
        let mut h = self.layers[0].forward(store, x)?;
        h = self.activation(0).forward(&h);
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(store, h.view())?;
            h = self.activation(i).forward(&h);
        }
        Ok(h)
    }

    pub fn forward_cached<S: Scalar>(&self, store: &ParamStore<S>, x: ArrayView2<S>) -> Result<MlpCache<S>, NnError> {
        let n = self.layers.len();
        let mut cache = MlpCache { inputs: Vec::with_capacity(n), pre: Vec::with_capacity(n), post: Vec::with_capacity(n) };
        let mut input = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(store, input.view())?;
            let post = self.activation(i).forward(&pre);
            cache.inputs.push(input);
            input = post.clone();
            cache.pre.push(pre);
            cache.post.push(post);
        }
        Ok(cache)
    }

    /// Backpropagates `dy` (gradient w.r.t. the MLP output).
    pub fn backward<S: Scalar>(
        &self,
        store: &mut ParamStore<S>,
        cache: &MlpCache<S>,
        dy: &Array2<S>,
        need_dx: bool,
    ) -> Option<Array2<S>> {
        let mut grad = dy.clone();
        for i in (0..self.layers.len()).rev() {
            let d_pre = self.activation(i).backward(&cache.pre[i], &cache.post[i], &grad);
            let want_dx = need_dx || i > 0;
            match self.layers[i].backward(store, cache.inputs[i].view(), d_pre.view(), want_dx) {
                Some(dx) => grad = dx,
                None => return None,
            }
        }
        Some(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkernel::{grad_check, GradCheckOptions};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_zero_input() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, "l", 3, 3, 1.0, &mut rng);
        store.value_mut(lin.w).assign(&Array2::eye(3));
        let x = array![[1.0, -2.0, 3.5], [0.1, 0.2, 0.3]];
        assert_eq!(lin.forward(&store, x.view()).unwrap(), x);
        store.value_mut(lin.b).assign(&array![[0.5, 0.25, -1.0]]);
        let y = lin.forward(&store, Array2::zeros((1, 3)).view()).unwrap();
        assert_eq!(y, array![[0.5, 0.25, -1.0]]);
        assert!(matches!(lin.forward(&store, Array2::zeros((1, 4)).view()), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::LeakyRelu.apply(-1.0f64), -0.01);
        assert_eq!(Activation::LeakyRelu.apply(2.0f64), 2.0);
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0f64), 0.0);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 7, 4, 1.0, &mut rng);
        // The input is registered as a parameter so its gradient is checked too.
        let x = store.add("x", Array2::from_shape_fn((5, 7), |_| rng.random_range(-1.0..1.0)));
        let g = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let report = grad_check(
            &mut store,
            |s, grads| {
                let xv = s.value(x).clone();
                let y = lin.forward(s, xv.view()).unwrap();
                if grads {
                    let dx = lin.backward(s, xv.view(), g.view(), true).unwrap();
                    *s.grad_mut(x) += &dx;
                }
                (&y * &g).sum()
            },
            &GradCheckOptions { rel_tol: 1e-5, ..Default::default() },
        );
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::LeakyRelu] {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut store = ParamStore::<f64>::new();
            let x = store.add("x", Array2::from_shape_fn((4, 6), |_| rng.random_range(-2.0..2.0)));
            let g = Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0));
            let report = grad_check(
                &mut store,
                |s, grads| {
                    let pre = s.value(x).clone();
                    let post = act.forward(&pre);
                    if grads {
                        let dx = act.backward(&pre, &post, &g);
                        *s.grad_mut(x) += &dx;
                    }
                    (&post * &g).sum()
                },
                &GradCheckOptions { rel_tol: 1e-6, ..Default::default() },
            );
            assert!(report.passed, "{act:?}: {report:?}");
        }
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[6, 9, 5, 3], Activation::LeakyRelu, Activation::Sigmoid, 2f64.sqrt(), 1.0, &mut rng);
        let x = store.add("x", Array2::from_shape_fn((4, 6), |_| rng.random_range(-1.0..1.0)));
        let g = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let report = grad_check(
            &mut store,
            |s, grads| {
                let xv = s.value(x).clone();
                let cache = mlp.forward_cached(s, xv.view()).unwrap();
                let loss = (cache.output() * &g).sum();
                if grads {
                    let dx = mlp.backward(s, &cache, &g, true).unwrap();
                    *s.grad_mut(x) += &dx;
                }
                loss
            },
            &GradCheckOptions::default(),
        );
        assert!(report.passed, "{report:?}");
        assert_eq!(mlp.forward(&store, store.value(x).view()).unwrap(), *mlp.forward_cached(&store, store.value(x).view()).unwrap().output());
    }
}
