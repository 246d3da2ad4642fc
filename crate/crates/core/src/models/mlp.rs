use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};

use super::Model;
use crate::numerics::RandomStream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Tanh => fast_tanh(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative from the pre-activation `z` and the activated value `h`.
    fn derivative_at(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            _ => self.derivative(z),
        }
    }

    /// Derivative; ReLU uses the a.e. value 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => {
                let t = fast_tanh(z);
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `tanh` through a single `exp`, accurate to a few ulps of 1.
fn fast_tanh(z: f64) -> f64 {
    if z.abs() < 1e-3 {
        let z2 = z * z;
        return z * (1.0 - z2 / 3.0 * (1.0 - 0.4 * z2));
    }
    let e = (2.0 * z.abs()).exp();
    (1.0 - 2.0 / (e + 1.0)).copysign(z)
}

/// Fully connected network without biases in the NTK parametrization: layer
/// `l` computes `W_l h / √fan_in`, hidden layers apply the activation and the
/// output layer is linear. Loss `(1/2P) Σ_a ‖f(x_a) - y_a‖²`.
///
/// Parameters are the weight matrices in layer order, each row-major
/// (`out × in`). With one linear hidden layer and scalar input/output this is
/// the vector UV model with `v = W_1`, `u = W_2`.
#[derive(Debug, Clone)]
pub struct MlpModel {
    widths: Vec<usize>,
    activation: Activation,
    inputs: Vec<f64>,
    labels: Vec<f64>,
    offsets: Vec<usize>,
    scales: Vec<f64>,
}

struct Cache {
    /// pre-activations per layer (hidden layers and output)
    pre: Vec<Vec<f64>>,
    /// layer inputs: `acts[0]` is x, `acts[l]` the activated output of layer l-1
    acts: Vec<Vec<f64>>,
}

impl MlpModel {
    /// `widths = [d_in, hidden..., d_out]`; `inputs` is `P × d_in` row-major and
    /// `labels` `P × d_out` row-major.
    pub fn new(
        widths: Vec<usize>,
        activation: Activation,
        inputs: Vec<f64>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::contract("MLP needs at least input and output widths, all positive"));
        }
        let d_in = widths[0];
        let d_out = *widths.last().unwrap();
        if inputs.is_empty() || inputs.len() % d_in != 0 {
            return Err(Error::contract("input length is not a multiple of d_in"));
        }
        let p = inputs.len() / d_in;
        if labels.len() != p * d_out {
            return Err(Error::contract("labels must be P x d_out"));
        }
        let mut offsets = vec![0];
        for pair in widths.windows(2) {
            offsets.push(offsets.last().unwrap() + pair[0] * pair[1]);
        }
        let scales = widths[..widths.len() - 1]
            .iter()
            .map(|&fan_in| 1.0 / (fan_in as f64).sqrt())
            .collect();
        Ok(Self {
            widths,
            activation,
            inputs,
            labels,
            offsets,
            scales,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn samples(&self) -> usize {
        self.inputs.len() / self.widths[0]
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn d_out(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// I.i.d. standard normal weights.
    pub fn init_params(&self, rng: &mut RandomStream) -> DVector<f64> {
        DVector::from_vec(rng.gaussians(self.dim()))
    }

    fn forward(&self, w: &[f64], x: &[f64]) -> Cache {
        let mut pre = Vec::with_capacity(self.layers());
        let mut acts = Vec::with_capacity(self.layers());
        acts.push(x.to_vec());
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let wl = &w[self.offsets[l]..self.offsets[l + 1]];
            let h = &acts[l];
            let mut z = vec![0.0; n_out];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut acc = 0.0;
                for i in 0..n_in {
                    acc += wl[j * n_in + i] * h[i];
                }
                *zj = acc * self.scales[l];
            }
            if l + 1 < self.layers() {
                acts.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            pre.push(z);
        }
        Cache { pre, acts }
    }

    /// Whole-dataset forward pass with one column per sample: pre-activations
    /// of every layer and the inputs to every layer.
    fn batch_forward(&self, w: &[f64]) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut zs = Vec::with_capacity(self.layers());
        let mut hs = Vec::with_capacity(self.layers());
        hs.push(DMatrix::from_column_slice(self.widths[0], self.samples(), &self.inputs));
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let wt = DMatrixView::from_slice(&w[self.offsets[l]..self.offsets[l + 1]], n_in, n_out);
            let z = (wt.transpose() * &hs[l]) * self.scales[l];
            if l + 1 < self.layers() {
                hs.push(z.map(|v| self.activation.apply(v)));
            }
            zs.push(z);
        }
        (zs, hs)
    }

    /// Network outputs for one input row.
    pub fn predict(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(w, x).pre.pop().unwrap()
    }

    /// Accumulates `Σ_o delta_o ∂f_o/∂w` into `out`.
    fn backward(&self, w: &[f64], cache: &Cache, delta: &[f64], out: &mut [f64]) {
        let mut upstream = delta.to_vec();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let wl = &w[self.offsets[l]..self.offsets[l + 1]];
            let gl = &mut out[self.offsets[l]..self.offsets[l + 1]];
            let h = &cache.acts[l];
            let s = self.scales[l];
            for j in 0..n_out {
                for i in 0..n_in {
                    gl[j * n_in + i] += upstream[j] * h[i] * s;
                }
            }
            if l == 0 {
                break;
            }
            let mut dz = vec![0.0; n_in];
            for (i, dzi) in dz.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..n_out {
                    acc += upstream[j] * wl[j * n_in + i] * s;
                }
                *dzi = acc * self.activation.derivative(cache.pre[l - 1][i]);
            }
            upstream = dz;
        }
    }

    fn sample(&self, a: usize) -> &[f64] {
        let d = self.widths[0];
        &self.inputs[a * d..(a + 1) * d]
    }

    /// Per-output gradients `∇f_o(x_a)` as columns `a * d_out + o`.
    pub fn output_jacobian(&self, w: &[f64]) -> DMatrix<f64> {
        let d_out = self.d_out();
        let mut jac = DMatrix::zeros(self.dim(), self.samples() * d_out);
        let mut seed = vec![0.0; d_out];
        let mut col = vec![0.0; self.dim()];
        for a in 0..self.samples() {
            let cache = self.forward(w, self.sample(a));
            for o in 0..d_out {
                seed.fill(0.0);
                seed[o] = 1.0;
                col.fill(0.0);
                self.backward(w, &cache, &seed, &mut col);
                jac.column_mut(a * d_out + o).copy_from_slice(&col);
            }
        }
        jac
    }
}

impl Model for MlpModel {
    fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn loss_with_labels(&self, w: &[f64], labels: &[f64]) -> f64 {
        let (zs, _) = self.batch_forward(w);
        let out = zs.last().unwrap();
        let sum_sq: f64 = out.iter().zip(labels).map(|(f, y)| (f - y).powi(2)).sum();
        sum_sq / (2.0 * self.samples() as f64)
    }

    fn gradient_with_labels(&self, w: &[f64], labels: &[f64], out: &mut [f64]) {
        let p = self.samples() as f64;
        let (zs, hs) = self.batch_forward(w);
        let top = zs.last().unwrap();
        let mut delta =
            DMatrix::from_fn(top.nrows(), top.ncols(), |o, a| (top[(o, a)] - labels[a * top.nrows() + o]) / p);
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let s = self.scales[l];
            let mut gl = DMatrixViewMut::from_slice(&mut out[self.offsets[l]..self.offsets[l + 1]], n_in, n_out);
            hs[l].mul_to(&delta.transpose(), &mut gl);
            gl *= s;
            if l == 0 {
                break;
            }
            let wt = DMatrixView::from_slice(&w[self.offsets[l]..self.offsets[l + 1]], n_in, n_out);
            let mut back = wt * &delta * s;
            for ((d, &z), &h) in back.iter_mut().zip(zs[l - 1].iter()).zip(hs[l].iter()) {
                *d *= self.activation.derivative_at(z, h);
            }
            delta = back;
        }
    }

    /// Gauss-Newton trace `(1/P) Σ_a ‖∇f(x_a)‖²`, equal to `Tr ∇²L` on the
    /// zero-loss manifold.
    fn trace_hessian(&self, w: &DVector<f64>) -> Result<f64> {
        self.check_dim(w.as_slice())?;
        Ok(self.output_jacobian(w.as_slice()).norm_squared() / self.samples() as f64)
    }

    fn noise_function(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(w.as_slice())?;
        Ok(self.output_jacobian(w.as_slice()) / self.samples() as f64)
    }

    fn noise_scale(&self) -> f64 {
        1.0 / self.samples() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::fd_gradient_rel_err;
    use approx::assert_relative_eq;
    use crate::models::VectorUvModel;

    #[test]
    fn linear_single_hidden_layer_is_the_uv_model() {
        let mut rng = RandomStream::new(21, 0);
        let n = 10;
        let x = rng.gaussians(5);
        let y = rng.gaussians(5);
        let uv = VectorUvModel::new(n, x.clone(), y.clone()).unwrap();
        let mlp = MlpModel::new(vec![1, n, 1], Activation::Linear, x, y).unwrap();
        for _ in 0..20 {
            let u = rng.gaussians(n);
            let v = rng.gaussians(n);
            let w_uv = DVector::from_iterator(2 * n, u.iter().chain(&v).copied());
            let w_mlp = DVector::from_iterator(2 * n, v.iter().chain(&u).copied());
            assert_relative_eq!(uv.loss(&w_uv).unwrap(), mlp.loss(&w_mlp).unwrap(), max_relative = 1e-12);
            let g_uv = uv.gradient(&w_uv).unwrap();
            let g_mlp = mlp.gradient(&w_mlp).unwrap();
            for j in 0..n {
                assert_relative_eq!(g_uv[j], g_mlp[n + j], max_relative = 1e-12, epsilon = 1e-15);
                assert_relative_eq!(g_uv[n + j], g_mlp[j], max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -4000..=4000 {
            let z = i as f64 * 2.5e-3;
            assert!((fast_tanh(z) - z.tanh()).abs() < 4e-16, "{z}");
        }
        assert_eq!(fast_tanh(800.0), 1.0);
        assert_eq!(fast_tanh(-800.0), -1.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RandomStream::new(22, 0);
        for act in [Activation::Linear, Activation::Tanh, Activation::Relu] {
            let m = MlpModel::new(vec![3, 5, 4, 2], act, rng.gaussians(18), rng.gaussians(12)).unwrap();
            for _ in 0..20 {
                let w = m.init_params(&mut rng);
                let err = fd_gradient_rel_err(&m, &w);
                // ReLU kinks inside the difference stencil are measure zero
                assert!(err < 1e-5, "{act:?}: {err:e}");
            }
        }
    }

    #[test]
    fn gauss_newton_trace_on_interpolating_point() {
        // labels generated by the network itself put w on the zero-loss set
        let mut rng = RandomStream::new(23, 0);
        let probe = MlpModel::new(vec![2, 6, 1], Activation::Tanh, rng.gaussians(8), vec![0.0; 4]).unwrap();
        let w = probe.init_params(&mut rng);
        let labels: Vec<f64> = (0..4).flat_map(|a| probe.predict(w.as_slice(), probe.sample(a))).collect();
        let m = MlpModel::new(vec![2, 6, 1], Activation::Tanh, probe.inputs.clone(), labels).unwrap();
        assert!(m.loss(&w).unwrap() < 1e-28);
        let h = m.hessian(&w).unwrap();
        let tr = m.trace_hessian(&w).unwrap();
        assert!((h.trace() - tr).abs() < 1e-6 * tr);
    }
}
