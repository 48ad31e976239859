//! Small fully connected networks with hand-written reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::RngState;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
            Activation::Softplus => softplus(a),
            Activation::Identity => a,
        }
    }

    /// Derivative at pre-activation `a`, given the already computed output `y`.
    #[inline]
    fn derivative(self, a: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(a),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for positive `y`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Feed-forward network. Parameters live in one flat vector laid out layer by
/// layer as `W (out x in, row-major)` followed by `b (out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, then the final output.
    values: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache always holds the input")
    }
}

impl Mlp {
    /// Zero-initialised network. `activations` has one entry per layer.
    pub fn new(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::arg(
                "an mlp needs at least an input and an output size",
            ));
        }
        if activations.len() != sizes.len() - 1 {
            return Err(Error::arg(format!(
                "{} layers need {} activations, got {}",
                sizes.len() - 1,
                sizes.len() - 1,
                activations.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::arg("layer sizes must be positive"));
        }
        let n: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Hidden layers share `hidden_act`, the last layer uses `out_act`.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_act: Activation,
        out_act: Activation,
    ) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_act; hidden.len()];
        acts.push(out_act);
        Mlp::new(&sizes, &acts)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot(&mut self, rng: RngState) {
        let mut r = rng.stream();
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let limit = (6.0 / (i + o) as f64).sqrt();
            for w in &mut self.params[off..off + i * o] {
                *w = r.random_range(-limit..limit);
            }
            for b in &mut self.params[off + i * o..off + i * o + o] {
                *b = 0.0;
            }
            off += i * o + o;
        }
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                p.len()
            )));
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Mutable view of one layer's `(weights, bias)`.
    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let off = self.layer_offset(layer);
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let (w, rest) = self.params[off..off + i * o + o].split_at_mut(i * o);
        (w, rest)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "mlp expects input of length {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            let act = self.activations[l];
            let next: Vec<f64> = (0..o)
                .map(|r| {
                    let row = &w[r * i..(r + 1) * i];
                    act.apply(dot(row, &cur) + b[r])
                })
                .collect();
            cur = next;
            off += i * o + o;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.num_layers() + 1);
        let mut pre = Vec::with_capacity(self.num_layers());
        values.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            let input = values.last().unwrap();
            let a: Vec<f64> = (0..o)
                .map(|r| dot(&w[r * i..(r + 1) * i], input) + b[r])
                .collect();
            let act = self.activations[l];
            values.push(a.iter().map(|&v| act.apply(v)).collect());
            pre.push(a);
            off += i * o + o;
        }
        Ok(ForwardCache { values, pre })
    }

    /// Reverse pass for `upstream . output`.
    ///
    /// Parameter gradients are added into `grad` (same layout as the
    /// parameters); the gradient with respect to the input is returned.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        if upstream.len() != self.output_dim() {
            return Err(Error::dim(format!(
                "upstream gradient has length {}, expected {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if grad.len() != self.params.len() {
            return Err(Error::dim("gradient buffer does not match parameter count"));
        }
        let mut delta = upstream.to_vec();
        let mut off_end = self.params.len();
        for l in (0..self.num_layers()).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = off_end - (i * o + o);
            let act = self.activations[l];
            let a = &cache.pre[l];
            let y = &cache.values[l + 1];
            for r in 0..o {
                delta[r] *= act.derivative(a[r], y[r]);
            }
            let input = &cache.values[l];
            let (gw, gb) = grad[off..off_end].split_at_mut(i * o);
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                gb[r] += d;
                for (g, v) in gw[r * i..(r + 1) * i].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            let w = &self.params[off..off + i * o];
            let mut next = vec![0.0; i];
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (nx, wv) in next.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                    *nx += d * wv;
                }
            }
            delta = next;
            off_end = off;
        }
        Ok(delta)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Forward pass of `m` at `x`.
pub fn mlp_forward(m: &Mlp, x: &[f64]) -> Result<Vec<f64>> {
    m.forward(x)
}

/// Gradients of `upstream . m(x)` with respect to the parameters and to `x`.
pub fn mlp_grad(m: &Mlp, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = m.forward_cached(x)?;
    let mut g = vec![0.0; m.num_params()];
    let gx = m.backward(&cache, upstream, &mut g)?;
    Ok((g, gx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_layer_passes_through() {
        let mut m = Mlp::new(&[3, 3], &[Activation::Identity]).unwrap();
        let (w, _) = m.layer_mut(0);
        for k in 0..3 {
            w[k * 3 + k] = 1.0;
        }
        assert_eq!(
            mlp_forward(&m, &[1.0, -2.0, 0.5]).unwrap(),
            vec![1.0, -2.0, 0.5]
        );
    }

    #[test]
    fn zero_relu_net_outputs_zero() {
        let m = Mlp::new(&[4, 5, 2], &[Activation::Relu, Activation::Relu]).unwrap();
        assert_eq!(
            mlp_forward(&m, &[1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn parameter_count() {
        let m = Mlp::new(&[3, 7, 2], &[Activation::Tanh, Activation::Identity]).unwrap();
        assert_eq!(m.num_params(), 3 * 7 + 7 + 7 * 2 + 2);
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut m = Mlp::new(&[2, 3], &[Activation::Identity]).unwrap();
        m.init_glorot(RngState::new(5));
        let x = [0.7, -1.3];
        let up = [1.0, 2.0, -0.5];
        let (g, gx) = mlp_grad(&m, &x, &up).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert!((g[r * 2 + c] - up[r] * x[c]).abs() < 1e-15);
            }
            assert_eq!(g[6 + r], up[r]);
        }
        let w = m.params();
        for c in 0..2 {
            let expect: f64 = (0..3).map(|r| up[r] * w[r * 2 + c]).sum();
            assert!((gx[c] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_upstream_zero_gradient() {
        let mut m = Mlp::with_hidden(3, &[8], 2, Activation::Tanh, Activation::Softplus).unwrap();
        m.init_glorot(RngState::new(1));
        let (g, gx) = mlp_grad(&m, &[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().chain(&gx).all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let m = Mlp::new(&[2, 1], &[Activation::Identity]).unwrap();
        assert!(m.forward(&[1.0]).is_err());
        assert!(mlp_grad(&m, &[1.0, 2.0], &[1.0, 1.0]).is_err());
        assert!(Mlp::new(&[2, 1], &[]).is_err());
    }

    #[test]
    fn softplus_round_trip() {
        for y in [1e-3, 0.5, 1.0, 7.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12);
        }
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
