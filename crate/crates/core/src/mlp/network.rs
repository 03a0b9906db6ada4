use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::{Distribution, Uniform};

use crate::dense::gemm;
use crate::error::{Error, Result};

pub const HIDDEN_UNITS: usize = 512;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// One affine layer, `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }
}

/// A token-wise MLP: affine layers with leaky-ReLU between them and a linear
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub leaky_slope: f64,
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

/// Activations saved by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (the network input, then post-activations).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of every hidden layer.
    pre: Vec<Array2<f64>>,
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 { x } else { slope * x }
}

#[inline]
fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 { 1.0 } else { slope }
}

impl Mlp {
    /// Four layers, `in -> 512 -> 512 -> 512 -> out`.
    pub fn init(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        Self::init_with_dims(&[in_dim, HIDDEN_UNITS, HIDDEN_UNITS, HIDDEN_UNITS, out_dim], seed)
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_with_dims(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid layer dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
                Layer {
                    weight: Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> MlpGrads {
        MlpGrads {
            layers: self.layers.iter().map(|l| Layer::zeros(l.in_dim(), l.out_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("network input"));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut current = x.to_owned();
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = gemm(current.view(), false, layer.weight.view(), false);
            z += &layer.bias;
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteActivation { layer: idx });
            }
            inputs.push(current);
            if idx == last {
                return Ok((z, ForwardCache { inputs, pre }));
            }
            let slope = self.leaky_slope;
            current = z.mapv(|v| leaky(v, slope));
            pre.push(z);
        }
        unreachable!("loop returns at the last layer")
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Exact gradients of `sum(dy * forward(x))` w.r.t. parameters and input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dy: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        let n_layers = self.layers.len();
        if cache.inputs.len() != n_layers || cache.pre.len() + 1 != n_layers {
            return Err(Error::Shape("forward cache does not match network".into()));
        }
        let rows = cache.inputs[0].nrows();
        if dy.dim() != (rows, self.out_dim()) {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, expected ({rows}, {})",
                dy.dim(),
                self.out_dim()
            )));
        }
        let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
        let mut dz = dy.to_owned();
        for idx in (0..n_layers).rev() {
            let layer = &self.layers[idx];
            let input = &cache.inputs[idx];
            let weight = gemm(input.view(), true, dz.view(), false);
            let bias = dz.sum_axis(Axis(0));
            let mut da = gemm(dz.view(), false, layer.weight.view(), true);
            grads.push(Layer { weight, bias });
            if idx > 0 {
                let slope = self.leaky_slope;
                Zip::from(&mut da)
                    .and(&cache.pre[idx - 1])
                    .for_each(|g, &z| *g *= leaky_grad(z, slope));
            }
            dz = da;
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, dz))
    }
}

impl MlpGrads {
    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v * factor);
            l.bias.mapv_inplace(|v| v * factor);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Rescale all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut MlpGrads], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale(factor);
        }
    }
    norm
}
