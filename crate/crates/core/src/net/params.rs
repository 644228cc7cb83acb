use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Width of every layer in the shared per-point MLP.
pub const POINT_WIDTH: usize = 32;
/// Width of both fusion layers.
pub const FUSION_WIDTH: usize = 64;
/// Descriptor length.
pub const DESCRIPTOR_DIM: usize = FUSION_WIDTH;

pub const SUPPORTED_INPUT_DIMS: [usize; 3] = [4, 6, 10];

/// Fully connected layer `y = W x + b`, `W` row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| f64::from(rng.random_range(-bound..=bound) as f32).clamp(-bound, bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        debug_assert_eq!(out.len(), self.outputs);
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            let mut acc = *b;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *o = acc;
        }
    }

    /// Accumulates `dW += dy xᵀ`, `db += dy` and writes `dx = Wᵀ dy` when asked.
    #[inline]
    pub(crate) fn backward_into(&self, x: &[f64], dy: &[f64], grad: &mut DenseLayer, dx: Option<&mut [f64]>) {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &mut grad.weights[o * self.inputs..(o + 1) * self.inputs];
            for (w, xi) in row.iter_mut().zip(x) {
                *w += g * xi;
            }
        }
        if let Some(dx) = dx {
            dx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                for (d, w) in dx.iter_mut().zip(row) {
                    *d += g * w;
                }
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Network shape: input channels and whether the pooled fragment context is
/// concatenated to each local feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Architecture {
    pub input_dim: usize,
    pub global_context: bool,
}

impl Architecture {
    pub fn new(input_dim: usize, global_context: bool) -> Result<Self> {
        if !SUPPORTED_INPUT_DIMS.contains(&input_dim) {
            return Err(Error::invalid(format!(
                "unsupported input dimension {input_dim} (expected 4, 6 or 10)"
            )));
        }
        Ok(Self {
            input_dim,
            global_context,
        })
    }

    pub fn fusion_input(&self) -> usize {
        if self.global_context {
            2 * POINT_WIDTH
        } else {
            POINT_WIDTH
        }
    }

    /// `(inputs, outputs)` of every layer in declaration order.
    pub fn layer_shapes(&self) -> [(usize, usize); 5] {
        [
            (self.input_dim, POINT_WIDTH),
            (POINT_WIDTH, POINT_WIDTH),
            (POINT_WIDTH, POINT_WIDTH),
            (self.fusion_input(), FUSION_WIDTH),
            (FUSION_WIDTH, FUSION_WIDTH),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// All weights of the descriptor network: three shared per-point layers and
/// two fusion layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PpfNetParams {
    pub arch: Architecture,
    pub point_mlp: [DenseLayer; 3],
    pub fusion_mlp: [DenseLayer; 2],
}

impl PpfNetParams {
    /// Seeded Glorot-uniform initialization with global context enabled.
    pub fn init(seed: u64, input_dim: usize) -> Result<Self> {
        Self::init_with(seed, Architecture::new(input_dim, true)?)
    }

    pub fn init_with(seed: u64, arch: Architecture) -> Result<Self> {
        Architecture::new(arch.input_dim, arch.global_context)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = arch.layer_shapes();
        let mut layer = |k: usize| DenseLayer::glorot(s[k].0, s[k].1, &mut rng);
        let point_mlp = [layer(0), layer(1), layer(2)];
        let fusion_mlp = [layer(3), layer(4)];
        Ok(Self {
            arch,
            point_mlp,
            fusion_mlp,
        })
    }

    pub fn zeros(arch: Architecture) -> Self {
        let s = arch.layer_shapes();
        let z = |k: usize| DenseLayer::zeros(s[k].0, s[k].1);
        Self {
            arch,
            point_mlp: [z(0), z(1), z(2)],
            fusion_mlp: [z(3), z(4)],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.arch)
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.point_mlp.iter().chain(self.fusion_mlp.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.point_mlp.iter_mut().chain(self.fusion_mlp.iter_mut())
    }

    /// Weight and bias vectors in declaration order: `W1 b1 W2 b2 … W5 b5`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers_mut()
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks the dimension chain and finiteness.
    pub fn validate(&self) -> Result<()> {
        Architecture::new(self.arch.input_dim, self.arch.global_context)?;
        for (k, (layer, (i, o))) in self.layers().zip(self.arch.layer_shapes()).enumerate() {
            if layer.inputs != i
                || layer.outputs != o
                || layer.weights.len() != i * o
                || layer.bias.len() != o
            {
                return Err(Error::shape(format!(
                    "layer {k} is {}x{} ({} weights), expected {o}x{i}",
                    layer.outputs,
                    layer.inputs,
                    layer.weights.len()
                )));
            }
            if !layer.is_finite() {
                return Err(Error::invalid(format!("layer {k} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &PpfNetParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Rounds every entry to the nearest `f32`, the storage precision of
    /// checkpoints.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
