//! Network architectures emitted into computation graphs.
//!
//! Two families are supported:
//!
//! * [`IcnnSpec`]: a bias-free input-convex network with the passthrough
//!   weight tied to the hidden weight of each layer,
//!   `h₁ = σ(W₁x)`, `hₖ = σ(Wₖ(x̃ + hₖ₋₁))`, `y = W_N(x̃ + h_{N−1})`,
//!   where `x̃` is the input zero-padded to the hidden width. With `W₂..W_N`
//!   non-negative and a convex non-decreasing `σ` the output is convex in `x`.
//! * [`MlpSpec`]: a plain feed-forward network with biases.
//!
//! Parameters are stored flat, layer by layer, each weight matrix row-major
//! (and, for the MLP, followed by its bias vector).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{GraphBuilder, NodeId};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
}

impl Activation {
    fn emit(self, b: &mut GraphBuilder, x: NodeId) -> NodeId {
        match self {
            Activation::Softplus => b.softplus(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IcnnSpec {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Also clamp the first-layer weights (default: only `W₂..W_N`).
    #[serde(default)]
    pub constrain_first_layer: bool,
}

impl Default for IcnnSpec {
    fn default() -> Self {
        Self {
            inputs: 3,
            hidden: vec![30, 30],
            activation: Activation::Softplus,
            constrain_first_layer: false,
        }
    }
}

impl IcnnSpec {
    pub fn new(inputs: usize, hidden: Vec<usize>) -> Self {
        Self {
            inputs,
            hidden,
            ..Self::default()
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.inputs);
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.inputs == 0 || self.hidden.is_empty() {
            return Err(ModelError::InvalidSpec("ICNN needs inputs and at least one hidden layer".into()));
        }
        if let Some(&w) = self.hidden.iter().find(|&&w| w < self.inputs) {
            return Err(ModelError::InvalidSpec(format!(
                "hidden width {w} is narrower than the {} inputs it passes through",
                self.inputs
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// `true` for every parameter that must stay non-negative.
    pub fn constrained_mask(&self) -> Vec<bool> {
        let widths = self.widths();
        let mut mask = Vec::with_capacity(self.num_params());
        for (layer, w) in widths.windows(2).enumerate() {
            let constrained = layer > 0 || self.constrain_first_layer;
            mask.extend(std::iter::repeat_n(constrained, w[0] * w[1]));
        }
        mask
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let widths = self.widths();
        let mut theta = Vec::with_capacity(self.num_params());
        for (layer, w) in widths.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let constrained = layer > 0 || self.constrain_first_layer;
            for _ in 0..w[0] * w[1] {
                theta.push(if constrained {
                    rng.gen_range(0.0..bound)
                } else {
                    rng.gen_range(-bound..bound)
                });
            }
        }
        theta
    }

    /// Emits the network output for input nodes `x`.
    pub fn emit(&self, b: &mut GraphBuilder, params: &[NodeId], x: &[NodeId]) -> NodeId {
        assert_eq!(x.len(), self.inputs, "ICNN input width");
        assert_eq!(params.len(), self.num_params(), "ICNN parameter count");
        let widths = self.widths();
        let mut offset = 0;
        let mut h: Vec<NodeId> = x.to_vec();
        for (layer, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            // tied passthrough: W_k (x̃ + h_{k-1}) for k ≥ 2
            let z: Vec<NodeId> = if layer == 0 {
                h.clone()
            } else {
                h.iter()
                    .enumerate()
                    .map(|(i, &hi)| if i < x.len() { b.add(x[i], hi) } else { hi })
                    .collect()
            };
            let last = layer + 2 == widths.len();
            let mut next = Vec::with_capacity(fan_out);
            for row in 0..fan_out {
                let wrow = &params[offset + row * fan_in..offset + (row + 1) * fan_in];
                let pre = b.dot(wrow, &z);
                next.push(if last { pre } else { self.activation.emit(b, pre) });
            }
            offset += fan_in * fan_out;
            h = next;
        }
        h[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            inputs: 4,
            hidden: vec![4, 16, 4],
            activation: Activation::Softplus,
        }
    }
}

impl MlpSpec {
    pub fn new(inputs: usize, hidden: Vec<usize>) -> Self {
        Self {
            inputs,
            hidden,
            activation: Activation::Softplus,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.inputs];
        w.extend(&self.hidden);
        w.push(1);
        w
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.inputs == 0 || self.hidden.contains(&0) {
            return Err(ModelError::InvalidSpec("MLP layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for w in self.widths().windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                theta.push(rng.gen_range(-bound..bound));
            }
            theta.extend(std::iter::repeat_n(0.0, w[1]));
        }
        theta
    }

    pub fn emit(&self, b: &mut GraphBuilder, params: &[NodeId], x: &[NodeId]) -> NodeId {
        assert_eq!(x.len(), self.inputs, "MLP input width");
        assert_eq!(params.len(), self.num_params(), "MLP parameter count");
        let widths = self.widths();
        let mut offset = 0;
        let mut h: Vec<NodeId> = x.to_vec();
        for (layer, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let last = layer + 2 == widths.len();
            let mut next = Vec::with_capacity(fan_out);
            for row in 0..fan_out {
                let wrow = &params[offset + row * fan_in..offset + (row + 1) * fan_in];
                let dot = b.dot(wrow, &h);
                let pre = b.add(dot, bias[row]);
                next.push(if last { pre } else { self.activation.emit(b, pre) });
            }
            offset += fan_in * fan_out + fan_out;
            h = next;
        }
        h[0]
    }
}
