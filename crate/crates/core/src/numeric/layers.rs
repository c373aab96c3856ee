use serde::{Deserialize, Serialize};

use super::{BoundParams, ParamId, ParamStore, Real, Var};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply<'g, T: Real>(self, x: Var<'g, T>) -> Var<'g, T> {
        match self {
            Activation::Gelu => x.gelu(),
            Activation::Relu => x.relu(),
        }
    }
}

/// `x W + b`, with `W: in x out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut CounterRng,
    ) -> Self {
        let w = store.add_weight(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| store.add_zeros(format!("{name}.b"), 1, fan_out));
        Linear {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<'g, T: Real>(&self, p: &BoundParams<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let y = x.matmul(p[self.w]);
        match self.b {
            Some(b) => y.add_row(p[b]),
            None => y,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, width: usize) -> Self {
        LayerNorm {
            gamma: store.add_ones(format!("{name}.gamma"), 1, width),
            beta: store.add_zeros(format!("{name}.beta"), 1, width),
        }
    }

    pub fn forward<'g, T: Real>(&self, p: &BoundParams<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        x.layer_norm(p[self.gamma], p[self.beta])
    }
}

/// Stack of linear layers with an activation and dropout between them; the
/// last layer is linear.
#[derive(Debug, Clone)]
pub struct MlpBlock {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub dropout: f64,
}

impl MlpBlock {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        activation: Activation,
        dropout: f64,
        rng: &mut CounterRng,
    ) -> Self {
        assert!(
            widths.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        assert!(
            (0.0..1.0).contains(&dropout),
            "dropout rate must lie in [0, 1)"
        );
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        MlpBlock {
            layers,
            activation,
            dropout,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].fan_in];
        w.extend(self.layers.iter().map(|l| l.fan_out));
        w
    }

    pub fn forward<'g, T: Real>(&self, p: &BoundParams<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let first = self.layers[0].forward(p, x);
        self.forward_from_first(p, first)
    }

    /// Continues the block from an already computed first pre-activation.
    pub fn forward_from_first<'g, T: Real>(
        &self,
        p: &BoundParams<'g, T>,
        first: Var<'g, T>,
    ) -> Var<'g, T> {
        let mut h = first;
        for layer in &self.layers[1..] {
            h = self.activation.apply(h).dropout(self.dropout);
            h = layer.forward(p, h);
        }
        h
    }
}
