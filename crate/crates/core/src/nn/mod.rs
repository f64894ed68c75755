//! Small dense networks: MLP forward/backward and a single LSTM cell.

mod lstm;
mod mlp;

pub use lstm::{init_lstm, lstm_step, LstmSpec, LstmState};
pub use mlp::{init_params, mlp_backward, mlp_forward, ForwardCache};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    pub(crate) fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Weights `N(0, (gain / sqrt(fan_in))²)`, biases zero.
    FanInGaussian { gain: f64 },
    /// Every weight and bias zero.
    Zeros,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::FanInGaussian { gain: 1.0 }
    }
}

/// Layer widths (input first) and one activation per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    init: InitScheme,
}

impl NetSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, init: InitScheme) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!("widths must be positive: {widths:?}")));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "{} activations for {} layers",
                activations.len(),
                widths.len() - 1
            )));
        }
        Ok(Self { widths, activations, init })
    }

    /// Hidden layers share `hidden_act`; the output layer is linear.
    pub fn mlp(widths: Vec<usize>, hidden_act: Activation) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        let mut acts = vec![hidden_act; layers];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Identity;
        }
        Self::new(widths, acts, InitScheme::default())
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn init(&self) -> InitScheme {
        self.init
    }

    pub fn layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated nonempty")
    }

    pub fn weight_name(layer: usize) -> String {
        format!("layer{layer}.weight")
    }

    pub fn bias_name(layer: usize) -> String {
        format!("layer{layer}.bias")
    }

    /// Checks `params` holds exactly this network's tensors, in order.
    pub fn check_params(&self, params: &crate::ParamSet) -> Result<()> {
        if params.len() != 2 * self.layers() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                2 * self.layers(),
                params.len()
            )));
        }
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = params.at(2 * l);
            let b = params.at(2 * l + 1);
            if w.shape() != [fan_in, fan_out] || b.shape() != [fan_out] {
                return Err(Error::Shape(format!(
                    "layer {l}: expected weight [{fan_in}, {fan_out}] and bias [{fan_out}], got {:?} and {:?}",
                    w.shape(),
                    b.shape()
                )));
            }
        }
        Ok(())
    }
}
