//! Small differentiable CNN steganalyzers with reverse-mode gradients with
//! respect to the input and to any intermediate tap.

pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod train;


use serde::{Deserialize, Serialize};

pub use layers::{Activation, LayerKind, Shape};
pub use model::{build_model, cross_entropy, cross_entropy_grad, softmax, ArchConfig, Model, ModelBuilder, Objective, Trace};
pub use train::{accuracy, train, train_images, TrainConfig, TrainHistory, TrainSample};

/// Dense activation tensor in channel-major `(c, h, w)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ValueGrid {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)`, treating lower-rank shapes as 1-padded.
    pub fn chw(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            [h, w] => (1, *h, *w),
            [n] => (*n, 1, 1),
            _ => (1, 1, self.data.len()),
        }
    }
}

/// Binary cover/stego decision.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Softmax probability of the stego class.
    pub phi: f64,
    /// 1 = stego (`phi ≥ 0.5`), 0 = cover.
    pub label: u8,
}

impl Verdict {
    pub fn from_phi(phi: f64) -> Self {
        Self { phi, label: u8::from(phi >= 0.5) }
    }

    pub fn from_logits(logits: [f64; 2]) -> Self {
        Self::from_phi(softmax(&logits)[1])
    }
}
