//! A small feed-forward neural engine: Conv1D, BatchNorm, Dropout,
//! Flatten and Dense layers with hand-written backpropagation.
//!
//! Activations are `(batch, channels, length)` tensors. A flat feature
//! vector of width `d` is `(batch, d, 1)`; the CNN reads the same vector as
//! a single-channel sequence `(batch, 1, d)`.

pub mod embed;
pub mod gradcheck;
pub mod network;
pub mod train;

use serde::{Deserialize, Serialize};

pub use embed::{concat_pool, read_embeddings, EmbeddingRecord};
pub use gradcheck::{grad_check, GradCheckReport};
pub use network::{ForwardPass, LayerState, Mode, Network};
pub use train::{train, Optimizer, TrainConfig, TrainReport};

use crate::{ModelError, N_CLASSES};

pub type Tensor = ndarray::Array3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    /// Only valid on the final Dense layer.
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvPadding {
    /// Output length equals input length; for even kernels the extra
    /// padding column goes on the right.
    Same,
    Valid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel_size: usize,
        activation: Activation,
        padding: ConvPadding,
    },
    BatchNorm,
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
        }
    }
}

/// Per-sample shape `(channels, length)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub length: usize,
}

impl Shape {
    pub fn size(&self) -> usize {
        self.channels * self.length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Output shape of every layer; fails if consecutive shapes do not
    /// compose or the net does not end in `Dense(7, Softmax)`.
    pub fn shapes(&self) -> Result<Vec<Shape>, ModelError> {
        let mut cur = self.input;
        if cur.size() == 0 {
            return Err(ModelError::Shape("input shape must be non-empty".into()));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let last = self.layers.len().checked_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |m: String| Err(ModelError::Shape(format!("layer {i} ({}): {m}", layer.kind_name())));
            cur = match *layer {
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                    activation,
                    padding,
                } => {
                    if filters == 0 || kernel_size == 0 {
                        return err("filters and kernel_size must be positive".into());
                    }
                    if activation == Activation::Softmax {
                        return err("softmax is only allowed on the final dense layer".into());
                    }
                    let length = match padding {
                        ConvPadding::Same => cur.length,
                        ConvPadding::Valid if cur.length >= kernel_size => cur.length - kernel_size + 1,
                        ConvPadding::Valid => return err(format!("kernel {kernel_size} longer than input {}", cur.length)),
                    };
                    Shape {
                        channels: filters,
                        length,
                    }
                }
                LayerSpec::BatchNorm => cur,
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(&rate) {
                        return err(format!("dropout rate {rate} outside [0, 1)"));
                    }
                    cur
                }
                LayerSpec::Flatten => Shape {
                    channels: cur.size(),
                    length: 1,
                },
                LayerSpec::Dense { units, activation } => {
                    if cur.length != 1 {
                        return err(format!("dense input must be flat, got length {}", cur.length));
                    }
                    if units == 0 {
                        return err("units must be positive".into());
                    }
                    if activation == Activation::Softmax && Some(i) != last {
                        return err("softmax is only allowed on the final dense layer".into());
                    }
                    Shape { channels: units, length: 1 }
                }
            };
            out.push(cur);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense {
                units: N_CLASSES,
                activation: Activation::Softmax,
            }) => Ok(out),
            _ => Err(ModelError::Shape(format!(
                "classification networks must end in Dense({N_CLASSES}, softmax)"
            ))),
        }
    }
}

fn conv(filters: usize) -> LayerSpec {
    LayerSpec::Conv1d {
        filters,
        kernel_size: 8,
        activation: Activation::Relu,
        padding: ConvPadding::Same,
    }
}

/// The 1-D CNN over the 94-dim feature vector read as a sequence.
/// The two hidden Dense widths (128, 64) are not given by the reference
/// configuration and were chosen here.
pub fn build_feature_cnn() -> NetworkSpec {
    build_cnn(ser_core::FEATURE_DIM)
}

pub fn build_cnn(input_len: usize) -> NetworkSpec {
    let dropout = LayerSpec::Dropout { rate: 0.6 };
    NetworkSpec {
        input: Shape {
            channels: 1,
            length: input_len,
        },
        layers: vec![
            conv(256),
            conv(256),
            LayerSpec::BatchNorm,
            dropout.clone(),
            conv(128),
            conv(128),
            conv(128),
            conv(128),
            LayerSpec::BatchNorm,
            dropout.clone(),
            conv(64),
            conv(64),
            LayerSpec::Flatten,
            LayerSpec::Dense {
                units: 128,
                activation: Activation::Relu,
            },
            LayerSpec::Dense {
                units: 64,
                activation: Activation::Relu,
            },
            dropout,
            LayerSpec::Dense {
                units: N_CLASSES,
                activation: Activation::Softmax,
            },
        ],
    }
}

pub fn build_mlp(input_dim: usize, hidden: &[usize]) -> Result<NetworkSpec, ModelError> {
    if hidden.is_empty() {
        return Err(ModelError::Parameter("mlp needs at least one hidden layer".into()));
    }
    let mut layers: Vec<LayerSpec> = hidden
        .iter()
        .map(|&units| LayerSpec::Dense {
            units,
            activation: Activation::Relu,
        })
        .collect();
    layers.push(LayerSpec::Dense {
        units: N_CLASSES,
        activation: Activation::Softmax,
    });
    let spec = NetworkSpec {
        input: Shape {
            channels: input_dim,
            length: 1,
        },
        layers,
    };
    spec.shapes()?;
    Ok(spec)
}

/// A single softmax layer over one embedding or two concatenated ones.
pub fn build_embedding_head(dim_a: usize, dim_b: Option<usize>) -> Result<NetworkSpec, ModelError> {
    if dim_a == 0 || dim_b == Some(0) {
        return Err(ModelError::Parameter("embedding dimensions must be positive".into()));
    }
    Ok(NetworkSpec {
        input: Shape {
            channels: dim_a + dim_b.unwrap_or(0),
            length: 1,
        },
        layers: vec![LayerSpec::Dense {
            units: N_CLASSES,
            activation: Activation::Softmax,
        }],
    })
}
