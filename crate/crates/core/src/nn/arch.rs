//! Model architectures and seeded initialization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::Layer;
use crate::nn::model::LayeredModel;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSpec {
    /// Dense ReLU stack. Multi-dimensional inputs are flattened first.
    Mlp { hidden: Vec<usize> },
    /// conv -> relu -> maxpool(2) -> conv -> relu -> flatten -> dense -> relu -> dense.
    Cnn {
        channels: [usize; 2],
        kernel: usize,
        hidden: usize,
    },
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::Mlp { hidden: vec![64, 64] }
    }
}

impl ArchSpec {
    /// Zero-initialized layer stack for the given input and class count.
    pub fn layers(&self, input_shape: &[usize], num_classes: usize) -> Result<Vec<Layer>> {
        if num_classes < 2 {
            return Err(Error::InvalidSpec("need at least 2 classes".into()));
        }
        let mut layers = Vec::new();
        match self {
            ArchSpec::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::InvalidSpec("hidden width must be positive".into()));
                }
                if input_shape.len() > 1 {
                    layers.push(Layer::Flatten);
                }
                let mut width: usize = input_shape.iter().product();
                for &h in hidden {
                    layers.push(Layer::dense(width, h));
                    layers.push(Layer::Relu);
                    width = h;
                }
                layers.push(Layer::dense(width, num_classes));
            }
            ArchSpec::Cnn {
                channels,
                kernel,
                hidden,
            } => {
                let [c, h, w] = input_shape else {
                    return Err(Error::InvalidSpec(format!(
                        "cnn needs [channels, height, width] input, got {input_shape:?}"
                    )));
                };
                if channels.contains(&0) || *kernel == 0 || *hidden == 0 {
                    return Err(Error::InvalidSpec("cnn sizes must be positive".into()));
                }
                let (k, pool) = (*kernel, 2usize);
                let after = |d: usize| -> Option<usize> {
                    let d = d.checked_sub(k)? + 1;
                    let d = d.checked_sub(pool)? / pool + 1;
                    Some(d.checked_sub(k)? + 1)
                };
                let (Some(oh), Some(ow)) = (after(*h), after(*w)) else {
                    return Err(Error::InvalidSpec(format!(
                        "input {h}x{w} too small for kernel {k}"
                    )));
                };
                layers.extend([
                    Layer::conv2d(*c, channels[0], k, 1),
                    Layer::Relu,
                    Layer::MaxPool2d { size: pool, stride: pool },
                    Layer::conv2d(channels[0], channels[1], k, 1),
                    Layer::Relu,
                    Layer::Flatten,
                    Layer::dense(channels[1] * oh * ow, *hidden),
                    Layer::Relu,
                    Layer::dense(*hidden, num_classes),
                ]);
            }
        }
        layers.push(Layer::SoftmaxOutput);
        Ok(layers)
    }

    /// Builds a model with uniform He-style weights `U(-sqrt(6/fan_in), +)`
    /// and zero biases.
    pub fn build(&self, input_shape: &[usize], num_classes: usize, init_seed: u64) -> Result<LayeredModel> {
        let mut rng = seed::rng(init_seed, &[]);
        let mut layers = self.layers(input_shape, num_classes)?;
        for layer in &mut layers {
            if let Layer::Dense { weight, .. } | Layer::Conv2d { weight, .. } = layer {
                let fan_in: usize = weight.shape()[1..].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                for w in weight.data_mut() {
                    *w = rng.random_range(-limit..limit);
                }
            }
        }
        LayeredModel::new(input_shape.to_vec(), layers)
    }
}
