use crate::error::{Error, Result};
use crate::nn::layer::{log_sum_exp, softmax_rows, Cache, Layer, LayerKind};
use crate::tensor::Tensor;

/// An ordered stack of layers with a fixed per-sample input shape.
///
/// The architecture id encodes the input shape and every layer signature,
/// e.g. `in[4]|dense(4>8)|relu|dense(8>3)|softmax`. Two models can be
/// recombined or averaged iff their ids match.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredModel {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    architecture_id: String,
    num_classes: usize,
}

/// Parameter gradients, indexed `[layer][param]` in [`Layer::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(model: &LayeredModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| l.params().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect())
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flatten().flat_map(|t| t.data())
    }
}

impl LayeredModel {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("invalid input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            if layer.kind() == LayerKind::SoftmaxOutput && i + 1 != layers.len() {
                return Err(Error::LayerShape {
                    layer: i,
                    detail: "softmax must be the last layer".into(),
                });
            }
            for (name, t) in layer.params() {
                if !t.is_finite() {
                    return Err(Error::LayerShape {
                        layer: i,
                        detail: format!("{name} holds non-finite values"),
                    });
                }
            }
            if let Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } = layer {
                let expected = [weight.shape()[0]];
                let rank = if layer.kind() == LayerKind::Dense { 2 } else { 4 };
                if weight.shape().len() != rank || bias.shape() != expected {
                    return Err(Error::LayerShape {
                        layer: i,
                        detail: format!(
                            "weight {:?} / bias {:?} are inconsistent",
                            weight.shape(),
                            bias.shape()
                        ),
                    });
                }
                if let Layer::Conv2d { weight, stride, .. } = layer {
                    if weight.shape()[2] != weight.shape()[3] || *stride == 0 {
                        return Err(Error::LayerShape {
                            layer: i,
                            detail: "conv2d needs a square kernel and stride > 0".into(),
                        });
                    }
                }
            }
            if let Layer::MaxPool2d { size, stride } = layer {
                if *size == 0 || *stride == 0 {
                    return Err(Error::LayerShape {
                        layer: i,
                        detail: "maxpool2d needs size and stride > 0".into(),
                    });
                }
            }
            shape = layer
                .output_shape(&shape)
                .map_err(|detail| Error::LayerShape { layer: i, detail })?;
        }
        let num_classes = match shape.as_slice() {
            [c] if *c >= 1 => *c,
            _ => {
                return Err(Error::Shape(format!(
                    "model output must be flat, got per-sample shape {shape:?}"
                )))
            }
        };
        let architecture_id = Self::make_id(&input_shape, &layers);
        Ok(Self {
            input_shape,
            layers,
            architecture_id,
            num_classes,
        })
    }

    fn make_id(input_shape: &[usize], layers: &[Layer]) -> String {
        let dims: Vec<String> = input_shape.iter().map(|d| d.to_string()).collect();
        let mut id = format!("in[{}]", dims.join("x"));
        for layer in layers {
            id.push('|');
            id.push_str(&layer.signature());
        }
        id
    }

    /// Builds a zero-parameter model from an architecture id.
    pub fn from_architecture_id(id: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("unparseable architecture id `{id}`"));
        let mut parts = id.split('|');
        let head = parts.next().ok_or_else(bad)?;
        let dims = head
            .strip_prefix("in[")
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(bad)?;
        let input_shape = dims
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let layers = parts
            .map(|sig| Layer::from_signature(sig).ok_or_else(bad))
            .collect::<Result<Vec<_>>>()?;
        Self::new(input_shape, layers)
    }

    pub fn architecture_id(&self) -> &str {
        &self.architecture_id
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn into_layers(self) -> Vec<Layer> {
        self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// All parameter tensors in layer order.
    pub fn param_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|(_, t)| t))
    }

    /// Mutable views of every parameter buffer in layer order. Shapes are
    /// fixed; only values can change.
    pub fn param_data_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().into_iter().map(|t| t.data_mut()))
            .collect()
    }

    /// Flat copy of all parameters in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.param_tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn bit_eq(&self, other: &LayeredModel) -> bool {
        self.architecture_id == other.architecture_id
            && self
                .param_tensors()
                .zip(other.param_tensors())
                .all(|(a, b)| a.bit_eq(b))
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(Error::LayerShape {
                layer: 0,
                detail: format!(
                    "input batch {shape:?} does not match per-sample shape {:?}",
                    self.input_shape
                ),
            });
        }
        Ok(())
    }

    /// Index one past the last layer that produces logits.
    fn logit_end(&self) -> usize {
        match self.layers.last() {
            Some(Layer::SoftmaxOutput) => self.layers.len() - 1,
            _ => self.layers.len(),
        }
    }

    fn run(&self, x: &Tensor, end: usize, keep: bool) -> Result<(Tensor, Vec<Cache>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(if keep { end } else { 0 });
        let mut act = x.clone();
        for (i, layer) in self.layers[..end].iter().enumerate() {
            let (y, cache) = layer
                .forward(&act)
                .map_err(|detail| Error::LayerShape { layer: i, detail })?;
            if !y.is_finite() {
                return Err(Error::NonFinite(i));
            }
            if keep {
                caches.push(cache);
            }
            act = y;
        }
        Ok((act, caches))
    }

    /// Full forward pass: class probabilities when the model ends in a
    /// softmax layer, raw outputs otherwise. Shape `(batch, num_classes)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, self.layers.len(), false)?.0)
    }

    /// Pre-softmax outputs.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(x, self.logit_end(), false)?.0)
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Mean cross-entropy of the batch and its gradient w.r.t. every
    /// parameter. The trailing softmax (if any) is fused into the loss.
    pub fn loss_and_grad(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Gradients)> {
        let end = self.logit_end();
        let (logits, caches) = self.run(x, end, true)?;
        let batch = logits.shape()[0];
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        let classes = self.num_classes;
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: classes,
            });
        }

        let scale = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(logits.len());
        for (row, &label) in logits.data().chunks(classes).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[label];
            for (c, &z) in row.iter().enumerate() {
                let p = (z - lse).exp();
                let target = if c == label { 1.0 } else { 0.0 };
                grad.push((p - target) * scale);
            }
        }
        loss *= scale;

        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut upstream = Tensor::from_parts_unchecked(logits.shape().to_vec(), grad);
        for (i, (layer, cache)) in self.layers[..end].iter().zip(&caches).enumerate().rev() {
            let (g_in, g_params) = layer.backward(cache, &upstream);
            grads[i] = g_params;
            upstream = g_in;
        }
        Ok((loss, Gradients { layers: grads }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(weight: Vec<f64>, bias: Vec<f64>, fan_in: usize) -> Layer {
        let fan_out = bias.len();
        Layer::Dense {
            weight: Tensor::new(vec![fan_out, fan_in], weight).unwrap(),
            bias: Tensor::vector(bias),
        }
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let m = LayeredModel::new(
            vec![2],
            vec![dense(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2), Layer::SoftmaxOutput],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(m.logits(&x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_model_gives_uniform_probabilities() {
        let m = LayeredModel::new(vec![2], vec![Layer::dense(2, 2), Layer::SoftmaxOutput]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.3, -7.0]).unwrap();
        assert_eq!(m.forward(&x).unwrap().data(), &[0.5, 0.5]);
        let (loss, grads) = m.loss_and_grad(&x, &[1]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(grads.layers.len(), 2);
        assert!(grads.layers[1].is_empty());
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let m = LayeredModel::new(
            vec![1],
            vec![dense(vec![200.0, -200.0], vec![0.0, 0.0], 1), Layer::SoftmaxOutput],
        )
        .unwrap();
        let x = Tensor::new(vec![1, 1], vec![1.0]).unwrap();
        let (loss, grads) = m.loss_and_grad(&x, &[0]).unwrap();
        assert!(loss < 1e-100);
        assert!(grads.values().all(|g| g.abs() < 1e-100));
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let m = LayeredModel::new(vec![3], vec![Layer::dense(3, 2), Layer::SoftmaxOutput]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.0; 2]).unwrap();
        assert!(matches!(m.forward(&x), Err(Error::LayerShape { layer: 0, .. })));

        let err = LayeredModel::new(vec![3], vec![Layer::dense(3, 2), Layer::dense(3, 2)]).unwrap_err();
        assert!(matches!(err, Error::LayerShape { layer: 1, .. }));

        let err = LayeredModel::new(vec![2], vec![Layer::SoftmaxOutput, Layer::Relu]).unwrap_err();
        assert!(matches!(err, Error::LayerShape { layer: 0, .. }));
    }

    #[test]
    fn rejects_out_of_range_labels() {
        let m = LayeredModel::new(vec![2], vec![Layer::dense(2, 2), Layer::SoftmaxOutput]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.0; 2]).unwrap();
        assert!(matches!(
            m.loss_and_grad(&x, &[2]),
            Err(Error::LabelOutOfRange { label: 2, num_classes: 2 })
        ));
    }

    #[test]
    fn architecture_id_round_trips() {
        let m = LayeredModel::new(
            vec![1, 6, 6],
            vec![
                Layer::conv2d(1, 2, 3, 1),
                Layer::Relu,
                Layer::MaxPool2d { size: 2, stride: 2 },
                Layer::Flatten,
                Layer::dense(8, 3),
                Layer::SoftmaxOutput,
            ],
        )
        .unwrap();
        assert_eq!(
            m.architecture_id(),
            "in[1x6x6]|conv2d(1>2,k3,s1)|relu|maxpool2d(k2,s2)|flatten|dense(8>3)|softmax"
        );
        let back = LayeredModel::from_architecture_id(m.architecture_id()).unwrap();
        assert_eq!(back, m);
        assert!(LayeredModel::from_architecture_id("dense(1>2)").is_err());
    }
}
