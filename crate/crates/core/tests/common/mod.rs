//! Helpers shared by the integration tests. Every oracle here is written
//! against plain loops and slices, not against the library's own kernels.

#![allow(dead_code, clippy::needless_range_loop)]

use fedmr::data::{ClientShard, Dataset};
use fedmr::nn::{ArchSpec, Layer, LayeredModel};
use fedmr::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian-ish features in `[-1, 1)` with uniformly random labels.
pub fn random_dataset(rng: &mut ChaCha8Rng, shape: &[usize], n: usize, classes: usize) -> Dataset {
    let width: usize = shape.iter().product();
    let features = (0..n * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(shape.to_vec(), features, labels, classes).unwrap()
}

/// Small MLP or CNN with at most ~2k parameters. Biases are randomized so
/// no ReLU input sits exactly on its kink.
pub fn random_model(rng: &mut ChaCha8Rng) -> (LayeredModel, Vec<usize>) {
    let (mut model, shape) = random_model_init(rng);
    for (t, values) in model.param_data_mut().into_iter().enumerate() {
        if t % 2 == 1 {
            values.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    }
    (model, shape)
}

fn random_model_init(rng: &mut ChaCha8Rng) -> (LayeredModel, Vec<usize>) {
    let classes = rng.random_range(2..5);
    if rng.random_bool(0.5) {
        let dim = rng.random_range(2..16);
        let depth = rng.random_range(0..3);
        let hidden = (0..depth).map(|_| rng.random_range(2..32)).collect();
        let shape = vec![dim];
        let m = ArchSpec::Mlp { hidden }.build(&shape, classes, rng.random()).unwrap();
        (m, shape)
    } else {
        let ch = rng.random_range(1..3);
        let side = rng.random_range(9..12);
        let kernel = rng.random_range(2..4);
        let spec = ArchSpec::Cnn {
            channels: [rng.random_range(1..5), rng.random_range(1..5)],
            kernel,
            hidden: rng.random_range(2..16),
        };
        let shape = vec![ch, side, side];
        (spec.build(&shape, classes, rng.random()).unwrap(), shape)
    }
}

/// Shards built directly from index lists, bypassing the partitioner.
pub fn shards_from(data: &Dataset, parts: &[Vec<usize>]) -> Vec<ClientShard> {
    parts
        .iter()
        .enumerate()
        .map(|(client_id, idx)| ClientShard {
            client_id,
            indices: idx.clone(),
            data: data.subset(idx),
        })
        .collect()
}

/// Reference forward pass over a single sample, one scalar at a time.
/// Returns class probabilities.
pub fn scalar_forward(model: &LayeredModel, sample: &[f64]) -> Vec<f64> {
    let mut shape = model.input_shape().to_vec();
    let mut x = sample.to_vec();
    for layer in model.layers() {
        match layer {
            Layer::Dense { weight, bias } => {
                let (out, inp) = (weight.shape()[0], weight.shape()[1]);
                let mut y = vec![0.0; out];
                for o in 0..out {
                    let mut s = bias.data()[o];
                    for i in 0..inp {
                        s += weight.data()[o * inp + i] * x[i];
                    }
                    y[o] = s;
                }
                x = y;
                shape = vec![out];
            }
            Layer::Conv2d { weight, bias, stride } => {
                let w = weight.shape();
                let (oc, ic, k) = (w[0], w[1], w[2]);
                let (h, wd) = (shape[1], shape[2]);
                let (oh, ow) = ((h - k) / stride + 1, (wd - k) / stride + 1);
                let mut y = vec![0.0; oc * oh * ow];
                for o in 0..oc {
                    for r in 0..oh {
                        for c in 0..ow {
                            let mut s = bias.data()[o];
                            for i in 0..ic {
                                for kr in 0..k {
                                    for kc in 0..k {
                                        let wv = weight.data()[((o * ic + i) * k + kr) * k + kc];
                                        let xv = x[(i * h + r * stride + kr) * wd + c * stride + kc];
                                        s += wv * xv;
                                    }
                                }
                            }
                            y[(o * oh + r) * ow + c] = s;
                        }
                    }
                }
                x = y;
                shape = vec![oc, oh, ow];
            }
            Layer::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Layer::Flatten => shape = vec![x.len()],
            Layer::MaxPool2d { size, stride } => {
                let (ch, h, wd) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = ((h - size) / stride + 1, (wd - size) / stride + 1);
                let mut y = vec![f64::NEG_INFINITY; ch * oh * ow];
                for c in 0..ch {
                    for r in 0..oh {
                        for q in 0..ow {
                            for a in 0..*size {
                                for b in 0..*size {
                                    let v = x[(c * h + r * stride + a) * wd + q * stride + b];
                                    let dst = &mut y[(c * oh + r) * ow + q];
                                    *dst = dst.max(v);
                                }
                            }
                        }
                    }
                }
                x = y;
                shape = vec![ch, oh, ow];
            }
            Layer::SoftmaxOutput => {}
        }
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

/// Mean cross-entropy of the reference forward pass.
pub fn scalar_loss(model: &LayeredModel, data: &Dataset, idx: &[usize]) -> f64 {
    let total: f64 = idx
        .iter()
        .map(|&i| -scalar_forward(model, data.sample(i))[data.labels()[i]].ln())
        .sum();
    total / idx.len() as f64
}

/// Shannon entropy (nats) of a label histogram.
pub fn label_entropy(labels: &[usize], classes: usize) -> f64 {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Bit patterns of every parameter of a layer, for multiset comparisons.
pub type LayerKey = (String, Vec<(Vec<usize>, Vec<u64>)>);

pub fn layer_key(layer: &Layer) -> LayerKey {
    (
        layer.signature(),
        layer.params().iter().map(|(_, t)| t.bit_key()).collect(),
    )
}

pub fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

/// Backprop vs central differences. Returns the worst relative error,
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(model: &LayeredModel, data: &Dataset, eps: f64, floor: f64) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, y) = data.batch(&idx).unwrap();
    let (_, grads) = model.loss_and_grad(&x, &y).unwrap();
    let analytic: Vec<f64> = grads.values().cloned().collect();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    let n_tensors = model.param_tensors().count();
    for t in 0..n_tensors {
        let len = model.param_tensors().nth(t).unwrap().len();
        for e in 0..len {
            let mut plus = model.clone();
            plus.param_data_mut()[t][e] += eps;
            let mut minus = model.clone();
            minus.param_data_mut()[t][e] -= eps;
            let numeric = (scalar_loss(&plus, data, &idx) - scalar_loss(&minus, data, &idx)) / (2.0 * eps);
            let a = analytic[flat];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
            flat += 1;
        }
    }
    assert_eq!(flat, analytic.len());
    worst
}
