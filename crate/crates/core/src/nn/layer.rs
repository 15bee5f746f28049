//! Layers with explicit forward and backward passes.
//!
//! Activations carry a leading batch dimension: dense layers take `(B, in)`,
//! convolution and pooling take `(B, C, H, W)`. Convolutions use no padding.

use std::fmt;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv2d,
    Relu,
    Flatten,
    MaxPool2d,
    SoftmaxOutput,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Dense => "dense",
            LayerKind::Conv2d => "conv2d",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::SoftmaxOutput => "softmax",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `y = W x + b`, weight `(out, in)`, bias `(out)`.
    Dense { weight: Tensor, bias: Tensor },
    /// Weight `(out_ch, in_ch, k, k)`, bias `(out_ch)`.
    Conv2d {
        weight: Tensor,
        bias: Tensor,
        stride: usize,
    },
    Relu,
    Flatten,
    MaxPool2d { size: usize, stride: usize },
    /// Row-wise softmax. Only valid as the last layer.
    SoftmaxOutput,
}

/// Per-layer state saved by the forward pass for backprop.
#[derive(Debug, Clone)]
pub(crate) enum Cache {
    Input(Tensor),
    Shape(Vec<usize>),
    Pool { in_shape: Vec<usize>, argmax: Vec<usize> },
    Output(Tensor),
}

impl Layer {
    pub fn dense(fan_in: usize, fan_out: usize) -> Self {
        Layer::Dense {
            weight: Tensor::zeros(&[fan_out, fan_in]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn conv2d(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Layer::Conv2d {
            weight: Tensor::zeros(&[out_ch, in_ch, kernel, kernel]),
            bias: Tensor::zeros(&[out_ch]),
            stride,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense { .. } => LayerKind::Dense,
            Layer::Conv2d { .. } => LayerKind::Conv2d,
            Layer::Relu => LayerKind::Relu,
            Layer::Flatten => LayerKind::Flatten,
            Layer::MaxPool2d { .. } => LayerKind::MaxPool2d,
            Layer::SoftmaxOutput => LayerKind::SoftmaxOutput,
        }
    }

    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![("weight", weight), ("bias", bias)]
            }
            _ => Vec::new(),
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                vec![weight, bias]
            }
            _ => Vec::new(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Canonical text form of kind plus shape hyper-parameters.
    pub fn signature(&self) -> String {
        match self {
            Layer::Dense { weight, .. } => {
                format!("dense({}>{})", weight.shape()[1], weight.shape()[0])
            }
            Layer::Conv2d { weight, stride, .. } => {
                let s = weight.shape();
                format!("conv2d({}>{},k{},s{})", s[1], s[0], s[2], stride)
            }
            Layer::Relu => "relu".into(),
            Layer::Flatten => "flatten".into(),
            Layer::MaxPool2d { size, stride } => format!("maxpool2d(k{size},s{stride})"),
            Layer::SoftmaxOutput => "softmax".into(),
        }
    }

    /// Inverse of [`Layer::signature`]; parameters come back zeroed.
    pub fn from_signature(sig: &str) -> Option<Layer> {
        let (name, args) = match sig.find('(') {
            Some(open) if sig.ends_with(')') => (&sig[..open], &sig[open + 1..sig.len() - 1]),
            Some(_) => return None,
            None => (sig, ""),
        };
        let nums = |prefixes: &[&str]| -> Option<Vec<usize>> {
            let parts: Vec<&str> = args.split([',', '>']).collect();
            if parts.len() != prefixes.len() {
                return None;
            }
            parts
                .iter()
                .zip(prefixes)
                .map(|(p, pre)| p.strip_prefix(pre)?.parse().ok().filter(|&v| v > 0))
                .collect()
        };
        match name {
            "dense" => {
                let v = nums(&["", ""])?;
                Some(Layer::dense(v[0], v[1]))
            }
            "conv2d" => {
                let v = nums(&["", "", "k", "s"])?;
                Some(Layer::conv2d(v[0], v[1], v[2], v[3]))
            }
            "maxpool2d" => {
                let v = nums(&["k", "s"])?;
                Some(Layer::MaxPool2d {
                    size: v[0],
                    stride: v[1],
                })
            }
            "relu" if args.is_empty() => Some(Layer::Relu),
            "flatten" if args.is_empty() => Some(Layer::Flatten),
            "softmax" if args.is_empty() => Some(Layer::SoftmaxOutput),
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Layer::Dense { weight, .. } => {
                let fan_in = weight.shape()[1];
                if input != [fan_in] {
                    return Err(format!("dense expects input [{fan_in}], got {input:?}"));
                }
                Ok(vec![weight.shape()[0]])
            }
            Layer::Conv2d { weight, stride, .. } => {
                let w = weight.shape();
                let (in_ch, k) = (w[1], w[2]);
                match input {
                    [c, h, wd] if *c == in_ch && *h >= k && *wd >= k => {
                        Ok(vec![w[0], (h - k) / stride + 1, (wd - k) / stride + 1])
                    }
                    _ => Err(format!(
                        "conv2d expects [{in_ch}, >={k}, >={k}], got {input:?}"
                    )),
                }
            }
            Layer::MaxPool2d { size, stride } => match input {
                [c, h, w] if h >= size && w >= size => {
                    Ok(vec![*c, (h - size) / stride + 1, (w - size) / stride + 1])
                }
                _ => Err(format!("maxpool2d(k{size}) expects [C, H, W], got {input:?}")),
            },
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::SoftmaxOutput => match input {
                [_] => Ok(input.to_vec()),
                _ => Err(format!("softmax expects a flat input, got {input:?}")),
            },
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache), String> {
        let sample = x.shape().get(1..).unwrap_or(&[]);
        let out_sample = self.output_shape(sample)?;
        let batch = x.shape()[0];
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&out_sample);

        let y = match self {
            Layer::Dense { weight, bias } => dense_forward(weight, bias, x),
            Layer::Conv2d {
                weight,
                bias,
                stride,
            } => conv_forward(weight, bias, *stride, x, &out_shape),
            Layer::Relu => {
                let data = x.data().iter().map(|&v| v.max(0.0)).collect();
                Tensor::from_parts_unchecked(out_shape, data)
            }
            Layer::Flatten => {
                let y = Tensor::from_parts_unchecked(out_shape, x.data().to_vec());
                return Ok((y, Cache::Shape(x.shape().to_vec())));
            }
            Layer::MaxPool2d { size, stride } => {
                let (y, argmax) = pool_forward(*size, *stride, x, out_shape);
                return Ok((
                    y,
                    Cache::Pool {
                        in_shape: x.shape().to_vec(),
                        argmax,
                    },
                ));
            }
            Layer::SoftmaxOutput => {
                let y = softmax_rows(x);
                return Ok((y.clone(), Cache::Output(y)));
            }
        };
        Ok((y, Cache::Input(x.clone())))
    }

    /// Returns the gradient w.r.t. the layer input and the parameter
    /// gradients in [`Layer::params`] order.
    pub(crate) fn backward(&self, cache: &Cache, grad_out: &Tensor) -> (Tensor, Vec<Tensor>) {
        match (self, cache) {
            (Layer::Dense { weight, .. }, Cache::Input(x)) => dense_backward(weight, x, grad_out),
            (Layer::Conv2d { weight, stride, .. }, Cache::Input(x)) => {
                conv_backward(weight, *stride, x, grad_out)
            }
            (Layer::Relu, Cache::Input(x)) => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
                    .collect();
                (Tensor::from_parts_unchecked(x.shape().to_vec(), data), vec![])
            }
            (Layer::Flatten, Cache::Shape(shape)) => (
                Tensor::from_parts_unchecked(shape.clone(), grad_out.data().to_vec()),
                vec![],
            ),
            (Layer::MaxPool2d { .. }, Cache::Pool { in_shape, argmax }) => {
                let mut gx = vec![0.0; in_shape.iter().product()];
                for (&src, &g) in argmax.iter().zip(grad_out.data()) {
                    gx[src] += g;
                }
                (Tensor::from_parts_unchecked(in_shape.clone(), gx), vec![])
            }
            (Layer::SoftmaxOutput, Cache::Output(y)) => {
                let classes = y.shape()[1];
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), out) in y
                    .data()
                    .chunks(classes)
                    .zip(grad_out.data().chunks(classes))
                    .zip(gx.chunks_mut(classes))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yi), &gi) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - dot);
                    }
                }
                (Tensor::from_parts_unchecked(y.shape().to_vec(), gx), vec![])
            }
            _ => unreachable!("cache does not belong to this layer"),
        }
    }
}

fn dense_forward(weight: &Tensor, bias: &Tensor, x: &Tensor) -> Tensor {
    let (fan_out, fan_in) = (weight.shape()[0], weight.shape()[1]);
    let batch = x.shape()[0];
    let w = weight.data();
    let mut y = Vec::with_capacity(batch * fan_out);
    for row in x.data().chunks(fan_in) {
        for (o, &b) in bias.data().iter().enumerate() {
            let wr = &w[o * fan_in..(o + 1) * fan_in];
            y.push(b + wr.iter().zip(row).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Tensor::from_parts_unchecked(vec![batch, fan_out], y)
}

fn dense_backward(weight: &Tensor, x: &Tensor, g: &Tensor) -> (Tensor, Vec<Tensor>) {
    let (fan_out, fan_in) = (weight.shape()[0], weight.shape()[1]);
    let w = weight.data();
    let mut gw = vec![0.0; fan_out * fan_in];
    let mut gb = vec![0.0; fan_out];
    let mut gx = vec![0.0; x.len()];
    for ((xr, gr), gxr) in x
        .data()
        .chunks(fan_in)
        .zip(g.data().chunks(fan_out))
        .zip(gx.chunks_mut(fan_in))
    {
        for (o, &go) in gr.iter().enumerate() {
            gb[o] += go;
            let gwr = &mut gw[o * fan_in..(o + 1) * fan_in];
            let wr = &w[o * fan_in..(o + 1) * fan_in];
            for i in 0..fan_in {
                gwr[i] += go * xr[i];
                gxr[i] += go * wr[i];
            }
        }
    }
    (
        Tensor::from_parts_unchecked(x.shape().to_vec(), gx),
        vec![
            Tensor::from_parts_unchecked(vec![fan_out, fan_in], gw),
            Tensor::from_parts_unchecked(vec![fan_out], gb),
        ],
    )
}

fn conv_forward(
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    x: &Tensor,
    out_shape: &[usize],
) -> Tensor {
    let ws = weight.shape();
    let (out_ch, in_ch, k) = (ws[0], ws[1], ws[2]);
    let (batch, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let xd = x.data();
    let wd = weight.data();
    let mut y = Vec::with_capacity(out_shape.iter().product());
    for b in 0..batch {
        let xb = &xd[b * in_ch * h * w..(b + 1) * in_ch * h * w];
        for o in 0..out_ch {
            let wo = &wd[o * in_ch * k * k..(o + 1) * in_ch * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[o];
                    for c in 0..in_ch {
                        for ky in 0..k {
                            let xrow = &xb[(c * h + oy * stride + ky) * w + ox * stride..];
                            let wrow = &wo[(c * k + ky) * k..(c * k + ky + 1) * k];
                            for kx in 0..k {
                                acc += wrow[kx] * xrow[kx];
                            }
                        }
                    }
                    y.push(acc);
                }
            }
        }
    }
    Tensor::from_parts_unchecked(out_shape.to_vec(), y)
}

fn conv_backward(weight: &Tensor, stride: usize, x: &Tensor, g: &Tensor) -> (Tensor, Vec<Tensor>) {
    let ws = weight.shape();
    let (out_ch, in_ch, k) = (ws[0], ws[1], ws[2]);
    let (batch, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (g.shape()[2], g.shape()[3]);
    let xd = x.data();
    let wd = weight.data();
    let gd = g.data();
    let mut gw = vec![0.0; wd.len()];
    let mut gb = vec![0.0; out_ch];
    let mut gx = vec![0.0; xd.len()];
    for b in 0..batch {
        let base = b * in_ch * h * w;
        for o in 0..out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = gd[((b * out_ch + o) * oh + oy) * ow + ox];
                    gb[o] += go;
                    for c in 0..in_ch {
                        for ky in 0..k {
                            let xi = base + (c * h + oy * stride + ky) * w + ox * stride;
                            let wi = ((o * in_ch + c) * k + ky) * k;
                            for kx in 0..k {
                                gw[wi + kx] += go * xd[xi + kx];
                                gx[xi + kx] += go * wd[wi + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts_unchecked(x.shape().to_vec(), gx),
        vec![
            Tensor::from_parts_unchecked(ws.to_vec(), gw),
            Tensor::from_parts_unchecked(vec![out_ch], gb),
        ],
    )
}

fn pool_forward(size: usize, stride: usize, x: &Tensor, out_shape: Vec<usize>) -> (Tensor, Vec<usize>) {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let planes = x.shape()[0] * x.shape()[1];
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let xd = x.data();
    let mut y = Vec::with_capacity(planes * oh * ow);
    let mut argmax = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = p * h * w + oy * stride * w + ox * stride;
                for ky in 0..size {
                    for kx in 0..size {
                        let i = p * h * w + (oy * stride + ky) * w + ox * stride + kx;
                        // Ties keep the first index.
                        if xd[i] > xd[best] {
                            best = i;
                        }
                    }
                }
                y.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    (Tensor::from_parts_unchecked(out_shape, y), argmax)
}

/// Stable row-wise softmax of a `(B, C)` tensor.
pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let classes = x.shape()[1];
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::from_parts_unchecked(x.shape().to_vec(), out)
}

/// `log(sum(exp(row)))` computed without overflow.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}
