use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossFn;
use super::ops::{self, ConvGeom};
use super::{Real, Tensor};
use crate::{Error, Result};

/// One layer of a network. Kernel shapes are `[frequency bins, time frames]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride-1 correlation with "same" zero padding; odd kernel dims.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
    },
    /// 3x3 transposed convolution, stride 2 on frequency and 1 on time:
    /// `[C, F, T] -> [C', 2F, T]`.
    Deconv2d {
        in_channels: usize,
        out_channels: usize,
    },
    /// Halves the frequency axis with 2x1 max windows.
    MaxpoolFreq,
    Relu,
    /// Inverted dropout; identity at evaluation.
    Dropout { p: f64 },
    /// Dense layer applied to every time frame's flattened `C * F` vector:
    /// `[C, F, T] -> [out_features, 1, T]`.
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Sigmoid,
    /// Softmax across channels at every `(f, t)`.
    Softmax,
    /// Element-wise sum of two inputs.
    Add,
    /// Channel-wise concatenation of two or more inputs.
    Concat,
    /// Mean over the frequency axis: `[C, F, T] -> [C, 1, T]`.
    FreqMean,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Deconv2d { .. } => "deconv2d",
            LayerSpec::MaxpoolFreq => "maxpool_freq",
            LayerSpec::Relu => "relu",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Add => "add",
            LayerSpec::Concat => "concat",
            LayerSpec::FreqMean => "freq_mean",
        }
    }

    /// Shapes of the weight and bias tensors, if the layer has parameters.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel: [kh, kw],
            } => vec![vec![out_channels, in_channels, kh, kw], vec![out_channels]],
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
            } => vec![vec![in_channels, out_channels, 3, 3], vec![out_channels]],
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            _ => Vec::new(),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel: [kh, kw],
            } => {
                if in_channels == 0 || out_channels == 0 || kh == 0 || kw == 0 {
                    return Err("channels and kernel dims must be positive".into());
                }
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err("same padding needs odd kernel dims".into());
                }
            }
            LayerSpec::Deconv2d {
                in_channels,
                out_channels,
            } if in_channels == 0 || out_channels == 0 => {
                return Err("channels must be positive".into())
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } if in_features == 0 || out_features == 0 => {
                return Err("features must be positive".into())
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                return Err(format!("dropout probability {p} outside [0, 1)"))
            }
            _ => {}
        }
        Ok(())
    }
}

/// A layer and the values it reads. Value 0 is the network input; node `i`
/// produces value `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub layer: LayerSpec,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Training pass; `seed` drives the dropout masks.
    Train { seed: u64 },
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    /// Value 0 is the input; value `i + 1` is node `i`'s output.
    pub values: Vec<Tensor<T>>,
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    PoolArg(Vec<u32>),
    Mask(Vec<bool>),
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.values.last().expect("tape holds at least the input")
    }
}

/// A DAG of layers with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    pub nodes: Vec<Node>,
    /// Per node: `[weight, bias]` or empty.
    pub params: Vec<Vec<Tensor<T>>>,
}

impl<T: Real> Network<T> {
    /// Builds a network with Kaiming-uniform (fan-in) weights and zero biases.
    pub fn new(nodes: Vec<Node>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, n) in nodes.iter().enumerate() {
            n.layer.validate().map_err(|reason| Error::Layer {
                index: i,
                kind: n.layer.name(),
                reason,
            })?;
            let arity_ok = match n.layer {
                LayerSpec::Add => n.inputs.len() == 2,
                LayerSpec::Concat => n.inputs.len() >= 2,
                _ => n.inputs.len() == 1,
            };
            if !arity_ok || n.inputs.iter().any(|&v| v > i) {
                return Err(Error::Layer {
                    index: i,
                    kind: n.layer.name(),
                    reason: format!("invalid inputs {:?}", n.inputs),
                });
            }
        }
        let params = nodes
            .iter()
            .map(|n| {
                let shapes = n.layer.param_shapes();
                if shapes.is_empty() {
                    return Vec::new();
                }
                let fan_in = match n.layer {
                    LayerSpec::Deconv2d { in_channels, .. } => (in_channels * 9).div_ceil(2),
                    _ => shapes[0][1..].iter().product(),
                };
                let bound = (6.0 / fan_in as f64).sqrt();
                let w: Vec<T> = (0..shapes[0].iter().product::<usize>())
                    .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                    .collect();
                vec![
                    Tensor::new(shapes[0].clone(), w).expect("shape product"),
                    Tensor::zeros(shapes[1].clone()),
                ]
            })
            .collect();
        Ok(Self { nodes, params })
    }

    /// A linear chain: node `i` reads value `i`.
    pub fn sequential(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let nodes = layers
            .into_iter()
            .enumerate()
            .map(|(i, layer)| Node {
                layer,
                inputs: vec![i],
            })
            .collect();
        Self::new(nodes, seed)
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().flatten().map(|t| t.len()).sum()
    }

    pub fn params_iter(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.params.iter().flatten()
    }

    pub fn params_iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.params.iter_mut().flatten()
    }

    pub fn zero_grad(&mut self) {
        self.params_iter_mut().for_each(|p| p.zero_grad());
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            nodes: self.nodes.clone(),
            params: self
                .params
                .iter()
                .map(|ps| ps.iter().map(|p| p.cast()).collect())
                .collect(),
        }
    }

    /// Output shape for an input of shape `input`, or the first layer that
    /// rejects it.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shapes = vec![input.to_vec()];
        for (i, n) in self.nodes.iter().enumerate() {
            let ins: Vec<&Vec<usize>> = n.inputs.iter().map(|&v| &shapes[v]).collect();
            let s = infer_shape(&n.layer, &ins).map_err(|reason| Error::Layer {
                index: i,
                kind: n.layer.name(),
                reason,
            })?;
            shapes.push(s);
        }
        Ok(shapes.pop().unwrap())
    }

    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<Tape<T>> {
        self.output_shape(&input.shape)?;
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len() + 1);
        values.push(Tensor {
            shape: input.shape.clone(),
            data: input.data.clone(),
            grad: None,
        });
        let mut aux = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            let x = &values[n.inputs[0]];
            let (c, f, t) = x.cft()?;
            let ps = &self.params[i];
            let (shape, data, a) = match n.layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel: [kh, kw],
                    ..
                } => {
                    let g = ConvGeom::same(c, f, t, kh, kw);
                    let y = ops::conv_forward(&x.data, &ps[0].data, &ps[1].data, out_channels, &g);
                    (vec![out_channels, f, t], y, Aux::None)
                }
                LayerSpec::Deconv2d { out_channels, .. } => {
                    let g = ConvGeom::down2(out_channels, 2 * f, t);
                    let y = ops::deconv_forward(&x.data, &ps[0].data, &ps[1].data, c, &g);
                    (vec![out_channels, 2 * f, t], y, Aux::None)
                }
                LayerSpec::MaxpoolFreq => {
                    let (y, arg) = ops::maxpool_freq_forward(&x.data, c, f, t);
                    (vec![c, f / 2, t], y, Aux::PoolArg(arg))
                }
                LayerSpec::Relu => (
                    x.shape.clone(),
                    x.data.iter().map(|&v| v.max(T::ZERO)).collect(),
                    Aux::None,
                ),
                LayerSpec::Dropout { p } => match mode {
                    Mode::Train { seed } if p > 0.0 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                        );
                        let scale = T::from_f64(1.0 / (1.0 - p));
                        let mask: Vec<bool> = (0..x.len()).map(|_| rng.random::<f64>() >= p).collect();
                        let y = x
                            .data
                            .iter()
                            .zip(&mask)
                            .map(|(&v, &keep)| if keep { v * scale } else { T::ZERO })
                            .collect();
                        (x.shape.clone(), y, Aux::Mask(mask))
                    }
                    _ => (x.shape.clone(), x.data.clone(), Aux::None),
                },
                LayerSpec::Linear { out_features, .. } => {
                    let k = c * f;
                    let mut y = vec![T::ZERO; out_features * t];
                    for (o, b) in y.chunks_mut(t).zip(&ps[1].data) {
                        o.iter_mut().for_each(|v| *v = *b);
                    }
                    T::gemm(
                        out_features,
                        k,
                        t,
                        &ps[0].data,
                        super::strides(k, false),
                        &x.data,
                        super::strides(t, false),
                        T::ONE,
                        &mut y,
                    );
                    (vec![out_features, 1, t], y, Aux::None)
                }
                LayerSpec::Sigmoid => (
                    x.shape.clone(),
                    x.data.iter().map(|&v| ops::sigmoid(v)).collect(),
                    Aux::None,
                ),
                LayerSpec::Softmax => (
                    x.shape.clone(),
                    ops::softmax_channels(&x.data, c, f * t),
                    Aux::None,
                ),
                LayerSpec::Add => {
                    let z = &values[n.inputs[1]];
                    let y = x.data.iter().zip(&z.data).map(|(&a, &b)| a + b).collect();
                    (x.shape.clone(), y, Aux::None)
                }
                LayerSpec::Concat => {
                    let mut y = Vec::new();
                    let mut channels = 0;
                    for &v in &n.inputs {
                        y.extend_from_slice(&values[v].data);
                        channels += values[v].shape[0];
                    }
                    (vec![channels, f, t], y, Aux::None)
                }
                LayerSpec::FreqMean => {
                    let inv = T::from_f64(1.0 / f as f64);
                    let mut y = vec![T::ZERO; c * t];
                    for ch in 0..c {
                        let out = &mut y[ch * t..(ch + 1) * t];
                        for fi in 0..f {
                            let row = &x.data[(ch * f + fi) * t..(ch * f + fi + 1) * t];
                            for (o, &v) in out.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        out.iter_mut().for_each(|v| *v *= inv);
                    }
                    (vec![c, 1, t], y, Aux::None)
                }
            };
            values.push(Tensor {
                shape,
                data,
                grad: None,
            });
            aux.push(a);
        }
        Ok(Tape { values, aux })
    }

    /// Convenience: evaluation-mode forward returning only the output.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = self.forward(input, Mode::Eval)?;
        Ok(tape.values.pop().unwrap())
    }

    /// Back-propagates `grad_output` through `tape`, accumulating parameter
    /// gradients. Returns the gradient with respect to the input.
    pub fn backward(&mut self, tape: &Tape<T>, grad_output: Vec<T>) -> Result<Vec<T>> {
        if grad_output.len() != tape.output().len() {
            return Err(Error::Shape(format!(
                "output gradient has {} values, output has {}",
                grad_output.len(),
                tape.output().len()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; tape.values.len()];
        *grads.last_mut().unwrap() = Some(grad_output);

        for i in (0..self.nodes.len()).rev() {
            let Some(dy) = grads[i + 1].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let x = &tape.values[node.inputs[0]];
            let y = &tape.values[i + 1];
            let (c, f, t) = x.cft()?;
            let mut input_grads: Vec<(usize, Vec<T>)> = Vec::with_capacity(node.inputs.len());
            match node.layer {
                LayerSpec::Conv2d {
                    out_channels,
                    kernel: [kh, kw],
                    ..
                } => {
                    let g = ConvGeom::same(c, f, t, kh, kw);
                    let (w, b) = split_params(&mut self.params[i]);
                    let (wd, dw) = data_and_grad(w);
                    let (_, db) = data_and_grad(b);
                    let dx = ops::conv_backward(&x.data, wd, &dy, out_channels, &g, dw, db);
                    input_grads.push((node.inputs[0], dx));
                }
                LayerSpec::Deconv2d { out_channels, .. } => {
                    let g = ConvGeom::down2(out_channels, 2 * f, t);
                    let (w, b) = split_params(&mut self.params[i]);
                    let (wd, dw) = data_and_grad(w);
                    let (_, db) = data_and_grad(b);
                    let dx = ops::deconv_backward(&x.data, wd, &dy, c, &g, dw, db);
                    input_grads.push((node.inputs[0], dx));
                }
                LayerSpec::MaxpoolFreq => {
                    let Aux::PoolArg(arg) = &tape.aux[i] else {
                        unreachable!("maxpool records its argmax")
                    };
                    input_grads.push((node.inputs[0], ops::maxpool_freq_backward(&dy, arg, x.len())));
                }
                LayerSpec::Relu => {
                    let dx = x
                        .data
                        .iter()
                        .zip(&dy)
                        .map(|(&v, &g)| if v > T::ZERO { g } else { T::ZERO })
                        .collect();
                    input_grads.push((node.inputs[0], dx));
                }
                LayerSpec::Dropout { p } => {
                    let dx = match &tape.aux[i] {
                        Aux::Mask(mask) => {
                            let scale = T::from_f64(1.0 / (1.0 - p));
                            dy.iter()
                                .zip(mask)
                                .map(|(&g, &keep)| if keep { g * scale } else { T::ZERO })
                                .collect()
                        }
                        _ => dy,
                    };
                    input_grads.push((node.inputs[0], dx));
                }
                LayerSpec::Linear { out_features, .. } => {
                    let k = c * f;
                    let (w, b) = split_params(&mut self.params[i]);
                    for (g, row) in b.grad_mut().iter_mut().zip(dy.chunks(t)) {
                        *g += row.iter().copied().sum::<T>();
                    }
                    let (wd, dw) = data_and_grad(w);
                    // dW[out, k] += dY[out, t] * X[k, t]^T
                    T::gemm(
                        out_features,
                        t,
                        k,
                        &dy,
                        super::strides(t, false),
                        &x.data,
                        super::strides(t, true),
                        T::ONE,
                        dw,
                    );
                    // dX[k, t] = W[out, k]^T * dY[out, t]
                    let mut dx = vec![T::ZERO; k * t];
                    T::gemm(
                        k,
                        out_features,
                        t,
                        wd,
                        super::strides(k, true),
                        &dy,
                        super::strides(t, false),
                        T::ZERO,
                        &mut dx,
                    );
                    input_grads.push((node.inputs[0], dx));
                }
                LayerSpec::Sigmoid => {
                    let dx = y
                        .data
                        .iter()
                        .zip(&dy)
                        .map(|(&s, &g)| g * s * (T::ONE - s))
                        .collect();
                    input_grads.push((node.inputs[0], dx));
                }
                LayerSpec::Softmax => {
                    input_grads.push((
                        node.inputs[0],
                        ops::softmax_channels_backward(&y.data, &dy, c, f * t),
                    ));
                }
                LayerSpec::Add => {
                    input_grads.push((node.inputs[1], dy.clone()));
                    input_grads.push((node.inputs[0], dy));
                }
                LayerSpec::Concat => {
                    let mut offset = 0;
                    for &v in &node.inputs {
                        let n = tape.values[v].len();
                        input_grads.push((v, dy[offset..offset + n].to_vec()));
                        offset += n;
                    }
                }
                LayerSpec::FreqMean => {
                    let inv = T::from_f64(1.0 / f as f64);
                    let mut dx = vec![T::ZERO; x.len()];
                    for ch in 0..c {
                        for fi in 0..f {
                            let row = &mut dx[(ch * f + fi) * t..(ch * f + fi + 1) * t];
                            for (d, &g) in row.iter_mut().zip(&dy[ch * t..(ch + 1) * t]) {
                                *d = g * inv;
                            }
                        }
                    }
                    input_grads.push((node.inputs[0], dx));
                }
            }
            for (v, g) in input_grads {
                match &mut grads[v] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(grads[0]
            .take()
            .unwrap_or_else(|| vec![T::ZERO; tape.values[0].len()]))
    }
}

fn split_params<T>(ps: &mut [Tensor<T>]) -> (&mut Tensor<T>, &mut Tensor<T>) {
    let (w, rest) = ps.split_first_mut().expect("layer has parameters");
    (w, &mut rest[0])
}

fn data_and_grad<T: Real>(p: &mut Tensor<T>) -> (&[T], &mut [T]) {
    let n = p.data.len();
    let g = p.grad.get_or_insert_with(|| vec![T::ZERO; n]);
    (&p.data, g)
}

fn infer_shape(layer: &LayerSpec, ins: &[&Vec<usize>]) -> std::result::Result<Vec<usize>, String> {
    let (c, f, t) = match ins[0][..] {
        [c, f, t] => (c, f, t),
        _ => return Err(format!("expected [C, F, T] input, got {:?}", ins[0])),
    };
    if t == 0 || f == 0 || c == 0 {
        return Err(format!("empty input {:?}", ins[0]));
    }
    match *layer {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            ..
        } => {
            if c != in_channels {
                return Err(format!("expected {in_channels} channels, got {c}"));
            }
            Ok(vec![out_channels, f, t])
        }
        LayerSpec::Deconv2d {
            in_channels,
            out_channels,
        } => {
            if c != in_channels {
                return Err(format!("expected {in_channels} channels, got {c}"));
            }
            Ok(vec![out_channels, 2 * f, t])
        }
        LayerSpec::MaxpoolFreq => {
            if f < 2 {
                return Err(format!("cannot halve a frequency axis of length {f}"));
            }
            Ok(vec![c, f / 2, t])
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            if c * f != in_features {
                return Err(format!("expected {in_features} features per frame, got {}", c * f));
            }
            Ok(vec![out_features, 1, t])
        }
        LayerSpec::Add => {
            if ins[0] != ins[1] {
                return Err(format!("cannot add {:?} and {:?}", ins[0], ins[1]));
            }
            Ok(ins[0].clone())
        }
        LayerSpec::Concat => {
            let mut channels = 0;
            for s in ins {
                if s.len() != 3 || s[1] != f || s[2] != t {
                    return Err(format!("cannot concatenate {s:?} with {:?}", ins[0]));
                }
                channels += s[0];
            }
            Ok(vec![channels, f, t])
        }
        LayerSpec::FreqMean => Ok(vec![c, 1, t]),
        LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Sigmoid | LayerSpec::Softmax => {
            Ok(ins[0].clone())
        }
    }
}

/// Runs forward and backward for one example and accumulates parameter
/// gradients. Returns the loss.
pub fn forward_backward<T: Real>(
    net: &mut Network<T>,
    input: &Tensor<T>,
    loss: &LossFn,
    targets: &[T],
    mode: Mode,
) -> Result<f64> {
    let tape = net.forward(input, mode)?;
    let (value, grad) = loss.eval(&tape.output().data, tape.output().shape[0], targets)?;
    net.backward(&tape, grad)?;
    Ok(value)
}
