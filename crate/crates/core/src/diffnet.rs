//! Small reverse-mode network engine: dense, 2x2 convolution and 2x2
//! transposed-convolution layers, additive bias tensors, ReLU/linear
//! activations and Adam.
//!
//! Spatial tensors are stored channel-major, `[channel][row][col]`.
//! Convolutions use a 2x2 kernel, stride 1 and zero padding 1, so every
//! convolution grows each spatial side by one and every transposed
//! convolution shrinks it by one.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn apply<T: Scalar>(self, values: &mut [T]) {
        if self == Activation::Relu {
            for v in values {
                *v = v.max(T::zero());
            }
        }
    }

    /// Multiplies `grad` by the activation derivative, using the layer output.
    fn backprop<T: Scalar>(self, output: &[T], grad: &mut [T]) {
        if self == Activation::Relu {
            for (g, &o) in grad.iter_mut().zip(output) {
                if o <= T::zero() {
                    *g = T::zero();
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(contract(format!("unknown activation {other:?}"))),
        }
    }
}

/// One layer of a network. Spatial sizes refer to the layer input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Learned additive bias on a raw tensor.
    Bias {
        len: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    Conv2x2 {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        activation: Activation,
    },
    Deconv2x2 {
        in_channels: usize,
        out_channels: usize,
        height: usize,
        width: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Bias { len } => len,
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2x2 { in_channels, height, width, .. }
            | LayerSpec::Deconv2x2 { in_channels, height, width, .. } => in_channels * height * width,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerSpec::Bias { len } => len,
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2x2 { out_channels, height, width, .. } => out_channels * (height + 1) * (width + 1),
            LayerSpec::Deconv2x2 { out_channels, height, width, .. } => out_channels * (height - 1) * (width - 1),
        }
    }

    pub fn weight_count(&self) -> usize {
        match *self {
            LayerSpec::Bias { .. } => 0,
            LayerSpec::Dense { inputs, outputs, .. } => inputs * outputs,
            LayerSpec::Conv2x2 { in_channels, out_channels, .. }
            | LayerSpec::Deconv2x2 { in_channels, out_channels, .. } => in_channels * out_channels * 4,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerSpec::Bias { len } => len,
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2x2 { out_channels, .. } | LayerSpec::Deconv2x2 { out_channels, .. } => out_channels,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Bias { .. } => Activation::Linear,
            LayerSpec::Dense { activation, .. }
            | LayerSpec::Conv2x2 { activation, .. }
            | LayerSpec::Deconv2x2 { activation, .. } => activation,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Bias { .. } => 1,
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2x2 { in_channels, .. } | LayerSpec::Deconv2x2 { in_channels, .. } => in_channels * 4,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Deconv2x2 { height, width, .. } if height < 2 || width < 2 => {
                Err(contract("transposed convolution needs spatial size >= 2"))
            }
            _ if self.input_len() == 0 || self.output_len() == 0 => Err(contract("empty layer")),
            _ => Ok(()),
        }
    }
}

/// Layer stack plus its flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
    params: Vec<T>,
}

/// Per-layer values recorded by [`Network::forward`]; `values[0]` is the
/// input and `values[i + 1]` the (activated) output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    values: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.values.last().expect("trace holds the input")
    }

    pub fn input(&self) -> &[T] {
        &self.values[0]
    }
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<T>,
    pub input: Vec<T>,
}

impl<T: Scalar> Network<T> {
    /// All-zero network for the given layer stack.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(contract("network needs at least one layer"));
        }
        for l in &layers {
            l.validate()?;
        }
        for pair in layers.windows(2) {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::Shape { expected: pair[1].input_len(), actual: pair[0].output_len() });
            }
        }
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let mut total = 0;
        for l in &layers {
            offsets.push(total);
            total += l.param_count();
        }
        offsets.push(total);
        Ok(Network { layers, offsets, params: vec![T::zero(); total] })
    }

    /// Uniform fan-in scaled initialization (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`)
    /// for weights; biases start at zero.
    pub fn init(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, layer) in net.layers.iter().enumerate() {
            let limit = (6.0 / layer.fan_in() as f64).sqrt();
            let start = net.offsets[i];
            for p in &mut net.params[start..start + layer.weight_count()] {
                *p = T::c(rng.gen_range(-limit..limit));
            }
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<T>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape { expected: self.params.len(), actual: params.len() });
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().unwrap().output_len()
    }

    pub fn forward(&self, input: &[T]) -> Result<Trace<T>> {
        if input.len() != self.input_len() {
            return Err(Error::Shape { expected: self.input_len(), actual: input.len() });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let p = &self.params[self.offsets[i]..self.offsets[i + 1]];
            let mut out = layer_forward(layer, p, values.last().unwrap());
            layer.activation().apply(&mut out);
            values.push(out);
        }
        Ok(Trace { values })
    }

    /// Forward pass returning only the output.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(input)?.values.pop().unwrap())
    }

    pub fn backward(&self, trace: &Trace<T>, output_grad: &[T]) -> Result<Gradients<T>> {
        let mut params = vec![T::zero(); self.params.len()];
        let input = self.backward_into(trace, output_grad, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Reverse pass that adds the parameter gradient into `param_grad` and
    /// returns the gradient with respect to the network input.
    pub fn backward_into(&self, trace: &Trace<T>, output_grad: &[T], param_grad: &mut [T]) -> Result<Vec<T>> {
        if trace.values.len() != self.layers.len() + 1 {
            return Err(contract("trace does not belong to this network"));
        }
        if output_grad.len() != self.output_len() {
            return Err(Error::Shape { expected: self.output_len(), actual: output_grad.len() });
        }
        if param_grad.len() != self.params.len() {
            return Err(Error::Shape { expected: self.params.len(), actual: param_grad.len() });
        }
        let mut grad = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            layer.activation().backprop(&trace.values[i + 1], &mut grad);
            let range = self.offsets[i]..self.offsets[i + 1];
            grad = layer_backward(layer, &self.params[range.clone()], &trace.values[i], &grad, &mut param_grad[range]);
        }
        Ok(grad)
    }
}

fn layer_forward<T: Scalar>(layer: &LayerSpec, p: &[T], x: &[T]) -> Vec<T> {
    match *layer {
        LayerSpec::Bias { .. } => x.iter().zip(p).map(|(&a, &b)| a + b).collect(),
        LayerSpec::Dense { inputs, outputs, .. } => {
            let (w, b) = p.split_at(inputs * outputs);
            (0..outputs)
                .map(|o| {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    row.iter().zip(x).fold(b[o], |acc, (&wi, &xi)| acc + wi * xi)
                })
                .collect()
        }
        LayerSpec::Conv2x2 { in_channels: ci, out_channels: co, height: h, width: w, .. } => {
            let (wt, b) = p.split_at(ci * co * 4);
            let (oh, ow) = (h + 1, w + 1);
            let mut out = vec![T::zero(); co * oh * ow];
            for o in 0..co {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = b[o];
                        for c in 0..ci {
                            for (a, bb) in KERNEL {
                                if let Some((r, s)) = conv_src(i, j, a, bb, h, w) {
                                    acc = acc + wt[((o * ci + c) * 2 + a) * 2 + bb] * x[(c * h + r) * w + s];
                                }
                            }
                        }
                        out[(o * oh + i) * ow + j] = acc;
                    }
                }
            }
            out
        }
        LayerSpec::Deconv2x2 { in_channels: ci, out_channels: co, height: h, width: w, .. } => {
            let (wt, b) = p.split_at(ci * co * 4);
            let (oh, ow) = (h - 1, w - 1);
            let mut out = vec![T::zero(); co * oh * ow];
            for o in 0..co {
                out[o * oh * ow..(o + 1) * oh * ow].fill(b[o]);
            }
            for c in 0..ci {
                for r in 0..h {
                    for s in 0..w {
                        let v = x[(c * h + r) * w + s];
                        for (a, bb) in KERNEL {
                            if let Some((i, j)) = deconv_dst(r, s, a, bb, oh, ow) {
                                for o in 0..co {
                                    let k = ((c * co + o) * 2 + a) * 2 + bb;
                                    out[(o * oh + i) * ow + j] = out[(o * oh + i) * ow + j] + v * wt[k];
                                }
                            }
                        }
                    }
                }
            }
            out
        }
    }
}

fn layer_backward<T: Scalar>(layer: &LayerSpec, p: &[T], x: &[T], g: &[T], pg: &mut [T]) -> Vec<T> {
    match *layer {
        LayerSpec::Bias { .. } => {
            for (d, &gi) in pg.iter_mut().zip(g) {
                *d = *d + gi;
            }
            g.to_vec()
        }
        LayerSpec::Dense { inputs, outputs, .. } => {
            let (w, _) = p.split_at(inputs * outputs);
            let (gw, gb) = pg.split_at_mut(inputs * outputs);
            let mut gx = vec![T::zero(); inputs];
            for o in 0..outputs {
                let go = g[o];
                if go == T::zero() {
                    continue;
                }
                gb[o] = gb[o] + go;
                let row = &w[o * inputs..(o + 1) * inputs];
                let grow = &mut gw[o * inputs..(o + 1) * inputs];
                for k in 0..inputs {
                    grow[k] = grow[k] + go * x[k];
                    gx[k] = gx[k] + go * row[k];
                }
            }
            gx
        }
        LayerSpec::Conv2x2 { in_channels: ci, out_channels: co, height: h, width: w, .. } => {
            let (wt, _) = p.split_at(ci * co * 4);
            let (gw, gb) = pg.split_at_mut(ci * co * 4);
            let (oh, ow) = (h + 1, w + 1);
            let mut gx = vec![T::zero(); x.len()];
            for o in 0..co {
                for i in 0..oh {
                    for j in 0..ow {
                        let go = g[(o * oh + i) * ow + j];
                        if go == T::zero() {
                            continue;
                        }
                        gb[o] = gb[o] + go;
                        for c in 0..ci {
                            for (a, bb) in KERNEL {
                                if let Some((r, s)) = conv_src(i, j, a, bb, h, w) {
                                    let k = ((o * ci + c) * 2 + a) * 2 + bb;
                                    let xi = (c * h + r) * w + s;
                                    gw[k] = gw[k] + go * x[xi];
                                    gx[xi] = gx[xi] + go * wt[k];
                                }
                            }
                        }
                    }
                }
            }
            gx
        }
        LayerSpec::Deconv2x2 { in_channels: ci, out_channels: co, height: h, width: w, .. } => {
            let (wt, _) = p.split_at(ci * co * 4);
            let (gw, gb) = pg.split_at_mut(ci * co * 4);
            let (oh, ow) = (h - 1, w - 1);
            for o in 0..co {
                gb[o] = gb[o] + g[o * oh * ow..(o + 1) * oh * ow].iter().copied().sum::<T>();
            }
            let mut gx = vec![T::zero(); x.len()];
            for c in 0..ci {
                for r in 0..h {
                    for s in 0..w {
                        let xi = (c * h + r) * w + s;
                        let v = x[xi];
                        let mut acc = T::zero();
                        for (a, bb) in KERNEL {
                            if let Some((i, j)) = deconv_dst(r, s, a, bb, oh, ow) {
                                for o in 0..co {
                                    let k = ((c * co + o) * 2 + a) * 2 + bb;
                                    let go = g[(o * oh + i) * ow + j];
                                    gw[k] = gw[k] + go * v;
                                    acc = acc + go * wt[k];
                                }
                            }
                        }
                        gx[xi] = acc;
                    }
                }
            }
            gx
        }
    }
}

const KERNEL: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Input position read by output `(i, j)` through kernel tap `(a, b)`.
#[inline]
fn conv_src(i: usize, j: usize, a: usize, b: usize, h: usize, w: usize) -> Option<(usize, usize)> {
    let (r, s) = ((i + a).checked_sub(1)?, (j + b).checked_sub(1)?);
    (r < h && s < w).then_some((r, s))
}

/// Output position written by input `(r, s)` through kernel tap `(a, b)`.
#[inline]
fn deconv_dst(r: usize, s: usize, a: usize, b: usize, oh: usize, ow: usize) -> Option<(usize, usize)> {
    let (i, j) = ((r + a).checked_sub(1)?, (s + b).checked_sub(1)?);
    (i < oh && j < ow).then_some((i, j))
}

/// Adam hyperparameters other than the learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

/// Trainable network with its Adam moments and the seed it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub net: Network<T>,
    pub adam: AdamState<T>,
    pub adam_config: AdamConfig,
    pub seed: u64,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        Ok(Self::from_network(Network::init(layers, seed)?, seed))
    }

    pub fn from_network(net: Network<T>, seed: u64) -> Self {
        let n = net.param_count();
        ParamStore {
            net,
            adam: AdamState { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 },
            adam_config: AdamConfig::default(),
            seed,
        }
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// One bias-corrected Adam update.
    pub fn adam_step(&mut self, grad: &[T], lr: T) -> Result<()> {
        let n = self.net.param_count();
        if grad.len() != n {
            return Err(Error::Shape { expected: n, actual: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let AdamConfig { beta1, beta2, epsilon } = self.adam_config;
        let (b1, b2, eps) = (T::c(beta1), T::c(beta2), T::c(epsilon));
        let one = T::one();
        self.adam.t += 1;
        let t = self.adam.t as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let params = self.net.params_mut();
        for i in 0..n {
            let g = grad[i];
            let m = b1 * self.adam.m[i] + (one - b1) * g;
            let v = b2 * self.adam.v[i] + (one - b2) * g * g;
            self.adam.m[i] = m;
            self.adam.v[i] = v;
            let m_hat = m / c1;
            let v_hat = v / c2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            arch: self.net.layers.clone(),
            params: f(&self.net.params),
            adam: AdamRecord { m: f(&self.adam.m), v: f(&self.adam.v), t: self.adam.t },
            seed: self.seed,
            adam_config: self.adam_config,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Version { expected: CHECKPOINT_VERSION, found: ck.version });
        }
        let mut net = Network::zeros(ck.arch.clone())?;
        let n = net.param_count();
        for len in [ck.params.len(), ck.adam.m.len(), ck.adam.v.len()] {
            if len != n {
                return Err(Error::Shape { expected: n, actual: len });
            }
        }
        let f = |v: &[f64]| v.iter().map(|&x| T::c(x)).collect::<Vec<_>>();
        net.params = f(&ck.params);
        Ok(ParamStore {
            net,
            adam: AdamState { m: f(&ck.adam.m), v: f(&ck.adam.v), t: ck.adam.t },
            adam_config: ck.adam_config,
            seed: ck.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::artifacts::write_json(path, &self.to_checkpoint())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = crate::artifacts::read_json(path)?;
        Self::from_checkpoint(&ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamRecord {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// On-disk form of a [`ParamStore`]. Floats are written in shortest
/// round-trip decimal form, so reloading is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub arch: Vec<LayerSpec>,
    pub params: Vec<f64>,
    pub adam: AdamRecord,
    pub seed: u64,
    #[serde(default)]
    pub adam_config: AdamConfig,
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(values: &[T]) -> Vec<T> {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = values.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls a gradient with respect to softmax probabilities back to the logits.
pub fn softmax_backward<T: Scalar>(probs: &[T], grad_probs: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(grad_probs).map(|(&p, &g)| p * g).sum();
    probs.iter().zip(grad_probs).map(|(&p, &g)| p * (g - dot)).collect()
}

/// Central finite-difference derivative of `f` with respect to parameter
/// `index` of `net`, step `h`.
pub fn finite_difference<T: Scalar, F>(net: &mut Network<T>, index: usize, h: T, mut f: F) -> T
where
    F: FnMut(&Network<T>) -> T,
{
    let orig = net.params[index];
    net.params[index] = orig + h;
    let plus = f(net);
    net.params[index] = orig - h;
    let minus = f(net);
    net.params[index] = orig;
    (plus - minus) / (h + h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(i: usize, o: usize, a: Activation) -> LayerSpec {
        LayerSpec::Dense { inputs: i, outputs: o, activation: a }
    }

    #[test]
    fn relu_clamps_negative() {
        let mut v = vec![-1.0, 0.5];
        Activation::Relu.apply(&mut v);
        assert_eq!(v, vec![0.0, 0.5]);
    }

    #[test]
    fn zero_weight_dense_outputs_bias() {
        let mut net = Network::<f64>::zeros(vec![dense(3, 2, Activation::Linear)]).unwrap();
        net.params_mut()[6] = 0.7;
        net.params_mut()[7] = -1.5;
        assert_eq!(net.predict(&[4.0, -2.0, 9.0]).unwrap(), vec![0.7, -1.5]);
    }

    #[test]
    fn conv_shapes_grow_and_deconv_shrinks() {
        let conv =
            LayerSpec::Conv2x2 { in_channels: 4, out_channels: 10, height: 4, width: 4, activation: Activation::Relu };
        assert_eq!(conv.output_len(), 5 * 5 * 10);
        assert_eq!(conv.param_count(), 170);
        let net = Network::<f64>::init(vec![conv], 3).unwrap();
        assert_eq!(net.predict(&[0.5; 64]).unwrap().len(), 250);

        let de = LayerSpec::Deconv2x2 {
            in_channels: 10,
            out_channels: 4,
            height: 5,
            width: 5,
            activation: Activation::Linear,
        };
        assert_eq!(de.output_len(), 4 * 4 * 4);
        assert_eq!(de.param_count(), 164);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = Network::<f64>::zeros(vec![dense(3, 2, Activation::Relu)]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Shape { .. })));
        let trace = net.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&trace, &[1.0]).is_err());
        assert!(Network::<f64>::zeros(vec![dense(3, 2, Activation::Relu), dense(3, 1, Activation::Relu)]).is_err());
    }

    #[test]
    fn scalar_dense_gradient() {
        let mut net = Network::<f64>::zeros(vec![dense(1, 1, Activation::Linear)]).unwrap();
        net.params_mut()[0] = 0.4;
        let trace = net.forward(&[3.0]).unwrap();
        let g = net.backward(&trace, &[1.0]).unwrap();
        assert_eq!(g.params, vec![3.0, 1.0]);
        assert_eq!(g.input, vec![0.4]);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let net =
            Network::<f64>::init(vec![dense(4, 5, Activation::Relu), dense(5, 2, Activation::Linear)], 1).unwrap();
        let trace = net.forward(&[1.0, -1.0, 0.3, 2.0]).unwrap();
        let g = net.backward(&trace, &[0.0, 0.0]).unwrap();
        assert!(g.params.iter().all(|&x| x == 0.0));
    }

    fn check_layer_gradient(layers: Vec<LayerSpec>, seed: u64) {
        use rand::Rng;
        let mut net = Network::<f64>::init(layers, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in net.params_mut() {
            *p += rng.gen_range(-0.1..0.1);
        }
        let input: Vec<f64> = (0..net.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let weights: Vec<f64> = (0..net.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective =
            |n: &Network<f64>| -> f64 { n.predict(&input).unwrap().iter().zip(&weights).map(|(o, w)| o * w).sum() };
        let trace = net.forward(&input).unwrap();
        let g = net.backward(&trace, &weights).unwrap();
        for i in 0..net.param_count() {
            let fd = finite_difference(&mut net, i, 1e-6, objective);
            assert!((fd - g.params[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g.params[i]);
        }
    }

    #[test]
    fn gradient_check_each_layer_kind() {
        check_layer_gradient(vec![LayerSpec::Bias { len: 6 }], 1);
        check_layer_gradient(vec![dense(5, 3, Activation::Linear)], 2);
        check_layer_gradient(
            vec![LayerSpec::Conv2x2 {
                in_channels: 2,
                out_channels: 3,
                height: 3,
                width: 4,
                activation: Activation::Linear,
            }],
            3,
        );
        check_layer_gradient(
            vec![LayerSpec::Deconv2x2 {
                in_channels: 3,
                out_channels: 2,
                height: 4,
                width: 3,
                activation: Activation::Linear,
            }],
            4,
        );
    }

    #[test]
    fn adam_zero_gradient_keeps_params_and_decays_moments() {
        let mut store = ParamStore::<f64>::new(vec![dense(2, 2, Activation::Linear)], 5).unwrap();
        let before = store.net.params().to_vec();
        store.adam_step(&[0.0; 6], 1e-3).unwrap();
        assert_eq!(store.net.params(), &before[..]);

        store.adam.m = vec![1.0; 6];
        store.adam.v = vec![1.0; 6];
        store.adam.t = 0;
        store.adam_step(&[0.0; 6], 1e-3).unwrap();
        assert!(store.adam.m.iter().all(|&m| (m - 0.9).abs() < 1e-15));
        assert!(store.adam.v.iter().all(|&v| (v - 0.999).abs() < 1e-15));
        assert_eq!(store.adam.t, 1);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut store = ParamStore::<f64>::new(vec![dense(1, 2, Activation::Linear)], 9).unwrap();
        let before = store.net.params().to_vec();
        let g = [0.3, -2.0, 1e-3, 0.0];
        let lr = 5e-4;
        store.adam_step(&g, lr).unwrap();
        for i in 0..4 {
            // After one step m_hat = g and v_hat = g^2.
            let expected = if g[i] == 0.0 { 0.0 } else { -lr * g[i] / (g[i].abs() + 1e-8) };
            assert!((store.net.params()[i] - before[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_bad_gradients() {
        let mut store = ParamStore::<f64>::new(vec![dense(1, 1, Activation::Linear)], 0).unwrap();
        assert!(store.adam_step(&[f64::NAN, 0.0], 0.1).is_err());
        assert!(store.adam_step(&[0.0], 0.1).is_err());
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let run = || {
            let mut s =
                ParamStore::<f64>::new(vec![dense(3, 4, Activation::Relu), dense(4, 1, Activation::Linear)], 42)
                    .unwrap();
            for _ in 0..2 {
                let tr = s.net.forward(&[0.1, 0.2, 0.3]).unwrap();
                let g = s.net.backward(&tr, &[1.0]).unwrap();
                s.adam_step(&g.params, 1e-2).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0f64; 4]), vec![0.25; 4]);
        let a = softmax(&[1.0f64, -2.0, 0.5, 3.0]);
        let b = softmax(&[101.0f64, 98.0, 100.5, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        // Reference values evaluated with 50-digit arithmetic.
        let p = softmax(&[1.0f64, 2.0, 3.0, 4.0]);
        let expected = [0.03205860328008499, 0.08714431874203257, 0.23688281808991013, 0.6439142598879724];
        for (x, y) in p.iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let store = ParamStore::<f64>::new(vec![dense(3, 4, Activation::Relu)], 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        store.save(&path).unwrap();
        let back = ParamStore::<f64>::load(&path).unwrap();
        assert_eq!(back, store);
    }
}
