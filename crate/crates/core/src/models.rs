//! Small differentiable models with hand-written backpropagation.
//!
//! Parameters live in one flat vector. Each dense layer stores its weight
//! matrix (`out × in`, row-major) followed by its bias.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::rng;

pub type ParamVector = Vec<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearSoftmax,
    Mlp,
    /// `f(w, (x, y)) = ½‖w − x‖²`, a strongly convex toy whose prediction is
    /// always class 0. Used to compare optimizers on a known landscape.
    Quadratic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub kind: ModelKind,
    /// Hidden widths; empty for the linear and quadratic models.
    #[serde(default)]
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub input_dim: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradEval {
    pub loss: f64,
    pub grad: ParamVector,
}

impl ModelArch {
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        ModelArch {
            kind: ModelKind::LinearSoftmax,
            layer_widths: vec![],
            activation: Activation::Relu,
            input_dim,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: &[usize], num_classes: usize) -> Self {
        ModelArch {
            kind: ModelKind::Mlp,
            layer_widths: hidden.to_vec(),
            activation: Activation::Relu,
            input_dim,
            num_classes,
        }
    }

    pub fn quadratic(input_dim: usize) -> Self {
        ModelArch {
            kind: ModelKind::Quadratic,
            layer_widths: vec![],
            activation: Activation::Relu,
            input_dim,
            num_classes: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::domain("input_dim and num_classes must be positive"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::domain("layer widths must be positive"));
        }
        match self.kind {
            ModelKind::Mlp if self.layer_widths.is_empty() => {
                Err(Error::domain("an MLP needs at least one hidden layer"))
            }
            ModelKind::LinearSoftmax | ModelKind::Quadratic if !self.layer_widths.is_empty() => {
                Err(Error::domain(format!("{:?} takes no hidden layers", self.kind)))
            }
            ModelKind::LinearSoftmax | ModelKind::Mlp if self.num_classes < 2 => {
                Err(Error::domain("a classifier needs at least two classes"))
            }
            _ => Ok(()),
        }
    }

    /// `(fan_in, fan_out)` of every dense layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.layer_widths);
        widths.push(self.num_classes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count `d`.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Quadratic => self.input_dim,
            _ => self.layers().iter().map(|&(i, o)| o * i + o).sum(),
        }
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::contract(format!("expected {} parameters, got {}", self.param_count(), params.len())));
        }
        Ok(())
    }

    fn check_data(&self, ds: &Dataset) -> Result<()> {
        if ds.input_dim() != self.input_dim {
            return Err(Error::contract(format!(
                "model expects input_dim {}, data has {}",
                self.input_dim,
                ds.input_dim()
            )));
        }
        if self.kind != ModelKind::Quadratic && ds.num_classes() > self.num_classes {
            return Err(Error::contract(format!(
                "model has {} outputs, data has {} classes",
                self.num_classes,
                ds.num_classes()
            )));
        }
        Ok(())
    }
}

/// Each layer's weights and biases drawn from `U(−s, s)` with `s = 1/√fan_in`.
/// The quadratic toy draws from `U(−1, 1)`.
pub fn init_params(arch: &ModelArch, seed: u64) -> Result<ParamVector> {
    arch.validate()?;
    let mut rng = rng::stream(seed, rng::streams::INIT);
    if arch.kind == ModelKind::Quadratic {
        return Ok((0..arch.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    }
    let mut out = Vec::with_capacity(arch.param_count());
    for (fan_in, fan_out) in arch.layers() {
        let s = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_out * (fan_in + 1) {
            out.push(rng.random_range(-s..s));
        }
    }
    Ok(out)
}

/// Scratch buffers for one forward/backward pass.
struct Scratch {
    layers: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    /// Post-activation values per layer input; `acts[0]` is the example.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values per layer output.
    pre: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl Scratch {
    fn new(arch: &ModelArch) -> Self {
        let layers = arch.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &(i, o) in &layers {
            offsets.push(offset);
            offset += o * (i + 1);
        }
        Scratch {
            acts: layers.iter().map(|&(i, _)| vec![0.0; i]).collect(),
            pre: layers.iter().map(|&(_, o)| vec![0.0; o]).collect(),
            delta: Vec::new(),
            next_delta: Vec::new(),
            layers,
            offsets,
        }
    }
}

fn forward(params: &[f64], x: &[f64], s: &mut Scratch) {
    let last = s.layers.len() - 1;
    s.acts[0].copy_from_slice(x);
    for l in 0..s.layers.len() {
        let (fan_in, fan_out) = s.layers[l];
        let offset = s.offsets[l];
        let w = &params[offset..offset + fan_out * fan_in];
        let b = &params[offset + fan_out * fan_in..offset + fan_out * (fan_in + 1)];
        for o in 0..fan_out {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            s.pre[l][o] = b[o] + row.iter().zip(&s.acts[l]).map(|(a, b)| a * b).sum::<f64>();
        }
        if l < last {
            let (pre, acts) = (&s.pre[l], &mut s.acts[l + 1]);
            for (h, &a) in acts.iter_mut().zip(pre) {
                *h = a.max(0.0);
            }
        }
    }
}

fn logits(s: &Scratch) -> &[f64] {
    s.pre.last().unwrap()
}

/// Cross-entropy of `logits` at label `y`; writes softmax − onehot into `dlogits`.
fn cross_entropy(logits: &[f64], y: usize, dlogits: &mut Vec<f64>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + z.ln();
    dlogits.clear();
    dlogits.extend(logits.iter().map(|&v| (v - lse).exp()));
    dlogits[y] -= 1.0;
    lse - logits[y]
}

/// Adds `scale · ∇f(w, (x, y))` into `grad` and returns `f(w, (x, y))`.
fn accumulate(
    arch: &ModelArch,
    params: &[f64],
    x: &[f64],
    y: usize,
    scale: f64,
    grad: &mut [f64],
    s: &mut Scratch,
) -> f64 {
    if arch.kind == ModelKind::Quadratic {
        let mut loss = 0.0;
        for ((g, &w), &xi) in grad.iter_mut().zip(params).zip(x) {
            let r = w - xi;
            loss += 0.5 * r * r;
            *g += scale * r;
        }
        return loss;
    }
    forward(params, x, s);
    let mut delta = std::mem::take(&mut s.delta);
    let loss = cross_entropy(logits(s), y, &mut delta);

    for l in (0..s.layers.len()).rev() {
        let (fan_in, fan_out) = s.layers[l];
        let base = s.offsets[l];
        let input = &s.acts[l];
        for o in 0..fan_out {
            let d = scale * delta[o];
            if d != 0.0 {
                let gw = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                for (g, &a) in gw.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            grad[base + fan_out * fan_in + o] += d;
        }
        if l > 0 {
            let w = &params[base..base + fan_out * fan_in];
            let pre = &s.pre[l - 1];
            s.next_delta.clear();
            s.next_delta.resize(fan_in, 0.0);
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    for (nd, &wv) in s.next_delta.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *nd += d * wv;
                    }
                }
            }
            // ReLU subgradient at 0 is 0.
            for (nd, &a) in s.next_delta.iter_mut().zip(pre) {
                if a <= 0.0 {
                    *nd = 0.0;
                }
            }
            std::mem::swap(&mut delta, &mut s.next_delta);
        }
    }
    s.delta = delta;
    loss
}

/// Mean loss and its exact gradient over `rows` of `ds` (duplicates count).
pub fn loss_grad(arch: &ModelArch, params: &[f64], ds: &Dataset, rows: &[usize]) -> Result<GradEval> {
    let mut grad = vec![0.0; arch.param_count()];
    let loss = loss_grad_into(arch, params, ds, rows, &mut grad)?;
    Ok(GradEval { loss, grad })
}

/// As [`loss_grad`], overwriting a caller-owned gradient buffer.
pub fn loss_grad_into(arch: &ModelArch, params: &[f64], ds: &Dataset, rows: &[usize], grad: &mut [f64]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::contract("loss_grad on an empty view"));
    }
    arch.check_params(params)?;
    arch.check_data(ds)?;
    if grad.len() != params.len() {
        return Err(Error::contract("gradient buffer has the wrong length"));
    }
    grad.fill(0.0);
    let scale = 1.0 / rows.len() as f64;
    let mut s = Scratch::new(arch);
    let mut loss = 0.0;
    for &i in rows {
        loss += accumulate(arch, params, ds.row(i), ds.label(i), scale, grad, &mut s);
    }
    Ok(loss * scale)
}

/// `∇f(w, z_i)` for a single example.
pub fn per_example_grad(arch: &ModelArch, params: &[f64], ds: &Dataset, i: usize) -> Result<ParamVector> {
    Ok(loss_grad(arch, params, ds, &[i])?.grad)
}

/// `L(w) = max_i ‖∇f(w, z_i)‖` over every row of `ds`.
pub fn per_example_grad_norm_max(arch: &ModelArch, params: &[f64], ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::contract("gradient-norm maximum over an empty dataset"));
    }
    arch.check_params(params)?;
    arch.check_data(ds)?;
    let mut s = Scratch::new(arch);
    let mut g = vec![0.0; params.len()];
    let mut best = 0.0f64;
    for i in 0..ds.len() {
        g.fill(0.0);
        accumulate(arch, params, ds.row(i), ds.label(i), 1.0, &mut g, &mut s);
        best = best.max(g.iter().map(|v| v * v).sum::<f64>());
    }
    Ok(best.sqrt())
}

/// Argmax of the logits; ties go to the lowest class index.
pub fn predict(arch: &ModelArch, params: &[f64], x: &[f64]) -> usize {
    if arch.kind == ModelKind::Quadratic {
        return 0;
    }
    let mut s = Scratch::new(arch);
    forward(params, x, &mut s);
    let mut best = 0;
    for (c, &v) in logits(&s).iter().enumerate() {
        if v > logits(&s)[best] {
            best = c;
        }
    }
    best
}

/// Fraction of `rows` that `params` misclassifies.
pub fn zero_one_risk(arch: &ModelArch, params: &[f64], ds: &Dataset, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::contract("zero_one_risk on an empty view"));
    }
    arch.check_params(params)?;
    arch.check_data(ds)?;
    if arch.kind == ModelKind::Quadratic {
        return Ok(rows.iter().filter(|&&i| ds.label(i) != 0).count() as f64 / rows.len() as f64);
    }
    let mut s = Scratch::new(arch);
    let mut wrong = 0usize;
    for &i in rows {
        forward(params, ds.row(i), &mut s);
        let out = logits(&s);
        let mut best = 0;
        for c in 1..out.len() {
            if out[c] > out[best] {
                best = c;
            }
        }
        if best != ds.label(i) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / rows.len() as f64)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PGCK";
const CHECKPOINT_VERSION: u32 = 1;

/// A parameter snapshot with the architecture it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ModelArch,
    pub seed: u64,
    pub params: ParamVector,
}

impl Checkpoint {
    /// Layout: `PGCK`, u32 version, u32 descriptor length, JSON descriptor,
    /// u64 d, u64 seed, then d little-endian f64 values.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let desc = serde_json::to_vec(&self.arch)?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(desc.len() as u32).to_le_bytes())?;
        out.write_all(&desc)?;
        out.write_all(&(self.params.len() as u64).to_le_bytes())?;
        out.write_all(&self.seed.to_le_bytes())?;
        for v in &self.params {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |len: usize, what: &str| -> Result<&[u8]> {
            let slice = bytes.get(pos..pos + len).ok_or_else(|| Error::Format {
                offset: pos as u64,
                msg: format!("truncated checkpoint while reading {what}"),
            })?;
            pos += len;
            Ok(slice)
        };
        if take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format { offset: 0, msg: "not a checkpoint (bad magic)".into() });
        }
        let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format { offset: 4, msg: format!("unsupported checkpoint version {version}") });
        }
        let desc_len = u32::from_le_bytes(take(4, "descriptor length")?.try_into().unwrap()) as usize;
        let arch: ModelArch = serde_json::from_slice(take(desc_len, "descriptor")?)?;
        let d = u64::from_le_bytes(take(8, "dimension")?.try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(take(8, "seed")?.try_into().unwrap());
        if d != arch.param_count() {
            return Err(Error::Format {
                offset: (12 + desc_len) as u64,
                msg: format!("d = {d} does not match the descriptor"),
            });
        }
        let raw = take(d * 8, "parameters")?;
        let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Checkpoint { arch, seed, params })
    }
}
