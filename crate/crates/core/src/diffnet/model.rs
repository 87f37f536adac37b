use serde::{Deserialize, Serialize};

use super::layers::{numel, Activation, Layer, LayerKind, Shape};
use super::{ValueGrid, Verdict};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::Rng;

/// The fixed 5×5 KV high-pass kernel (divided by 12).
pub const KV_KERNEL: [f64; 25] = [
    -1.0, 2.0, -2.0, 2.0, -1.0, //
    2.0, -6.0, 8.0, -6.0, 2.0, //
    -2.0, 8.0, -12.0, 8.0, -2.0, //
    2.0, -6.0, 8.0, -6.0, 2.0, //
    -1.0, 2.0, -2.0, 2.0, -1.0,
];

pub fn kv_kernel() -> Vec<f64> {
    KV_KERNEL.iter().map(|v| v / 12.0).collect()
}

pub const INPUT_TAP: &str = "input";
pub const FEATURES_TAP: &str = "features";
pub const LOGITS_TAP: &str = "logits";

/// Desk-scale steganalyzer architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub input_size: usize,
    /// Output channels per convolution block; 3 to 5 blocks.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub activation: Activation,
    /// Whether block `i` ends with 2×2 average pooling.
    pub pool: Vec<bool>,
    /// Gain applied to the high-pass residual of `[0, 1]`-scaled pixels.
    pub front_gain: f64,
    pub target_tap: String,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: 64,
            channels: vec![8, 8, 8],
            kernel: 3,
            activation: Activation::SmoothRelu,
            pool: vec![true, true, true],
            front_gain: 64.0,
            target_tap: "block3".into(),
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(3..=5).contains(&self.channels.len()) {
            return bad(format!("block count {} outside 3..=5", self.channels.len()));
        }
        if self.pool.len() != self.channels.len() {
            return bad("pooling schedule length must equal block count".into());
        }
        if self.channels.contains(&0) {
            return bad("channel widths must be positive".into());
        }
        if self.kernel.is_multiple_of(2) {
            return bad("kernel size must be odd".into());
        }
        let pools = self.pool.iter().filter(|&&p| p).count() as u32;
        if self.input_size < 8 || self.input_size >> pools == 0 {
            return bad(format!("input size {} too small for {} pooling stages", self.input_size, pools));
        }
        if !self.front_gain.is_finite() || self.front_gain <= 0.0 {
            return bad("front gain must be positive".into());
        }
        let taps = self.tap_names();
        if !taps.contains(&self.target_tap) {
            return bad(format!("target tap `{}` not among {:?}", self.target_tap, taps));
        }
        Ok(())
    }

    pub fn tap_names(&self) -> Vec<String> {
        let mut t = vec![INPUT_TAP.to_string()];
        t.extend((1..=self.channels.len()).map(|i| format!("block{i}")));
        t.push(FEATURES_TAP.into());
        t.push(LOGITS_TAP.into());
        t
    }

    /// Canonical `key = value` text form.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        format!(
            "input_size = {}\nchannels = {}\nkernel = {}\nactivation = {}\npool = {}\nfront_gain = {:?}\ntarget_tap = {}\n",
            self.input_size,
            join(self.channels.iter().map(|c| c.to_string()).collect()),
            self.kernel,
            self.activation.name(),
            join(self.pool.iter().map(|p| p.to_string()).collect()),
            self.front_gain,
            self.target_tap
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ArchConfig::default();
        let err = |m: String| Error::InvalidConfig(m);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("bad line `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "input_size" => cfg.input_size = v.parse().map_err(|_| err(format!("bad input_size `{v}`")))?,
                "channels" => {
                    cfg.channels = v
                        .split(',')
                        .map(|c| c.trim().parse().map_err(|_| err(format!("bad channel `{c}`"))))
                        .collect::<Result<_>>()?
                }
                "kernel" => cfg.kernel = v.parse().map_err(|_| err(format!("bad kernel `{v}`")))?,
                "activation" => cfg.activation = Activation::parse(v).ok_or_else(|| err(format!("bad activation `{v}`")))?,
                "pool" => {
                    cfg.pool = v
                        .split(',')
                        .map(|c| c.trim().parse().map_err(|_| err(format!("bad pool flag `{c}`"))))
                        .collect::<Result<_>>()?
                }
                "front_gain" => cfg.front_gain = v.parse().map_err(|_| err(format!("bad front_gain `{v}`")))?,
                "target_tap" => cfg.target_tap = v.to_string(),
                other => return Err(err(format!("unknown architecture key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Scalar the gradient routines differentiate.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    /// Logit of the stego class.
    StegoLogit,
    Logit(usize),
    /// Softmax cross-entropy against `target` (0 = cover, 1 = stego).
    Loss { target: usize },
    /// `Σ weights ⊙ y` over the activations of `tap`.
    TapLinear { tap: &'a str, weights: &'a [f64] },
}

/// Cached activations of one forward pass: `acts[0]` is the input,
/// `acts[i + 1]` the output of layer `i`.
#[derive(Clone, Debug)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.acts.last().expect("non-empty trace")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Option<ArchConfig>,
    layers: Vec<Layer>,
    params: Vec<f64>,
    /// Tap name and activation index.
    taps: Vec<(String, usize)>,
    target_tap: String,
    input_shape: Shape,
}

/// Builder for arbitrary layer stacks (used for the standard family and for
/// small analytic models).
pub struct ModelBuilder {
    layers: Vec<Layer>,
    shape: Shape,
    input_shape: Shape,
    params: usize,
    taps: Vec<(String, usize)>,
}

impl ModelBuilder {
    pub fn new(input_shape: Shape) -> Self {
        Self { layers: Vec::new(), shape: input_shape, input_shape, params: 0, taps: vec![(INPUT_TAP.into(), 0)] }
    }

    pub fn layer(mut self, kind: LayerKind) -> Self {
        let out = kind.output_shape(self.shape);
        let count = kind.param_count();
        self.layers.push(Layer { kind, in_shape: self.shape, out_shape: out, param_offset: self.params });
        self.params += count;
        self.shape = out;
        self
    }

    /// Registers the current output as a named tap.
    pub fn tap(mut self, name: &str) -> Self {
        self.taps.push((name.to_string(), self.layers.len()));
        self
    }

    pub fn current_shape(&self) -> Shape {
        self.shape
    }

    /// Finishes with a `logits` tap on the last layer; params start at zero.
    pub fn finish(mut self, target_tap: &str) -> Result<Model> {
        if numel(self.shape) != 2 {
            return Err(Error::InvalidConfig(format!("model must end in 2 logits, got shape {:?}", self.shape)));
        }
        if !self.taps.iter().any(|(n, _)| n == LOGITS_TAP) {
            self.taps.push((LOGITS_TAP.into(), self.layers.len()));
        }
        if !self.taps.iter().any(|(n, _)| n == target_tap) {
            return Err(Error::UnknownTap(target_tap.into()));
        }
        Ok(Model {
            arch: None,
            layers: self.layers,
            params: vec![0.0; self.params],
            taps: self.taps,
            target_tap: target_tap.into(),
            input_shape: self.input_shape,
        })
    }
}

/// Builds the standard family: `[0,1]` scaling, fixed KV high-pass, blocks of
/// conv → activation → optional pooling, global average pooling, affine head.
pub fn build_model(arch: &ArchConfig, seed: u64) -> Result<Model> {
    arch.validate()?;
    let n = arch.input_size;
    let mut b = ModelBuilder::new([1, n, n])
        .layer(LayerKind::Scale(1.0 / 255.0))
        .layer(LayerKind::FixedConv { kernel: kv_kernel().iter().map(|v| v * arch.front_gain).collect(), k: 5 });
    let mut cin = 1;
    for (i, (&cout, &pool)) in arch.channels.iter().zip(&arch.pool).enumerate() {
        b = b.layer(LayerKind::Conv { cin, cout, k: arch.kernel }).layer(LayerKind::Act(arch.activation));
        if pool {
            b = b.layer(LayerKind::AvgPool2);
        }
        b = b.tap(&format!("block{}", i + 1));
        cin = cout;
    }
    b = b.layer(LayerKind::GlobalAvgPool).tap(FEATURES_TAP).layer(LayerKind::Dense { nin: cin, nout: 2 });
    let mut model = b.finish(&arch.target_tap)?;
    model.arch = Some(arch.clone());
    model.init_params(seed);
    Ok(model)
}

impl Model {
    /// Fan-in-scaled uniform initialization; biases start at zero.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = Rng::new(seed);
        for layer in &self.layers {
            let (fan_in, weights) = match layer.kind {
                LayerKind::Conv { cin, cout, k } => (cin * k * k, cout * cin * k * k),
                LayerKind::Dense { nin, nout } => (nin, nout * nin),
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let p = &mut self.params[layer.param_offset..layer.param_offset + layer.kind.param_count()];
            for (i, v) in p.iter_mut().enumerate() {
                *v = if i < weights { bound * (2.0 * rng.uniform() - 1.0) } else { 0.0 };
            }
        }
    }

    pub fn arch(&self) -> Option<&ArchConfig> {
        self.arch.as_ref()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        numel(self.input_shape)
    }

    pub fn target_tap(&self) -> &str {
        &self.target_tap
    }

    pub fn set_target_tap(&mut self, tap: &str) -> Result<()> {
        self.tap_index(tap)?;
        self.target_tap = tap.into();
        if let Some(a) = self.arch.as_mut() {
            a.target_tap = tap.into();
        }
        Ok(())
    }

    pub fn tap_names(&self) -> Vec<&str> {
        self.taps.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Activation index of a tap.
    pub fn tap_index(&self, tap: &str) -> Result<usize> {
        self.taps.iter().find(|(n, _)| n == tap).map(|&(_, i)| i).ok_or_else(|| Error::UnknownTap(tap.into()))
    }

    pub fn shape_at(&self, act_index: usize) -> Shape {
        if act_index == 0 {
            self.input_shape
        } else {
            self.layers[act_index - 1].out_shape
        }
    }

    pub fn tap_shape(&self, tap: &str) -> Result<Shape> {
        Ok(self.shape_at(self.tap_index(tap)?))
    }

    pub fn output_index(&self) -> usize {
        self.layers.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len() {
            return Err(Error::ShapeMismatch(format!("model expects {} inputs, got {}", self.input_len(), x.len())));
        }
        Ok(())
    }

    pub fn image_input(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let [_, h, w] = self.input_shape;
        if img.width() != w || img.height() != h {
            return Err(Error::ShapeMismatch(format!(
                "model expects {}x{} images, got {}x{}",
                w,
                h,
                img.width(),
                img.height()
            )));
        }
        Ok(img.to_f64())
    }

    /// Forward pass up to activation index `until`, optionally adding
    /// `offset` to the activations at index `inject.0`.
    pub fn trace_until(&self, x: &[f64], until: usize, inject: Option<(usize, &[f64])>) -> Result<Trace> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(until + 1);
        let mut first = x.to_vec();
        if let Some((0, off)) = inject {
            first.iter_mut().zip(off).for_each(|(a, b)| *a += b);
        }
        acts.push(first);
        for (i, layer) in self.layers[..until].iter().enumerate() {
            let mut out = Vec::new();
            layer.forward(&self.params, &acts[i], &mut out);
            if let Some((j, off)) = inject {
                if j == i + 1 {
                    out.iter_mut().zip(off).for_each(|(a, b)| *a += b);
                }
            }
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.trace_until(x, self.layers.len(), None)
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; 2]> {
        let t = self.trace(x)?;
        let l = t.logits();
        Ok([l[0], l[1]])
    }

    /// Activations of `tap` for a real-valued input.
    pub fn tap_activations(&self, x: &[f64], tap: &str) -> Result<ValueGrid> {
        let idx = self.tap_index(tap)?;
        let t = self.trace_until(x, idx, None)?;
        Ok(ValueGrid::new(self.shape_at(idx).to_vec(), t.acts[idx].clone()))
    }

    /// Reverse pass: seeds `∂s/∂acts[from]` and propagates down to `acts[to]`.
    /// Parameter gradients of layers in between accumulate into `param_grad`.
    pub fn backward(
        &self,
        trace: &Trace,
        from: usize,
        seed: Vec<f64>,
        to: usize,
        mut param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let mut g = seed;
        for i in (to..from).rev() {
            g = self.layers[i].backward(&self.params, &trace.acts[i], &g, param_grad.as_deref_mut());
        }
        g
    }

    /// Activation index at which the objective is seeded, and the seed.
    fn objective_seed(&self, objective: &Objective<'_>, trace: &Trace) -> Result<(usize, Vec<f64>)> {
        let out = self.output_index();
        Ok(match *objective {
            Objective::StegoLogit => (out, vec![0.0, 1.0]),
            Objective::Logit(k) => {
                let mut s = vec![0.0, 0.0];
                *s.get_mut(k).ok_or_else(|| Error::InvalidConfig(format!("logit index {k}")))? = 1.0;
                (out, s)
            }
            Objective::Loss { target } => (out, cross_entropy_grad(trace.logits(), target).to_vec()),
            Objective::TapLinear { tap, weights } => {
                let idx = self.tap_index(tap)?;
                if weights.len() != numel(self.shape_at(idx)) {
                    return Err(Error::ShapeMismatch(format!(
                        "tap `{tap}` has {} activations, weights have {}",
                        numel(self.shape_at(idx)),
                        weights.len()
                    )));
                }
                (idx, weights.to_vec())
            }
        })
    }

    fn objective_depth(&self, objective: &Objective<'_>) -> Result<usize> {
        match objective {
            Objective::TapLinear { tap, .. } => self.tap_index(tap),
            _ => Ok(self.output_index()),
        }
    }

    /// Value of the objective at `x`.
    pub fn objective_value(&self, x: &[f64], objective: &Objective<'_>) -> Result<f64> {
        let depth = self.objective_depth(objective)?;
        let t = self.trace_until(x, depth, None)?;
        Ok(match *objective {
            Objective::StegoLogit => t.logits()[1],
            Objective::Logit(k) => t.logits()[k],
            Objective::Loss { target } => cross_entropy(t.logits(), target),
            Objective::TapLinear { weights, .. } => t.acts[depth].iter().zip(weights).map(|(a, b)| a * b).sum(),
        })
    }

    /// Gradient of the objective with respect to the activations of `tap`.
    pub fn grad_wrt_tap_real(&self, x: &[f64], tap: &str, objective: &Objective<'_>) -> Result<ValueGrid> {
        let idx = self.tap_index(tap)?;
        let depth = self.objective_depth(objective)?;
        let shape = self.shape_at(idx).to_vec();
        if idx > depth {
            // objective does not depend on deeper activations
            return Ok(ValueGrid::zeros(shape));
        }
        let t = self.trace_until(x, depth, None)?;
        let (from, seed) = self.objective_seed(objective, &t)?;
        Ok(ValueGrid::new(shape, self.backward(&t, from, seed, idx, None)))
    }

    /// Gradient of the objective with respect to the (pixel-unit) input.
    pub fn grad_input_real(&self, x: &[f64], objective: &Objective<'_>) -> Result<Vec<f64>> {
        Ok(self.grad_wrt_tap_real(x, INPUT_TAP, objective)?.data)
    }

    /// Forward pass with a per-activation offset injected at `tap`; used to
    /// finite-difference tap gradients.
    pub fn objective_with_offset(&self, x: &[f64], tap: &str, offset: &[f64], objective: &Objective<'_>) -> Result<f64> {
        let idx = self.tap_index(tap)?;
        let depth = self.objective_depth(objective)?;
        let t = self.trace_until(x, depth, Some((idx, offset)))?;
        Ok(match *objective {
            Objective::StegoLogit => t.logits()[1],
            Objective::Logit(k) => t.logits()[k],
            Objective::Loss { target } => cross_entropy(t.logits(), target),
            Objective::TapLinear { weights, .. } => t.acts[depth].iter().zip(weights).map(|(a, b)| a * b).sum(),
        })
    }

    pub fn verdict_real(&self, x: &[f64]) -> Result<Verdict> {
        Ok(Verdict::from_logits(self.logits(x)?))
    }

    /// Verdict plus every tap's activations.
    pub fn forward(&self, img: &GrayImage) -> Result<(Verdict, Vec<(String, ValueGrid)>)> {
        let x = self.image_input(img)?;
        let t = self.trace(&x)?;
        let taps = self
            .taps
            .iter()
            .map(|(n, i)| (n.clone(), ValueGrid::new(self.shape_at(*i).to_vec(), t.acts[*i].clone())))
            .collect();
        let l = t.logits();
        Ok((Verdict::from_logits([l[0], l[1]]), taps))
    }

    pub fn verdict(&self, img: &GrayImage) -> Result<Verdict> {
        self.verdict_real(&self.image_input(img)?)
    }

    pub fn grad_input(&self, img: &GrayImage, objective: &Objective<'_>) -> Result<Vec<f64>> {
        self.grad_input_real(&self.image_input(img)?, objective)
    }

    pub fn grad_wrt_tap(&self, img: &GrayImage, tap: &str, objective: &Objective<'_>) -> Result<ValueGrid> {
        self.grad_wrt_tap_real(&self.image_input(img)?, tap, objective)
    }
}

/// Two-class softmax computed from the logit difference.
pub fn softmax(logits: &[f64]) -> [f64; 2] {
    let stego = 1.0 / (1.0 + (logits[0] - logits[1]).exp());
    let cover = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
    [cover, stego]
}

/// `∂ cross_entropy / ∂ logits = softmax − onehot`, written as `±p_other` so
/// confident predictions keep full relative precision.
pub fn cross_entropy_grad(logits: &[f64], target: usize) -> [f64; 2] {
    let t = target.min(1);
    let p_other = softmax(logits)[1 - t];
    let mut g = [p_other; 2];
    g[t] = -p_other;
    g
}

/// `softplus(z_other − z_target)`, accurate to full relative precision for
/// tiny losses.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let t = target.min(1);
    let d = logits[1 - t] - logits[t];
    if d > 0.0 {
        d + (-d).exp().ln_1p()
    } else {
        d.exp().ln_1p()
    }
}
