//! Integrated-gradients attribution to input pixels and to the neurons of a
//! tapped layer, along straight paths `x + offset` between a baseline and an
//! endpoint.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::costs::{read_f64s, read_raw_header, write_raw_header};
use crate::diffnet::{Model, Objective, ValueGrid};
use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const ATTR_MAGIC: &[u8; 8] = b"NATATTR1";

/// Straight path from `x + baseline_offset` to `x + endpoint_offset`
/// (pixel units), sampled at right endpoints `m = 1..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub baseline_offset: f64,
    pub endpoint_offset: f64,
    pub steps: usize,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self::new(50)
    }
}

impl PathSpec {
    /// Baseline `x − 1`, endpoint `x`.
    pub fn new(steps: usize) -> Self {
        Self { baseline_offset: -1.0, endpoint_offset: 0.0, steps }
    }

    /// Baseline `x − 1`, endpoint `x + 1`.
    pub fn symmetric(steps: usize) -> Self {
        Self { baseline_offset: -1.0, endpoint_offset: 1.0, steps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("path needs at least one step".into()));
        }
        if !self.baseline_offset.is_finite() || !self.endpoint_offset.is_finite() || self.baseline_offset == self.endpoint_offset {
            return Err(Error::InvalidConfig("path baseline and endpoint must be finite and differ".into()));
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        let fmt = |o: f64| match o {
            0.0 => "x".to_string(),
            o if o > 0.0 => format!("x+{o}"),
            o => format!("x{o}"),
        };
        format!("{} -> {}, M={}", fmt(self.baseline_offset), fmt(self.endpoint_offset), self.steps)
    }

    /// The path anchored at `x`, with offsets applied everywhere or only where
    /// `region` is set.
    pub fn anchored(&self, x: &[f64], region: Option<&[bool]>) -> Path {
        let shift = |o: f64| -> Vec<f64> {
            match region {
                Some(r) => x.iter().zip(r).map(|(v, &on)| if on { v + o } else { *v }).collect(),
                None => x.iter().map(|v| v + o).collect(),
            }
        };
        Path { baseline: shift(self.baseline_offset), endpoint: shift(self.endpoint_offset), steps: self.steps, tag: self.tag() }
    }
}

/// Explicit straight path `b + (m/M)(e − b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub baseline: Vec<f64>,
    pub endpoint: Vec<f64>,
    pub steps: usize,
    pub tag: String,
}

impl Path {
    pub fn point(&self, m: usize) -> Vec<f64> {
        let t = m as f64 / self.steps as f64;
        self.baseline.iter().zip(&self.endpoint).map(|(b, e)| b + t * (e - b)).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("path needs at least one step".into()));
        }
        if self.baseline.len() != self.endpoint.len() {
            return Err(Error::ShapeMismatch("path baseline and endpoint lengths differ".into()));
        }
        Ok(())
    }
}

/// Per-neuron attribution for one tap, together with the pieces the
/// corruption objective reuses: the path-mean tap gradient and the baseline
/// activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub tap: String,
    pub values: ValueGrid,
    /// `(1/M) Σₘ ∂F/∂y(x_m)`.
    pub mean_grad: ValueGrid,
    /// `y(baseline)`.
    pub baseline_acts: ValueGrid,
    pub baseline_tag: String,
    pub steps: usize,
}

impl AttributionMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.values.data.iter().sum()
    }

    /// Attribution at another activation state under a frozen path-mean
    /// gradient: `(y − y′) ⊙ c`.
    pub fn reevaluate(&self, acts: &ValueGrid) -> Result<ValueGrid> {
        if acts.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("{} activations vs {} attributions", acts.len(), self.len())));
        }
        let data = acts
            .data
            .iter()
            .zip(&self.baseline_acts.data)
            .zip(&self.mean_grad.data)
            .map(|((y, b), c)| (y - b) * c)
            .collect();
        Ok(ValueGrid::new(self.values.shape.clone(), data))
    }

    /// Raw dump: `NATATTR1`, `u32` width, `u32` height (= channels × rows),
    /// then the values row-major as little-endian `f64`.
    pub fn write_raw(&self, mut out: impl Write) -> Result<()> {
        let (c, h, w) = self.values.chw();
        write_raw_header(&mut out, ATTR_MAGIC, w, c * h)?;
        for v in &self.values.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Channel-max projection, affinely normalized to `[0, 255]`.
    pub fn heatmap(&self) -> GrayImage {
        heatmap(&self.values)
    }
}

/// Reads a raw attribution dump as a `(1, height, width)` grid.
pub fn read_raw_attribution(mut input: impl Read) -> Result<ValueGrid> {
    let (w, h) = read_raw_header(&mut input, ATTR_MAGIC)?;
    Ok(ValueGrid::new(vec![1, h, w], read_f64s(&mut input, w * h)?))
}

/// Projects a grid onto its spatial plane by taking the channel maximum, then
/// maps the value range affinely onto `[0, 255]` (a constant grid maps to 0).
pub fn heatmap(grid: &ValueGrid) -> GrayImage {
    let (c, h, w) = grid.chw();
    let plane: Vec<f64> = (0..h * w)
        .map(|i| (0..c).map(|ch| grid.data[ch * h * w + i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let pixels = plane
        .iter()
        .map(|&v| if span > 0.0 { (255.0 * (v - lo) / span).round().clamp(0.0, 255.0) as u8 } else { 0 })
        .collect();
    GrayImage::new(w, h, pixels).expect("shape from grid")
}

/// Folds the `m`-th sample (1-based) into a running mean; a constant
/// sequence leaves the mean bit-identical to that constant.
fn running_mean(mean: &mut [f64], sample: &[f64], m: usize) {
    let inv = 1.0 / m as f64;
    for (a, v) in mean.iter_mut().zip(sample) {
        *a += (v - *a) * inv;
    }
}

/// Integrated gradients of `objective` with respect to input pixels:
/// `(e − b) ⊙ (1/M) Σₘ ∇F(x_m)`.
pub fn input_attribution_path(model: &Model, path: &Path, objective: &Objective<'_>) -> Result<ValueGrid> {
    path.validate()?;
    let mut mean = vec![0.0; path.baseline.len()];
    for m in 1..=path.steps {
        running_mean(&mut mean, &model.grad_input_real(&path.point(m), objective)?, m);
    }
    for ((a, b), e) in mean.iter_mut().zip(&path.baseline).zip(&path.endpoint) {
        *a *= e - b;
    }
    Ok(ValueGrid::new(model.input_shape().to_vec(), mean))
}

pub fn input_attribution_real(model: &Model, x: &[f64], path: &PathSpec, objective: &Objective<'_>) -> Result<ValueGrid> {
    path.validate()?;
    input_attribution_path(model, &path.anchored(x, None), objective)
}

/// Input attribution of the stego logit.
pub fn input_attribution(model: &Model, img: &GrayImage, path: &PathSpec) -> Result<ValueGrid> {
    input_attribution_real(model, &model.image_input(img)?, path, &Objective::StegoLogit)
}

/// Decoupled neuron attribution `(y(e) − y(b)) ⊙ (1/M) Σₘ ∂F/∂y(x_m)`.
pub fn neuron_attribution_path(model: &Model, path: &Path, tap: &str, objective: &Objective<'_>) -> Result<AttributionMap> {
    path.validate()?;
    let shape = model.tap_shape(tap)?.to_vec();
    let n: usize = shape.iter().product();
    let mut mean = vec![0.0; n];
    for m in 1..=path.steps {
        running_mean(&mut mean, &model.grad_wrt_tap_real(&path.point(m), tap, objective)?.data, m);
    }
    let y_end = model.tap_activations(&path.endpoint, tap)?;
    let y_base = model.tap_activations(&path.baseline, tap)?;
    let values = y_end.data.iter().zip(&y_base.data).zip(&mean).map(|((e, b), c)| (e - b) * c).collect();
    Ok(AttributionMap {
        tap: tap.into(),
        values: ValueGrid::new(shape.clone(), values),
        mean_grad: ValueGrid::new(shape, mean),
        baseline_acts: y_base,
        baseline_tag: path.tag.clone(),
        steps: path.steps,
    })
}

pub fn neuron_attribution_real(model: &Model, x: &[f64], tap: &str, path: &PathSpec, objective: &Objective<'_>) -> Result<AttributionMap> {
    path.validate()?;
    neuron_attribution_path(model, &path.anchored(x, None), tap, objective)
}

/// Decoupled neuron attribution of the stego logit.
pub fn neuron_attribution(model: &Model, img: &GrayImage, tap: &str, path: &PathSpec) -> Result<AttributionMap> {
    neuron_attribution_real(model, &model.image_input(img)?, tap, path, &Objective::StegoLogit)
}

/// Coupled estimator `Σₘ ∂F/∂y(x_m) ⊙ (y(x_m) − y(x_{m−1}))`: each path
/// step's gradient multiplies that step's own activation increment. The
/// increments telescope to `y(e) − y(b)`, so the estimator coincides with the
/// decoupled one whenever the tap gradient is constant along the path.
pub fn coupled_neuron_attribution_path(model: &Model, path: &Path, tap: &str, objective: &Objective<'_>) -> Result<AttributionMap> {
    path.validate()?;
    let shape = model.tap_shape(tap)?.to_vec();
    let n: usize = shape.iter().product();
    let y_base = model.tap_activations(&path.baseline, tap)?;
    let mut prev = y_base.data.clone();
    let mut values = vec![0.0; n];
    let mut mean = vec![0.0; n];
    for m in 1..=path.steps {
        let xm = path.point(m);
        let g = model.grad_wrt_tap_real(&xm, tap, objective)?;
        let y = model.tap_activations(&xm, tap)?.data;
        for j in 0..n {
            values[j] += g.data[j] * (y[j] - prev[j]);
        }
        running_mean(&mut mean, &g.data, m);
        prev = y;
    }
    Ok(AttributionMap {
        tap: tap.into(),
        values: ValueGrid::new(shape.clone(), values),
        mean_grad: ValueGrid::new(shape, mean),
        baseline_acts: y_base,
        baseline_tag: format!("{} (coupled)", path.tag),
        steps: path.steps,
    })
}

pub fn coupled_neuron_attribution_real(
    model: &Model,
    x: &[f64],
    tap: &str,
    path: &PathSpec,
    objective: &Objective<'_>,
) -> Result<AttributionMap> {
    path.validate()?;
    coupled_neuron_attribution_path(model, &path.anchored(x, None), tap, objective)
}

pub fn coupled_neuron_attribution(model: &Model, img: &GrayImage, tap: &str, path: &PathSpec) -> Result<AttributionMap> {
    coupled_neuron_attribution_real(model, &model.image_input(img)?, tap, path, &Objective::StegoLogit)
}

/// Pearson correlation of two equally long sequences (0 if either is constant).
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}
