//! Layer kernels with hand-written forward, reverse-mode backward, and
//! parameter-gradient passes. Activations are `(channels, height, width)`
//! grids stored channel-major; vectors are `(n, 1, 1)`.

use serde::{Deserialize, Serialize};

pub type Shape = [usize; 3];

pub fn numel(s: Shape) -> usize {
    s[0] * s[1] * s[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// softplus, `ln(1 + eˣ)`
    SmoothRelu,
    Tanh,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::SmoothRelu => "smooth-relu",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "smooth-relu" | "softplus" => Some(Activation::SmoothRelu),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::SmoothRelu => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::SmoothRelu => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// Multiplies every value by a constant.
    Scale(f64),
    /// Non-trainable single-channel `k × k` correlation, zero padded.
    FixedConv { kernel: Vec<f64>, k: usize },
    /// Trainable `k × k` convolution, zero padded ("same"). Parameters:
    /// weights `[cout][cin][k][k]` then biases `[cout]`.
    Conv { cin: usize, cout: usize, k: usize },
    Act(Activation),
    /// 2×2 average pooling with stride 2 (odd trailing rows/cols dropped).
    AvgPool2,
    GlobalAvgPool,
    /// Fully connected on the flattened input. Parameters: weights
    /// `[nout][nin]` then biases `[nout]`.
    Dense { nin: usize, nout: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub param_offset: usize,
}

impl LayerKind {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv { cin, cout, k } => cout * cin * k * k + cout,
            LayerKind::Dense { nin, nout } => nout * nin + nout,
            _ => 0,
        }
    }

    pub fn output_shape(&self, s: Shape) -> Shape {
        match *self {
            LayerKind::Scale(_) | LayerKind::FixedConv { .. } | LayerKind::Act(_) => s,
            LayerKind::Conv { cout, .. } => [cout, s[1], s[2]],
            LayerKind::AvgPool2 => [s[0], s[1] / 2, s[2] / 2],
            LayerKind::GlobalAvgPool => [s[0], 1, 1],
            LayerKind::Dense { nout, .. } => [nout, 1, 1],
        }
    }
}

/// `out[y][x] += w · inp[y + dy][x + dx]` over the valid region (zero padding).
#[inline]
fn shifted_axpy(out: &mut [f64], inp: &[f64], h: usize, w: usize, dy: isize, dx: isize, wt: f64) {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let o = &mut out[y * w + x0..y * w + x1];
        let i = &inp[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
        for (a, &b) in o.iter_mut().zip(i) {
            *a += wt * b;
        }
    }
}

/// `Σ_y,x g[y][x] · inp[y + dy][x + dx]` over the valid region.
#[inline]
fn shifted_dot(g: &[f64], inp: &[f64], h: usize, w: usize, dy: isize, dx: isize) -> f64 {
    let y0 = (-dy).max(0) as usize;
    let y1 = (h as isize - dy).min(h as isize).max(0) as usize;
    let x0 = (-dx).max(0) as usize;
    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
    let mut s = 0.0;
    if x0 >= x1 {
        return s;
    }
    for y in y0..y1 {
        let sy = (y as isize + dy) as usize;
        let gg = &g[y * w + x0..y * w + x1];
        let i = &inp[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
        s += gg.iter().zip(i).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

impl Layer {
    pub fn forward(&self, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
        let [c, h, w] = self.in_shape;
        out.clear();
        out.resize(numel(self.out_shape), 0.0);
        match &self.kind {
            LayerKind::Scale(f) => {
                for (o, &i) in out.iter_mut().zip(input) {
                    *o = f * i;
                }
            }
            LayerKind::FixedConv { kernel, k } => {
                let half = (*k / 2) as isize;
                for ch in 0..c {
                    let src = &input[ch * h * w..(ch + 1) * h * w];
                    let dst = &mut out[ch * h * w..(ch + 1) * h * w];
                    for a in 0..*k {
                        for b in 0..*k {
                            let wt = kernel[a * k + b];
                            if wt != 0.0 {
                                shifted_axpy(dst, src, h, w, a as isize - half, b as isize - half, wt);
                            }
                        }
                    }
                }
            }
            LayerKind::Conv { cin, cout, k } => {
                let p = &params[self.param_offset..];
                let half = (*k / 2) as isize;
                let plane = h * w;
                for co in 0..*cout {
                    let dst = &mut out[co * plane..(co + 1) * plane];
                    dst.fill(p[cout * cin * k * k + co]);
                    for ci in 0..*cin {
                        let src = &input[ci * plane..(ci + 1) * plane];
                        let base = (co * cin + ci) * k * k;
                        for a in 0..*k {
                            for b in 0..*k {
                                shifted_axpy(dst, src, h, w, a as isize - half, b as isize - half, p[base + a * k + b]);
                            }
                        }
                    }
                }
            }
            LayerKind::Act(act) => {
                for (o, &i) in out.iter_mut().zip(input) {
                    *o = act.apply(i);
                }
            }
            LayerKind::AvgPool2 => {
                let (oh, ow) = (h / 2, w / 2);
                for ch in 0..c {
                    let src = &input[ch * h * w..];
                    for y in 0..oh {
                        for x in 0..ow {
                            let i = 2 * y * w + 2 * x;
                            out[ch * oh * ow + y * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                        }
                    }
                }
            }
            LayerKind::GlobalAvgPool => {
                let plane = h * w;
                for ch in 0..c {
                    out[ch] = input[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64;
                }
            }
            LayerKind::Dense { nin, nout } => {
                let p = &params[self.param_offset..];
                for o in 0..*nout {
                    let row = &p[o * nin..(o + 1) * nin];
                    out[o] = p[nout * nin + o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    /// Given `grad_out = ∂s/∂out`, returns `∂s/∂in`; accumulates `∂s/∂θ`
    /// into `param_grad` when supplied.
    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        grad_out: &[f64],
        param_grad: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let [c, h, w] = self.in_shape;
        let mut gin = vec![0.0; numel(self.in_shape)];
        match &self.kind {
            LayerKind::Scale(f) => {
                for (g, &o) in gin.iter_mut().zip(grad_out) {
                    *g = f * o;
                }
            }
            LayerKind::FixedConv { kernel, k } => {
                let half = (*k / 2) as isize;
                for ch in 0..c {
                    let go = &grad_out[ch * h * w..(ch + 1) * h * w];
                    let gi = &mut gin[ch * h * w..(ch + 1) * h * w];
                    for a in 0..*k {
                        for b in 0..*k {
                            let wt = kernel[a * k + b];
                            if wt != 0.0 {
                                // transpose of the forward shift
                                shifted_axpy(gi, go, h, w, half - a as isize, half - b as isize, wt);
                            }
                        }
                    }
                }
            }
            LayerKind::Conv { cin, cout, k } => {
                let p = &params[self.param_offset..];
                let half = (*k / 2) as isize;
                let plane = h * w;
                for co in 0..*cout {
                    let go = &grad_out[co * plane..(co + 1) * plane];
                    for ci in 0..*cin {
                        let gi = &mut gin[ci * plane..(ci + 1) * plane];
                        let base = (co * cin + ci) * k * k;
                        for a in 0..*k {
                            for b in 0..*k {
                                shifted_axpy(gi, go, h, w, half - a as isize, half - b as isize, p[base + a * k + b]);
                            }
                        }
                    }
                }
                if let Some(pg) = param_grad {
                    let pg = &mut pg[self.param_offset..];
                    for co in 0..*cout {
                        let go = &grad_out[co * plane..(co + 1) * plane];
                        pg[cout * cin * k * k + co] += go.iter().sum::<f64>();
                        for ci in 0..*cin {
                            let src = &input[ci * plane..(ci + 1) * plane];
                            let base = (co * cin + ci) * k * k;
                            for a in 0..*k {
                                for b in 0..*k {
                                    pg[base + a * k + b] += shifted_dot(go, src, h, w, a as isize - half, b as isize - half);
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Act(act) => {
                for ((g, &o), &x) in gin.iter_mut().zip(grad_out).zip(input) {
                    *g = o * act.derivative(x);
                }
            }
            LayerKind::AvgPool2 => {
                let (oh, ow) = (h / 2, w / 2);
                for ch in 0..c {
                    for y in 0..oh {
                        for x in 0..ow {
                            let g = 0.25 * grad_out[ch * oh * ow + y * ow + x];
                            let i = ch * h * w + 2 * y * w + 2 * x;
                            gin[i] += g;
                            gin[i + 1] += g;
                            gin[i + w] += g;
                            gin[i + w + 1] += g;
                        }
                    }
                }
            }
            LayerKind::GlobalAvgPool => {
                let plane = h * w;
                for ch in 0..c {
                    let g = grad_out[ch] / plane as f64;
                    gin[ch * plane..(ch + 1) * plane].fill(g);
                }
            }
            LayerKind::Dense { nin, nout } => {
                let p = &params[self.param_offset..];
                for o in 0..*nout {
                    let g = grad_out[o];
                    if g == 0.0 {
                        continue;
                    }
                    for (gi, &wt) in gin.iter_mut().zip(&p[o * nin..(o + 1) * nin]) {
                        *gi += g * wt;
                    }
                }
                if let Some(pg) = param_grad {
                    let pg = &mut pg[self.param_offset..];
                    for o in 0..*nout {
                        let g = grad_out[o];
                        pg[nout * nin + o] += g;
                        for (pw, &x) in pg[o * nin..(o + 1) * nin].iter_mut().zip(input) {
                            *pw += g * x;
                        }
                    }
                }
            }
        }
        gin
    }
}
