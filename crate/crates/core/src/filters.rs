//! Real-valued planes and mirror-padded 2-D filtering.

/// A real-valued 2-D grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane data length");
        Self { width, height, data }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Half-sample symmetric reflection (edge sample repeated), valid for any offset.
pub fn mirror_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - 1 - m;
    }
    m as usize
}

/// Copies `plane` into a larger buffer with `pad` mirrored samples on each side.
pub fn pad_mirror(plane: &Plane, pad: usize) -> Plane {
    let w = plane.width + 2 * pad;
    let h = plane.height + 2 * pad;
    let mut data = Vec::with_capacity(w * h);
    for r in 0..h {
        let sr = mirror_index(r as isize - pad as isize, plane.height);
        for c in 0..w {
            let sc = mirror_index(c as isize - pad as isize, plane.width);
            data.push(plane.data[sr * plane.width + sc]);
        }
    }
    Plane { width: w, height: h, data }
}

/// Mirror-padded correlation: `out(r, c) = Σ k(a, b) · x(r + a − anchor_r, c + b − anchor_c)`.
pub fn correlate_mirror(
    plane: &Plane,
    kernel: &[f64],
    kh: usize,
    kw: usize,
    anchor_r: usize,
    anchor_c: usize,
) -> Plane {
    assert_eq!(kernel.len(), kh * kw);
    let pad = kh.max(kw);
    let padded = pad_mirror(plane, pad);
    let mut out = Plane::zeros(plane.width, plane.height);
    for r in 0..plane.height {
        for a in 0..kh {
            let pr = r + pad + a - anchor_r;
            let row = &padded.data[pr * padded.width..(pr + 1) * padded.width];
            for b in 0..kw {
                let k = kernel[a * kw + b];
                if k == 0.0 {
                    continue;
                }
                let start = pad + b - anchor_c;
                let src = &row[start..start + plane.width];
                let dst = &mut out.data[r * plane.width..(r + 1) * plane.width];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
    out
}

/// Separable mirror-padded correlation with a row filter (applied along
/// columns, i.e. vertically) and a column filter (horizontally).
pub fn correlate_separable_mirror(
    plane: &Plane,
    vertical: &[f64],
    horizontal: &[f64],
    anchor_v: usize,
    anchor_h: usize,
) -> Plane {
    let pad = vertical.len().max(horizontal.len());
    let padded = pad_mirror(plane, pad);
    let (pw, w, h) = (padded.width, plane.width, plane.height);
    // horizontal pass over every padded row, restricted to output columns
    let mut tmp = vec![0.0; padded.height * w];
    for r in 0..padded.height {
        let row = &padded.data[r * pw..(r + 1) * pw];
        let dst = &mut tmp[r * w..(r + 1) * w];
        for (b, &k) in horizontal.iter().enumerate() {
            let start = pad + b - anchor_h;
            for (d, &s) in dst.iter_mut().zip(&row[start..start + w]) {
                *d += k * s;
            }
        }
    }
    let mut out = Plane::zeros(w, h);
    for r in 0..h {
        let dst = &mut out.data[r * w..(r + 1) * w];
        for (a, &k) in vertical.iter().enumerate() {
            let sr = r + pad + a - anchor_v;
            for (d, &s) in dst.iter_mut().zip(&tmp[sr * w..(sr + 1) * w]) {
                *d += k * s;
            }
        }
    }
    out
}

/// Mirror-padded `size × size` moving sum; the window spans
/// `[r − anchor, r − anchor + size)` in each direction.
pub fn box_sum_mirror(plane: &Plane, size: usize, anchor: usize) -> Plane {
    let ones = vec![1.0; size];
    correlate_separable_mirror(plane, &ones, &ones, anchor, anchor)
}

/// Mirror-padded centred `size × size` mean (odd `size`).
pub fn box_mean_mirror(plane: &Plane, size: usize) -> Plane {
    let norm = 1.0 / (size * size) as f64;
    box_sum_mirror(plane, size, size / 2).map(|v| v * norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_reflects_with_edge_repeat() {
        let idx: Vec<usize> = (-4..8).map(|i| mirror_index(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0]);
        // offsets larger than the plane wrap around repeatedly
        assert_eq!(mirror_index(-9, 2), mirror_index(-9 + 4 * 3, 2));
    }

    #[test]
    fn separable_matches_dense_correlation() {
        let plane = Plane::from_vec(7, 5, (0..35).map(|v| ((v * 37) % 11) as f64).collect());
        let v = [1.0, -2.0, 0.5, 3.0];
        let h = [0.25, 1.0, -1.0];
        let mut dense = vec![0.0; 12];
        for a in 0..4 {
            for b in 0..3 {
                dense[a * 3 + b] = v[a] * h[b];
            }
        }
        let s = correlate_separable_mirror(&plane, &v, &h, 1, 2);
        let d = correlate_mirror(&plane, &dense, 4, 3, 1, 2);
        for (x, y) in s.data.iter().zip(&d.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn box_mean_of_constant_is_constant() {
        let plane = Plane::from_vec(5, 5, vec![3.0; 25]);
        let m = box_mean_mirror(&plane, 15);
        assert!(m.data.iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }
}
