//! Additive embedding costs: HILL and S-UNIWARD, plus wet-cost handling.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{box_mean_mirror, box_sum_mirror, correlate_mirror, correlate_separable_mirror, Plane};
use crate::image::GrayImage;

/// Sentinel cost forbidding a modification direction.
pub const WET: f64 = 1e10;

const COST_MAGIC: &[u8; 8] = b"NATCOST1";

/// Per-pixel costs of a +1 (`rho_plus`) and −1 (`rho_minus`) change.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMap {
    pub width: usize,
    pub height: usize,
    pub rho_plus: Vec<f64>,
    pub rho_minus: Vec<f64>,
}

impl CostMap {
    pub fn uniform(width: usize, height: usize, rho: f64) -> Self {
        Self { width, height, rho_plus: vec![rho; width * height], rho_minus: vec![rho; width * height] }
    }

    /// Symmetric cost map from a single plane, with wet boundary rules of `img` applied.
    pub fn symmetric(img: &GrayImage, plane: Plane) -> Self {
        let rho: Vec<f64> = plane.data.into_iter().map(|v| if v.is_finite() { v.min(WET) } else { WET }).collect();
        let mut map = Self { width: img.width(), height: img.height(), rho_plus: rho.clone(), rho_minus: rho };
        map.apply_wet_boundaries(img);
        map
    }

    pub fn len(&self) -> usize {
        self.rho_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho_plus.is_empty()
    }

    pub fn matches(&self, img: &GrayImage) -> bool {
        self.width == img.width() && self.height == img.height()
    }

    /// Forbids +1 at 255 and −1 at 0.
    pub fn apply_wet_boundaries(&mut self, img: &GrayImage) {
        for (i, &p) in img.pixels().iter().enumerate() {
            if p == 255 {
                self.rho_plus[i] = WET;
            }
            if p == 0 {
                self.rho_minus[i] = WET;
            }
        }
    }

    /// Raw dump: `NATCOST1`, width and height as little-endian u32, then
    /// `rho_plus` and `rho_minus` as little-endian f64 grids.
    pub fn write_raw(&self, mut out: impl Write) -> Result<()> {
        write_raw_header(&mut out, COST_MAGIC, self.width, self.height)?;
        for v in self.rho_plus.iter().chain(&self.rho_minus) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_raw(mut input: impl Read) -> Result<Self> {
        let (width, height) = read_raw_header(&mut input, COST_MAGIC)?;
        let n = width * height;
        let rho_plus = read_f64s(&mut input, n)?;
        let rho_minus = read_f64s(&mut input, n)?;
        Ok(Self { width, height, rho_plus, rho_minus })
    }
}

pub(crate) fn write_raw_header(out: &mut impl Write, magic: &[u8; 8], width: usize, height: usize) -> Result<()> {
    out.write_all(magic)?;
    out.write_all(&(width as u32).to_le_bytes())?;
    out.write_all(&(height as u32).to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_raw_header(input: &mut impl Read, magic: &[u8; 8]) -> Result<(usize, usize)> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..8] != magic {
        return Err(Error::ShapeMismatch("bad raw-grid magic".into()));
    }
    let w = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    Ok((w, h))
}

pub(crate) fn read_f64s(input: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Rejects NaN and negative entries and clamps everything above [`WET`].
pub fn sanitize(mut cost: CostMap) -> Result<CostMap> {
    for (index, v) in cost.rho_plus.iter_mut().chain(cost.rho_minus.iter_mut()).enumerate() {
        if v.is_nan() || *v < 0.0 {
            return Err(Error::InvalidCost { index, value: *v });
        }
        if *v > WET {
            *v = WET;
        }
    }
    Ok(cost)
}

/// Which additive cost function to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    Hill,
    Suniward,
}

impl CostKind {
    pub fn compute(self, img: &GrayImage) -> CostMap {
        match self {
            CostKind::Hill => hill_cost(img),
            CostKind::Suniward => suniward_cost(img),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostKind::Hill => "hill",
            CostKind::Suniward => "suniward",
        }
    }
}

impl std::str::FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hill" => Ok(CostKind::Hill),
            "suniward" | "s-uniward" => Ok(CostKind::Suniward),
            other => Err(Error::InvalidConfig(format!("unknown cost function `{other}`"))),
        }
    }
}

/// HILL high-pass kernel.
pub const HILL_KB: [f64; 9] = [-0.25, 0.5, -0.25, 0.5, -1.0, 0.5, -0.25, 0.5, -0.25];

// Regularizer in the reciprocal of the smoothed residual; a zero residual
// maps to 1e10, which is exactly WET.
const HILL_EPS: f64 = 1e-10;

/// HILL: |KB residual| smoothed by a 3×3 mean, reciprocated, then spread by a
/// 15×15 mean. Mirror padding throughout.
pub fn hill_cost(img: &GrayImage) -> CostMap {
    let x = Plane::from_vec(img.width(), img.height(), img.to_f64());
    let residual = correlate_mirror(&x, &HILL_KB, 3, 3, 1, 1);
    let xi = box_mean_mirror(&residual.map(f64::abs), 3);
    let rho = xi.map(|v| 1.0 / (v + HILL_EPS));
    CostMap::symmetric(img, box_mean_mirror(&rho, 15))
}

/// Daubechies-8 high-pass decomposition filter.
pub const DB8_HPDF: [f64; 16] = [
    -0.05441584224308161,
    0.3128715909144659,
    -0.6756307362980128,
    0.5853546836548691,
    0.015829105256023893,
    -0.2840155429624281,
    -0.00047248457399797254,
    0.128747426620186,
    0.01736930100202211,
    -0.04408825393106472,
    -0.013981027917015516,
    0.008746094047015655,
    0.00487035299301066,
    -0.0003917403729959771,
    -0.0006754494059985568,
    -0.00011747678400228192,
];

/// Daubechies-8 low-pass filter, the quadrature mirror of [`DB8_HPDF`].
pub fn db8_lpdf() -> [f64; 16] {
    let mut lp = [0.0; 16];
    for (n, v) in lp.iter_mut().enumerate() {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        *v = sign * DB8_HPDF[15 - n];
    }
    lp
}

pub const UNIWARD_SIGMA: f64 = 1.0;
/// Each wavelet coefficient reads rows/cols `[u − 7, u + 8]`.
pub const UNIWARD_ANCHOR: usize = 7;

/// The three directional wavelet residuals (LH, HL, HH) of `img`.
pub fn uniward_residuals(img: &GrayImage) -> [Plane; 3] {
    let x = Plane::from_vec(img.width(), img.height(), img.to_f64());
    let lp = db8_lpdf();
    let hp = DB8_HPDF;
    let a = UNIWARD_ANCHOR;
    [
        correlate_separable_mirror(&x, &lp, &hp, a, a),
        correlate_separable_mirror(&x, &hp, &lp, a, a),
        correlate_separable_mirror(&x, &hp, &hp, a, a),
    ]
}

/// Additive S-UNIWARD: a pixel's cost sums `1 / (σ + |W|)` over every
/// directional wavelet coefficient whose 16×16 support covers it.
pub fn suniward_cost(img: &GrayImage) -> CostMap {
    let mut total = Plane::zeros(img.width(), img.height());
    for w in uniward_residuals(img) {
        let xi = w.map(|v| 1.0 / (UNIWARD_SIGMA + v.abs()));
        // coefficient u covers pixels u-7..=u+8, so pixel i is covered by u in i-8..=i+7
        let covered = box_sum_mirror(&xi, 16, 16 - 1 - UNIWARD_ANCHOR);
        for (t, v) in total.data.iter_mut().zip(covered.data) {
            *t += v;
        }
    }
    CostMap::symmetric(img, total)
}
