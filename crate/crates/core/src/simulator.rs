//! Distortion-minimization embedding simulator.
//!
//! Costs become ±1 change probabilities through the Gibbs distribution
//! `π± = e^(−λρ±) / (1 + e^(−λρ⁺) + e^(−λρ⁻))`, with λ fitted so the total
//! ternary entropy equals the message length. Changes are then sampled
//! independently per pixel.

use crate::costs::{CostMap, WET};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::pixel_uniform;

pub const LOG2_3: f64 = 1.584_962_500_721_156_3;
pub const MAX_BISECTIONS: usize = 200;
const LAMBDA_LO: f64 = 1e-8;

/// Returned as λ when nothing is embedded.
pub const LAMBDA_EMPTY: f64 = f64::INFINITY;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub width: usize,
    pub height: usize,
    pub p_plus: Vec<f64>,
    pub p_minus: Vec<f64>,
}

impl ProbMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, p_plus: vec![0.0; width * height], p_minus: vec![0.0; width * height] }
    }

    pub fn total_entropy(&self) -> f64 {
        self.p_plus.iter().zip(&self.p_minus).map(|(&p, &m)| ternary_entropy(p, m)).sum()
    }
}

/// Embedding rate in bits per pixel, within `[0, log₂3]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Payload(f64);

impl Payload {
    pub fn new(bits_per_pixel: f64) -> Result<Self> {
        if !(0.0..=LOG2_3).contains(&bits_per_pixel) {
            return Err(Error::InvalidConfig(format!("payload {bits_per_pixel} bpp outside [0, log2 3]")));
        }
        Ok(Self(bits_per_pixel))
    }

    pub fn bpp(self) -> f64 {
        self.0
    }

    /// Message length `round(bpp · n)` for an `n`-pixel carrier.
    pub fn message_bits(self, pixels: usize) -> f64 {
        (self.0 * pixels as f64).round()
    }
}

fn xlog2x(p: f64) -> f64 {
    if p > 0.0 {
        p * p.log2()
    } else {
        0.0
    }
}

/// Entropy in bits of the ternary change distribution `(p₊, p₋, 1 − p₊ − p₋)`.
pub fn ternary_entropy(p_plus: f64, p_minus: f64) -> f64 {
    let p0 = (1.0 - p_plus - p_minus).max(0.0);
    -(xlog2x(p_plus) + xlog2x(p_minus) + xlog2x(p0))
}

/// Gibbs probabilities for one pixel. Wet directions get exactly 0.
fn gibbs(rho_plus: f64, rho_minus: f64, lambda: f64) -> (f64, f64) {
    let ep = if rho_plus >= WET { 0.0 } else { (-lambda * rho_plus).exp() };
    let em = if rho_minus >= WET { 0.0 } else { (-lambda * rho_minus).exp() };
    let z = 1.0 + ep + em;
    (ep / z, em / z)
}

pub fn probs_from_costs(cost: &CostMap, lambda: f64) -> ProbMap {
    let mut probs = ProbMap::zeros(cost.width, cost.height);
    for i in 0..cost.len() {
        let (p, m) = gibbs(cost.rho_plus[i], cost.rho_minus[i], lambda);
        probs.p_plus[i] = p;
        probs.p_minus[i] = m;
    }
    probs
}

fn entropy_at(cost: &CostMap, lambda: f64) -> f64 {
    (0..cost.len())
        .map(|i| {
            let (p, m) = gibbs(cost.rho_plus[i], cost.rho_minus[i], lambda);
            ternary_entropy(p, m)
        })
        .sum()
}

/// Maximum embeddable bits: log₂3 per pixel with both directions open, 1 bit
/// per pixel with one open direction.
pub fn capacity(cost: &CostMap) -> f64 {
    cost.rho_plus
        .iter()
        .zip(&cost.rho_minus)
        .map(|(&p, &m)| match (p < WET, m < WET) {
            (true, true) => LOG2_3,
            (true, false) | (false, true) => 1.0,
            (false, false) => 0.0,
        })
        .sum()
}

/// Fits λ so that the summed ternary entropy equals `message_bits`.
pub fn fit_lambda_bits(cost: &CostMap, message_bits: f64) -> Result<(f64, ProbMap)> {
    if message_bits <= 0.0 {
        return Ok((LAMBDA_EMPTY, ProbMap::zeros(cost.width, cost.height)));
    }
    let cap = capacity(cost);
    let tol = (1e-3f64).max(1e-8 * message_bits);
    if message_bits > cap + tol {
        return Err(Error::PayloadInfeasible { requested: message_bits, capacity: cap });
    }
    // entropy decreases in λ; λ → 0 approaches capacity
    let mut lo = LAMBDA_LO;
    let mut shrinks = 0;
    loop {
        let h = entropy_at(cost, lo);
        if (h - message_bits).abs() <= tol {
            return Ok((lo, probs_from_costs(cost, lo)));
        }
        if h > message_bits {
            break;
        }
        // very large finite costs need a smaller λ to reach the payload
        lo *= 1e-4;
        shrinks += 1;
        if shrinks > 60 {
            return Err(Error::PayloadInfeasible { requested: message_bits, capacity: cap });
        }
    }
    let mut hi = 1.0;
    let mut doublings = 0;
    while entropy_at(cost, hi) > message_bits {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BISECTIONS {
            return Err(Error::NoConvergence(MAX_BISECTIONS));
        }
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let h = entropy_at(cost, mid);
        if (h - message_bits).abs() <= tol {
            return Ok((mid, probs_from_costs(cost, mid)));
        }
        if h > message_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence(MAX_BISECTIONS))
}

pub fn fit_lambda(cost: &CostMap, payload: Payload) -> Result<(f64, ProbMap)> {
    fit_lambda_bits(cost, payload.message_bits(cost.len()))
}

/// Samples a stego image: pixel `i` moves +1 when `u < p₊`, −1 when
/// `p₊ ≤ u < p₊ + p₋`, where `u` is the counter-based draw for `(seed, i)`.
pub fn simulate_embed(cover: &GrayImage, probs: &ProbMap, seed: u64) -> GrayImage {
    simulate_embed_where(cover, probs, seed, |_| true)
}

/// Like [`simulate_embed`] but only pixels selected by `mask` may change.
pub fn simulate_embed_where(cover: &GrayImage, probs: &ProbMap, seed: u64, mask: impl Fn(usize) -> bool) -> GrayImage {
    let mut stego = cover.clone();
    for (i, px) in stego.pixels_mut().iter_mut().enumerate() {
        if !mask(i) {
            continue;
        }
        let u = pixel_uniform(seed, i as u64);
        let (p, m) = (probs.p_plus[i], probs.p_minus[i]);
        if u < p {
            *px = px.saturating_add(1);
        } else if u < p + m && *px > 0 {
            *px -= 1;
        }
    }
    stego
}

/// Conventional embedding: fit λ for the payload and sample.
pub fn embed(cover: &GrayImage, cost: &CostMap, payload: Payload, seed: u64) -> Result<GrayImage> {
    let (_, probs) = fit_lambda(cost, payload)?;
    Ok(simulate_embed(cover, &probs, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_closed_forms() {
        assert!((ternary_entropy(1.0 / 3.0, 1.0 / 3.0) - LOG2_3).abs() < 1e-12);
        assert_eq!(ternary_entropy(0.0, 0.0), 0.0);
        assert!((ternary_entropy(0.25, 0.25) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn gibbs_examples() {
        let c = CostMap::uniform(1, 1, 0.0);
        let p = probs_from_costs(&c, 3.7);
        assert!((p.p_plus[0] - 1.0 / 3.0).abs() < 1e-15 && (p.p_minus[0] - 1.0 / 3.0).abs() < 1e-15);

        let c = CostMap { width: 1, height: 1, rho_plus: vec![1.0], rho_minus: vec![2.0] };
        let p = probs_from_costs(&c, std::f64::consts::LN_2);
        // 0.5 / 1.75 and 0.25 / 1.75
        assert!((p.p_plus[0] - 0.285_714_285_714_285_7).abs() < 1e-12);
        assert!((p.p_minus[0] - 0.142_857_142_857_142_85).abs() < 1e-12);

        let c = CostMap { width: 1, height: 1, rho_plus: vec![WET], rho_minus: vec![1.0] };
        let p = probs_from_costs(&c, 1e-3);
        assert_eq!(p.p_plus[0], 0.0);
        assert!(p.p_minus[0] > 0.0);
    }

    #[test]
    fn empty_message_gives_zero_probs() {
        let c = CostMap::uniform(4, 4, 1.0);
        let (lambda, p) = fit_lambda(&c, Payload::new(0.0).unwrap()).unwrap();
        assert_eq!(lambda, LAMBDA_EMPTY);
        assert!(p.p_plus.iter().chain(&p.p_minus).all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_costs_share_one_distribution() {
        let c = CostMap::uniform(64, 64, 1.0);
        let payload = Payload::new(0.4).unwrap();
        let (_, p) = fit_lambda(&c, payload).unwrap();
        let m = payload.message_bits(64 * 64);
        assert!((p.total_entropy() - m).abs() <= 1e-3);
        // m = round(0.4 · 4096) = 1638 bits shared equally
        let h0 = ternary_entropy(p.p_plus[0], p.p_minus[0]);
        assert!((h0 - m / 4096.0).abs() < 1e-6);
        assert!(p.p_plus.iter().all(|&v| v == p.p_plus[0]));
    }

    #[test]
    fn maximal_entropy_on_zero_costs() {
        let c = CostMap::uniform(10, 10, 0.0);
        let (lambda, p) = fit_lambda_bits(&c, 100.0 * LOG2_3).unwrap();
        assert!(lambda <= 1e-7);
        assert!(p.p_plus.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-9));
    }

    #[test]
    fn infeasible_payload_is_rejected() {
        let mut c = CostMap::uniform(2, 2, 1.0);
        c.rho_plus = vec![WET; 4];
        c.rho_minus = vec![WET, WET, WET, 1.0];
        assert!(matches!(fit_lambda_bits(&c, 2.0), Err(Error::PayloadInfeasible { .. })));
    }

    #[test]
    fn entropy_decreases_in_lambda() {
        let mut c = CostMap::uniform(16, 16, 1.0);
        for (i, v) in c.rho_plus.iter_mut().enumerate() {
            *v = 0.1 + (i % 13) as f64;
        }
        c.rho_minus[3] = WET;
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let lambda = 1e-3 * 1.5f64.powi(k);
            let h = entropy_at(&c, lambda);
            assert!(h < prev);
            prev = h;
        }
    }

    #[test]
    fn zero_probs_leave_cover_untouched_and_seed_is_deterministic() {
        let cover = GrayImage::from_fn(16, 16, |r, c| (r * 16 + c) as u8);
        assert_eq!(simulate_embed(&cover, &ProbMap::zeros(16, 16), 5), cover);
        let c = CostMap::uniform(16, 16, 1.0);
        let (_, p) = fit_lambda(&c, Payload::new(0.4).unwrap()).unwrap();
        let a = simulate_embed(&cover, &p, 77);
        assert_eq!(a, simulate_embed(&cover, &p, 77));
        assert_ne!(a, simulate_embed(&cover, &p, 78));
        assert!(a.linf_distance(&cover) <= 1);
    }

    #[test]
    fn wet_directions_never_move() {
        let cover = GrayImage::from_fn(32, 32, |r, _| if r % 2 == 0 { 255 } else { 0 });
        let mut c = CostMap::uniform(32, 32, 1.0);
        c.apply_wet_boundaries(&cover);
        let (_, p) = fit_lambda_bits(&c, 500.0).unwrap();
        for seed in 0..20 {
            let s = simulate_embed(&cover, &p, seed);
            for (a, b) in s.pixels().iter().zip(cover.pixels()) {
                if *b == 255 {
                    assert!(*a >= 254);
                } else {
                    assert!(*a <= 1);
                }
            }
            assert!(s.change_count(&cover) > 0);
        }
    }
}
