//! Adversarial embedding attacks: cost adjustment (ADV-EMB style), cover
//! enhancement (SPS-ENH style) and gradient-guided candidate selection
//! (USGS style), each with a logits-level gradient and a corruption-objective
//! gradient.

use serde::{Deserialize, Serialize};

use crate::attribution::PathSpec;
use crate::costs::{sanitize, CostKind, CostMap, WET};
use crate::diffnet::model::LOGITS_TAP;
use crate::diffnet::{Model, Objective};
use crate::error::{Error, Result};
use crate::filters::{correlate_mirror, Plane};
use crate::image::GrayImage;
use crate::natias::{corruption_gradient_real, corruption_objective_path, COVER_LABEL};
use crate::rng::Rng;
use crate::simulator::{fit_lambda_bits, simulate_embed, simulate_embed_where, Payload, ProbMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AdvEmb,
    NatiasAdv,
    SpsEnh,
    NatiasSps,
    Usgs,
    NatiasUsgs,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::AdvEmb, Method::NatiasAdv, Method::SpsEnh, Method::NatiasSps, Method::Usgs, Method::NatiasUsgs];

    pub fn tag(self) -> &'static str {
        match self {
            Method::AdvEmb => "adv-emb",
            Method::NatiasAdv => "natias-adv",
            Method::SpsEnh => "sps-enh",
            Method::NatiasSps => "natias-sps",
            Method::Usgs => "usgs",
            Method::NatiasUsgs => "natias-usgs",
        }
    }

    pub fn is_natias(self) -> bool {
        matches!(self, Method::NatiasAdv | Method::NatiasSps | Method::NatiasUsgs)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown attack method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub alpha: f64,
    pub beta_step: f64,
    /// Path sample count for neuron attribution.
    pub steps: usize,
    /// Attribution path ends at `x + 1` instead of `x`.
    pub symmetric_path: bool,
    pub lambda_weight: f64,
    /// Tap corrupted by the natias variants; `None` uses the model's target.
    pub target_tap: Option<String>,
    pub tau: f64,
    /// Pixels enhanced per round; `None` means 1% of the image.
    pub sps_k: Option<usize>,
    pub sps_rounds: usize,
    pub max_scrambles: usize,
    pub usgs_candidates: usize,
    pub usgs_fractions: Vec<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta_step: 0.1,
            steps: 50,
            symmetric_path: false,
            lambda_weight: 1.0,
            target_tap: None,
            tau: 0.5,
            sps_k: None,
            sps_rounds: 20,
            max_scrambles: 5,
            usgs_candidates: 5,
            usgs_fractions: vec![0.1, 0.2, 0.3, 0.4, 0.5],
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.alpha > 1.0) || !self.alpha.is_finite() {
            return bad("alpha must be a finite value above 1");
        }
        if !(self.beta_step > 0.0 && self.beta_step <= 1.0) {
            return bad("beta_step must lie in (0, 1]");
        }
        if self.steps == 0 {
            return bad("path steps must be at least 1");
        }
        if !(self.lambda_weight >= 0.0) || !self.lambda_weight.is_finite() {
            return bad("lambda_weight must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad("tau must lie in [0, 1]");
        }
        if self.usgs_fractions.len() < self.usgs_candidates {
            return bad("usgs_fractions needs one entry per candidate");
        }
        if self.usgs_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("usgs_fractions must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn path(&self) -> PathSpec {
        if self.symmetric_path {
            PathSpec::symmetric(self.steps)
        } else {
            PathSpec::new(self.steps)
        }
    }

    /// β values `k · beta_step` for `k = 0, 1, …` up to 1.
    pub fn betas(&self) -> Vec<f64> {
        let n = (1.0 / self.beta_step + 1e-9).floor() as usize;
        (0..=n).map(|k| (k as f64 * self.beta_step).min(1.0)).collect()
    }
}

/// Where per-cover costs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum CostSource {
    Kind(CostKind),
    /// A precomputed map; wet boundaries of the image are applied on use.
    Fixed(CostMap),
}

impl CostSource {
    pub fn costs_for(&self, img: &GrayImage) -> Result<CostMap> {
        match self {
            CostSource::Kind(k) => Ok(k.compute(img)),
            CostSource::Fixed(c) => {
                if !c.matches(img) {
                    return Err(Error::ShapeMismatch("cost map does not match the image".into()));
                }
                let mut c = sanitize(c.clone())?;
                c.apply_wet_boundaries(img);
                Ok(c)
            }
        }
    }
}

impl From<CostKind> for CostSource {
    fn from(k: CostKind) -> Self {
        CostSource::Kind(k)
    }
}

impl From<CostMap> for CostSource {
    fn from(c: CostMap) -> Self {
        CostSource::Fixed(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub stego: GrayImage,
    /// The image the stego was embedded into (the enhanced cover for SPS).
    pub cover_used: GrayImage,
    pub deceived: bool,
    pub beta_final: f64,
    pub method_tag: String,
    pub scrambles_used: usize,
    pub candidate_count: usize,
    /// Target-model stego probability of the returned stego.
    pub phi: f64,
}

/// One JSON-lines record per attacked cover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub cover_id: String,
    pub method: String,
    pub deceived: bool,
    pub beta_final: f64,
    pub phi: f64,
    /// `Σ |stego − cover|` against the original cover.
    pub l1_change_count: u64,
}

impl OutcomeRecord {
    pub fn new(cover_id: &str, cover: &GrayImage, outcome: &AttackOutcome) -> Self {
        let l1 = cover.pixels().iter().zip(outcome.stego.pixels()).map(|(&a, &b)| (a as i32 - b as i32).unsigned_abs() as u64).sum();
        Self {
            cover_id: cover_id.into(),
            method: outcome.method_tag.clone(),
            deceived: outcome.deceived,
            beta_final: outcome.beta_final,
            phi: outcome.phi,
            l1_change_count: l1,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Per-pixel cost scaling: `g < 0` makes +1 cheaper and −1 dearer by `alpha`,
/// `g > 0` the reverse, `g = 0` leaves both; wet costs stay wet.
pub fn adjust_costs(cost: &CostMap, grad: &[f64], alpha: f64) -> Result<CostMap> {
    adjust_costs_where(cost, grad, alpha, |_| true)
}

/// [`adjust_costs`] restricted to pixels selected by `region`.
pub fn adjust_costs_where(cost: &CostMap, grad: &[f64], alpha: f64, region: impl Fn(usize) -> bool) -> Result<CostMap> {
    if grad.len() != cost.len() {
        return Err(Error::ShapeMismatch(format!("{} gradients for {} costs", grad.len(), cost.len())));
    }
    if !(alpha > 1.0) {
        return Err(Error::InvalidConfig(format!("alpha must exceed 1, got {alpha}")));
    }
    // literal `ρ / α` and `ρ · α`; the round trip through `−g` is exact when α is a power of two
    let cheaper = |rho: f64| if rho >= WET { WET } else { rho / alpha };
    let dearer = |rho: f64| if rho >= WET { WET } else { (rho * alpha).min(WET) };
    let mut out = cost.clone();
    for (i, &g) in grad.iter().enumerate() {
        if !region(i) || g == 0.0 {
            continue;
        }
        if g < 0.0 {
            out.rho_plus[i] = cheaper(cost.rho_plus[i]);
            out.rho_minus[i] = dearer(cost.rho_minus[i]);
        } else {
            out.rho_plus[i] = dearer(cost.rho_plus[i]);
            out.rho_minus[i] = cheaper(cost.rho_minus[i]);
        }
    }
    Ok(out)
}

/// Supplies the pixel gradient of the quantity an attack minimizes.
pub trait GradientProvider {
    /// `region` marks the pixels the attribution path offsets (all when `None`).
    fn gradient(&self, model: &Model, point: &[f64], region: Option<&[bool]>) -> Result<Vec<f64>>;
}

/// Gradient of the cross-entropy toward the cover label.
pub struct LogitsGradient;

impl GradientProvider for LogitsGradient {
    fn gradient(&self, model: &Model, point: &[f64], _region: Option<&[bool]>) -> Result<Vec<f64>> {
        model.grad_input_real(point, &Objective::Loss { target: COVER_LABEL })
    }
}

/// Gradient of the corruption objective on a tap, with the attribution
/// recomputed at every call.
pub struct CorruptionGradient {
    pub tap: String,
    pub path: PathSpec,
    pub lambda_weight: f64,
}

impl CorruptionGradient {
    pub fn from_config(model: &Model, cfg: &AttackConfig) -> Result<Self> {
        let tap = cfg.target_tap.clone().unwrap_or_else(|| model.target_tap().to_string());
        model.tap_index(&tap)?;
        Ok(Self { tap, path: cfg.path(), lambda_weight: cfg.lambda_weight })
    }
}

impl GradientProvider for CorruptionGradient {
    fn gradient(&self, model: &Model, point: &[f64], region: Option<&[bool]>) -> Result<Vec<f64>> {
        if self.tap == LOGITS_TAP {
            return LogitsGradient.gradient(model, point, region);
        }
        let path = self.path.anchored(point, region);
        let obj = corruption_objective_path(model, &path, &self.tap, self.lambda_weight)?;
        corruption_gradient_real(model, point, &obj)
    }
}

fn provider(method: Method, model: &Model, cfg: &AttackConfig) -> Result<Box<dyn GradientProvider>> {
    Ok(if method.is_natias() { Box::new(CorruptionGradient::from_config(model, cfg)?) } else { Box::new(LogitsGradient) })
}

/// What one β iteration of the cost-adjustment loop did.
#[derive(Clone, Debug)]
pub struct IterationTrace {
    pub beta: f64,
    /// Pixel indices of the adjustable group.
    pub adjustable: Vec<usize>,
    pub common_stego: GrayImage,
    /// Costs used for the adjustable group (wet outside it).
    pub adjusted_costs: Option<CostMap>,
    pub common_entropy: f64,
    pub adjustable_entropy: f64,
    pub phi: f64,
}

fn embed_bits(img: &GrayImage, cost: &CostMap, bits: f64, seed: u64) -> Result<(GrayImage, ProbMap)> {
    let (_, probs) = fit_lambda_bits(cost, bits)?;
    Ok((simulate_embed(img, &probs, seed), probs))
}

/// The β-scheduled cost-adjustment loop shared by the logits-level and
/// natias variants. `observe` sees every iteration.
#[allow(clippy::too_many_arguments)]
pub fn cost_adjustment_attack(
    cover: &GrayImage,
    model: &Model,
    cost: &CostMap,
    payload: Payload,
    cfg: &AttackConfig,
    rng: &mut Rng,
    gradient: &dyn GradientProvider,
    method_tag: &str,
    observe: &mut dyn FnMut(&IterationTrace),
) -> Result<AttackOutcome> {
    cfg.validate()?;
    if !cost.matches(cover) {
        return Err(Error::ShapeMismatch("cost map does not match the cover".into()));
    }
    let n = cover.len();
    let m = payload.message_bits(n);
    let common_seed = rng.fork_seed();
    let adjust_seed = rng.fork_seed();
    let mut fallback: Option<GrayImage> = None;

    for beta in cfg.betas() {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let n_adj = ((beta * n as f64).round() as usize).min(n);
        let mut adjustable = vec![false; n];
        order[..n_adj].iter().for_each(|&i| adjustable[i] = true);

        let mut common_cost = cost.clone();
        for (i, &adj) in adjustable.iter().enumerate() {
            if adj {
                common_cost.rho_plus[i] = WET;
                common_cost.rho_minus[i] = WET;
            }
        }
        let (z, common_probs) = embed_bits(cover, &common_cost, (1.0 - beta) * m, common_seed)?;
        if fallback.is_none() {
            // β = 0 is the conventional stego
            fallback = Some(z.clone());
        }
        let mut trace = IterationTrace {
            beta,
            adjustable: order[..n_adj].to_vec(),
            common_stego: z.clone(),
            adjusted_costs: None,
            common_entropy: common_probs.total_entropy(),
            adjustable_entropy: 0.0,
            phi: 0.0,
        };
        let stego = if n_adj == 0 {
            z
        } else {
            let zf = z.to_f64();
            let g = gradient.gradient(model, &zf, Some(&adjustable))?;
            let mut adj_cost = adjust_costs_where(cost, &g, cfg.alpha, |i| adjustable[i])?;
            for (i, &adj) in adjustable.iter().enumerate() {
                if !adj {
                    adj_cost.rho_plus[i] = WET;
                    adj_cost.rho_minus[i] = WET;
                }
            }
            adj_cost.apply_wet_boundaries(&z);
            let (_, probs) = fit_lambda_bits(&adj_cost, beta * m)?;
            trace.adjustable_entropy = probs.total_entropy();
            trace.adjusted_costs = Some(adj_cost);
            simulate_embed_where(&z, &probs, adjust_seed, |i| adjustable[i])
        };
        let verdict = model.verdict(&stego)?;
        trace.phi = verdict.phi;
        observe(&trace);
        if verdict.label == 0 {
            return Ok(AttackOutcome {
                cover_used: cover.clone(),
                stego,
                deceived: true,
                beta_final: beta,
                method_tag: method_tag.into(),
                scrambles_used: 0,
                candidate_count: 0,
                phi: verdict.phi,
            });
        }
    }
    let stego = fallback.expect("at least one β iteration");
    let phi = model.verdict(&stego)?.phi;
    Ok(AttackOutcome {
        cover_used: cover.clone(),
        stego,
        deceived: false,
        beta_final: 1.0,
        method_tag: method_tag.into(),
        scrambles_used: 0,
        candidate_count: 0,
        phi,
    })
}

pub fn adv_emb(cover: &GrayImage, model: &Model, cost: &CostSource, payload: Payload, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackOutcome> {
    let c = cost.costs_for(cover)?;
    cost_adjustment_attack(cover, model, &c, payload, cfg, rng, &LogitsGradient, Method::AdvEmb.tag(), &mut |_| {})
}

pub fn natias_adv_emb(cover: &GrayImage, model: &Model, cost: &CostSource, payload: Payload, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackOutcome> {
    let c = cost.costs_for(cover)?;
    let g = CorruptionGradient::from_config(model, cfg)?;
    cost_adjustment_attack(cover, model, &c, payload, cfg, rng, &g, Method::NatiasAdv.tag(), &mut |_| {})
}

/// Indices of the `k` largest `|v|` among entries where `v ≠ 0`, ties broken
/// by lower index.
fn top_k_abs(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Iterative cover enhancement. Each round moves the `k` unmasked pixels with
/// the largest descent direction `−∇L` (evaluated at the current stego) one
/// step along it, re-embeds with the same message seed, and re-draws the seed
/// while the stego probability exceeds `tau`.
#[allow(clippy::too_many_arguments)]
pub fn cover_enhancement_attack(
    cover: &GrayImage,
    model: &Model,
    cost: &CostSource,
    payload: Payload,
    cfg: &AttackConfig,
    rng: &mut Rng,
    gradient: &dyn GradientProvider,
    method_tag: &str,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let n = cover.len();
    let k = cfg.sps_k.unwrap_or_else(|| (n as f64 * 0.01).round() as usize);
    let mut seed = rng.fork_seed();
    let base_cost = cost.costs_for(cover)?;
    let conventional = crate::simulator::embed(cover, &base_cost, payload, seed)?;
    let v0 = model.verdict(&conventional)?;
    let outcome = |stego: GrayImage, cover_used: GrayImage, deceived: bool, scrambles: usize, phi: f64| AttackOutcome {
        stego,
        cover_used,
        deceived,
        beta_final: 0.0,
        method_tag: method_tag.into(),
        scrambles_used: scrambles,
        candidate_count: 0,
        phi,
    };
    if v0.label == 0 {
        return Ok(outcome(conventional, cover.clone(), true, 0, v0.phi));
    }
    let mut enhanced = cover.clone();
    let mut used = vec![false; n];
    let mut stego = conventional.clone();
    let mut scrambles = 0;
    for _ in 0..cfg.sps_rounds {
        let g = gradient.gradient(model, &stego.to_f64(), None)?;
        let descent: Vec<f64> = g.iter().zip(&used).map(|(&d, &u)| if u { 0.0 } else { -d }).collect();
        for i in top_k_abs(&descent, k) {
            let px = &mut enhanced.pixels_mut()[i];
            *px = (*px as i32 + descent[i].signum() as i32).clamp(0, 255) as u8;
            used[i] = true;
        }
        let c = cost.costs_for(&enhanced)?;
        stego = crate::simulator::embed(&enhanced, &c, payload, seed)?;
        let mut v = model.verdict(&stego)?;
        let mut tries = 0;
        while v.phi > cfg.tau && tries < cfg.max_scrambles {
            seed = rng.fork_seed();
            stego = crate::simulator::embed(&enhanced, &c, payload, seed)?;
            v = model.verdict(&stego)?;
            tries += 1;
        }
        scrambles += tries;
        if v.label == 0 {
            return Ok(outcome(stego, enhanced, true, scrambles, v.phi));
        }
    }
    Ok(outcome(conventional, cover.clone(), false, scrambles, v0.phi))
}

pub fn sps_enh(cover: &GrayImage, model: &Model, cost: &CostSource, payload: Payload, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackOutcome> {
    cover_enhancement_attack(cover, model, cost, payload, cfg, rng, &LogitsGradient, Method::SpsEnh.tag())
}

pub fn natias_sps_enh(cover: &GrayImage, model: &Model, cost: &CostSource, payload: Payload, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackOutcome> {
    let g = CorruptionGradient::from_config(model, cfg)?;
    cover_enhancement_attack(cover, model, cost, payload, cfg, rng, &g, Method::NatiasSps.tag())
}

/// Candidate selection: the conventional stego plus one stego per region
/// fraction, where the region holds the pixels with the largest
/// `|g| / (ρ⁺ + ρ⁻)` (gradient taken at the conventional stego). Among
/// candidates the target labels cover, the one closest to the cover in
/// residual distance wins.
#[allow(clippy::too_many_arguments)]
pub fn candidate_selection_attack(
    cover: &GrayImage,
    model: &Model,
    cost: &CostSource,
    payload: Payload,
    cfg: &AttackConfig,
    rng: &mut Rng,
    gradient: &dyn GradientProvider,
    method_tag: &str,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let n = cover.len();
    let seed = rng.fork_seed();
    let base = cost.costs_for(cover)?;
    let (_, probs) = fit_lambda_bits(&base, payload.message_bits(n))?;
    let initial = simulate_embed(cover, &probs, seed);
    let mut candidates = vec![initial.clone()];
    if cfg.usgs_candidates > 0 {
        let g = gradient.gradient(model, &initial.to_f64(), None)?;
        let score: Vec<f64> = (0..n).map(|i| g[i].abs() / (base.rho_plus[i] + base.rho_minus[i])).collect();
        let ranked = top_k_abs(&score, n);
        for &f in &cfg.usgs_fractions[..cfg.usgs_candidates] {
            let size = ((f * n as f64).round() as usize).min(ranked.len());
            let mut region = vec![false; n];
            ranked[..size].iter().for_each(|&i| region[i] = true);
            let adjusted = adjust_costs_where(&base, &g, cfg.alpha, |i| region[i])?;
            let (_, p) = fit_lambda_bits(&adjusted, payload.message_bits(n))?;
            candidates.push(simulate_embed(cover, &p, seed));
        }
    }
    let count = candidates.len();
    let mut best: Option<(f64, usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let v = model.verdict(c)?;
        if v.label != 0 {
            continue;
        }
        let d = residual_distance(cover, c)?;
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, i, v.phi));
        }
    }
    let make = |stego: GrayImage, deceived: bool, phi: f64| AttackOutcome {
        stego,
        cover_used: cover.clone(),
        deceived,
        beta_final: 0.0,
        method_tag: method_tag.into(),
        scrambles_used: 0,
        candidate_count: count,
        phi,
    };
    Ok(match best {
        Some((_, i, phi)) => make(candidates.swap_remove(i), true, phi),
        None => {
            let phi = model.verdict(&initial)?.phi;
            make(initial, false, phi)
        }
    })
}

pub fn usgs(cover: &GrayImage, model: &Model, cost: &CostSource, payload: Payload, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackOutcome> {
    candidate_selection_attack(cover, model, cost, payload, cfg, rng, &LogitsGradient, Method::Usgs.tag())
}

pub fn natias_usgs(cover: &GrayImage, model: &Model, cost: &CostSource, payload: Payload, cfg: &AttackConfig, rng: &mut Rng) -> Result<AttackOutcome> {
    let g = CorruptionGradient::from_config(model, cfg)?;
    candidate_selection_attack(cover, model, cost, payload, cfg, rng, &g, Method::NatiasUsgs.tag())
}

/// Runs `method` on one cover.
pub fn run_attack(
    method: Method,
    cover: &GrayImage,
    model: &Model,
    cost: &CostSource,
    payload: Payload,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let g = provider(method, model, cfg)?;
    let tag = method.tag();
    match method {
        Method::AdvEmb | Method::NatiasAdv => {
            let c = cost.costs_for(cover)?;
            cost_adjustment_attack(cover, model, &c, payload, cfg, rng, g.as_ref(), tag, &mut |_| {})
        }
        Method::SpsEnh | Method::NatiasSps => cover_enhancement_attack(cover, model, cost, payload, cfg, rng, g.as_ref(), tag),
        Method::Usgs | Method::NatiasUsgs => candidate_selection_attack(cover, model, cost, payload, cfg, rng, g.as_ref(), tag),
    }
}

/// A fixed zero-DC filter: row-major taps, size, anchor.
pub struct BankFilter {
    pub taps: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub anchor: (usize, usize),
}

/// KV 5×5 (divided by 12), horizontal and vertical first differences, and
/// the 4-neighbour 3×3 Laplacian.
pub fn default_bank() -> Vec<BankFilter> {
    vec![
        BankFilter { taps: crate::diffnet::model::kv_kernel(), height: 5, width: 5, anchor: (2, 2) },
        BankFilter { taps: vec![-1.0, 1.0], height: 1, width: 2, anchor: (0, 0) },
        BankFilter { taps: vec![-1.0, 1.0], height: 2, width: 1, anchor: (0, 0) },
        BankFilter { taps: vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0], height: 3, width: 3, anchor: (1, 1) },
    ]
}

/// `Σ_f ‖f ⋆ a − f ⋆ b‖₁` over the default bank (mirror padded).
pub fn residual_distance(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    residual_distance_with(a, b, &default_bank())
}

pub fn residual_distance_with(a: &GrayImage, b: &GrayImage, bank: &[BankFilter]) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!("{}x{} vs {}x{}", a.width(), a.height(), b.width(), b.height())));
    }
    // filters are linear, so filter the difference once
    let diff: Vec<f64> = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| x as f64 - y as f64).collect();
    let plane = Plane::from_vec(a.width(), a.height(), diff);
    Ok(bank
        .iter()
        .map(|f| correlate_mirror(&plane, &f.taps, f.height, f.width, f.anchor.0, f.anchor.1).data.iter().map(|v| v.abs()).sum::<f64>())
        .sum())
}

#[cfg(test)]
mod tests;
