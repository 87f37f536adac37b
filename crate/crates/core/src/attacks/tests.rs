use super::*;
use crate::diffnet::{build_model, ArchConfig, LayerKind, ModelBuilder};
use crate::simulator::embed;
use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
use crate::rng::Rng;

/// Detector whose verdict ignores the image: logits `(bias0, bias1)`.
fn constant_model(bias0: f64, bias1: f64) -> Model {
    let mut m = ModelBuilder::new([1, 16, 16])
        .layer(LayerKind::GlobalAvgPool)
        .tap("features")
        .layer(LayerKind::Dense { nin: 1, nout: 2 })
        .finish("features")
        .unwrap();
    m.params_mut()[2] = bias0;
    m.params_mut()[3] = bias1;
    m
}

fn cover() -> GrayImage {
    let mut rng = Rng::new(77);
    GrayImage::from_fn(16, 16, |r, c| (40 + 6 * r + 3 * c + rng.below(30)) as u8)
}

fn payload() -> Payload {
    Payload::new(0.4).unwrap()
}

fn small_cfg() -> AttackConfig {
    AttackConfig { steps: 4, beta_step: 0.25, ..AttackConfig::default() }
}

#[test]
fn adjustment_table() {
    let c = CostMap { width: 3, height: 1, rho_plus: vec![4.0; 3], rho_minus: vec![4.0; 3] };
    let a = adjust_costs(&c, &[-1.0, 0.0, 0.3], 2.0).unwrap();
    assert_eq!(a.rho_plus, vec![2.0, 4.0, 8.0]);
    assert_eq!(a.rho_minus, vec![8.0, 4.0, 2.0]);
    let wet = CostMap { width: 1, height: 1, rho_plus: vec![WET], rho_minus: vec![WET] };
    let a = adjust_costs(&wet, &[-1.0], 2.0).unwrap();
    assert_eq!((a.rho_plus[0], a.rho_minus[0]), (WET, WET));
    assert!(adjust_costs(&c, &[1.0; 2], 2.0).is_err());
    assert!(adjust_costs(&c, &[1.0; 3], 1.0).is_err());
}

proptest! {
    #[test]
    fn opposite_gradient_restores_costs(
        rho in proptest::collection::vec(0.001f64..1e3, 1..20),
        signs in proptest::collection::vec(-1i8..=1, 20),
    ) {
        let n = rho.len();
        let c = CostMap { width: n, height: 1, rho_plus: rho.clone(), rho_minus: rho.iter().map(|r| r * 1.5).collect() };
        let g: Vec<f64> = signs[..n].iter().map(|&s| s as f64 * 0.7).collect();
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let back = adjust_costs(&adjust_costs(&c, &g, 2.0).unwrap(), &neg, 2.0).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn trivially_fooled_detector_returns_conventional_stego_at_beta_zero() {
    let model = constant_model(5.0, 0.0);
    let cost = CostSource::Kind(CostKind::Hill);
    let cfg = small_cfg();
    let a = adv_emb(&cover(), &model, &cost, payload(), &cfg, &mut Rng::new(3)).unwrap();
    let b = natias_adv_emb(&cover(), &model, &cost, payload(), &cfg, &mut Rng::new(3)).unwrap();
    assert!(a.deceived && b.deceived);
    assert_eq!(a.beta_final, 0.0);
    assert_eq!(a.stego, b.stego);
    let seed = Rng::new(3).fork_seed();
    let conventional = embed(&cover(), &CostKind::Hill.compute(&cover()), payload(), seed).unwrap();
    assert_eq!(a.stego, conventional);
}

#[test]
fn unfoolable_detector_falls_back_to_conventional_stego() {
    let model = constant_model(0.0, 50.0);
    let cost = CostSource::Kind(CostKind::Hill);
    let cfg = small_cfg();
    let seed = Rng::new(4).fork_seed();
    let conventional = embed(&cover(), &CostKind::Hill.compute(&cover()), payload(), seed).unwrap();
    for m in Method::ALL {
        let out = run_attack(m, &cover(), &model, &cost, payload(), &cfg, &mut Rng::new(4)).unwrap();
        assert!(!out.deceived, "{m:?}");
        assert_eq!(out.stego, conventional, "{m:?}");
        assert_eq!(out.method_tag, m.tag());
    }
}

struct ZeroGradient;

impl GradientProvider for ZeroGradient {
    fn gradient(&self, model: &Model, _point: &[f64], _region: Option<&[bool]>) -> Result<Vec<f64>> {
        Ok(vec![0.0; model.input_len()])
    }
}

fn traces(model: &Model, g: &dyn GradientProvider, cost: &CostMap) -> Vec<IterationTrace> {
    let mut out = Vec::new();
    cost_adjustment_attack(&cover(), model, cost, payload(), &small_cfg(), &mut Rng::new(9), g, "t", &mut |t| out.push(t.clone())).unwrap();
    out
}

#[test]
fn zero_objective_keeps_partition_common_stego_and_costs() {
    let model = constant_model(0.0, 50.0);
    let cost = CostKind::Hill.compute(&cover());
    let base = traces(&model, &LogitsGradient, &cost);
    let zero = traces(&model, &ZeroGradient, &cost);
    assert_eq!(base.len(), 5);
    let m = payload().message_bits(256);
    for (a, b) in base.iter().zip(&zero) {
        assert_eq!(a.adjustable, b.adjustable);
        assert_eq!(a.common_stego, b.common_stego);
        if let Some(adj) = &b.adjusted_costs {
            for &i in &b.adjustable {
                let mut want = (cost.rho_plus[i], cost.rho_minus[i]);
                let z = b.common_stego.pixels()[i];
                if z == 255 {
                    want.0 = WET;
                }
                if z == 0 {
                    want.1 = WET;
                }
                assert_eq!((adj.rho_plus[i], adj.rho_minus[i]), want);
            }
        }
        let tol = 2e-3;
        assert!((b.common_entropy + b.adjustable_entropy - m).abs() <= tol, "β={} {} + {}", b.beta, b.common_entropy, b.adjustable_entropy);
    }
}

#[test]
fn deceived_outcomes_are_cover_verdicts_within_one() {
    // linear detector on raw pixels, biased so the cover sits just on the stego side
    let mut model = ModelBuilder::new([1, 16, 16])
        .layer(LayerKind::Scale(1.0 / 255.0))
        .tap("block1")
        .layer(LayerKind::Dense { nin: 256, nout: 2 })
        .finish("block1")
        .unwrap();
    let mut rng = Rng::new(5);
    model.params_mut()[256..512].iter_mut().for_each(|w| *w = rng.normal() * 20.0);
    let cost = CostSource::Kind(CostKind::Hill);
    let l = model.logits(&cover().to_f64()).unwrap();
    model.params_mut()[512] = l[1] - l[0] - 0.05;
    let mut seen = 0;
    for seed in 0..6 {
        for m in [Method::AdvEmb, Method::NatiasAdv, Method::Usgs, Method::NatiasUsgs] {
            let out = run_attack(m, &cover(), &model, &cost, payload(), &small_cfg(), &mut Rng::new(seed)).unwrap();
            assert!(out.candidate_count <= small_cfg().usgs_candidates + 1);
            if out.deceived {
                seen += 1;
                assert_eq!(model.verdict(&out.stego).unwrap().label, 0);
                assert!(out.stego.linf_distance(&cover()) <= 1);
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn sps_enhancement_steps_are_unit_and_k_zero_is_conventional() {
    let arch = ArchConfig { input_size: 16, channels: vec![2, 2, 2], ..ArchConfig::default() };
    let mut model = build_model(&arch, 6).unwrap();
    let np = model.params().len();
    model.params_mut()[np - 1] += 3.0;
    let cost = CostSource::Kind(CostKind::Hill);
    let cfg = AttackConfig { sps_k: Some(3), sps_rounds: 4, max_scrambles: 1, ..small_cfg() };
    for m in [Method::SpsEnh, Method::NatiasSps] {
        let out = run_attack(m, &cover(), &model, &cost, payload(), &cfg, &mut Rng::new(2)).unwrap();
        // each pixel is enhanced at most once, by ±1
        assert!(out.cover_used.linf_distance(&cover()) <= 1);
        assert!(out.cover_used.change_count(&cover()) <= 3 * cfg.sps_rounds);
        assert!(out.stego.linf_distance(&out.cover_used) <= 1);
    }
    let k0 = AttackConfig { sps_k: Some(0), max_scrambles: 0, ..cfg };
    let out = sps_enh(&cover(), &model, &cost, payload(), &k0, &mut Rng::new(2)).unwrap();
    let seed = Rng::new(2).fork_seed();
    assert_eq!(out.cover_used, cover());
    assert_eq!(out.stego, embed(&cover(), &CostKind::Hill.compute(&cover()), payload(), seed).unwrap());
}

#[test]
fn usgs_without_candidates_is_identity_selection() {
    let model = constant_model(5.0, 0.0);
    let cfg = AttackConfig { usgs_candidates: 0, ..small_cfg() };
    let out = usgs(&cover(), &model, &CostSource::Kind(CostKind::Hill), payload(), &cfg, &mut Rng::new(8)).unwrap();
    assert_eq!(out.candidate_count, 1);
    let seed = Rng::new(8).fork_seed();
    assert_eq!(out.stego, embed(&cover(), &CostKind::Hill.compute(&cover()), payload(), seed).unwrap());
}

#[test]
fn residual_distance_properties() {
    let a = cover();
    assert_eq!(residual_distance(&a, &a).unwrap(), 0.0);
    let mut b = a.clone();
    let px = &mut b.pixels_mut()[8 * 16 + 8];
    *px += 1;
    // |KV|/12 sums to 8, each difference to 2, the Laplacian to 8
    assert!((residual_distance(&a, &b).unwrap() - 20.0).abs() < 1e-12);
    let shift = |img: &GrayImage| GrayImage::from_fn(16, 16, |r, c| img.get(r, c) + 7);
    let d = residual_distance(&a, &b).unwrap();
    assert!((residual_distance(&shift(&a), &shift(&b)).unwrap() - d).abs() < 1e-9);
    assert!(residual_distance(&a, &GrayImage::filled(8, 8, 0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn residual_distance_is_symmetric_and_nonnegative(s1 in any::<u64>(), s2 in any::<u64>()) {
        let mut r1 = Rng::new(s1);
        let mut r2 = Rng::new(s2);
        let a = GrayImage::from_fn(12, 12, |_, _| r1.below(256) as u8);
        let b = GrayImage::from_fn(12, 12, |_, _| r2.below(256) as u8);
        let d = residual_distance(&a, &b).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - residual_distance(&b, &a).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn config_validation_and_records() {
    assert!(AttackConfig { alpha: 1.0, ..AttackConfig::default() }.validate().is_err());
    assert!(AttackConfig { beta_step: 0.0, ..AttackConfig::default() }.validate().is_err());
    assert!(AttackConfig { usgs_candidates: 6, ..AttackConfig::default() }.validate().is_err());
    assert_eq!(AttackConfig::default().betas().len(), 11);
    assert_eq!(*AttackConfig::default().betas().last().unwrap(), 1.0);
    assert_eq!("natias-adv".parse::<Method>().unwrap(), Method::NatiasAdv);

    let c = cover();
    let mut s = c.clone();
    s.pixels_mut()[0] += 1;
    s.pixels_mut()[1] -= 1;
    let out = AttackOutcome {
        stego: s,
        cover_used: c.clone(),
        deceived: true,
        beta_final: 0.3,
        method_tag: "natias-adv".into(),
        scrambles_used: 0,
        candidate_count: 0,
        phi: 0.25,
    };
    let line = OutcomeRecord::new("img7", &c, &out).to_json_line();
    assert_eq!(line, r#"{"cover_id":"img7","method":"natias-adv","deceived":true,"beta_final":0.3,"phi":0.25,"l1_change_count":2}"#);
}
