//! Critical-neuron selection and the corruption objective built on a frozen
//! neuron attribution.

use serde::{Deserialize, Serialize};

use crate::attribution::{neuron_attribution_path, AttributionMap, Path, PathSpec};
use crate::diffnet::model::LOGITS_TAP;
use crate::diffnet::{Model, Objective, ValueGrid};
use crate::error::{Error, Result};

/// Label the corruption objective pushes toward at the degenerate logits tap.
pub const COVER_LABEL: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuronMask {
    pub selected: Vec<bool>,
    pub threshold: f64,
}

impl NeuronMask {
    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn all(n: usize) -> Self {
        Self { selected: vec![true; n], threshold: 0.0 }
    }
}

/// Median with the two middle values averaged for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Selects neurons with `|A| > median(|A|)`; if none qualify, `|A| ≥` the
/// median.
pub fn critical_mask_values(a: &[f64]) -> NeuronMask {
    let mags: Vec<f64> = a.iter().map(|v| v.abs()).collect();
    let t = median(&mags);
    let mut selected: Vec<bool> = mags.iter().map(|&m| m > t).collect();
    if !selected.iter().any(|&s| s) {
        selected = mags.iter().map(|&m| m >= t).collect();
    }
    NeuronMask { selected, threshold: t }
}

pub fn critical_mask(a: &AttributionMap) -> NeuronMask {
    critical_mask_values(&a.values.data)
}

fn check_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b} entries")));
    }
    Ok(())
}

/// `Σ_{j ∈ mask} A_j` over an attribution evaluated at the candidate.
pub fn attribution_loss(a_at_point: &[f64], mask: &NeuronMask) -> Result<f64> {
    check_len("attribution loss", a_at_point.len(), mask.selected.len())?;
    Ok(a_at_point.iter().zip(&mask.selected).filter(|(_, &s)| s).map(|(a, _)| a).sum())
}

/// `Σ A ⊙ y`.
pub fn feature_loss(a: &[f64], y_at_point: &[f64]) -> Result<f64> {
    check_len("feature loss", a.len(), y_at_point.len())?;
    Ok(a.iter().zip(y_at_point).map(|(a, y)| a * y).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionObjective {
    pub attribution: AttributionMap,
    pub mask: NeuronMask,
    pub lambda_weight: f64,
}

impl CorruptionObjective {
    pub fn new(attribution: AttributionMap, lambda_weight: f64) -> Result<Self> {
        if !(lambda_weight >= 0.0) || !lambda_weight.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda weight must be finite and ≥ 0, got {lambda_weight}")));
        }
        let mask = critical_mask(&attribution);
        Ok(Self { attribution, mask, lambda_weight })
    }

    /// Per-activation weights `w` with `L(y) = w · y + const` under the frozen
    /// path-mean gradient: `w_j = mask_j · c_j + λ · A_j`.
    pub fn tap_weights(&self) -> Vec<f64> {
        let a = &self.attribution;
        a.mean_grad
            .data
            .iter()
            .zip(&a.values.data)
            .zip(&self.mask.selected)
            .map(|((&c, &av), &s)| {
                let masked = if s { c } else { 0.0 };
                masked + self.lambda_weight * av
            })
            .collect()
    }

    /// `L_att + λ · L_fea` at the activation state `y`.
    pub fn total_loss(&self, y: &ValueGrid) -> Result<f64> {
        let att = attribution_loss(&self.attribution.reevaluate(y)?.data, &self.mask)?;
        let fea = feature_loss(&self.attribution.values.data, &y.data)?;
        Ok(total_loss(att, fea, self.lambda_weight))
    }
}

pub fn total_loss(attribution_loss: f64, feature_loss: f64, lambda_weight: f64) -> f64 {
    attribution_loss + lambda_weight * feature_loss
}

/// Builds the corruption objective for image `x`: decoupled neuron attribution
/// of the stego logit along `path`, then the median mask.
pub fn corruption_objective(model: &Model, x: &[f64], tap: &str, path: &PathSpec, lambda_weight: f64) -> Result<CorruptionObjective> {
    path.validate()?;
    corruption_objective_path(model, &path.anchored(x, None), tap, lambda_weight)
}

pub fn corruption_objective_path(model: &Model, path: &Path, tap: &str, lambda_weight: f64) -> Result<CorruptionObjective> {
    let a = if tap == LOGITS_TAP {
        // unused by the degenerate logits-tap gradient; skip the path integral
        let shape = model.tap_shape(tap)?.to_vec();
        AttributionMap {
            tap: tap.into(),
            values: ValueGrid::zeros(shape.clone()),
            mean_grad: ValueGrid::zeros(shape.clone()),
            baseline_acts: ValueGrid::zeros(shape),
            baseline_tag: path.tag.clone(),
            steps: path.steps,
        }
    } else {
        neuron_attribution_path(model, path, tap, &Objective::StegoLogit)?
    };
    CorruptionObjective::new(a, lambda_weight)
}

/// Pixel gradient of the total loss with the path-mean factor held constant.
/// At the logits tap the objective degenerates to the cross-entropy toward the
/// cover label, so the attack reduces to its logits-level counterpart.
pub fn corruption_gradient_real(model: &Model, x: &[f64], obj: &CorruptionObjective) -> Result<Vec<f64>> {
    let tap = obj.attribution.tap.as_str();
    if tap == LOGITS_TAP {
        return model.grad_input_real(x, &Objective::Loss { target: COVER_LABEL });
    }
    let w = obj.tap_weights();
    model.grad_input_real(x, &Objective::TapLinear { tap, weights: &w })
}

pub fn corruption_gradient(model: &Model, img: &crate::image::GrayImage, obj: &CorruptionObjective) -> Result<Vec<f64>> {
    corruption_gradient_real(model, &model.image_input(img)?, obj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{build_model, Activation, ArchConfig, LayerKind, ModelBuilder};
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn selected(m: &NeuronMask) -> Vec<usize> {
        (0..m.selected.len()).filter(|&i| m.selected[i]).collect()
    }

    #[test]
    fn median_mask_examples() {
        let m = critical_mask_values(&[3.0, -1.0, 0.5, -2.0]);
        assert_eq!(m.threshold, 1.5);
        assert_eq!(selected(&m), vec![0, 3]);
        let m = critical_mask_values(&[1.0; 4]);
        assert_eq!(selected(&m), vec![0, 1, 2, 3]);
        let m = critical_mask_values(&[0.0, 0.0, 5.0, -5.0]);
        assert_eq!(m.threshold, 2.5);
        assert_eq!(selected(&m), vec![2, 3]);
    }

    #[test]
    fn loss_arithmetic() {
        let mask = NeuronMask { selected: vec![true, true, false], threshold: 0.0 };
        assert_eq!(attribution_loss(&[2.0, -3.0, 1.0], &mask).unwrap(), -1.0);
        let empty = NeuronMask { selected: vec![false; 3], threshold: 0.0 };
        assert_eq!(attribution_loss(&[2.0, -3.0, 1.0], &empty).unwrap(), 0.0);
        assert_eq!(attribution_loss(&[1.0; 3], &NeuronMask::all(3)).unwrap(), 3.0);
        assert!(attribution_loss(&[1.0; 2], &NeuronMask::all(3)).is_err());

        assert_eq!(feature_loss(&[2.0, -1.0], &[0.5, 3.0]).unwrap(), -2.0);
        assert_eq!(feature_loss(&[2.0, -1.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(feature_loss(&[0.0, 0.0], &[4.0, 9.0]).unwrap(), 0.0);

        assert_eq!(total_loss(1.0, -2.0, 1.0), -1.0);
        assert_eq!(total_loss(1.0, -2.0, 0.0), 1.0);
        assert_eq!(total_loss(1.0, -2.0, 2.0) - total_loss(1.0, -2.0, 1.0), -2.0);
    }

    fn model() -> Model {
        let arch = ArchConfig { input_size: 16, channels: vec![3, 4, 4], activation: Activation::SmoothRelu, ..ArchConfig::default() };
        build_model(&arch, 31).unwrap()
    }

    fn input(seed: u64) -> Vec<f64> {
        let mut rng = Rng::new(seed);
        (0..256).map(|_| rng.below(256) as f64).collect()
    }

    fn negated(obj: &CorruptionObjective) -> CorruptionObjective {
        let mut n = obj.clone();
        n.attribution.values.data.iter_mut().for_each(|v| *v = -*v);
        n.attribution.mean_grad.data.iter_mut().for_each(|v| *v = -*v);
        n
    }

    #[test]
    fn zero_attribution_gives_zero_gradient_and_sign_flips() {
        let m = model();
        let x = input(1);
        let obj = corruption_objective(&m, &x, "block2", &PathSpec::new(4), 1.0).unwrap();
        let g = corruption_gradient_real(&m, &x, &obj).unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
        let gn = corruption_gradient_real(&m, &x, &negated(&obj)).unwrap();
        assert!(g.iter().zip(&gn).all(|(a, b)| *a == -*b));

        let mut zero = obj.clone();
        zero.attribution.values.data.fill(0.0);
        zero.attribution.mean_grad.data.fill(0.0);
        assert!(corruption_gradient_real(&m, &x, &zero).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences_of_total_loss() {
        let m = model();
        for seed in 0..3 {
            let x = input(seed);
            for tap in ["block1", "block3", "features"] {
                let obj = corruption_objective(&m, &x, tap, &PathSpec::new(5), 0.7).unwrap();
                let g = corruption_gradient_real(&m, &x, &obj).unwrap();
                let loss = |z: &[f64]| obj.total_loss(&m.tap_activations(z, tap).unwrap()).unwrap();
                let h = 1e-5;
                for i in (0..256).step_by(7) {
                    let (mut p, mut q) = (x.clone(), x.clone());
                    p[i] += h;
                    q[i] -= h;
                    let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                    assert!((g[i] - fd).abs() <= 1e-5 * g[i].abs().max(fd.abs()) + 1e-9, "{tap} {i}: {} vs {fd}", g[i]);
                }
            }
        }
    }

    #[test]
    fn affine_tap_gradient_is_weighted_jacobian_rows() {
        // y = W x (Dense tap), so ∇ₓ(w · y) = Wᵀ w
        let mut m = ModelBuilder::new([1, 2, 2])
            .layer(LayerKind::Dense { nin: 4, nout: 3 })
            .tap("block1")
            .layer(LayerKind::Dense { nin: 3, nout: 2 })
            .finish("block1")
            .unwrap();
        let mut rng = Rng::new(2);
        m.params_mut().iter_mut().for_each(|p| *p = rng.uniform() - 0.5);
        let x = vec![10.0, 20.0, 30.0, 40.0];
        let obj = corruption_objective(&m, &x, "block1", &PathSpec::new(3), 1.0).unwrap();
        let w = obj.tap_weights();
        let g = corruption_gradient_real(&m, &x, &obj).unwrap();
        let wmat = &m.params()[..12];
        for i in 0..4 {
            let want: f64 = (0..3).map(|j| wmat[j * 4 + i] * w[j]).sum();
            assert!((g[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_suppresses_positive_and_amplifies_negative() {
        let mut m = ModelBuilder::new([1, 2, 2])
            .layer(LayerKind::Dense { nin: 4, nout: 4 })
            .tap("block1")
            .layer(LayerKind::Dense { nin: 4, nout: 2 })
            .finish("block1")
            .unwrap();
        // tap = identity, head weights of mixed sign
        let p = m.params_mut();
        for j in 0..4 {
            p[j * 4 + j] = 1.0;
        }
        p[20 + 4..20 + 8].copy_from_slice(&[1.0, -2.0, 0.5, -0.25]);
        let x = vec![50.0, 60.0, 70.0, 80.0];
        let obj = corruption_objective(&m, &x, "block1", &PathSpec::new(2), 1.0).unwrap();
        let g = corruption_gradient_real(&m, &x, &obj).unwrap();
        let z: Vec<f64> = x.iter().zip(&g).map(|(v, d)| v - 1e-3 * d).collect();
        let (y0, y1) = (m.tap_activations(&x, "block1").unwrap(), m.tap_activations(&z, "block1").unwrap());
        for j in 0..4 {
            if !obj.mask.selected[j] {
                continue;
            }
            let a = obj.attribution.values.data[j];
            if a > 0.0 {
                assert!(y1.data[j] < y0.data[j]);
            } else if a < 0.0 {
                assert!(y1.data[j] > y0.data[j]);
            }
        }
    }

    #[test]
    fn logits_tap_uses_loss_gradient() {
        let m = model();
        let x = input(3);
        let obj = corruption_objective(&m, &x, "logits", &PathSpec::new(4), 1.0).unwrap();
        assert_eq!(
            corruption_gradient_real(&m, &x, &obj).unwrap(),
            m.grad_input_real(&x, &Objective::Loss { target: COVER_LABEL }).unwrap()
        );
    }

    proptest! {
        #[test]
        fn mask_cardinality_bounds(a in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let mut mags: Vec<f64> = a.iter().map(|v| v.abs()).collect();
            mags.sort_by(f64::total_cmp);
            mags.dedup();
            prop_assume!(mags.len() == a.len());
            let n = a.len();
            let k = critical_mask_values(&a).count();
            prop_assert!(k + 1 >= n.div_ceil(2) && k <= n, "n={} k={}", n, k);
        }

        #[test]
        fn total_loss_is_linear_in_lambda(att in -10.0f64..10.0, fea in -10.0f64..10.0, l in 0.0f64..5.0) {
            let d = total_loss(att, fea, l + 1.0) - total_loss(att, fea, l);
            prop_assert!((d - fea).abs() < 1e-12);
        }
    }
}
