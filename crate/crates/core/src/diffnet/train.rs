use serde::{Deserialize, Serialize};

use super::model::{cross_entropy, cross_entropy_grad, softmax, Model};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::Rng;

/// One labeled input (pixel units, model input layout); label 1 = stego.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub input: Vec<f64>,
    pub label: u8,
}

impl TrainSample {
    pub fn from_image(img: &GrayImage, label: u8) -> Self {
        Self { input: img.to_f64(), label }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Number of cover/stego pairs per minibatch.
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Random flips and quarter turns, shared within a pair.
    pub augment: bool,
    /// Restore the parameters with the best validation accuracy.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_pairs: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            augment: true,
            keep_best: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Accuracy on the (augmented) training samples seen during the epoch.
    pub train_accuracy: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Applies one of the 8 square symmetries (`t` in `0..8`).
pub fn dihedral(x: &[f64], n: usize, t: u8) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..n {
        for c in 0..n {
            let (mut rr, mut cc) = (r, c);
            if t & 1 != 0 {
                cc = n - 1 - cc;
            }
            if t & 2 != 0 {
                rr = n - 1 - rr;
            }
            if t & 4 != 0 {
                std::mem::swap(&mut rr, &mut cc);
            }
            out[r * n + c] = x[rr * n + cc];
        }
    }
    out
}

/// Fraction of samples whose predicted label matches.
pub fn accuracy(model: &Model, samples: &[TrainSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("accuracy over no samples".into()));
    }
    let mut hits = 0usize;
    for s in samples {
        hits += usize::from(model.verdict_real(&s.input)?.label == s.label);
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Adam on mean cross-entropy. `train_set` is laid out as consecutive
/// cover/stego pairs `(2i, 2i + 1)` so each minibatch sees both versions of
/// a cover; an odd trailing sample is trained on alone.
pub fn train(model: &mut Model, train_set: &[TrainSample], val_set: &[TrainSample], cfg: &TrainConfig, rng: &mut Rng) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training set".into()));
    }
    if cfg.batch_pairs == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("batch size and learning rate must be positive".into()));
    }
    let [_, h, w] = model.input_shape();
    let square = h == w;
    let groups: Vec<Vec<usize>> = (0..train_set.len()).step_by(2).map(|i| (i..(i + 2).min(train_set.len())).collect()).collect();

    let np = model.params().len();
    let (mut m1, mut m2) = (vec![0.0; np], vec![0.0; np]);
    let mut grad = vec![0.0; np];
    let mut step = 0i32;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut order: Vec<usize> = (0..groups.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for batch in order.chunks(cfg.batch_pairs) {
            grad.fill(0.0);
            let mut count = 0usize;
            for &g in batch {
                let t = if cfg.augment && square { rng.below(8) as u8 } else { 0 };
                for &i in &groups[g] {
                    let s = &train_set[i];
                    let x = if t == 0 { s.input.clone() } else { dihedral(&s.input, h, t) };
                    let trace = model.trace(&x)?;
                    loss_sum += cross_entropy(trace.logits(), s.label as usize);
                    let p = softmax(trace.logits());
                    hits += usize::from(u8::from(p[1] >= 0.5) == s.label);
                    let seed = cross_entropy_grad(trace.logits(), s.label as usize).to_vec();
                    model.backward(&trace, model.output_index(), seed, 0, Some(&mut grad));
                    count += 1;
                }
            }
            step += 1;
            let inv = 1.0 / count as f64;
            let bc1 = 1.0 - cfg.beta1.powi(step);
            let bc2 = 1.0 - cfg.beta2.powi(step);
            let params = model.params_mut();
            for k in 0..np {
                let g = grad[k] * inv + cfg.weight_decay * params[k];
                m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g;
                m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g * g;
                params[k] -= cfg.learning_rate * (m1[k] / bc1) / ((m2[k] / bc2).sqrt() + 1e-8);
            }
        }
        history.train_loss.push(loss_sum / train_set.len() as f64);
        history.train_accuracy.push(hits as f64 / train_set.len() as f64);
        if !val_set.is_empty() {
            let acc = accuracy(model, val_set)?;
            history.val_accuracy.push(acc);
            if cfg.keep_best && best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.params().to_vec()));
                history.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    Ok(history)
}

/// Trains on paired cover/stego image lists (`covers[i]` pairs with
/// `stegos[i]`), validating on a disjoint paired set.
pub fn train_images(
    model: &mut Model,
    covers: &[GrayImage],
    stegos: &[GrayImage],
    val_covers: &[GrayImage],
    val_stegos: &[GrayImage],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainHistory> {
    if covers.len() != stegos.len() || val_covers.len() != val_stegos.len() {
        return Err(Error::ShapeMismatch("cover and stego lists must pair up".into()));
    }
    let pairs = |c: &[GrayImage], s: &[GrayImage]| -> Result<Vec<TrainSample>> {
        let mut out = Vec::with_capacity(2 * c.len());
        for (a, b) in c.iter().zip(s) {
            out.push(TrainSample { input: model.image_input(a)?, label: 0 });
            out.push(TrainSample { input: model.image_input(b)?, label: 1 });
        }
        Ok(out)
    };
    let train_set = pairs(covers, stegos)?;
    let val_set = pairs(val_covers, val_stegos)?;
    train(model, &train_set, &val_set, cfg, rng)
}
