//! Detection metrics, attack-success accounting and the transfer, retraining
//! and target-layer experiments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, AttackOutcome, CostSource, Method};
use crate::costs::CostKind;
use crate::diffnet::{build_model, train_images, ArchConfig, Model, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rng::{derive_seed, Rng};
use crate::simulator::{embed, Payload};
use crate::synth::{synth_dataset_with, SynthParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Stegos labeled cover, over stegos.
    pub p_md: f64,
    /// Covers labeled stego, over covers.
    pub p_fa: f64,
    pub p_e: f64,
    pub acc: f64,
    pub n_cover: usize,
    pub n_stego: usize,
}

impl EvalReport {
    /// Builds a report from predicted labels (1 = stego) on covers and stegos.
    pub fn from_labels(cover_labels: &[u8], stego_labels: &[u8]) -> Result<Self> {
        if cover_labels.is_empty() || stego_labels.is_empty() {
            return Err(Error::EmptyDataset("evaluation needs covers and stegos".into()));
        }
        let p_fa = cover_labels.iter().filter(|&&l| l == 1).count() as f64 / cover_labels.len() as f64;
        let p_md = stego_labels.iter().filter(|&&l| l == 0).count() as f64 / stego_labels.len() as f64;
        let p_e = (p_md + p_fa) / 2.0;
        Ok(Self { p_md, p_fa, p_e, acc: 1.0 - p_e, n_cover: cover_labels.len(), n_stego: stego_labels.len() })
    }
}

/// Predicted labels, computed on `jobs` threads and returned in input order.
pub fn labels(model: &Model, images: &[GrayImage], jobs: usize) -> Result<Vec<u8>> {
    with_jobs(jobs, || images.par_iter().map(|img| model.verdict(img).map(|v| v.label)).collect())
}

pub fn confusion(model: &Model, covers: &[GrayImage], stegos: &[GrayImage]) -> Result<EvalReport> {
    confusion_jobs(model, covers, stegos, 1)
}

pub fn confusion_jobs(model: &Model, covers: &[GrayImage], stegos: &[GrayImage], jobs: usize) -> Result<EvalReport> {
    EvalReport::from_labels(&labels(model, covers, jobs)?, &labels(model, stegos, jobs)?)
}

pub fn attack_success_rate(outcomes: &[AttackOutcome]) -> Result<f64> {
    success_rate(outcomes.iter().map(|o| o.deceived))
}

pub fn success_rate(deceived: impl ExactSizeIterator<Item = bool>) -> Result<f64> {
    let n = deceived.len();
    if n == 0 {
        return Err(Error::EmptyDataset("no attack outcomes".into()));
    }
    Ok(deceived.filter(|&d| d).count() as f64 / n as f64)
}

/// Runs `f` on a pool of `jobs` threads (the global pool when `jobs == 0`).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Index ranges of the 70/5/25 train/validation/test split.
pub fn split(n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>, std::ops::Range<usize>) {
    let train = (n * 70 + 50) / 100;
    let val = (n * 5 + 50) / 100;
    (0..train, train..train + val, train + val..n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub name: String,
    pub arch: ArchConfig,
    pub seed: u64,
}

/// Everything an experiment needs; all randomness derives from `seed` and
/// `data_seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub covers: usize,
    pub size: usize,
    pub data_seed: u64,
    pub payload: f64,
    pub cost: CostKind,
    pub seed: u64,
    pub target: DetectorSpec,
    pub detectors: Vec<DetectorSpec>,
    pub methods: Vec<Method>,
    pub attack: AttackConfig,
    pub train: TrainConfig,
    /// Attack only the first this-many test covers (all when `None`).
    pub attack_limit: Option<usize>,
    pub jobs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = ArchConfig::default();
        let det = |name: &str, channels: Vec<usize>, seed: u64| DetectorSpec {
            name: name.into(),
            arch: ArchConfig { pool: vec![true; channels.len()], channels, ..arch.clone() },
            seed,
        };
        Self {
            covers: 2000,
            size: 64,
            data_seed: 1,
            payload: 0.4,
            cost: CostKind::Suniward,
            seed: 1,
            target: det("target", vec![8, 8, 8], 11),
            detectors: vec![det("det-a", vec![8, 8, 8], 21), det("det-b", vec![12, 12, 12], 22), det("det-c", vec![8, 8, 8, 8], 23)],
            methods: vec![Method::AdvEmb, Method::NatiasAdv],
            attack: AttackConfig::default(),
            train: TrainConfig::default(),
            attack_limit: None,
            jobs: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.covers < 20 {
            return Err(Error::InvalidConfig("experiments need at least 20 covers".into()));
        }
        Payload::new(self.payload)?;
        self.attack.validate()?;
        self.target.arch.validate()?;
        for d in &self.detectors {
            d.arch.validate()?;
            if d.arch.input_size != self.size {
                return Err(Error::InvalidConfig(format!("detector `{}` expects {} pixels", d.name, d.arch.input_size)));
            }
        }
        if self.target.arch.input_size != self.size {
            return Err(Error::InvalidConfig("target input size differs from the image size".into()));
        }
        Ok(())
    }
}

/// Covers, their conventional stegos, and the split.
pub struct Corpus {
    pub covers: Vec<GrayImage>,
    pub stegos: Vec<GrayImage>,
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

impl Corpus {
    pub fn synthesize(cfg: &ExperimentConfig) -> Result<Self> {
        let covers = synth_dataset_with(cfg.covers, cfg.size, cfg.data_seed, &SynthParams::default())?;
        Self::from_covers(covers, cfg)
    }

    /// Conventional stegos use per-cover seeds derived from `data_seed`.
    pub fn from_covers(covers: Vec<GrayImage>, cfg: &ExperimentConfig) -> Result<Self> {
        let payload = Payload::new(cfg.payload)?;
        let stegos = with_jobs(cfg.jobs, || {
            covers
                .par_iter()
                .enumerate()
                .map(|(i, c)| embed(c, &cfg.cost.compute(c), payload, derive_seed(cfg.data_seed ^ 0x5EED, i as u64)))
                .collect::<Result<Vec<_>>>()
        })?;
        let (train, val, test) = split(covers.len());
        Ok(Self { covers, stegos, train, val, test })
    }

    pub fn test_covers(&self, limit: Option<usize>) -> &[GrayImage] {
        let end = limit.map_or(self.test.end, |l| (self.test.start + l).min(self.test.end));
        &self.covers[self.test.start..end]
    }
}

/// Trains one detector on the corpus' conventional stegos.
pub fn train_detector(spec: &DetectorSpec, corpus: &Corpus, train: &TrainConfig) -> Result<(Model, TrainHistory)> {
    let mut model = build_model(&spec.arch, spec.seed)?;
    let (t, v) = (corpus.train.clone(), corpus.val.clone());
    let hist = train_images(
        &mut model,
        &corpus.covers[t.clone()],
        &corpus.stegos[t],
        &corpus.covers[v.clone()],
        &corpus.stegos[v],
        train,
        &mut Rng::new(derive_seed(spec.seed, 0x7A1)),
    )?;
    Ok((model, hist))
}

/// Attacks every cover with a per-cover seed derived from `seed`; results are
/// in cover order regardless of `jobs`.
#[allow(clippy::too_many_arguments)]
pub fn attack_all(
    method: Method,
    covers: &[GrayImage],
    model: &Model,
    cost: CostKind,
    payload: f64,
    cfg: &AttackConfig,
    seed: u64,
    jobs: usize,
) -> Result<Vec<AttackOutcome>> {
    let payload = Payload::new(payload)?;
    let source = CostSource::Kind(cost);
    with_jobs(jobs, || {
        covers
            .par_iter()
            .enumerate()
            .map(|(i, c)| run_attack(method, c, model, &source, payload, cfg, &mut Rng::new(derive_seed(seed, i as u64))))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub method: String,
    pub target: String,
    pub payload: f64,
    /// Attack success rate on the target (absent for conventional stegos).
    pub asr: Option<f64>,
    /// One report per detector, in [`TransferMatrix::detectors`] order.
    pub cells: Vec<EvalReport>,
}

impl TransferRow {
    pub fn mean_accuracy(&self) -> f64 {
        self.cells.iter().map(|c| c.acc).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub detectors: Vec<String>,
    /// First row holds the conventional stegos; one row per attack follows.
    pub rows: Vec<TransferRow>,
    /// Target-model report on the conventional test stegos.
    pub target_report: EvalReport,
}

impl TransferMatrix {
    /// Mean accuracy change across detectors of each attack row relative to
    /// the conventional row.
    pub fn average_deltas(&self) -> Vec<(String, f64)> {
        let base = self.rows[0].mean_accuracy();
        self.rows[1..].iter().map(|r| (r.method.clone(), r.mean_accuracy() - base)).collect()
    }

    pub fn row(&self, method: &str) -> Option<&TransferRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Header of detector names, one accuracy row per (method, target, payload).
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string(), "target".into(), "payload".into()];
        header.extend(self.detectors.iter().cloned());
        header.push("average".into());
        w.write_record(&header).expect("in-memory csv");
        for r in &self.rows {
            let mut rec = vec![r.method.clone(), r.target.clone(), format!("{}", r.payload)];
            rec.extend(r.cells.iter().map(|c| format!("{:.6}", c.acc)));
            rec.push(format!("{:.6}", r.mean_accuracy()));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Models shared by the experiments: the target and the non-target detectors.
pub struct Zoo {
    pub target: Model,
    pub detectors: Vec<(String, Model)>,
}

impl Zoo {
    pub fn train(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Self> {
        let (target, _) = train_detector(&cfg.target, corpus, &cfg.train)?;
        let detectors = cfg
            .detectors
            .iter()
            .map(|d| train_detector(d, corpus, &cfg.train).map(|(m, _)| (d.name.clone(), m)))
            .collect::<Result<_>>()?;
        Ok(Self { target, detectors })
    }
}

/// Attack outcomes per method, in method order.
pub type MethodOutcomes = Vec<(Method, Vec<AttackOutcome>)>;

/// Detector reports on each attack's stegos (plus the conventional stegos).
pub fn transfer_with(cfg: &ExperimentConfig, corpus: &Corpus, zoo: &Zoo) -> Result<(TransferMatrix, MethodOutcomes)> {
    cfg.validate()?;
    let covers = corpus.test_covers(cfg.attack_limit);
    let n = covers.len();
    let conventional = &corpus.stegos[corpus.test.start..corpus.test.start + n];
    let report = |m: &Model, stegos: &[GrayImage]| confusion_jobs(m, covers, stegos, cfg.jobs);
    let mut rows = vec![TransferRow {
        method: "conventional".into(),
        target: cfg.target.name.clone(),
        payload: cfg.payload,
        asr: None,
        cells: zoo.detectors.iter().map(|(_, m)| report(m, conventional)).collect::<Result<_>>()?,
    }];
    let mut outcomes = Vec::new();
    for &method in &cfg.methods {
        let out = attack_all(method, covers, &zoo.target, cfg.cost, cfg.payload, &cfg.attack, derive_seed(cfg.seed, method as u64), cfg.jobs)?;
        let stegos: Vec<GrayImage> = out.iter().map(|o| o.stego.clone()).collect();
        rows.push(TransferRow {
            method: method.tag().into(),
            target: cfg.target.name.clone(),
            payload: cfg.payload,
            asr: Some(attack_success_rate(&out)?),
            cells: zoo.detectors.iter().map(|(_, m)| report(m, &stegos)).collect::<Result<_>>()?,
        });
        outcomes.push((method, out));
    }
    let matrix = TransferMatrix {
        detectors: zoo.detectors.iter().map(|(n, _)| n.clone()).collect(),
        rows,
        target_report: report(&zoo.target, conventional)?,
    };
    Ok((matrix, outcomes))
}

/// Full transfer experiment: synthesize, train, attack, evaluate.
pub fn transfer_experiment(cfg: &ExperimentConfig) -> Result<TransferMatrix> {
    cfg.validate()?;
    let corpus = Corpus::synthesize(cfg)?;
    let zoo = Zoo::train(cfg, &corpus)?;
    Ok(transfer_with(cfg, &corpus, &zoo)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub method: String,
    pub detector: String,
    /// Adversary-unaware detector on the held-out attack stegos.
    pub unaware: EvalReport,
    /// Detector retrained on cover / attack-stego pairs.
    pub retrained: EvalReport,
}

/// Retrains fresh detectors on attack stegos of the training covers and
/// evaluates them on attack stegos of the test covers. `train_limit` caps how
/// many training covers are attacked.
pub fn retrain_experiment(cfg: &ExperimentConfig, corpus: &Corpus, zoo: &Zoo, train_limit: Option<usize>) -> Result<Vec<RetrainReport>> {
    cfg.validate()?;
    let test_covers = corpus.test_covers(cfg.attack_limit);
    let t_end = train_limit.map_or(corpus.train.end, |l| l.min(corpus.train.end));
    let train_covers = &corpus.covers[..t_end];
    let val_covers = &corpus.covers[corpus.val.clone()];
    let mut reports = Vec::new();
    for &method in &cfg.methods {
        let seed = derive_seed(cfg.seed, 0x4E7 + method as u64);
        let attack = |covers: &[GrayImage], s: u64| -> Result<Vec<GrayImage>> {
            Ok(attack_all(method, covers, &zoo.target, cfg.cost, cfg.payload, &cfg.attack, s, cfg.jobs)?.into_iter().map(|o| o.stego).collect())
        };
        let train_stegos = attack(train_covers, derive_seed(seed, 1))?;
        let val_stegos = attack(val_covers, derive_seed(seed, 2))?;
        let test_stegos = attack(test_covers, derive_seed(cfg.seed, method as u64))?;
        for (spec, (name, unaware)) in cfg.detectors.iter().zip(&zoo.detectors) {
            let mut fresh = build_model(&spec.arch, derive_seed(spec.seed, 0x2E7))?;
            train_images(&mut fresh, train_covers, &train_stegos, val_covers, &val_stegos, &cfg.train, &mut Rng::new(derive_seed(spec.seed, 0x7A2)))?;
            reports.push(RetrainReport {
                method: method.tag().into(),
                detector: name.clone(),
                unaware: confusion_jobs(unaware, test_covers, &test_stegos, cfg.jobs)?,
                retrained: confusion_jobs(&fresh, test_covers, &test_stegos, cfg.jobs)?,
            });
        }
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tap: String,
    /// Activation count of the tap.
    pub feature_size: usize,
    pub asr: f64,
    /// Non-target detector reports on this tap's attack stegos.
    pub transfer: Vec<EvalReport>,
}

/// Runs the natias cost-adjustment attack once per tap.
pub fn layer_ablation(cfg: &ExperimentConfig, corpus: &Corpus, zoo: &Zoo, taps: &[String]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if zoo.target.tap_names().len() < 3 {
        return Err(Error::InvalidConfig("ablation needs a model with at least three taps".into()));
    }
    let covers = corpus.test_covers(cfg.attack_limit);
    let seed = derive_seed(cfg.seed, Method::NatiasAdv as u64);
    taps.iter()
        .map(|tap| {
            let shape = zoo.target.tap_shape(tap)?;
            let attack = AttackConfig { target_tap: Some(tap.clone()), ..cfg.attack.clone() };
            let out = attack_all(Method::NatiasAdv, covers, &zoo.target, cfg.cost, cfg.payload, &attack, seed, cfg.jobs)?;
            let stegos: Vec<GrayImage> = out.iter().map(|o| o.stego.clone()).collect();
            Ok(AblationRow {
                tap: tap.clone(),
                feature_size: shape.iter().product(),
                asr: attack_success_rate(&out)?,
                transfer: zoo.detectors.iter().map(|(_, m)| confusion_jobs(m, covers, &stegos, cfg.jobs)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Mean and standard error of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{LayerKind, ModelBuilder};
    use proptest::prelude::{prop_assert_eq, proptest};

    #[test]
    fn report_examples() {
        let perfect = EvalReport::from_labels(&[0, 0, 0], &[1, 1]).unwrap();
        assert_eq!((perfect.p_md, perfect.p_fa, perfect.p_e, perfect.acc), (0.0, 0.0, 0.0, 1.0));
        let always_cover = EvalReport::from_labels(&[0; 4], &[0; 4]).unwrap();
        assert_eq!((always_cover.p_md, always_cover.p_fa, always_cover.p_e, always_cover.acc), (1.0, 0.0, 0.5, 0.5));
        assert!(EvalReport::from_labels(&[], &[1]).is_err());
    }

    #[test]
    fn fair_coin_detector() {
        let mut rng = Rng::new(12);
        let c: Vec<u8> = (0..10_000).map(|_| rng.below(2) as u8).collect();
        let s: Vec<u8> = (0..10_000).map(|_| rng.below(2) as u8).collect();
        let r = EvalReport::from_labels(&c, &s).unwrap();
        assert!((r.p_e - 0.5).abs() <= 0.015, "{}", r.p_e);
    }

    proptest! {
        #[test]
        fn identities_and_permutation_invariance(
            c in proptest::collection::vec(0u8..2, 1..50),
            s in proptest::collection::vec(0u8..2, 1..50),
            rot in 0usize..50,
        ) {
            let r = EvalReport::from_labels(&c, &s).unwrap();
            prop_assert_eq!(r.p_e, (r.p_md + r.p_fa) / 2.0);
            prop_assert_eq!(r.acc, 1.0 - r.p_e);
            let mut c2 = c.clone();
            c2.rotate_left(rot % c.len());
            let mut s2 = s.clone();
            s2.reverse();
            prop_assert_eq!(EvalReport::from_labels(&c2, &s2).unwrap(), r);
        }
    }

    fn outcome(deceived: bool) -> AttackOutcome {
        let img = GrayImage::filled(2, 2, 0);
        AttackOutcome {
            stego: img.clone(),
            cover_used: img,
            deceived,
            beta_final: 0.0,
            method_tag: "adv-emb".into(),
            scrambles_used: 0,
            candidate_count: 0,
            phi: 0.0,
        }
    }

    #[test]
    fn success_rates() {
        assert_eq!(attack_success_rate(&[outcome(true), outcome(true)]).unwrap(), 1.0);
        assert_eq!(attack_success_rate(&[outcome(false)]).unwrap(), 0.0);
        let mixed = [outcome(true), outcome(false), outcome(true), outcome(true)];
        assert_eq!(attack_success_rate(&mixed).unwrap(), 0.75);
        assert!(attack_success_rate(&[]).is_err());
    }

    #[test]
    fn confusion_is_pure_and_job_independent() {
        let mut m = ModelBuilder::new([1, 4, 4]).layer(LayerKind::Dense { nin: 16, nout: 2 }).finish("logits").unwrap();
        m.params_mut()[16] = 1.0 / 255.0;
        m.params_mut()[33] = -1.0;
        let covers: Vec<GrayImage> = (0..10).map(|i| GrayImage::filled(4, 4, 20 * i as u8)).collect();
        let stegos: Vec<GrayImage> = (0..10).map(|i| GrayImage::filled(4, 4, 255 - 10 * i as u8)).collect();
        let a = confusion(&m, &covers, &stegos).unwrap();
        assert_eq!(a, confusion(&m, &covers, &stegos).unwrap());
        assert_eq!(a, confusion_jobs(&m, &covers, &stegos, 3).unwrap());
    }

    #[test]
    fn split_is_70_5_25() {
        let (t, v, e) = split(2000);
        assert_eq!((t.len(), v.len(), e.len()), (1400, 100, 500));
        let (t, v, e) = split(7);
        assert_eq!(t.len() + v.len() + e.len(), 7);
    }

    #[test]
    fn matrix_csv_layout() {
        let r = EvalReport::from_labels(&[0, 1], &[1, 1]).unwrap();
        let m = TransferMatrix {
            detectors: vec!["a".into(), "b".into()],
            rows: vec![
                TransferRow { method: "conventional".into(), target: "t".into(), payload: 0.4, asr: None, cells: vec![r, r] },
                TransferRow { method: "natias-adv".into(), target: "t".into(), payload: 0.4, asr: Some(0.9), cells: vec![r, r] },
            ],
            target_report: r,
        };
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,target,payload,a,b,average");
        assert_eq!(lines[2], "natias-adv,t,0.4,0.750000,0.750000,0.750000");
        assert_eq!(m.average_deltas(), vec![("natias-adv".to_string(), 0.0)]);
    }

    #[test]
    fn mean_and_standard_error() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((se - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
