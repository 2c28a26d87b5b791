//! Optimization loop, training presets and example assembly.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attribution::{mix, AttributionConfig, ReplacementSet};
use super::loss::{loss_and_grad, Example, LossConfig, Transfer};
use super::model::ModelState;
use crate::corpus::{Corpus, EmbeddingTable, Span};
use crate::error::{Error, Result};
use crate::eval::{f1, F1Score};
use crate::matcher::{AdviceTarget, MatchRecord, Mode};
use crate::scalar::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: ModelState<T>,
    v: ModelState<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(like: &ModelState<T>, lr: T) -> Self {
        Adam {
            lr,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelState<T>, grad: &ModelState<T>) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in params
            .blocks_mut()
            .into_iter()
            .zip(grad.blocks())
            .zip(self.m.blocks_mut())
            .zip(self.v.blocks_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// One weight per class for the classification loss.
    pub class_weights: Vec<f64>,
    pub use_z_weighting: bool,
    pub max_epochs: usize,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Evaluations without improvement before halving the learning rate.
    pub lr_halve_patience: usize,
    pub seed: u64,
    pub attribution: AttributionConfig,
    pub transfer: Transfer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.01,
            lr: 1e-2,
            batch_size: 32,
            class_weights: vec![1.0, 10.0],
            use_z_weighting: true,
            max_epochs: 20,
            eval_every: 10,
            patience: 10,
            lr_halve_patience: 5,
            seed: 0,
            attribution: AttributionConfig::default(),
            transfer: Transfer::None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size and eval_every must be positive".into(),
            ));
        }
        self.loss_config::<f64>().validate(classes)
    }

    pub fn loss_config<T: Scalar>(&self) -> LossConfig<T> {
        LossConfig {
            alpha: T::of(self.alpha),
            class_weights: self.class_weights.iter().map(|&w| T::of(w)).collect(),
            use_z_weighting: self.use_z_weighting,
            attribution: self.attribution,
            transfer: self.transfer,
        }
    }

    /// Name of the run in the training log.
    pub fn run_label(&self) -> &'static str {
        match (self.alpha == 0.0, self.transfer) {
            (_, Transfer::L2 { .. }) => "l2",
            (_, Transfer::Distill { .. }) => "distill",
            (true, Transfer::None) => "fine-tune (C)",
            (false, Transfer::None) => "refine",
        }
    }
}

/// Labeled sentences scored by F1 during training.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet<T> {
    pub ids: Vec<String>,
    pub tokens: Vec<Vec<Vec<T>>>,
    pub gold: Vec<usize>,
}

impl<T: Scalar> LabeledSet<T> {
    /// Every instance of `corpus`; fails on a missing gold label.
    pub fn from_corpus(corpus: &Corpus, table: &EmbeddingTable) -> Result<Self> {
        let mut set = LabeledSet {
            ids: Vec::new(),
            tokens: Vec::new(),
            gold: Vec::new(),
        };
        for inst in corpus {
            let gold = inst.gold_label.ok_or_else(|| {
                Error::Invalid(format!("instance {:?} has no gold label", inst.id))
            })?;
            set.ids.push(inst.id.clone());
            set.tokens.push(table.token_vectors(inst)?);
            set.gold.push(gold);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn predict(&self, model: &ModelState<T>) -> Result<Vec<usize>> {
        self.tokens.par_iter().map(|t| model.predict(t)).collect()
    }

    pub fn f1(&self, model: &ModelState<T>, positive: usize) -> Result<F1Score> {
        f1(&self.predict(model)?, &self.gold, positive)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub run: String,
    pub step: usize,
    pub epoch: usize,
    pub loss: Option<f64>,
    pub loss_cls: Option<f64>,
    pub loss_attr: Option<f64>,
    pub loss_inter: Option<f64>,
    pub loss_transfer: Option<f64>,
    pub dev_f1: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters with the best dev F1 seen, the source model included.
    pub model: ModelState<T>,
    pub best_step: usize,
    pub best_dev_f1: f64,
    pub steps: usize,
    pub log: Vec<TrainLogEntry>,
}

/// Everything `train_refine` reads besides the configuration.
#[derive(Debug, Clone, Copy)]
pub struct TrainInputs<'a, T> {
    pub source: &'a ModelState<T>,
    pub examples: &'a [Example<T>],
    pub dev: &'a LabeledSet<T>,
    pub positive: usize,
    pub baseline: &'a [T],
    pub pool: Option<&'a ReplacementSet<T>>,
}

/// Optimizes from the source parameters and returns the best-dev model.
pub fn train_refine<T: Scalar>(
    inputs: TrainInputs<'_, T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let TrainInputs {
        source,
        examples,
        dev,
        positive,
        baseline,
        pool,
    } = inputs;
    if examples.is_empty() {
        return Err(Error::Invalid("no training examples".into()));
    }
    if dev.is_empty() {
        return Err(Error::Invalid("empty dev set".into()));
    }
    cfg.validate(source.classes)?;
    let loss_cfg = cfg.loss_config::<T>();
    let run = cfg.run_label().to_string();
    let mut model = source.clone();
    let mut adam = Adam::new(&model, T::of(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut best_dev_f1 = dev.f1(&model, positive)?.f1;
    let mut best = model.clone();
    let mut best_step = 0;
    let mut log = vec![TrainLogEntry {
        run: run.clone(),
        step: 0,
        epoch: 0,
        loss: None,
        loss_cls: None,
        loss_attr: None,
        loss_inter: None,
        loss_transfer: None,
        dev_f1: Some(best_dev_f1),
        lr: cfg.lr,
    }];
    info!("{run}: step 0 dev F1 {best_dev_f1:.4}");
    let (mut stale, mut stale_lr) = (0usize, 0usize);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch: Vec<Example<T>> = Vec::with_capacity(cfg.batch_size);
    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (parts, grad) = loss_and_grad(
                &model,
                &batch,
                baseline,
                &loss_cfg,
                Some(source),
                pool,
                mix(cfg.seed ^ step as u64),
            )?;
            let total = parts.total.as_f64();
            if !total.is_finite() || !grad.is_finite() {
                return Err(Error::Diverged { step, loss: total });
            }
            adam.step(&mut model, &grad);
            let mut entry = TrainLogEntry {
                run: run.clone(),
                step,
                epoch,
                loss: Some(total),
                loss_cls: Some(parts.cls.as_f64()),
                loss_attr: Some(parts.attr.as_f64()),
                loss_inter: Some(parts.inter.as_f64()),
                loss_transfer: Some(parts.transfer.as_f64()),
                dev_f1: None,
                lr: adam.lr.as_f64(),
            };
            if step.is_multiple_of(cfg.eval_every) {
                if !model.is_finite() {
                    return Err(Error::Diverged {
                        step,
                        loss: f64::NAN,
                    });
                }
                let score = dev.f1(&model, positive)?.f1;
                entry.dev_f1 = Some(score);
                info!("{run}: step {step} loss {total:.5} dev F1 {score:.4}");
                if score > best_dev_f1 {
                    best_dev_f1 = score;
                    best = model.clone();
                    best_step = step;
                    stale = 0;
                    stale_lr = 0;
                } else {
                    stale += 1;
                    stale_lr += 1;
                    if stale_lr >= cfg.lr_halve_patience {
                        adam.lr /= T::of(2.0);
                        stale_lr = 0;
                    }
                }
                log.push(entry);
                if stale >= cfg.patience {
                    info!("{run}: stopping after {stale} evaluations without improvement");
                    break 'epochs;
                }
            } else {
                log.push(entry);
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_step,
        best_dev_f1,
        steps: step,
        log,
    })
}

/// Named training configurations: which match mode supplies noisy labels,
/// which supplies advice, and which penalty ties the model to its source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "R_soft")]
    RSoft,
    #[serde(rename = "R_soft+C_strict")]
    RSoftCStrict,
    #[serde(rename = "R_soft+C_soft")]
    RSoftCSoft,
    #[serde(rename = "C_strict-only")]
    CStrictOnly,
    #[serde(rename = "C_soft-only")]
    CSoftOnly,
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "distill")]
    Distill,
}

pub const DEFAULT_TRANSFER_LAMBDA: f64 = 0.1;

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::RSoft,
        Preset::RSoftCStrict,
        Preset::RSoftCSoft,
        Preset::CStrictOnly,
        Preset::CSoftOnly,
        Preset::L2,
        Preset::Distill,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::RSoft => "R_soft",
            Preset::RSoftCStrict => "R_soft+C_strict",
            Preset::RSoftCSoft => "R_soft+C_soft",
            Preset::CStrictOnly => "C_strict-only",
            Preset::CSoftOnly => "C_soft-only",
            Preset::L2 => "l2",
            Preset::Distill => "distill",
        }
    }

    /// Match mode whose records (plus balanced negatives) give labels.
    pub fn label_source(&self) -> Option<Mode> {
        match self {
            Preset::RSoft => None,
            Preset::RSoftCStrict | Preset::CStrictOnly | Preset::L2 | Preset::Distill => {
                Some(Mode::Strict)
            }
            Preset::RSoftCSoft | Preset::CSoftOnly => Some(Mode::Soft),
        }
    }

    /// Match mode whose records give regularization advice.
    pub fn advice_source(&self) -> Option<Mode> {
        match self {
            Preset::RSoft | Preset::RSoftCStrict | Preset::RSoftCSoft => Some(Mode::Soft),
            _ => None,
        }
    }

    /// Adjusts `cfg` to the preset, keeping unrelated settings.
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if self.advice_source().is_none() {
            cfg.alpha = 0.0;
        }
        cfg.transfer = match (self, cfg.transfer) {
            (Preset::L2, Transfer::L2 { lambda }) | (Preset::L2, Transfer::Distill { lambda }) => {
                Transfer::L2 { lambda }
            }
            (Preset::L2, Transfer::None) => Transfer::L2 {
                lambda: DEFAULT_TRANSFER_LAMBDA,
            },
            (Preset::Distill, Transfer::L2 { lambda })
            | (Preset::Distill, Transfer::Distill { lambda }) => Transfer::Distill { lambda },
            (Preset::Distill, Transfer::None) => Transfer::Distill {
                lambda: DEFAULT_TRANSFER_LAMBDA,
            },
            _ => Transfer::None,
        };
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim();
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(key))
            .ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!(
                    "unknown preset {key:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

fn advice_key(a: &AdviceTarget) -> (Vec<Span>, usize) {
    match a {
        AdviceTarget::Attr { span, class, .. } => (vec![*span], *class),
        AdviceTarget::Inter { spans, class, .. } => (spans.to_vec(), *class),
    }
}

/// Merges label records and advice records into one example per instance,
/// in corpus order. Later records overwrite earlier ones: labels per
/// instance, advice targets per (spans, class); overwrites that change a
/// value are logged.
pub fn build_examples<T: Scalar>(
    corpus: &Corpus,
    table: &EmbeddingTable,
    label_records: &[MatchRecord],
    advice_records: &[MatchRecord],
) -> Result<Vec<Example<T>>> {
    struct Merged {
        label: Option<(usize, f64)>,
        advice: BTreeMap<(Vec<Span>, usize), AdviceTarget>,
    }
    let mut merged: HashMap<&str, Merged> = HashMap::new();
    let slot = |id: &str| -> Result<()> {
        if corpus.get(id).is_none() {
            return Err(Error::Invalid(format!(
                "matched instance {id:?} not in corpus"
            )));
        }
        Ok(())
    };
    for r in label_records {
        slot(&r.instance_id)?;
        let m = merged
            .entry(r.instance_id.as_str())
            .or_insert_with(|| Merged {
                label: None,
                advice: BTreeMap::new(),
            });
        if let Some((old, _)) = m.label {
            if old != r.label {
                warn!(
                    "instance {:?}: label {} from rule {:?} replaces label {old}",
                    r.instance_id, r.label, r.rule_id
                );
            }
        }
        m.label = Some((r.label, r.z));
    }
    for r in advice_records {
        slot(&r.instance_id)?;
        let m = merged
            .entry(r.instance_id.as_str())
            .or_insert_with(|| Merged {
                label: None,
                advice: BTreeMap::new(),
            });
        for a in &r.advice {
            if let Some(old) = m.advice.insert(advice_key(a), a.clone()) {
                if old.target() != a.target() {
                    warn!(
                        "instance {:?}: advice {a:?} from rule {:?} replaces {old:?}",
                        r.instance_id, r.rule_id
                    );
                }
            }
        }
    }
    let mut out = Vec::with_capacity(merged.len());
    for inst in corpus {
        let Some(m) = merged.remove(inst.id.as_str()) else {
            continue;
        };
        if m.label.is_none() && m.advice.is_empty() {
            continue;
        }
        out.push(Example {
            instance_id: inst.id.clone(),
            tokens: table.token_vectors(inst)?,
            label: m.label.map(|(y, _)| y),
            z: T::of(m.label.map_or(1.0, |(_, z)| z)),
            advice: m.advice.into_values().collect(),
        });
    }
    Ok(out)
}
