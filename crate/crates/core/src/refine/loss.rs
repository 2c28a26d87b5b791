//! Training objective: weighted cross-entropy on noisy labels plus
//! explanation regularization and optional transfer penalties.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::attribution::{mix, AttributionConfig, Context, ReplacementSet, Term};
use super::model::ModelState;
use crate::error::{Error, Result};
use crate::matcher::AdviceTarget;
use crate::scalar::Scalar;

/// Per-example (cls, attr, inter, transfer) losses with optional gradients.
type ExampleTerms<T> = (T, T, T, T, Option<(ModelState<T>, ModelState<T>)>);

/// One training sentence with everything the objective needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub instance_id: String,
    pub tokens: Vec<Vec<T>>,
    /// Noisy label; `None` for sentences that only carry advice.
    pub label: Option<usize>,
    pub z: T,
    pub advice: Vec<AdviceTarget>,
}

/// Penalty keeping the refined model close to the source model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Transfer {
    None,
    /// `lambda * ||theta - theta_source||^2`
    L2 {
        lambda: f64,
    },
    /// `lambda * mean KL(source prediction || model prediction)`
    Distill {
        lambda: f64,
    },
}

impl Transfer {
    pub fn is_none(&self) -> bool {
        matches!(self, Transfer::None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig<T> {
    pub alpha: T,
    pub class_weights: Vec<T>,
    pub use_z_weighting: bool,
    pub attribution: AttributionConfig,
    pub transfer: Transfer,
}

impl<T: Scalar> LossConfig<T> {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if !(self.alpha >= T::zero()) {
            return Err(Error::Config(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if self.class_weights.len() != classes {
            return Err(Error::Config(format!(
                "{} class weights for {classes} classes",
                self.class_weights.len()
            )));
        }
        if self.class_weights.iter().any(|w| !(*w > T::zero())) {
            return Err(Error::Config("class weights must be positive".into()));
        }
        match self.transfer {
            Transfer::L2 { lambda } | Transfer::Distill { lambda } if !(lambda >= 0.0) => {
                return Err(Error::Config(format!(
                    "transfer lambda must be non-negative, got {lambda}"
                )))
            }
            _ => {}
        }
        self.attribution.validate()
    }
}

/// Components of the objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub total: T,
    pub cls: T,
    pub attr: T,
    pub inter: T,
    pub transfer: T,
}

/// Squared distance between the parameters of two equally shaped models.
pub fn l2_transfer_loss<T: Scalar>(model: &ModelState<T>, source: &ModelState<T>) -> Result<T> {
    check_shape(model, source)?;
    Ok(model
        .flat()
        .iter()
        .zip(source.flat())
        .map(|(&a, b)| (a - b) * (a - b))
        .sum())
}

/// `KL(source(x) || model(x))`.
pub fn distill_loss<T: Scalar>(
    model: &ModelState<T>,
    source: &ModelState<T>,
    tokens: &[Vec<T>],
) -> Result<T> {
    check_shape(model, source)?;
    Ok(kl(&source.forward(tokens)?, &model.forward(tokens)?))
}

/// `KL(p || q)`, with `0 ln 0 = 0`.
pub fn kl<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > T::zero())
        .map(|(&a, &b)| a * (a.ln() - b.ln()))
        .sum()
}

fn check_shape<T: Scalar>(model: &ModelState<T>, source: &ModelState<T>) -> Result<()> {
    if !model.same_shape(source) {
        return Err(Error::Invalid(
            "source and refined models differ in shape".into(),
        ));
    }
    Ok(())
}

struct Shared<'a, T> {
    model: &'a ModelState<T>,
    baseline: &'a [T],
    cfg: &'a LossConfig<T>,
    source: Option<&'a ModelState<T>>,
    pool: Option<&'a ReplacementSet<T>>,
    seed: u64,
}

impl<T: Scalar> Shared<'_, T> {
    fn ctx<'b>(&'b self, tokens: &'b [Vec<T>]) -> Context<'b, T> {
        Context {
            model: self.model,
            tokens,
            baseline: self.baseline,
            cfg: &self.cfg.attribution,
            pool: self.pool,
        }
    }

    /// Unnormalized advice losses of one example, with their parameter
    /// gradients when `grad` is given.
    fn advice(
        &self,
        ex: &Example<T>,
        k: usize,
        mut grad: Option<&mut ModelState<T>>,
    ) -> Result<(T, T)> {
        let ctx = self.ctx(&ex.tokens);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ mix(k as u64)));
        let (mut attr, mut inter) = (T::zero(), T::zero());
        let mut terms: Vec<Term<T>> = Vec::new();
        for a in &ex.advice {
            terms.clear();
            match *a {
                AdviceTarget::Attr { span, .. } => {
                    ctx.attribution_terms(span, &[], T::one(), &mut rng, &mut terms)?
                }
                AdviceTarget::Inter { spans, .. } => {
                    ctx.interaction_terms(spans[0], spans[1], &mut rng, &mut terms)?
                }
            }
            let class = a.class();
            if class >= self.model.classes {
                return Err(Error::Invalid(format!("advice class {class} out of range")));
            }
            let r = ctx.value(&terms, class)? - T::of(a.target());
            match a {
                AdviceTarget::Attr { .. } => attr += r * r,
                AdviceTarget::Inter { .. } => inter += r * r,
            }
            if let Some(g) = grad.as_deref_mut() {
                ctx.backward(&terms, class, r + r, g)?;
            }
        }
        Ok((attr, inter))
    }

    /// Unnormalized classification and distillation terms of one example.
    fn prediction(&self, ex: &Example<T>, grad: Option<&mut ModelState<T>>) -> Result<(T, T)> {
        let distill = match (self.cfg.transfer, self.source) {
            (Transfer::Distill { lambda }, Some(s)) => Some((T::of(lambda), s)),
            _ => None,
        };
        if ex.label.is_none() && distill.is_none() {
            return Ok((T::zero(), T::zero()));
        }
        let fwd = self.model.forward_cached(&ex.tokens)?;
        let mut dp = vec![T::zero(); self.model.classes];
        let mut cls = T::zero();
        if let Some(y) = ex.label {
            if y >= self.model.classes {
                return Err(Error::Invalid(format!(
                    "label {y} out of range for {}",
                    ex.instance_id
                )));
            }
            let w = self.cfg.class_weights[y]
                * if self.cfg.use_z_weighting {
                    ex.z
                } else {
                    T::one()
                };
            cls = w * -fwd.probs[y].ln();
            dp[y] = -w / fwd.probs[y];
        }
        let mut dist = T::zero();
        if let Some((lambda, source)) = distill {
            let ps = source.forward(&ex.tokens)?;
            dist = lambda * kl(&ps, &fwd.probs);
            for (d, (&s, &p)) in dp.iter_mut().zip(ps.iter().zip(&fwd.probs)) {
                *d -= lambda * s / p;
            }
        }
        if let Some(g) = grad {
            self.model.backward(&fwd, &dp, g);
        }
        Ok((cls, dist))
    }
}

struct Batch<T> {
    parts: LossParts<T>,
    grad: Option<ModelState<T>>,
}

#[allow(clippy::too_many_arguments)]
fn run<T: Scalar>(
    model: &ModelState<T>,
    batch: &[Example<T>],
    baseline: &[T],
    cfg: &LossConfig<T>,
    source: Option<&ModelState<T>>,
    pool: Option<&ReplacementSet<T>>,
    seed: u64,
    with_grad: bool,
) -> Result<Batch<T>> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    cfg.validate(model.classes)?;
    if !cfg.transfer.is_none() {
        match source {
            Some(s) => check_shape(model, s)?,
            None => {
                return Err(Error::Config(
                    "transfer penalty needs the source model".into(),
                ))
            }
        }
    }
    let sh = Shared {
        model,
        baseline,
        cfg,
        source,
        pool,
        seed,
    };
    let regularize = cfg.alpha > T::zero();
    // One gradient pair per example, reduced below in batch order.
    let per: Vec<Result<ExampleTerms<T>>> = batch
        .par_iter()
        .enumerate()
        .map(|(k, ex)| {
            let mut g = with_grad.then(|| (model.zeros_like(), model.zeros_like()));
            let (cls, dist) = sh.prediction(ex, g.as_mut().map(|g| &mut g.0))?;
            let (attr, inter) = if regularize {
                sh.advice(ex, k, g.as_mut().map(|g| &mut g.1))?
            } else {
                (T::zero(), T::zero())
            };
            Ok((cls, dist, attr, inter, g))
        })
        .collect();
    let n = T::of_usize(batch.len());
    let mut parts = LossParts::default();
    let mut dist = T::zero();
    let mut g_main = with_grad.then(|| model.zeros_like());
    let mut g_reg = with_grad.then(|| model.zeros_like());
    for r in per {
        let (c, d, a, i, g) = r?;
        parts.cls += c;
        dist += d;
        parts.attr += a;
        parts.inter += i;
        if let (Some((gm, gr)), Some(am), Some(ar)) = (g, g_main.as_mut(), g_reg.as_mut()) {
            am.add_scaled(&gm, T::one());
            ar.add_scaled(&gr, T::one());
        }
    }
    parts.cls /= n;
    parts.attr /= n;
    parts.inter /= n;
    parts.transfer = dist / n;
    if let Some(gm) = g_main.as_mut() {
        gm.scale(n.recip());
    }
    if let (Transfer::L2 { lambda }, Some(s)) = (cfg.transfer, source) {
        let lambda = T::of(lambda);
        parts.transfer = lambda * l2_transfer_loss(model, s)?;
        if let Some(gm) = g_main.as_mut() {
            gm.add_scaled(model, lambda + lambda);
            gm.add_scaled(s, -(lambda + lambda));
        }
    }
    parts.total = parts.cls + cfg.alpha * (parts.attr + parts.inter) + parts.transfer;
    let grad = g_main.zip(g_reg).map(|(mut gm, gr)| {
        if regularize {
            gm.add_scaled(&gr, cfg.alpha / n);
        }
        gm
    });
    Ok(Batch { parts, grad })
}

/// Objective value and its components on `batch`.
pub fn total_loss<T: Scalar>(
    model: &ModelState<T>,
    batch: &[Example<T>],
    baseline: &[T],
    cfg: &LossConfig<T>,
    source: Option<&ModelState<T>>,
    pool: Option<&ReplacementSet<T>>,
    seed: u64,
) -> Result<LossParts<T>> {
    Ok(run(model, batch, baseline, cfg, source, pool, seed, false)?.parts)
}

/// Objective value and its parameter gradient on `batch`.
pub fn loss_and_grad<T: Scalar>(
    model: &ModelState<T>,
    batch: &[Example<T>],
    baseline: &[T],
    cfg: &LossConfig<T>,
    source: Option<&ModelState<T>>,
    pool: Option<&ReplacementSet<T>>,
    seed: u64,
) -> Result<(LossParts<T>, ModelState<T>)> {
    let b = run(model, batch, baseline, cfg, source, pool, seed, true)?;
    Ok((b.parts, b.grad.expect("gradient requested")))
}

/// `(L_attr, L_inter)` of one example: squared gaps between the current
/// scores of the advised phrases and their targets.
pub fn reg_losses<T: Scalar>(
    model: &ModelState<T>,
    example: &Example<T>,
    baseline: &[T],
    attribution: &AttributionConfig,
    pool: Option<&ReplacementSet<T>>,
    seed: u64,
) -> Result<(T, T)> {
    let cfg = LossConfig {
        alpha: T::one(),
        class_weights: vec![T::one(); model.classes],
        use_z_weighting: false,
        attribution: *attribution,
        transfer: Transfer::None,
    };
    let sh = Shared {
        model,
        baseline,
        cfg: &cfg,
        source: None,
        pool,
        seed,
    };
    sh.advice(example, 0, None)
}
