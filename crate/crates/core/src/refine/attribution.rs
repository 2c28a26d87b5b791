//! Phrase attribution and interaction scores.
//!
//! Every score is a signed sum of terms of two kinds: the class
//! probability of some variant of the input, or the directional derivative
//! of a unit network at a point on the integration path. Values and their
//! parameter gradients are both computed from the same term list.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{masked, ModelMode, ModelState};
use crate::corpus::{Corpus, EmbeddingTable, Span};
use crate::error::{Error, Result};
use crate::matcher::AdviceTarget;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Integrated gradients, midpoint Riemann sum.
    Ig,
    /// Sampling and occlusion; plain occlusion when `delta = 0`.
    Soc,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ig => "ig",
            Method::Soc => "soc",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "ig" => Ok(Method::Ig),
            "soc" | "occlusion" => Ok(Method::Soc),
            other => Err(Error::Config(format!(
                "unknown attribution method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionConfig {
    pub method: Method,
    pub ig_steps: usize,
    /// Neighborhood radius (tokens on each side) resampled by SOC.
    pub delta: usize,
    /// Samples averaged by SOC; unused when `delta = 0`.
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            method: Method::Soc,
            ig_steps: 64,
            delta: 0,
            n_samples: 8,
            seed: 0,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ig_steps == 0 {
            return Err(Error::Config("ig_steps must be at least 1".into()));
        }
        if self.method == Method::Soc && self.delta > 0 && self.n_samples == 0 {
            return Err(Error::Config(
                "n_samples must be at least 1 when delta > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Token vectors that SOC draws neighborhood replacements from, uniformly
/// over token occurrences.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplacementSet<T> {
    rows: Vec<Vec<T>>,
}

impl<T: Scalar> ReplacementSet<T> {
    pub fn new(rows: Vec<Vec<T>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("empty replacement set".into()));
        }
        Ok(ReplacementSet { rows })
    }

    /// Every token vector of `corpus`, in corpus order.
    pub fn from_corpus(corpus: &Corpus, table: &EmbeddingTable) -> Result<Self> {
        let mut rows = Vec::with_capacity(corpus.token_count());
        for inst in corpus {
            rows.extend(table.token_vectors::<T>(inst)?);
        }
        Self::new(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.rows
    }

    pub(crate) fn draw(&self, rng: &mut ChaCha8Rng) -> &[T] {
        &self.rows[rng.random_range(0..self.rows.len())]
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Term<T> {
    /// `coef * f^c(tokens)`
    Prob { tokens: Vec<Vec<T>>, coef: T },
    /// `coef * d/de f^c_unit(point + e * dir)` at `e = 0`
    Dir { point: Vec<T>, dir: Vec<T>, coef: T },
}

/// Inputs shared by every attribution computation on one sentence.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a, T> {
    pub model: &'a ModelState<T>,
    pub tokens: &'a [Vec<T>],
    pub baseline: &'a [T],
    pub cfg: &'a AttributionConfig,
    pub pool: Option<&'a ReplacementSet<T>>,
}

/// Seed for the SOC draws of one phrase.
pub(crate) fn phrase_seed(seed: u64, p: Span) -> u64 {
    mix(mix(seed ^ p.start as u64).wrapping_add(p.end as u64))
}

/// splitmix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_span(p: Span, n: usize) -> Result<()> {
    if p.is_empty() || p.end > n {
        return Err(Error::Invalid(format!(
            "span {p} is empty or outside a {n}-token sentence"
        )));
    }
    Ok(())
}

impl<T: Scalar> Context<'_, T> {
    /// Terms of `sign * phi(p; x with `fixed` masked)`.
    pub(crate) fn attribution_terms(
        &self,
        p: Span,
        fixed: &[Span],
        sign: T,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<Term<T>>,
    ) -> Result<()> {
        let n = self.tokens.len();
        check_span(p, n)?;
        let base = masked(self.tokens, self.baseline, fixed);
        match self.cfg.method {
            Method::Soc if self.cfg.delta == 0 => {
                out.push(Term::Prob {
                    tokens: masked(&base, self.baseline, &[p]),
                    coef: -sign,
                });
                out.push(Term::Prob {
                    tokens: base,
                    coef: sign,
                });
            }
            Method::Soc => {
                let pool = self.pool.ok_or_else(|| {
                    Error::Config("sampling with delta > 0 needs a replacement set".into())
                })?;
                let lo = p.start.saturating_sub(self.cfg.delta);
                let hi = (p.end + self.cfg.delta).min(n);
                let hood: Vec<usize> = (lo..hi)
                    .filter(|&i| !p.contains(i) && !fixed.iter().any(|f| f.contains(i)))
                    .collect();
                let w = sign / T::of_usize(self.cfg.n_samples);
                for _ in 0..self.cfg.n_samples {
                    let mut x = base.clone();
                    for &i in &hood {
                        x[i] = pool.draw(rng).to_vec();
                    }
                    out.push(Term::Prob {
                        tokens: masked(&x, self.baseline, &[p]),
                        coef: -w,
                    });
                    out.push(Term::Prob { tokens: x, coef: w });
                }
            }
            Method::Ig => {
                let m = self.cfg.ig_steps;
                let w = sign / T::of_usize(m);
                let nt = T::of_usize(n);
                let alpha = |s: usize| (T::of_usize(s) + T::of(0.5)) / T::of_usize(m);
                let v0 = self.baseline;
                match self.model.mode {
                    ModelMode::Mlp => {
                        let mut mean = vec![T::zero(); v0.len()];
                        for t in &base {
                            for (a, &x) in mean.iter_mut().zip(t) {
                                *a += x;
                            }
                        }
                        let mut dir = vec![T::zero(); v0.len()];
                        for i in p.indices() {
                            for ((d, &x), &b) in dir.iter_mut().zip(&base[i]).zip(v0) {
                                *d += x - b;
                            }
                        }
                        for d in &mut dir {
                            *d /= nt;
                        }
                        for s in 0..m {
                            let a = alpha(s);
                            let point = mean
                                .iter()
                                .zip(v0)
                                .map(|(&u, &b)| b + a * (u / nt - b))
                                .collect();
                            out.push(Term::Dir {
                                point,
                                dir: dir.clone(),
                                coef: w,
                            });
                        }
                    }
                    ModelMode::Additive => {
                        for s in 0..m {
                            let a = alpha(s);
                            for i in p.indices() {
                                let point = base[i]
                                    .iter()
                                    .zip(v0)
                                    .map(|(&x, &b)| b + a * (x - b))
                                    .collect();
                                let dir = base[i]
                                    .iter()
                                    .zip(v0)
                                    .map(|(&x, &b)| (x - b) / nt)
                                    .collect();
                                out.push(Term::Dir {
                                    point,
                                    dir,
                                    coef: w,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Terms of `phi(p; x) - phi(p; x with q masked)`.
    pub(crate) fn interaction_terms(
        &self,
        p: Span,
        q: Span,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<Term<T>>,
    ) -> Result<()> {
        check_span(q, self.tokens.len())?;
        if p.overlaps(&q) {
            return Err(Error::Invalid(format!(
                "interaction spans {p} and {q} overlap"
            )));
        }
        self.attribution_terms(p, &[], T::one(), rng, out)?;
        self.attribution_terms(p, &[q], -T::one(), rng, out)
    }

    pub(crate) fn term_value(&self, term: &Term<T>, class: usize) -> Result<T> {
        Ok(match term {
            Term::Prob { tokens, coef } => *coef * self.model.forward(tokens)?[class],
            Term::Dir { point, dir, coef } => {
                let c = self.model.unit_forward(point.clone());
                *coef * self.model.unit_tangent(&c, dir, class)
            }
        })
    }

    pub(crate) fn value(&self, terms: &[Term<T>], class: usize) -> Result<T> {
        let mut acc = T::zero();
        for t in terms {
            acc += self.term_value(t, class)?;
        }
        Ok(acc)
    }

    /// Accumulates `g * d(sum of terms)/d(params)`.
    pub(crate) fn backward(
        &self,
        terms: &[Term<T>],
        class: usize,
        g: T,
        grad: &mut ModelState<T>,
    ) -> Result<()> {
        for t in terms {
            match t {
                Term::Prob { tokens, coef } => {
                    let fwd = self.model.forward_cached(tokens)?;
                    let mut dp = vec![T::zero(); self.model.classes];
                    dp[class] = g * *coef;
                    self.model.backward(&fwd, &dp, grad);
                }
                Term::Dir { point, dir, coef } => {
                    let c = self.model.unit_forward(point.clone());
                    self.model
                        .unit_tangent_backward(&c, dir, class, g * *coef, grad);
                }
            }
        }
        Ok(())
    }

    /// `phi^c(p; x)` under the configured method.
    pub fn phrase(&self, p: Span, class: usize) -> Result<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(phrase_seed(self.cfg.seed, p));
        let mut terms = Vec::new();
        self.attribution_terms(p, &[], T::one(), &mut rng, &mut terms)?;
        self.value(&terms, class)
    }

    /// `phi^c(p; x)` for every class.
    pub fn phrase_all(&self, p: Span) -> Result<Vec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(phrase_seed(self.cfg.seed, p));
        let mut terms = Vec::new();
        self.attribution_terms(p, &[], T::one(), &mut rng, &mut terms)?;
        (0..self.model.classes)
            .map(|c| self.value(&terms, c))
            .collect()
    }

    /// Interaction `phi^c(p; x) - phi^c(p; x with q masked)` for every class.
    pub fn interaction(&self, p: Span, q: Span) -> Result<Vec<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            phrase_seed(self.cfg.seed, p) ^ phrase_seed(self.cfg.seed, q).rotate_left(17),
        );
        let mut terms = Vec::new();
        self.interaction_terms(p, q, &mut rng, &mut terms)?;
        (0..self.model.classes)
            .map(|c| self.value(&terms, c))
            .collect()
    }

    /// Per-token scores for `class`: integrated gradients under `Ig`,
    /// otherwise single-token occlusion/SOC.
    pub fn token_scores(&self, class: usize) -> Result<Vec<T>> {
        match self.cfg.method {
            Method::Ig => integrated_gradients(
                self.model,
                self.tokens,
                self.baseline,
                class,
                self.cfg.ig_steps,
            ),
            Method::Soc => (0..self.tokens.len())
                .map(|i| self.phrase(Span::single(i), class))
                .collect(),
        }
    }
}

/// Per-token integrated gradients of the class-`class` probability along
/// the straight path from the baseline sentence, midpoint rule with
/// `steps` intervals.
pub fn integrated_gradients<T: Scalar>(
    model: &ModelState<T>,
    tokens: &[Vec<T>],
    baseline: &[T],
    class: usize,
    steps: usize,
) -> Result<Vec<T>> {
    if steps == 0 {
        return Err(Error::Config("ig_steps must be at least 1".into()));
    }
    model.forward_cached(tokens)?;
    let n = tokens.len();
    let nt = T::of_usize(n);
    let m = T::of_usize(steps);
    let alpha = |s: usize| (T::of_usize(s) + T::of(0.5)) / m;
    let diff = |t: &[T]| -> Vec<T> { t.iter().zip(baseline).map(|(&x, &b)| x - b).collect() };
    let dot = |a: &[T], b: &[T]| -> T { a.iter().zip(b).map(|(&x, &y)| x * y).sum() };
    match model.mode {
        ModelMode::Mlp => {
            let mut mean = vec![T::zero(); model.dim];
            for t in tokens {
                for (a, &x) in mean.iter_mut().zip(t) {
                    *a += x;
                }
            }
            let mut acc = vec![T::zero(); model.dim];
            for s in 0..steps {
                let a = alpha(s);
                let point = mean
                    .iter()
                    .zip(baseline)
                    .map(|(&u, &b)| b + a * (u / nt - b))
                    .collect();
                let c = model.unit_forward(point);
                for (x, g) in acc.iter_mut().zip(model.unit_input_grad(&c, class)) {
                    *x += g;
                }
            }
            Ok(tokens
                .iter()
                .map(|t| dot(&diff(t), &acc) / (m * nt))
                .collect())
        }
        ModelMode::Additive => Ok(tokens
            .iter()
            .map(|t| {
                let d = diff(t);
                let mut total = T::zero();
                for s in 0..steps {
                    let a = alpha(s);
                    let point = baseline.iter().zip(&d).map(|(&b, &x)| b + a * x).collect();
                    let c = model.unit_forward(point);
                    total += dot(&d, &model.unit_input_grad(&c, class));
                }
                total / (m * nt)
            })
            .collect()),
    }
}

/// `f(x) - f(x with p masked)` for every class.
pub fn occlusion<T: Scalar>(
    model: &ModelState<T>,
    tokens: &[Vec<T>],
    baseline: &[T],
    p: Span,
) -> Result<Vec<T>> {
    check_span(p, tokens.len())?;
    let full = model.forward(tokens)?;
    let without = model.forward_masked(tokens, baseline, &[p])?;
    Ok(full.iter().zip(&without).map(|(&a, &b)| a - b).collect())
}

/// Sampling-and-occlusion importance of `p` for every class. With
/// `delta = 0` this is exactly [`occlusion`].
pub fn soc_importance<T: Scalar>(
    model: &ModelState<T>,
    tokens: &[Vec<T>],
    baseline: &[T],
    p: Span,
    cfg: &AttributionConfig,
    pool: Option<&ReplacementSet<T>>,
) -> Result<Vec<T>> {
    let cfg = AttributionConfig {
        method: Method::Soc,
        ..*cfg
    };
    Context {
        model,
        tokens,
        baseline,
        cfg: &cfg,
        pool,
    }
    .phrase_all(p)
}

/// Interaction of disjoint phrases `p` and `q` for every class.
pub fn interaction_score<T: Scalar>(
    model: &ModelState<T>,
    tokens: &[Vec<T>],
    baseline: &[T],
    p: Span,
    q: Span,
    cfg: &AttributionConfig,
    pool: Option<&ReplacementSet<T>>,
) -> Result<Vec<T>> {
    Context {
        model,
        tokens,
        baseline,
        cfg,
        pool,
    }
    .interaction(p, q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseScore {
    pub span: Span,
    pub class: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub spans: [Span; 2],
    pub class: usize,
    pub score: f64,
}

/// Current attribution and interaction scores of the advised phrases.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub phrases: Vec<PhraseScore>,
    pub pairs: Vec<PairScore>,
}

impl AttributionReport {
    pub fn for_advice<T: Scalar>(ctx: &Context<'_, T>, advice: &[AdviceTarget]) -> Result<Self> {
        let mut report = AttributionReport::default();
        for a in advice {
            match *a {
                AdviceTarget::Attr { span, class, .. } => report.phrases.push(PhraseScore {
                    span,
                    class,
                    score: ctx.phrase(span, class)?.as_f64(),
                }),
                AdviceTarget::Inter { spans, class, .. } => report.pairs.push(PairScore {
                    spans,
                    class,
                    score: ctx.interaction(spans[0], spans[1])?[class].as_f64(),
                }),
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    fn numeric_grad(model: &ModelState<f64>, f: impl Fn(&ModelState<f64>) -> f64) -> Vec<f64> {
        let flat = model.flat();
        let h = 1e-6;
        (0..flat.len())
            .map(|i| {
                let mut m = model.clone();
                let mut v = flat.clone();
                v[i] = flat[i] + h;
                m.set_flat(&v);
                let up = f(&m);
                v[i] = flat[i] - h;
                m.set_flat(&v);
                (up - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!(
                (x - y).abs() <= tol,
                "param {i}: analytic {x} vs numeric {y}"
            );
        }
    }

    fn check_terms(mode: ModelMode, cfg: AttributionConfig) {
        let model = ModelState::<f64>::init(mode, 4, 5, 3, 7).unwrap();
        let tokens = sentence(6, 4, 1);
        let baseline = vec![0.1; 4];
        let pool = ReplacementSet::new(sentence(10, 4, 2)).unwrap();
        let ctx = Context {
            model: &model,
            tokens: &tokens,
            baseline: &baseline,
            cfg: &cfg,
            pool: Some(&pool),
        };
        let mut terms = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        ctx.interaction_terms(Span::new(1, 3), Span::new(4, 5), &mut rng, &mut terms)
            .unwrap();
        let mut grad = model.zeros_like();
        ctx.backward(&terms, 2, 1.0, &mut grad).unwrap();
        let num = numeric_grad(&model, |m| {
            Context { model: m, ..ctx }.value(&terms, 2).unwrap()
        });
        assert_close(&grad.flat(), &num, 1e-7);
    }

    #[test]
    fn term_gradients_match_finite_differences() {
        for mode in [ModelMode::Mlp, ModelMode::Additive] {
            check_terms(
                mode,
                AttributionConfig {
                    method: Method::Ig,
                    ig_steps: 5,
                    ..Default::default()
                },
            );
            check_terms(mode, AttributionConfig::default());
            check_terms(
                mode,
                AttributionConfig {
                    delta: 1,
                    n_samples: 3,
                    ..Default::default()
                },
            );
        }
    }

    #[test]
    fn probability_gradient_matches_finite_differences() {
        for mode in [ModelMode::Mlp, ModelMode::Additive] {
            let model = ModelState::<f64>::init(mode, 3, 4, 2, 11).unwrap();
            let tokens = sentence(5, 3, 4);
            let fwd = model.forward_cached(&tokens).unwrap();
            let dp = [0.3, -1.2];
            let mut grad = model.zeros_like();
            model.backward(&fwd, &dp, &mut grad);
            let num = numeric_grad(&model, |m| {
                let p = m.forward(&tokens).unwrap();
                dp[0] * p[0] + dp[1] * p[1]
            });
            assert_close(&grad.flat(), &num, 1e-8);
        }
    }

    #[test]
    fn ig_is_complete_for_additive_model() {
        let model = ModelState::<f64>::init(ModelMode::Additive, 4, 6, 2, 5).unwrap();
        let tokens = sentence(4, 4, 9);
        let baseline = vec![0.0; 4];
        let ig = integrated_gradients(&model, &tokens, &baseline, 1, 256).unwrap();
        let gap = model.forward(&tokens).unwrap()[1]
            - model.forward(&vec![baseline.clone(); 4]).unwrap()[1];
        assert!((ig.iter().sum::<f64>() - gap).abs() < 1e-4);
        // Phrase IG over a span is the sum of its token scores.
        let cfg = AttributionConfig {
            method: Method::Ig,
            ig_steps: 256,
            ..Default::default()
        };
        let ctx = Context {
            model: &model,
            tokens: &tokens,
            baseline: &baseline,
            cfg: &cfg,
            pool: None,
        };
        assert!((ctx.phrase(Span::new(1, 3), 1).unwrap() - ig[1] - ig[2]).abs() < 1e-12);
    }

    #[test]
    fn occlusion_interaction_vanishes_for_additive_model() {
        let model = ModelState::<f64>::init(ModelMode::Additive, 4, 6, 3, 5).unwrap();
        let tokens = sentence(5, 4, 8);
        let baseline = vec![0.2; 4];
        let cfg = AttributionConfig::default();
        let inter = interaction_score(
            &model,
            &tokens,
            &baseline,
            Span::new(0, 2),
            Span::new(3, 4),
            &cfg,
            None,
        )
        .unwrap();
        assert!(inter.iter().all(|v| v.abs() < 1e-12));
        let occ = occlusion(&model, &tokens, &baseline, Span::new(0, 2)).unwrap();
        let soc = soc_importance(&model, &tokens, &baseline, Span::new(0, 2), &cfg, None).unwrap();
        assert_eq!(occ, soc);
    }

    #[test]
    fn overlapping_interaction_is_rejected() {
        let model = ModelState::<f64>::init(ModelMode::Mlp, 2, 2, 2, 0).unwrap();
        let tokens = sentence(3, 2, 0);
        let cfg = AttributionConfig::default();
        assert!(interaction_score(
            &model,
            &tokens,
            &[0.0; 2],
            Span::new(0, 2),
            Span::new(1, 3),
            &cfg,
            None
        )
        .is_err());
    }

    #[test]
    fn soc_without_pool_is_a_config_error() {
        let model = ModelState::<f64>::init(ModelMode::Mlp, 2, 2, 2, 0).unwrap();
        let tokens = sentence(3, 2, 0);
        let cfg = AttributionConfig {
            delta: 1,
            ..Default::default()
        };
        assert!(matches!(
            soc_importance(&model, &tokens, &[0.0; 2], Span::single(1), &cfg, None),
            Err(Error::Config(_))
        ));
    }
}
