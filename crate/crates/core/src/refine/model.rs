use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::scalar::{softmax, Scalar};

/// How token vectors are combined.
///
/// `Mlp` mean-pools the tokens and applies one tanh hidden layer.
/// `Additive` scores every token with a linear layer and averages the
/// per-token class distributions, so the class probability is a sum of
/// per-token terms and no two tokens interact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelMode {
    Mlp,
    Additive,
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelMode::Mlp => "mlp",
            ModelMode::Additive => "additive",
        })
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "mlp" => Ok(ModelMode::Mlp),
            "additive" => Ok(ModelMode::Additive),
            other => Err(Error::Config(format!("unknown model mode {other:?}"))),
        }
    }
}

/// Classifier parameters. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub mode: ModelMode,
    pub dim: usize,
    pub hidden: usize,
    pub classes: usize,
    /// `hidden x dim`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `classes x hidden`, row-major.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

/// Activations of the per-unit network at one input point.
#[derive(Debug, Clone)]
pub(crate) struct UnitCache<T> {
    pub u: Vec<T>,
    pub h: Vec<T>,
    pub p: Vec<T>,
}

/// Cached forward pass over a whole sentence.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub(crate) units: Vec<UnitCache<T>>,
    pub probs: Vec<T>,
}

impl<T: Scalar> ModelState<T> {
    pub fn zeros(mode: ModelMode, dim: usize, hidden: usize, classes: usize) -> Self {
        ModelState {
            mode,
            dim,
            hidden,
            classes,
            w1: vec![T::zero(); hidden * dim],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); classes * hidden],
            b2: vec![T::zero(); classes],
        }
    }

    /// Gaussian weights scaled by fan-in, zero biases.
    pub fn init(
        mode: ModelMode,
        dim: usize,
        hidden: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "model needs dim > 0, hidden > 0 and at least 2 classes (got {dim}, {hidden}, {classes})"
            )));
        }
        let mut m = Self::zeros(mode, dim, hidden, classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive std");
        for w in &mut m.w1 {
            *w = T::of(n1.sample(&mut rng));
        }
        for w in &mut m.w2 {
            *w = T::of(n2.sample(&mut rng));
        }
        Ok(m)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.mode, self.dim, self.hidden, self.classes)
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.dim == other.dim
            && self.hidden == other.hidden
            && self.classes == other.classes
    }

    /// Parameter blocks in checkpoint order.
    pub fn blocks(&self) -> [&[T]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn flat(&self) -> Vec<T> {
        self.blocks().concat()
    }

    pub fn set_flat(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.num_params(), "parameter count mismatch");
        let mut rest = values;
        for b in self.blocks_mut() {
            let (head, tail) = rest.split_at(b.len());
            b.copy_from_slice(head);
            rest = tail;
        }
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &Self, k: T) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for b in self.blocks_mut() {
            for x in b.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::of(x.as_f64())).collect();
        ModelState {
            mode: self.mode,
            dim: self.dim,
            hidden: self.hidden,
            classes: self.classes,
            w1: conv(&self.w1),
            b1: conv(&self.b1),
            w2: conv(&self.w2),
            b2: conv(&self.b2),
        }
    }

    fn act(&self, a: T) -> T {
        match self.mode {
            ModelMode::Mlp => a.tanh(),
            ModelMode::Additive => a,
        }
    }

    /// First and second derivative of the activation given its output.
    fn act_derivs(&self, h: T) -> (T, T) {
        match self.mode {
            ModelMode::Mlp => {
                let d1 = T::one() - h * h;
                (d1, -T::of(2.0) * h * d1)
            }
            ModelMode::Additive => (T::one(), T::zero()),
        }
    }

    fn w1_times(&self, v: &[T]) -> Vec<T> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.dim..(j + 1) * self.dim];
                row.iter().zip(v).map(|(&w, &x)| w * x).sum()
            })
            .collect()
    }

    fn w2_times(&self, v: &[T]) -> Vec<T> {
        (0..self.classes)
            .map(|k| {
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                row.iter().zip(v).map(|(&w, &x)| w * x).sum()
            })
            .collect()
    }

    fn w2t_times(&self, g: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.hidden];
        for (k, &gk) in g.iter().enumerate() {
            let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * gk;
            }
        }
        out
    }

    fn w1t_times(&self, g: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        for (j, &gj) in g.iter().enumerate() {
            let row = &self.w1[j * self.dim..(j + 1) * self.dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * gj;
            }
        }
        out
    }

    pub(crate) fn unit_forward(&self, u: Vec<T>) -> UnitCache<T> {
        let a: Vec<T> = self
            .w1_times(&u)
            .into_iter()
            .zip(&self.b1)
            .map(|(x, &b)| x + b)
            .collect();
        let h: Vec<T> = a.into_iter().map(|x| self.act(x)).collect();
        let s: Vec<T> = self
            .w2_times(&h)
            .into_iter()
            .zip(&self.b2)
            .map(|(x, &b)| x + b)
            .collect();
        let p = softmax(&s);
        UnitCache { u, h, p }
    }

    /// Accumulates `d(dp . p)/d(params)` for one unit into `grad`, and
    /// returns the gradient with respect to the unit input.
    pub(crate) fn unit_backward(&self, c: &UnitCache<T>, dp: &[T], grad: &mut Self) -> Vec<T> {
        let pd: T = c.p.iter().zip(dp).map(|(&p, &d)| p * d).sum();
        let ds: Vec<T> = c.p.iter().zip(dp).map(|(&p, &d)| p * (d - pd)).collect();
        self.accumulate_out(&ds, &c.h, true, grad);
        let dh = self.w2t_times(&ds);
        let da: Vec<T> = dh
            .iter()
            .zip(&c.h)
            .map(|(&g, &h)| g * self.act_derivs(h).0)
            .collect();
        self.accumulate_in(&da, &c.u, grad);
        self.w1t_times(&da)
    }

    /// Gradient of class-`c` probability with respect to the unit input.
    pub(crate) fn unit_input_grad(&self, c: &UnitCache<T>, class: usize) -> Vec<T> {
        let pc = c.p[class];
        let ds: Vec<T> =
            c.p.iter()
                .enumerate()
                .map(|(k, &p)| pc * (if k == class { T::one() } else { T::zero() } - p))
                .collect();
        let dh = self.w2t_times(&ds);
        let da: Vec<T> = dh
            .iter()
            .zip(&c.h)
            .map(|(&g, &h)| g * self.act_derivs(h).0)
            .collect();
        self.w1t_times(&da)
    }

    /// Directional derivative of the class-`c` probability at the unit
    /// input along `d`.
    pub(crate) fn unit_tangent(&self, c: &UnitCache<T>, d: &[T], class: usize) -> T {
        let adot = self.w1_times(d);
        let hdot: Vec<T> = adot
            .iter()
            .zip(&c.h)
            .map(|(&x, &h)| x * self.act_derivs(h).0)
            .collect();
        let sdot = self.w2_times(&hdot);
        let psd: T = c.p.iter().zip(&sdot).map(|(&p, &s)| p * s).sum();
        c.p[class] * (sdot[class] - psd)
    }

    /// Accumulates `g * d(tangent)/d(params)` for [`Self::unit_tangent`].
    pub(crate) fn unit_tangent_backward(
        &self,
        c: &UnitCache<T>,
        d: &[T],
        class: usize,
        g: T,
        grad: &mut Self,
    ) {
        let adot = self.w1_times(d);
        let derivs: Vec<(T, T)> = c.h.iter().map(|&h| self.act_derivs(h)).collect();
        let hdot: Vec<T> = adot
            .iter()
            .zip(&derivs)
            .map(|(&x, &(d1, _))| x * d1)
            .collect();
        let sdot = self.w2_times(&hdot);
        let p = &c.p;
        let pc = p[class];
        let psd: T = p.iter().zip(&sdot).map(|(&a, &b)| a * b).sum();
        let delta = |k: usize| if k == class { T::one() } else { T::zero() };

        // Through the tangent path sdot = W2 hdot.
        let s_tan: Vec<T> = (0..self.classes)
            .map(|k| g * pc * (delta(k) - p[k]))
            .collect();
        // Through the probabilities p(s).
        let p_bar: Vec<T> = (0..self.classes)
            .map(|k| g * (delta(k) * (sdot[class] - psd) - pc * sdot[k]))
            .collect();
        let pb: T = p_bar.iter().zip(p).map(|(&a, &b)| a * b).sum();
        let s_bar: Vec<T> = p
            .iter()
            .zip(&p_bar)
            .map(|(&pk, &b)| pk * (b - pb))
            .collect();

        self.accumulate_out(&s_tan, &hdot, false, grad);
        self.accumulate_out(&s_bar, &c.h, true, grad);
        let h_tan = self.w2t_times(&s_tan);
        let h_bar = self.w2t_times(&s_bar);
        let a_tan: Vec<T> = h_tan
            .iter()
            .zip(&derivs)
            .map(|(&x, &(d1, _))| x * d1)
            .collect();
        let a_bar: Vec<T> = (0..self.hidden)
            .map(|j| h_bar[j] * derivs[j].0 + h_tan[j] * derivs[j].1 * adot[j])
            .collect();
        for j in 0..self.hidden {
            grad.b1[j] += a_bar[j];
            let row = &mut grad.w1[j * self.dim..(j + 1) * self.dim];
            for ((gw, &dv), &uv) in row.iter_mut().zip(d).zip(&c.u) {
                *gw += a_tan[j] * dv + a_bar[j] * uv;
            }
        }
    }

    /// `grad.W2 += ds h^T`, and `grad.b2 += ds` when the bias is on the path.
    fn accumulate_out(&self, ds: &[T], h: &[T], with_bias: bool, grad: &mut Self) {
        for (k, &v) in ds.iter().enumerate() {
            let row = &mut grad.w2[k * self.hidden..(k + 1) * self.hidden];
            for (gw, &hj) in row.iter_mut().zip(h) {
                *gw += v * hj;
            }
            if with_bias {
                grad.b2[k] += v;
            }
        }
    }

    /// `grad.W1 += da u^T`, `grad.b1 += da`.
    fn accumulate_in(&self, da: &[T], u: &[T], grad: &mut Self) {
        for (j, &v) in da.iter().enumerate() {
            grad.b1[j] += v;
            let row = &mut grad.w1[j * self.dim..(j + 1) * self.dim];
            for (gw, &x) in row.iter_mut().zip(u) {
                *gw += v * x;
            }
        }
    }

    fn check_input(&self, tokens: &[Vec<T>]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Invalid("cannot classify an empty sentence".into()));
        }
        if let Some(t) = tokens.iter().find(|t| t.len() != self.dim) {
            return Err(Error::Invalid(format!(
                "token vector has {} values, model expects {}",
                t.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed by the backward passes.
    pub fn forward_cached(&self, tokens: &[Vec<T>]) -> Result<Forward<T>> {
        self.check_input(tokens)?;
        let n = T::of_usize(tokens.len());
        match self.mode {
            ModelMode::Mlp => {
                let mut u = vec![T::zero(); self.dim];
                for t in tokens {
                    for (a, &x) in u.iter_mut().zip(t) {
                        *a += x;
                    }
                }
                for a in &mut u {
                    *a /= n;
                }
                let unit = self.unit_forward(u);
                let probs = unit.p.clone();
                Ok(Forward {
                    units: vec![unit],
                    probs,
                })
            }
            ModelMode::Additive => {
                let units: Vec<UnitCache<T>> = tokens
                    .iter()
                    .map(|t| self.unit_forward(t.clone()))
                    .collect();
                let mut probs = vec![T::zero(); self.classes];
                for u in &units {
                    for (p, &q) in probs.iter_mut().zip(&u.p) {
                        *p += q;
                    }
                }
                for p in &mut probs {
                    *p /= n;
                }
                Ok(Forward { units, probs })
            }
        }
    }

    /// Class probabilities.
    pub fn forward(&self, tokens: &[Vec<T>]) -> Result<Vec<T>> {
        Ok(self.forward_cached(tokens)?.probs)
    }

    /// Forward pass with the tokens of `mask` replaced by `baseline`.
    pub fn forward_masked(
        &self,
        tokens: &[Vec<T>],
        baseline: &[T],
        mask: &[Span],
    ) -> Result<Vec<T>> {
        self.forward(&masked(tokens, baseline, mask))
    }

    pub fn predict(&self, tokens: &[Vec<T>]) -> Result<usize> {
        Ok(argmax(&self.forward(tokens)?))
    }

    /// Accumulates `d(dp . probs)/d(params)` into `grad`.
    pub fn backward(&self, fwd: &Forward<T>, dp: &[T], grad: &mut Self) {
        match self.mode {
            ModelMode::Mlp => {
                self.unit_backward(&fwd.units[0], dp, grad);
            }
            ModelMode::Additive => {
                let n = T::of_usize(fwd.units.len());
                let dpn: Vec<T> = dp.iter().map(|&d| d / n).collect();
                for u in &fwd.units {
                    self.unit_backward(u, &dpn, grad);
                }
            }
        }
    }
}

/// Copy of `tokens` with every token inside `mask` replaced by `baseline`.
pub fn masked<T: Scalar>(tokens: &[Vec<T>], baseline: &[T], mask: &[Span]) -> Vec<Vec<T>> {
    tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if mask.iter().any(|s| s.contains(i)) {
                baseline.to_vec()
            } else {
                t.clone()
            }
        })
        .collect()
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
