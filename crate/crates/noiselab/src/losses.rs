//! Losses for learning with noisy labels, written as functions of the
//! predicted probability vector p. Gradients are with respect to p; use
//! [`softmax_backward`] to move them onto logits.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied inside every log.
pub const PROB_FLOOR: f64 = 1e-7;
/// log 0 replacement for RCE.
pub const RCE_LOG_ZERO: f64 = -4.0;

fn default_a() -> f64 {
    RCE_LOG_ZERO
}
fn default_q() -> f64 {
    0.7
}
fn default_sl_alpha() -> f64 {
    0.1
}
fn default_sl_beta() -> f64 {
    1.0
}
fn default_pi() -> Vec<f64> {
    vec![1.0 / 3.0; 3]
}
fn default_perturb() -> f64 {
    0.1
}
fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    Ce,
    Mae,
    Rce {
        #[serde(default = "default_a")]
        a: f64,
    },
    Gce {
        #[serde(default = "default_q")]
        q: f64,
    },
    Sl {
        #[serde(default = "default_sl_alpha")]
        alpha: f64,
        #[serde(default = "default_sl_beta")]
        beta: f64,
    },
    /// `pi[0]` weights the label; the remaining M−1 weights go to
    /// predictions on perturbed inputs.
    Gjs {
        #[serde(default = "default_pi")]
        pi: Vec<f64>,
        #[serde(default = "default_perturb")]
        perturb_sigma: f64,
    },
    Normalized {
        inner: Box<LossKind>,
    },
    Sr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    #[serde(flatten)]
    pub kind: LossKind,
    /// Weight when the loss is used as a regularizer.
    #[serde(default = "one")]
    pub lambda: f64,
}

impl From<LossKind> for LossSpec {
    fn from(kind: LossKind) -> Self {
        LossSpec { kind, lambda: 1.0 }
    }
}

impl LossKind {
    pub fn gjs_default() -> Self {
        LossKind::Gjs { pi: default_pi(), perturb_sigma: default_perturb() }
    }

    pub fn name(&self) -> String {
        match self {
            LossKind::Ce => "ce".into(),
            LossKind::Mae => "mae".into(),
            LossKind::Rce { .. } => "rce".into(),
            LossKind::Gce { .. } => "gce".into(),
            LossKind::Sl { .. } => "sl".into(),
            LossKind::Gjs { .. } => "gjs".into(),
            LossKind::Normalized { inner } => format!("normalized_{}", inner.name()),
            LossKind::Sr => "sr".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossKind::Ce | LossKind::Mae | LossKind::Sr => Ok(()),
            LossKind::Rce { a } => {
                if !(a.is_finite() && *a < 0.0) {
                    return Err(Error::range("a", format!("RCE log-zero clip must be negative, got {a}")));
                }
                Ok(())
            }
            LossKind::Gce { q } => {
                if !(*q > 0.0 && *q <= 1.0) {
                    return Err(Error::range("q", format!("must lie in (0,1], got {q}")));
                }
                Ok(())
            }
            LossKind::Sl { alpha, beta } => {
                if !(alpha.is_finite() && beta.is_finite() && *alpha >= 0.0 && *beta >= 0.0) {
                    return Err(Error::range("alpha/beta", "SL weights must be finite and nonnegative"));
                }
                Ok(())
            }
            LossKind::Gjs { pi, perturb_sigma } => {
                if pi.len() < 2 {
                    return Err(Error::range("pi", "GJS needs M >= 2 weights"));
                }
                if pi.iter().any(|w| !(*w > 0.0)) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::range("pi", "weights must be positive and sum to 1"));
                }
                if pi[0] >= 1.0 {
                    return Err(Error::range("pi", "label weight must be below 1"));
                }
                if !(perturb_sigma.is_finite() && *perturb_sigma >= 0.0) {
                    return Err(Error::range("perturb_sigma", "must be finite and nonnegative"));
                }
                Ok(())
            }
            LossKind::Normalized { inner } => {
                if matches!(**inner, LossKind::Sr) {
                    return Err(Error::range("inner", "SR does not depend on the label and cannot be normalized"));
                }
                inner.validate()
            }
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::range("lambda", format!("must be finite and nonnegative, got {}", self.lambda)));
        }
        self.kind.validate()
    }
}

/// Entries in [0,1] summing to 1 within 1e-9.
pub fn check_probs(p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::range("p", "need at least two classes"));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::range("p", "entries must lie in [0,1]"));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::range("p", format!("entries sum to {s}, not 1")));
    }
    Ok(())
}

fn check_label(p: &[f64], label: usize) -> Result<()> {
    if label >= p.len() {
        return Err(Error::range("label", format!("{label} not in 0..{}", p.len())));
    }
    Ok(())
}

fn flog(v: f64) -> f64 {
    v.max(PROB_FLOOR).ln()
}

fn gjs_z(pi0: f64) -> f64 {
    -(1.0 - pi0) * (1.0 - pi0).ln()
}

fn entropy(v: &[f64]) -> f64 {
    -v.iter().map(|&x| x * flog(x)).sum::<f64>()
}

/// Generalized Jensen-Shannon divergence between the one-hot label and
/// the predictions, normalized by Z = −(1−π₁)log(1−π₁).
pub fn gjs_value(pi: &[f64], label: usize, preds: &[&[f64]]) -> f64 {
    let k = preds[0].len();
    let mut m = vec![0.0; k];
    m[label] = pi[0];
    let mut inner = 0.0;
    for (w, p) in pi[1..].iter().zip(preds) {
        for (mk, pk) in m.iter_mut().zip(p.iter()) {
            *mk += w * pk;
        }
        inner += w * entropy(p);
    }
    (entropy(&m) - inner) / gjs_z(pi[0])
}

/// Gradient of [`gjs_value`] with respect to each prediction:
/// π_j(log p_j − log m)/Z.
pub fn gjs_grads(pi: &[f64], label: usize, preds: &[&[f64]]) -> Vec<Vec<f64>> {
    let k = preds[0].len();
    let mut m = vec![0.0; k];
    m[label] = pi[0];
    for (w, p) in pi[1..].iter().zip(preds) {
        for (mk, pk) in m.iter_mut().zip(p.iter()) {
            *mk += w * pk;
        }
    }
    let z = gjs_z(pi[0]);
    pi[1..]
        .iter()
        .zip(preds)
        .map(|(w, p)| p.iter().zip(&m).map(|(&pk, &mk)| w * (flog(pk) - flog(mk)) / z).collect())
        .collect()
}

/// Loss value without the simplex check on p; the extension off the
/// simplex is the one differentiated by [`loss_grad`].
pub fn loss_value_unchecked(kind: &LossKind, p: &[f64], y: usize) -> f64 {
    match kind {
        LossKind::Ce => -flog(p[y]),
        LossKind::Mae => p
            .iter()
            .enumerate()
            .map(|(k, &v)| if k == y { (1.0 - v).abs() } else { v.abs() })
            .sum(),
        LossKind::Rce { a } => -a * p.iter().enumerate().filter(|&(k, _)| k != y).map(|(_, v)| v).sum::<f64>(),
        LossKind::Gce { q } => (1.0 - p[y].max(0.0).powf(*q)) / q,
        LossKind::Sl { alpha, beta } => {
            alpha * loss_value_unchecked(&LossKind::Ce, p, y)
                + beta * loss_value_unchecked(&LossKind::Rce { a: RCE_LOG_ZERO }, p, y)
        }
        LossKind::Gjs { pi, .. } => {
            let preds = vec![p; pi.len() - 1];
            gjs_value(pi, y, &preds)
        }
        LossKind::Normalized { inner } => {
            let total: f64 = (0..p.len()).map(|k| loss_value_unchecked(inner, p, k)).sum();
            if total == 0.0 {
                1.0 / p.len() as f64
            } else {
                loss_value_unchecked(inner, p, y) / total
            }
        }
        LossKind::Sr => -p.iter().map(|v| v * v).sum::<f64>(),
    }
}

/// SR with the anchor ŷ held fixed: −ŷᵀp.
pub fn sr_value_with_anchor(anchor: &[f64], p: &[f64]) -> f64 {
    -anchor.iter().zip(p).map(|(a, b)| a * b).sum::<f64>()
}

fn grad_unchecked(kind: &LossKind, p: &[f64], y: usize) -> Vec<f64> {
    let k = p.len();
    match kind {
        // Below the floor the clipped value is flat.
        LossKind::Ce => {
            let mut g = vec![0.0; k];
            if p[y] >= PROB_FLOOR {
                g[y] = -1.0 / p[y];
            }
            g
        }
        // Subgradients at kinks: −1 at p_y = 1, +1 at p_k = 0.
        LossKind::Mae => (0..k)
            .map(|j| {
                if j == y {
                    if p[j] > 1.0 {
                        1.0
                    } else {
                        -1.0
                    }
                } else if p[j] < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            })
            .collect(),
        LossKind::Rce { a } => (0..k).map(|j| if j == y { 0.0 } else { -a }).collect(),
        LossKind::Gce { q } => {
            let mut g = vec![0.0; k];
            g[y] = -p[y].max(PROB_FLOOR).powf(q - 1.0);
            g
        }
        LossKind::Sl { alpha, beta } => {
            let ce = grad_unchecked(&LossKind::Ce, p, y);
            let rce = grad_unchecked(&LossKind::Rce { a: RCE_LOG_ZERO }, p, y);
            ce.iter().zip(&rce).map(|(c, r)| alpha * c + beta * r).collect()
        }
        LossKind::Gjs { pi, .. } => {
            let preds = vec![p; pi.len() - 1];
            let gs = gjs_grads(pi, y, &preds);
            (0..k).map(|j| gs.iter().map(|g| g[j]).sum()).collect()
        }
        LossKind::Normalized { inner } => {
            let vals: Vec<f64> = (0..k).map(|c| loss_value_unchecked(inner, p, c)).collect();
            let total: f64 = vals.iter().sum();
            if total == 0.0 {
                return vec![0.0; k];
            }
            let gy = grad_unchecked(inner, p, y);
            let mut gsum = vec![0.0; k];
            for c in 0..k {
                for (s, g) in gsum.iter_mut().zip(grad_unchecked(inner, p, c)) {
                    *s += g;
                }
            }
            (0..k).map(|j| (gy[j] * total - vals[y] * gsum[j]) / (total * total)).collect()
        }
        // ŷ is a detached copy of p, so the gradient is the constant −ŷ.
        LossKind::Sr => p.iter().map(|v| -v).collect(),
    }
}

pub fn loss_value(spec: &LossSpec, p: &[f64], label: usize) -> Result<f64> {
    spec.validate()?;
    check_probs(p)?;
    check_label(p, label)?;
    Ok(loss_value_unchecked(&spec.kind, p, label))
}

pub fn loss_grad(spec: &LossSpec, p: &[f64], label: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    check_probs(p)?;
    check_label(p, label)?;
    Ok(grad_unchecked(&spec.kind, p, label))
}

/// Gradient without the simplex check, for finite-difference comparison.
pub fn loss_grad_unchecked(kind: &LossKind, p: &[f64], label: usize) -> Vec<f64> {
    grad_unchecked(kind, p, label)
}

/// Σ_k ℓ(p, k). Constant in p for symmetric losses.
pub fn symmetry_sum(spec: &LossSpec, p: &[f64]) -> Result<f64> {
    spec.validate()?;
    check_probs(p)?;
    Ok((0..p.len()).map(|k| loss_value_unchecked(&spec.kind, p, k)).sum())
}

/// Pulls a gradient with respect to p = softmax(z) back onto z:
/// dz = p ⊙ (g − pᵀg).
pub fn softmax_backward(p: &[f64], g: &[f64]) -> Vec<f64> {
    let pg: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    p.iter().zip(g).map(|(pk, gk)| pk * (gk - pg)).collect()
}

/// Logit gradient of a single-prediction loss. CE uses the exact p − e_y,
/// which stays finite when p_y underflows.
pub fn logit_grad(kind: &LossKind, p: &[f64], y: usize) -> Vec<f64> {
    match kind {
        LossKind::Ce => {
            let mut g = p.to_vec();
            g[y] -= 1.0;
            g
        }
        _ => softmax_backward(p, &grad_unchecked(kind, p, y)),
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Moving-average predictions ȳ, one row per sample, starting at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ElrState {
    targets: Array2<f64>,
    beta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElrPenalty {
    pub value: f64,
    pub grad: Vec<f64>,
    /// 1 − ȳᵀp fell below the floor and was clamped.
    pub clamped: bool,
}

impl ElrState {
    pub fn new(n: usize, k: usize, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::range("beta", format!("must lie in [0,1], got {beta}")));
        }
        Ok(ElrState { targets: Array2::zeros((n, k)), beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.targets.nrows()
    }

    pub fn target(&self, index: usize) -> Result<Vec<f64>> {
        self.check(index, None)?;
        Ok(self.targets.row(index).to_vec())
    }

    pub fn targets(&self) -> &Array2<f64> {
        &self.targets
    }

    fn check(&self, index: usize, p: Option<&[f64]>) -> Result<()> {
        if index >= self.n() {
            return Err(Error::Index { index, len: self.n() });
        }
        if let Some(p) = p {
            if p.len() != self.targets.ncols() {
                return Err(Error::Dimension { expected: self.targets.ncols(), got: p.len() });
            }
        }
        Ok(())
    }

    /// ȳ[i] ← βȳ[i] + (1−β)p
    pub fn update(&mut self, index: usize, p: &[f64]) -> Result<()> {
        self.check(index, Some(p))?;
        let b = self.beta;
        for (t, v) in self.targets.row_mut(index).iter_mut().zip(p) {
            *t = b * *t + (1.0 - b) * v;
        }
        Ok(())
    }

    /// log(1 − ȳᵀp) and its gradient −ȳ/(1 − ȳᵀp).
    pub fn penalty(&self, index: usize, p: &[f64]) -> Result<ElrPenalty> {
        self.check(index, Some(p))?;
        let row = self.targets.row(index);
        let dotp: f64 = row.iter().zip(p).map(|(a, b)| a * b).sum();
        let mut arg = 1.0 - dotp;
        let clamped = arg < PROB_FLOOR;
        if clamped {
            arg = PROB_FLOOR;
        }
        Ok(ElrPenalty { value: arg.ln(), grad: row.iter().map(|t| -t / arg).collect(), clamped })
    }
}

/// Per-sample objective: base loss plus λ times the ELR penalty.
#[derive(Clone, Copy, Debug)]
pub struct Objective<'a> {
    pub base: &'a LossKind,
    pub elr: Option<(&'a ElrState, f64)>,
}

pub fn composite_objective<'a>(base: &'a LossSpec, elr: Option<(&'a ElrState, f64)>) -> Result<Objective<'a>> {
    base.validate()?;
    if let Some((_, lambda)) = elr {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::range("lambda", "must be finite and nonnegative"));
        }
    }
    Ok(Objective { base: &base.kind, elr })
}

impl Objective<'_> {
    pub fn value(&self, index: usize, p: &[f64], label: usize) -> Result<f64> {
        check_label(p, label)?;
        let mut v = loss_value_unchecked(self.base, p, label);
        if let Some((st, lambda)) = self.elr {
            v += lambda * st.penalty(index, p)?.value;
        }
        Ok(v)
    }

    /// Gradient with respect to p, plus whether the ELR argument was clamped.
    pub fn grad(&self, index: usize, p: &[f64], label: usize) -> Result<(Vec<f64>, bool)> {
        check_label(p, label)?;
        let mut g = grad_unchecked(self.base, p, label);
        let mut clamped = false;
        if let Some((st, lambda)) = self.elr {
            let pen = st.penalty(index, p)?;
            clamped = pen.clamped;
            for (gi, e) in g.iter_mut().zip(&pen.grad) {
                *gi += lambda * e;
            }
        }
        Ok((g, clamped))
    }
}
