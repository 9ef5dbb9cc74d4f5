//! Two-component Gaussian mixtures under a mean shift, and the error
//! the source-domain Bayes classifier makes on the shifted domain.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::NoisyDataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::special::norm_cdf;

pub const MIN_SIGMA: f64 = 1e-8;

/// Equal-prior isotropic mixture N(μ₁, σ²I) / N(μ₂, σ²I) on the source
/// domain; the target domain translates both components by Δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sigma: f64,
    pub delta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Source,
    Target,
}

/// α and the projection c = α(μ₂ − μ₁) of the shift onto the mean axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Shift {
    pub alpha: f64,
    pub c: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_counts(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        McEstimate { estimate: p, std_error: (p * (1.0 - p) / n as f64).sqrt(), n }
    }

    /// |estimate − reference| ≤ k·SE.
    pub fn agrees_with(&self, reference: f64, k: f64) -> bool {
        (self.estimate - reference).abs() <= k * self.std_error
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

impl DomainSpec {
    pub fn new(mu1: Vec<f64>, mu2: Vec<f64>, sigma: f64, delta: Vec<f64>) -> Result<Self> {
        let spec = DomainSpec { mu1, mu2, sigma, delta };
        spec.validate()?;
        Ok(spec)
    }

    /// μ₂ = μ₁ + σ·1_d and Δ = α(μ₂ − μ₁): the layout used for region-R work.
    pub fn along_ones(mu1: Vec<f64>, sigma: f64, alpha: f64) -> Result<Self> {
        let mu2: Vec<f64> = mu1.iter().map(|m| m + sigma).collect();
        let delta = vec![alpha * sigma; mu1.len()];
        Self::new(mu1, mu2, sigma, delta)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.mu1.len();
        if d == 0 {
            return Err(Error::Spec("dimension must be positive".into()));
        }
        if self.mu2.len() != d {
            return Err(Error::Dimension { expected: d, got: self.mu2.len() });
        }
        if self.delta.len() != d {
            return Err(Error::Dimension { expected: d, got: self.delta.len() });
        }
        if !(self.sigma.is_finite() && self.sigma >= MIN_SIGMA) {
            return Err(Error::Spec(format!("sigma must be finite and >= {MIN_SIGMA:e}, got {}", self.sigma)));
        }
        let all = self.mu1.iter().chain(&self.mu2).chain(&self.delta);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::Spec("non-finite mean or shift entry".into()));
        }
        if self.mu1 == self.mu2 {
            return Err(Error::Degenerate("mu1 and mu2 coincide".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    pub fn with_delta(&self, delta: Vec<f64>) -> Result<Self> {
        Self::new(self.mu1.clone(), self.mu2.clone(), self.sigma, delta)
    }

    pub fn mean_diff(&self) -> Vec<f64> {
        self.mu2.iter().zip(&self.mu1).map(|(b, a)| b - a).collect()
    }

    /// Component means on the requested domain.
    pub fn means(&self, which: Which) -> (Vec<f64>, Vec<f64>) {
        match which {
            Which::Source => (self.mu1.clone(), self.mu2.clone()),
            Which::Target => (
                self.mu1.iter().zip(&self.delta).map(|(m, d)| m + d).collect(),
                self.mu2.iter().zip(&self.delta).map(|(m, d)| m + d).collect(),
            ),
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }
}

/// Linear score w·x + b with w = (μ₁−μ₂)/σ²; positive means component one.
#[derive(Clone, Debug)]
pub(crate) struct LinearScore {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearScore {
    fn for_means(m1: &[f64], m2: &[f64], sigma: f64) -> Self {
        let s2 = sigma * sigma;
        let w = m1.iter().zip(m2).map(|(a, b)| (a - b) / s2).collect();
        let b = -(norm2(m1) - norm2(m2)) / (2.0 * s2);
        LinearScore { w, b }
    }

    pub fn source(spec: &DomainSpec) -> Self {
        Self::for_means(&spec.mu1, &spec.mu2, spec.sigma)
    }

    pub fn target(spec: &DomainSpec) -> Self {
        let (m1, m2) = spec.means(Which::Target);
        // The weight vector is shift-invariant; only the offset moves.
        let mut s = Self::for_means(&spec.mu1, &spec.mu2, spec.sigma);
        s.b = -(norm2(&m1) - norm2(&m2)) / (2.0 * spec.sigma * spec.sigma);
        s
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

/// h_S(x) = xᵀ(μ₁−μ₂)/σ² − (‖μ₁‖²−‖μ₂‖²)/(2σ²).
pub fn bayes_source_score(spec: &DomainSpec, x: &[f64]) -> Result<f64> {
    spec.check_dim(x)?;
    Ok(LinearScore::source(spec).eval(x))
}

/// h_T(x), the same rule with the offset computed from the shifted means.
pub fn bayes_target_score(spec: &DomainSpec, x: &[f64]) -> Result<f64> {
    spec.check_dim(x)?;
    Ok(LinearScore::target(spec).eval(x))
}

/// Class predicted by the source Bayes rule: 0 (y = +1) iff h_S > 0.
pub fn bayes_source_class(spec: &DomainSpec, x: &[f64]) -> Result<usize> {
    Ok(if bayes_source_score(spec, x)? > 0.0 { 0 } else { 1 })
}

pub fn shift_magnitude(spec: &DomainSpec) -> Result<Shift> {
    spec.validate()?;
    let diff = spec.mean_diff();
    let alpha = dot(&spec.delta, &diff) / norm2(&diff);
    if !alpha.is_finite() {
        return Err(Error::Degenerate("shift magnitude is not finite".into()));
    }
    let c = diff.iter().map(|v| alpha * v).collect();
    Ok(Shift { alpha, c })
}

/// Probability that the source Bayes rule mislabels a target sample.
pub fn mislabel_rate_closed_form(spec: &DomainSpec) -> Result<f64> {
    mislabel_rate_closed_form_with(spec, norm_cdf)
}

/// Same as [`mislabel_rate_closed_form`] with a caller-supplied normal CDF.
///
/// Each target component sits at a signed distance from the source
/// boundary along the mean axis: s₁ = ‖v‖(1 − 2α) for the first and
/// s₂ = ‖v‖(1 + 2α) for the second, v = (μ₂−μ₁)/2. The rate is
/// ½Φ(−s₁/σ) + ½Φ(−s₂/σ). For α ≥ −½ this is d₁ = ‖v − c‖·sign(‖v‖ − ‖c‖)
/// and d₂ = ‖v + c‖; past α = −½ the second component also crosses the
/// boundary and s₂ turns negative.
pub fn mislabel_rate_closed_form_with(spec: &DomainSpec, cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let Shift { alpha, .. } = shift_magnitude(spec)?;
    let half = 0.5 * norm2(&spec.mean_diff()).sqrt();
    let s1 = half * (1.0 - 2.0 * alpha);
    let s2 = half * (1.0 + 2.0 * alpha);
    Ok(0.5 * cdf(-s1 / spec.sigma) + 0.5 * cdf(-s2 / spec.sigma))
}

/// Writes sample `index` into `x` and returns its class (0 ⇔ y = +1).
pub(crate) fn draw_sample(
    m1: &[f64],
    m2: &[f64],
    sigma: f64,
    seed: u64,
    index: u64,
    x: &mut [f64],
) -> usize {
    let mut r = rng::stream(seed, index);
    let class = usize::from(r.random::<bool>());
    let mean = if class == 0 { m1 } else { m2 };
    for (xj, mj) in x.iter_mut().zip(mean) {
        let z: f64 = r.sample(StandardNormal);
        *xj = mj + sigma * z;
    }
    class
}

/// Draws `n` labelled samples. Sample i depends only on (seed, i).
pub fn sample_domain(spec: &DomainSpec, which: Which, n: usize, seed: u64) -> Result<NoisyDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::range("n", "need at least one sample"));
    }
    let d = spec.dim();
    let (m1, m2) = spec.means(which);
    let s = rng::derive(seed, rng::tag::SAMPLE);
    let mut feats = vec![0.0; n * d];
    let labels: Vec<usize> = feats
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, row)| draw_sample(&m1, &m2, spec.sigma, s, i as u64, row))
        .collect();
    let features = Array2::from_shape_vec((n, d), feats).expect("shape matches buffer");
    NoisyDataset::new_clean(features, labels, 2)
}

/// Fraction of target samples the source Bayes rule gets wrong.
///
/// Uses the same per-index draws as [`sample_domain`] on the target, so the
/// estimate equals the noise rate of `annotate_with_source` on that data.
pub fn mislabel_rate_monte_carlo(spec: &DomainSpec, n: usize, seed: u64) -> Result<McEstimate> {
    spec.validate()?;
    if n < 1000 {
        return Err(Error::range("n", format!("Monte Carlo needs n >= 1000, got {n}")));
    }
    let d = spec.dim();
    let (m1, m2) = spec.means(Which::Target);
    let h = LinearScore::source(spec);
    let s = rng::derive(seed, rng::tag::SAMPLE);
    let wrong: usize = (0..n as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |x, i| {
                let class = draw_sample(&m1, &m2, spec.sigma, s, i, x);
                let pred = if h.eval(x) > 0.0 { 0 } else { 1 };
                usize::from(pred != class)
            },
        )
        .sum();
    Ok(McEstimate::from_counts(wrong, n))
}
