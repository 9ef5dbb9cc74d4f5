//! Label-noise processes: source-model annotation, margin flips,
//! symmetric flips, and the high-confidence mislabeling region R.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sign_of_class, NoisyDataset};
use crate::domain::{self, dot, norm2, DomainSpec, LinearScore, McEstimate, Which};
use crate::error::{Error, Result};
use crate::rng;
use crate::special::{norm_cdf, sigmoid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRSpec {
    pub delta_conf: f64,
    pub spec: DomainSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RegionMembership {
    pub in_r: bool,
    pub in_r1: bool,
    pub in_r2: bool,
}

impl RegionRSpec {
    pub fn new(delta_conf: f64, spec: DomainSpec) -> Result<Self> {
        let r = RegionRSpec { delta_conf, spec };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_conf > 0.0 && self.delta_conf < 1.0) {
            return Err(Error::range("delta_conf", format!("must lie in (0,1), got {}", self.delta_conf)));
        }
        self.spec.validate()
    }

    /// log((1−δ)/δ)
    pub fn log_odds(&self) -> f64 {
        ((1.0 - self.delta_conf) / self.delta_conf).ln()
    }

    /// Radius of R1, σ(√d/2 − log((1−δ)/δ)/√d). Non-positive means R1 is empty.
    pub fn r1_radius(&self) -> f64 {
        let sd = (self.spec.dim() as f64).sqrt();
        self.spec.sigma * (sd / 2.0 - self.log_odds() / sd)
    }

    pub fn r1_is_empty(&self) -> bool {
        self.r1_radius() <= 0.0
    }
}

/// Relabels target data with the source Bayes rule.
pub fn annotate_with_source(data: &NoisyDataset, spec: &DomainSpec) -> Result<NoisyDataset> {
    data.require_binary()?;
    if data.dim() != spec.dim() {
        return Err(Error::Dimension { expected: spec.dim(), got: data.dim() });
    }
    let h = LinearScore::source(spec);
    let y = (0..data.n())
        .map(|i| {
            let x = data.x(i);
            if h.eval(x.as_slice().expect("rows are contiguous")) > 0.0 {
                0
            } else {
                1
            }
        })
        .collect();
    data.with_noisy_labels(y)
}

/// Flips every sample whose clean margin y·xᵀμ is not above r.
///
/// `r = f64::NEG_INFINITY` flips nothing.
pub fn flip_margin(data: &NoisyDataset, mu: &[f64], r: f64) -> Result<NoisyDataset> {
    data.require_binary()?;
    if mu.len() != data.dim() {
        return Err(Error::Dimension { expected: data.dim(), got: mu.len() });
    }
    if (norm2(mu).sqrt() - 1.0).abs() > 1e-9 {
        return Err(Error::range("mu", "must be a unit vector"));
    }
    if r.is_nan() {
        return Err(Error::range("r", "NaN"));
    }
    let y = (0..data.n())
        .map(|i| {
            let c = data.y_clean()[i];
            let margin = sign_of_class(c) * dot(data.x(i).as_slice().expect("contiguous"), mu);
            if margin > r {
                c
            } else {
                1 - c
            }
        })
        .collect();
    data.with_noisy_labels(y)
}

fn other_class(r: &mut ChaCha8Rng, k: usize, exclude: usize) -> usize {
    let j = r.random_range(0..k - 1);
    if j >= exclude {
        j + 1
    } else {
        j
    }
}

/// Symmetric noise applied to the clean labels: each label survives with
/// probability 1−η, otherwise becomes one of the other K−1 classes.
pub fn flip_symmetric(data: &NoisyDataset, eta: f64, k: usize, seed: u64) -> Result<NoisyDataset> {
    if k != data.num_classes() {
        return Err(Error::range("K", format!("dataset has {} classes, got K={k}", data.num_classes())));
    }
    let bound = 1.0 - 1.0 / k as f64;
    if !(eta >= 0.0 && eta < bound) {
        return Err(Error::range("eta", format!("need 0 <= eta < 1 - 1/K = {bound}, got {eta}")));
    }
    let s = rng::derive(seed, rng::tag::SYMMETRIC);
    let y = data
        .y_clean()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mut r = rng::stream(s, i as u64);
            if r.random::<f64>() < eta {
                other_class(&mut r, k, c)
            } else {
                c
            }
        })
        .collect();
    data.with_noisy_labels(y)
}

/// Replaces each currently-wrong label with a uniform draw from the
/// classes other than that wrong label. Some land back on the true class.
pub fn match_noise_rate(data: &NoisyDataset, seed: u64) -> Result<NoisyDataset> {
    let k = data.num_classes();
    let s = rng::derive(seed, rng::tag::MATCH);
    let y = data
        .y_noisy()
        .iter()
        .zip(data.noise_mask())
        .enumerate()
        .map(|(i, (&yn, &wrong))| {
            if wrong {
                other_class(&mut rng::stream(s, i as u64), k, yn)
            } else {
                yn
            }
        })
        .collect();
    data.with_noisy_labels(y)
}

pub fn region_r_membership(x: &[f64], rspec: &RegionRSpec) -> Result<RegionMembership> {
    let spec = &rspec.spec;
    let h = domain::bayes_source_score(spec, x)?;
    let radius = rspec.r1_radius();
    let in_r1 = radius > 0.0 && {
        let (center, _) = spec.means(Which::Target);
        let dist2: f64 = x.iter().zip(&center).map(|(a, c)| (a - c) * (a - c)).sum();
        dist2.sqrt() <= radius
    };
    let in_r2 = h < 0.0;
    Ok(RegionMembership { in_r: in_r1 && in_r2, in_r1, in_r2 })
}

/// The half-space xᵀ1 > (σd + 2μ₁ᵀ1)/2. Equals `h_S(x) < 0` when μ₂ = μ₁ + σ1_d.
pub fn in_r2_halfspace(x: &[f64], rspec: &RegionRSpec) -> Result<bool> {
    let spec = &rspec.spec;
    if x.len() != spec.dim() {
        return Err(Error::Dimension { expected: spec.dim(), got: x.len() });
    }
    let d = spec.dim() as f64;
    let sum_x: f64 = x.iter().sum();
    let sum_mu1: f64 = spec.mu1.iter().sum();
    Ok(sum_x > (spec.sigma * d + 2.0 * sum_mu1) / 2.0)
}

/// α > log((1−δ)/δ)/d
pub fn region_r_nonempty_condition(rspec: &RegionRSpec) -> Result<bool> {
    rspec.validate()?;
    let alpha = domain::shift_magnitude(&rspec.spec)?.alpha;
    Ok(alpha > rspec.log_odds() / rspec.spec.dim() as f64)
}

/// Pr[y = +1 | x] on the target domain, from the log density ratio.
pub fn posterior_true_class(x: &[f64], spec: &DomainSpec) -> Result<f64> {
    Ok(sigmoid(log_density_ratio(x, spec)?))
}

/// log P_T(x | y=+1) − log P_T(x | y=−1).
pub fn log_density_ratio(x: &[f64], spec: &DomainSpec) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(Error::Dimension { expected: spec.dim(), got: x.len() });
    }
    let (m1, m2) = spec.means(Which::Target);
    let (mut d1, mut d2) = (0.0, 0.0);
    for ((xi, a), b) in x.iter().zip(&m1).zip(&m2) {
        d1 += (xi - a) * (xi - a);
        d2 += (xi - b) * (xi - b);
    }
    Ok((d2 - d1) / (2.0 * spec.sigma * spec.sigma))
}

/// Plain Monte Carlo over target draws: how many land in R and how many of
/// those the source rule mislabels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionCount {
    pub n: usize,
    pub in_r: usize,
    pub mislabeled_in_r: usize,
}

impl RegionCount {
    pub fn conditional(&self) -> Option<McEstimate> {
        (self.in_r > 0).then(|| McEstimate::from_counts(self.mislabeled_in_r, self.in_r))
    }
}

pub fn region_r_monte_carlo(rspec: &RegionRSpec, n: usize, seed: u64) -> Result<RegionCount> {
    rspec.validate()?;
    let spec = &rspec.spec;
    let d = spec.dim();
    let (m1, m2) = spec.means(Which::Target);
    let s = rng::derive(seed, rng::tag::SAMPLE);
    let (in_r, wrong) = (0..n as u64)
        .into_par_iter()
        .map_init(
            || vec![0.0; d],
            |x, i| {
                let class = domain::draw_sample(&m1, &m2, spec.sigma, s, i, x);
                let m = region_r_membership(x, rspec).expect("dimension checked");
                // inside R the source rule always says class 1
                (usize::from(m.in_r), usize::from(m.in_r && class == 0))
            },
        )
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(RegionCount { n, in_r, mislabeled_in_r: wrong })
}

/// Draws from the target mixture conditioned on x ∈ R.
#[derive(Clone, Debug)]
pub struct RegionSample {
    /// y_clean drawn from the posterior, y_noisy from the source rule.
    pub data: NoisyDataset,
    pub posterior: Vec<f64>,
    /// Draws whose posterior fell below 1−δ (acceptance probability clamped to 1).
    pub clamped: usize,
    pub proposals: u64,
}

impl RegionSample {
    pub fn mislabel_estimate(&self) -> McEstimate {
        McEstimate::from_counts(self.data.num_noisy(), self.data.n())
    }
}

struct CapSampler {
    center: Vec<f64>,
    axis: Vec<f64>,
    sigma: f64,
    rho: f64,
    lo: f64,
    f_max: f64,
    d: usize,
    one_minus_delta: f64,
}

impl CapSampler {
    fn new(rspec: &RegionRSpec) -> Result<Self> {
        let spec = &rspec.spec;
        let rho = rspec.r1_radius() / spec.sigma;
        if rho <= 0.0 {
            return Err(Error::Degenerate("R1 is empty for this dimension and delta".into()));
        }
        let alpha = domain::shift_magnitude(spec)?.alpha;
        let diff = spec.mean_diff();
        let len = norm2(&diff).sqrt();
        let axis: Vec<f64> = diff.iter().map(|v| v / len).collect();
        // h_S < 0 ⇔ (x − center)ᵀaxis > σ·t0
        let t0 = len * (0.5 - alpha) / spec.sigma;
        if t0 >= rho {
            return Err(Error::Degenerate("R1 and R2 do not intersect".into()));
        }
        let lo = t0.max(-rho);
        let d = spec.dim();
        let t_min = if lo > 0.0 { lo } else { 0.0 };
        let f_max = chi2_cdf(d - 1, rho * rho - t_min * t_min);
        let (center, _) = spec.means(Which::Target);
        Ok(CapSampler { center, axis, sigma: spec.sigma, rho, lo, f_max, d, one_minus_delta: 1.0 - rspec.delta_conf })
    }

    /// Standard normal restricted to (lo, rho).
    fn truncated_normal(&self, r: &mut ChaCha8Rng) -> f64 {
        let u: f64 = r.random();
        if self.lo >= 0.0 {
            // upper-tail form keeps precision far from zero
            let (qa, qb) = (norm_cdf(-self.lo), norm_cdf(-self.rho));
            let q = qa - u * (qa - qb);
            std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * q)
        } else {
            let (pa, pb) = (norm_cdf(self.lo), norm_cdf(self.rho));
            let p = pa + u * (pb - pa);
            -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
        }
    }

    fn draw(&self, r: &mut ChaCha8Rng, spec: &DomainSpec, x: &mut [f64]) -> (u64, bool, f64) {
        let mut proposals = 0u64;
        loop {
            proposals += 1;
            let t = self.truncated_normal(r).clamp(self.lo, self.rho);
            let rem = self.rho * self.rho - t * t;
            let mut radial = 0.0;
            if self.d > 1 {
                if r.random::<f64>() * self.f_max > chi2_cdf(self.d - 1, rem) {
                    continue;
                }
                radial = truncated_chi2(r, self.d - 1, rem).sqrt();
            }
            let w = self.orthogonal_direction(r);
            for j in 0..self.d {
                x[j] = self.center[j] + self.sigma * (t * self.axis[j] + radial * w[j]);
            }
            if domain::bayes_source_score(spec, x).expect("dim") >= 0.0 {
                continue;
            }
            let post = posterior_true_class(x, spec).expect("dim");
            let clamped = post < self.one_minus_delta;
            if !clamped && r.random::<f64>() * post > self.one_minus_delta {
                continue;
            }
            return (proposals, clamped, post);
        }
    }

    fn orthogonal_direction(&self, r: &mut ChaCha8Rng) -> Vec<f64> {
        let mut w = vec![0.0; self.d];
        if self.d == 1 {
            return w;
        }
        loop {
            for v in w.iter_mut() {
                *v = r.sample(StandardNormal);
            }
            let p = dot(&w, &self.axis);
            for (v, a) in w.iter_mut().zip(&self.axis) {
                *v -= p * a;
            }
            let n = norm2(&w).sqrt();
            if n > 1e-12 {
                w.iter_mut().for_each(|v| *v /= n);
                return w;
            }
        }
    }
}

fn chi2_cdf(k: usize, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    statrs::function::gamma::gamma_lr(k as f64 / 2.0, x / 2.0)
}

/// χ²_k restricted to [0, m], by rejection on u = s/m whose density is
/// ∝ u^(k/2−1)·exp(−m·u/2). The proposal is the power law u^(k/2−1−b')
/// with b' ≤ m/2 chosen so the envelope touches at u* = 2b'/m.
fn truncated_chi2(r: &mut ChaCha8Rng, k: usize, m: f64) -> f64 {
    let a = k as f64 / 2.0 - 1.0;
    let b = m / 2.0;
    let bp = b.min(a + 0.5).max(0.0);
    let expo = a - bp + 1.0;
    let ustar = if b > 0.0 { (bp / b).min(1.0) } else { 1.0 };
    let log_peak = if bp > 0.0 { bp * ustar.ln() } else { 0.0 } - b * ustar;
    loop {
        let u = r.random::<f64>().powf(1.0 / expo);
        if u <= 0.0 {
            continue;
        }
        let log_ratio = if bp > 0.0 { bp * u.ln() } else { 0.0 } - b * u - log_peak;
        if r.random::<f64>().ln() <= log_ratio {
            return u * m;
        }
    }
}

/// Exact draws from D_T restricted to R = R1 ∩ R2, with the true label
/// drawn from its posterior. Draw i depends only on (seed, i).
pub fn sample_region_r(rspec: &RegionRSpec, n: usize, seed: u64) -> Result<RegionSample> {
    rspec.validate()?;
    if n == 0 {
        return Err(Error::range("n", "need at least one sample"));
    }
    let spec = &rspec.spec;
    let sampler = CapSampler::new(rspec)?;
    let d = spec.dim();
    let s = rng::derive(seed, rng::tag::REGION);
    let mut feats = vec![0.0; n * d];
    let draws: Vec<(usize, f64, bool, u64)> = feats
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, x)| {
            let mut r = rng::stream(s, i as u64);
            let (props, clamped, post) = sampler.draw(&mut r, spec, x);
            let y = usize::from(r.random::<f64>() >= post);
            (y, post, clamped, props)
        })
        .collect();
    let features = Array2::from_shape_vec((n, d), feats).expect("shape");
    let y_clean: Vec<usize> = draws.iter().map(|t| t.0).collect();
    let data = NoisyDataset::new(features, y_clean, vec![1; n], 2)?.with_region_r(vec![true; n])?;
    Ok(RegionSample {
        data,
        posterior: draws.iter().map(|t| t.1).collect(),
        clamped: draws.iter().filter(|t| t.2).count(),
        proposals: draws.iter().map(|t| t.3).sum(),
    })
}
