//! Full-batch gradient descent on margin-flipped Gaussian data, and the
//! early-time accuracy bound on the mislabeled set.

use std::f64::consts::{PI, SQRT_2};

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_of_sign, sign_of_class, NoisyDataset};
use crate::domain;
use crate::error::{Error, Result};
use crate::noise::flip_margin;
use crate::special::{erf, softplus};

/// Which tanh argument the logistic gradient uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradForm {
    /// (1/(2n))Σ x(tanh(θᵀx) − ỹ), the gradient of (1/n)Σ ½log(1+exp(−2ỹθᵀx)).
    #[default]
    FullArgument,
    /// (1/(2n))Σ x(tanh(θᵀx/2) − ỹ), the gradient of (1/n)Σ log(1+exp(−ỹθᵀx)).
    HalfArgument,
}

impl GradForm {
    fn scale(self) -> f64 {
        match self {
            GradForm::FullArgument => 1.0,
            GradForm::HalfArgument => 0.5,
        }
    }
}

pub const DIVERGENCE_NORM: f64 = 1e6;
pub const ALIGNMENT_STOP: f64 = 0.1;

pub fn first_basis(d: usize) -> Vec<f64> {
    let mut mu = vec![0.0; d];
    mu[0] = 1.0;
    mu
}

/// x ~ N(yμ, σ²I) with μ = e₁, labels flipped wherever y·xᵀμ ≤ r.
pub fn gen_margin_flip_data(n: usize, d: usize, sigma: f64, r: f64, seed: u64) -> Result<(NoisyDataset, Vec<f64>)> {
    if d == 0 {
        return Err(Error::range("d", "must be positive"));
    }
    let mu = first_basis(d);
    let data = gen_margin_flip_data_with_mu(n, &mu, sigma, r, seed)?;
    Ok((data, mu))
}

pub fn gen_margin_flip_data_with_mu(n: usize, mu: &[f64], sigma: f64, r: f64, seed: u64) -> Result<NoisyDataset> {
    if !(r < 1.0) {
        return Err(Error::range("r", format!("need r < 1 so at most half the labels flip, got {r}")));
    }
    let minus: Vec<f64> = mu.iter().map(|v| -v).collect();
    let spec = domain::DomainSpec::new(mu.to_vec(), minus, sigma, vec![0.0; mu.len()])?;
    let clean = domain::sample_domain(&spec, domain::Which::Source, n, seed)?;
    flip_margin(&clean, mu, r)
}

fn noisy_signs(data: &NoisyDataset) -> Array1<f64> {
    data.y_noisy().iter().map(|&c| sign_of_class(c)).collect()
}

fn check_theta(theta: &[f64], data: &NoisyDataset) -> Result<()> {
    data.require_binary()?;
    if theta.len() != data.dim() {
        return Err(Error::Dimension { expected: data.dim(), got: theta.len() });
    }
    Ok(())
}

pub fn logistic_grad(theta: &[f64], data: &NoisyDataset, form: GradForm) -> Result<Vec<f64>> {
    check_theta(theta, data)?;
    let th = ArrayView1::from(theta);
    let a = form.scale();
    let y = noisy_signs(data);
    let resid = data.features().dot(&th).mapv(|s| (a * s).tanh()) - &y;
    let g = data.features().t().dot(&resid) / (2.0 * data.n() as f64);
    Ok(g.to_vec())
}

/// The loss whose gradient [`logistic_grad`] returns.
pub fn logistic_loss(theta: &[f64], data: &NoisyDataset, form: GradForm) -> Result<f64> {
    check_theta(theta, data)?;
    let th = ArrayView1::from(theta);
    let y = noisy_signs(data);
    let s = data.features().dot(&th);
    let total: f64 = match form {
        GradForm::FullArgument => s.iter().zip(&y).map(|(si, yi)| 0.5 * softplus(-2.0 * yi * si)).sum(),
        GradForm::HalfArgument => s.iter().zip(&y).map(|(si, yi)| softplus(-yi * si)).sum(),
    };
    Ok(total / data.n() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kappa {
    pub value: f64,
    /// B was empty; `value` is 1 by convention.
    pub empty: bool,
}

/// Ground-truth accuracy of sign(θᵀx) on the mislabeled samples.
pub fn kappa(data: &NoisyDataset, theta: &[f64]) -> Result<Kappa> {
    check_theta(theta, data)?;
    let s = data.features().dot(&ArrayView1::from(theta));
    Ok(kappa_from_scores(data, s.as_slice().expect("contiguous")))
}

fn kappa_from_scores(data: &NoisyDataset, scores: &[f64]) -> Kappa {
    let (mut hit, mut total) = (0usize, 0usize);
    for ((s, &wrong), &c) in scores.iter().zip(data.noise_mask()).zip(data.y_clean()) {
        if wrong {
            total += 1;
            hit += usize::from(class_of_sign(*s) == c);
        }
    }
    if total == 0 {
        Kappa { value: 1.0, empty: true }
    } else {
        Kappa { value: hit as f64 / total as f64, empty: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub eta: f64,
    pub max_steps: usize,
    #[serde(default)]
    pub form: GradForm,
    /// End the run as soon as the stopping time is reached.
    #[serde(default)]
    pub halt_at_t: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig { eta: 0.1, max_steps: 500, form: GradForm::FullArgument, halt_at_t: false }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::range("eta", "must be positive"));
        }
        if self.max_steps == 0 {
            return Err(Error::range("max_steps", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub alignment: f64,
    pub norm: f64,
    pub kappa_b: f64,
    pub loss: f64,
    pub acc_clean: f64,
    pub acc_noisy_fit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub stopping_t: Option<usize>,
    pub theta_at_t: Option<Vec<f64>>,
    pub theta_final: Vec<f64>,
    pub diverged: bool,
    pub empty_b: bool,
}

impl TrainTrace {
    pub fn record_at(&self, step: usize) -> Option<&TraceRecord> {
        self.records.iter().find(|r| r.step == step)
    }

    pub fn kappa_at_t(&self) -> Option<f64> {
        self.stopping_t.and_then(|t| self.record_at(t)).map(|r| r.kappa_b)
    }
}

fn record(step: usize, theta: &Array1<f64>, data: &NoisyDataset, mu: &[f64], form: GradForm) -> TraceRecord {
    let s = data.features().dot(theta);
    let scores = s.as_slice().expect("contiguous");
    let n = data.n() as f64;
    let (mut clean, mut fit) = (0usize, 0usize);
    for ((sc, &yc), &yn) in scores.iter().zip(data.y_clean()).zip(data.y_noisy()) {
        let pred = class_of_sign(*sc);
        clean += usize::from(pred == yc);
        fit += usize::from(pred == yn);
    }
    let th = theta.as_slice().expect("contiguous");
    TraceRecord {
        step,
        alignment: domain::dot(th, mu),
        norm: domain::norm2(th).sqrt(),
        kappa_b: kappa_from_scores(data, scores).value,
        loss: logistic_loss(th, data, form).expect("checked"),
        acc_clean: clean as f64 / n,
        acc_noisy_fit: fit as f64 / n,
    }
}

/// Gradient descent from θ₀ = 0, recording every step. The stopping time
/// T is the first positive step with θᵀμ ≥ 0.1.
pub fn gd_train(data: &NoisyDataset, mu: &[f64], cfg: &GdConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    check_theta(mu, data)?;
    let mut theta = Array1::<f64>::zeros(data.dim());
    let empty_b = data.num_noisy() == 0;
    let mut records = vec![record(0, &theta, data, mu, cfg.form)];
    let mut stopping_t = None;
    let mut theta_at_t = None;
    let mut diverged = false;
    for t in 1..=cfg.max_steps {
        let g = logistic_grad(theta.as_slice().unwrap(), data, cfg.form)?;
        theta.iter_mut().zip(&g).for_each(|(th, gi)| *th -= cfg.eta * gi);
        let rec = record(t, &theta, data, mu, cfg.form);
        if !rec.norm.is_finite() || rec.norm > DIVERGENCE_NORM {
            diverged = true;
            break;
        }
        if stopping_t.is_none() && rec.alignment >= ALIGNMENT_STOP {
            stopping_t = Some(t);
            theta_at_t = Some(theta.to_vec());
        }
        records.push(rec);
        if cfg.halt_at_t && stopping_t.is_some() {
            break;
        }
    }
    Ok(TrainTrace { records, stopping_t, theta_at_t, theta_final: theta.to_vec(), diverged, empty_b })
}

/// g(σ) = erf((1−r)/(√2σ))/(2(1+2σ)σ) + exp(−(r−1)²/(2σ²))/(√(2π)(1+2σ)).
pub fn etp_g(sigma: f64, r: f64) -> Result<f64> {
    check_sigma_r(sigma, r)?;
    let e = erf((1.0 - r) / (SQRT_2 * sigma));
    let tail = (-(r - 1.0).powi(2) / (2.0 * sigma * sigma)).exp();
    Ok(e / (2.0 * (1.0 + 2.0 * sigma) * sigma) + tail / ((2.0 * PI).sqrt() * (1.0 + 2.0 * sigma)))
}

/// Lower bound on κ(B; θ_T): 1 − exp(−g(σ)²/200).
pub fn etp_bound(sigma: f64, r: f64) -> Result<f64> {
    let g = etp_g(sigma, r)?;
    Ok(-(-g * g / 200.0).exp_m1())
}

/// E[ỹ·xᵀμ] = erf((1−r)/(√2σ)) + (2σ/√(2π))·exp(−(r−1)²/(2σ²)).
pub fn expected_noisy_correlation(sigma: f64, r: f64) -> Result<f64> {
    check_sigma_r(sigma, r)?;
    Ok(2.0 * b0(sigma, r)?)
}

/// b₀ = ½erf((1−r)/(√2σ)) + (σ/√(2π))·exp(−(r−1)²/(2σ²)).
pub fn b0(sigma: f64, r: f64) -> Result<f64> {
    check_sigma_r(sigma, r)?;
    let e = erf((1.0 - r) / (SQRT_2 * sigma));
    let tail = (-(r - 1.0).powi(2) / (2.0 * sigma * sigma)).exp();
    Ok(0.5 * e + sigma / (2.0 * PI).sqrt() * tail)
}

fn check_sigma_r(sigma: f64, r: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::range("sigma", format!("must be positive, got {sigma}")));
    }
    if !(r < 1.0) {
        return Err(Error::range("r", format!("must be below 1, got {r}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlignmentCheck {
    pub holds: bool,
    pub cosine: f64,
    pub bound: f64,
}

/// θᵀμ/‖θ‖ ≥ b₀/(10(1+2σ)).
pub fn alignment_bound_check_theta(theta: &[f64], mu: &[f64], sigma: f64, r: f64) -> Result<AlignmentCheck> {
    if theta.len() != mu.len() {
        return Err(Error::Dimension { expected: mu.len(), got: theta.len() });
    }
    let bound = b0(sigma, r)? / (10.0 * (1.0 + 2.0 * sigma));
    let nt = domain::norm2(theta).sqrt();
    let cosine = if nt > 0.0 { domain::dot(theta, mu) / (nt * domain::norm2(mu).sqrt()) } else { 0.0 };
    Ok(AlignmentCheck { holds: cosine >= bound, cosine, bound })
}

pub fn alignment_bound_check(trace: &TrainTrace, mu: &[f64], sigma: f64, r: f64) -> Result<AlignmentCheck> {
    let theta = trace
        .theta_at_t
        .as_ref()
        .ok_or_else(|| Error::Missing("trace has no stopping time T".into()))?;
    alignment_bound_check_theta(theta, mu, sigma, r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McMean {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

/// Sample mean of ỹ·xᵀμ over generated data.
pub fn noisy_correlation_monte_carlo(sigma: f64, r: f64, n: usize, d: usize, seed: u64) -> Result<McMean> {
    let (data, mu) = gen_margin_flip_data(n, d, sigma, r, seed)?;
    let vals: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| sign_of_class(data.y_noisy()[i]) * domain::dot(data.x(i).as_slice().unwrap(), &mu))
        .collect();
    Ok(mean_and_se(&vals))
}

pub(crate) fn mean_and_se(vals: &[f64]) -> McMean {
    let n = vals.len();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    McMean { mean, std_error: (var / n as f64).sqrt(), n }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_reference_values() {
        // mpmath, 40 digits
        let cases = [
            (0.01, 0.5, 49.019607843137253862, 0.99999394490060342613),
            (0.02, 0.5, 24.038461538461537942, 0.94438143139032224531),
            (0.05, 0.5, 9.0909090909090903586, 0.33848534435062534617),
            (0.05, 0.7, 9.0909090784946630395, 0.33848534360405029053),
            (0.1, 0.7, 4.1591107234130306229, 0.082856206173714548137),
            (0.5, 0.3, 0.49410707358410138082, 0.0012199642386736508057),
            (1.0, 0.5, 0.1811759293461041938, 0.00016411011933302915936),
        ];
        for (s, r, g, b) in cases {
            assert!((etp_g(s, r).unwrap() - g).abs() / g < 1e-13, "g({s},{r})");
            assert!((etp_bound(s, r).unwrap() - b).abs() / b < 1e-12, "bound({s},{r})");
        }
    }

    #[test]
    fn expected_correlation_reference() {
        for (s, r, want) in [(1.0, 0.5, 1.0870555760766251628), (0.5, 0.3, 0.98821414716820276164)] {
            assert!((expected_noisy_correlation(s, r).unwrap() - want).abs() < 1e-14);
        }
        assert_eq!(expected_noisy_correlation(0.3, f64::NEG_INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn r_at_least_one_rejected() {
        assert!(gen_margin_flip_data(10, 2, 1.0, 1.0, 0).is_err());
        assert!(etp_bound(0.1, 1.2).is_err());
        assert!(etp_bound(0.0, 0.5).is_err());
    }

    #[test]
    fn alignment_check_extremes() {
        let mu = first_basis(4);
        let minus: Vec<f64> = mu.iter().map(|v| -v).collect();
        assert!(alignment_bound_check_theta(&mu, &mu, 0.05, 0.5).unwrap().holds);
        assert!(!alignment_bound_check_theta(&minus, &mu, 0.05, 0.5).unwrap().holds);
    }
}
