//! Multiclass training bench: shifted K-class mixtures, a source model,
//! pseudo-labels, and adaptation curves under different losses.

mod region;
mod model;
mod train;

pub use region::{region_disagreement, LossDisagreement, RegionDisagreement, RegionDisagreementConfig};
pub use model::{agreement, argmax, SoftmaxModel};
pub use train::{train_on_noisy, Corrector, CurveRecord, ElrConfig, EvalSchedule, TrainConfig, TrainResult};

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::NoisyDataset;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::rng;

/// Class means, shift vector and both domains.
#[derive(Clone, Debug)]
pub struct Domains {
    pub source: NoisyDataset,
    pub target: NoisyDataset,
    pub means: Array2<f64>,
    pub delta: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainShape {
    pub k: usize,
    pub d: usize,
    pub sep: f64,
    pub sigma: f64,
    pub delta_scale: f64,
    /// Δ points from the mean of `shift_pair.0` toward that of `shift_pair.1`.
    pub shift_pair: (usize, usize),
}

impl DomainShape {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::range("k", "need at least two classes"));
        }
        if self.d < self.k {
            return Err(Error::range("d", format!("need d >= K, got d={} K={}", self.d, self.k)));
        }
        if !(self.sep.is_finite() && self.sep > 0.0) {
            return Err(Error::range("sep", "must be positive"));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::range("sigma", "must be positive"));
        }
        if !self.delta_scale.is_finite() {
            return Err(Error::range("delta_scale", "must be finite"));
        }
        let (a, b) = self.shift_pair;
        if a >= self.k || b >= self.k || a == b {
            return Err(Error::range("shift_pair", "must name two distinct classes"));
        }
        Ok(())
    }

    pub fn means(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.k, self.d));
        for c in 0..self.k {
            m[[c, c]] = self.sep;
        }
        m
    }

    pub fn delta(&self) -> Vec<f64> {
        let m = self.means();
        let (a, b) = self.shift_pair;
        let dir = &m.row(b) - &m.row(a);
        let len = dir.mapv(|v| v * v).sum().sqrt();
        dir.mapv(|v| self.delta_scale * v / len).to_vec()
    }
}

fn sample_classes(shape: &DomainShape, means: &Array2<f64>, shift: &[f64], n: usize, seed: u64) -> Result<NoisyDataset> {
    let d = shape.d;
    let mut x = Array2::zeros((n, d));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mut r = rng::stream(seed, i as u64);
        let c = r.random_range(0..shape.k);
        for j in 0..d {
            let z: f64 = r.sample(StandardNormal);
            x[[i, j]] = means[[c, j]] + shift[j] + shape.sigma * z;
        }
        y.push(c);
    }
    NoisyDataset::new_clean(x, y, shape.k)
}

/// Class means at sep·e_k; the target domain adds Δ to every class.
pub fn gen_multiclass_domains(shape: &DomainShape, n_source: usize, n_target: usize, seed: u64) -> Result<Domains> {
    shape.validate()?;
    let means = shape.means();
    let delta = shape.delta();
    let zero = vec![0.0; shape.d];
    let source = sample_classes(shape, &means, &zero, n_source, rng::derive(seed, rng::tag::SOURCE))?;
    let target = sample_classes(shape, &means, &delta, n_target, rng::derive(seed, rng::tag::TARGET))?;
    Ok(Domains { source, target, means, delta })
}

/// Accuracy of the source-domain Bayes rule (nearest mean) on `data`.
pub fn nearest_mean_accuracy(data: &NoisyDataset, means: &Array2<f64>) -> f64 {
    let pred: Vec<usize> = data
        .features()
        .rows()
        .into_iter()
        .map(|x| {
            let d: Vec<f64> = means.rows().into_iter().map(|m| -(&x - &m).mapv(|v| v * v).sum()).collect();
            argmax(&d)
        })
        .collect();
    agreement(&pred, data.y_clean())
}

#[derive(Clone, Debug)]
pub struct SourceFit {
    pub model: SoftmaxModel,
    pub train_accuracy: f64,
    pub diverged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceTraining {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Running-mean momentum; `None` disables centering.
    pub momentum: Option<f64>,
}

/// CE training from zero weights on the clean source labels.
pub fn fit_source_model(source: &NoisyDataset, st: &SourceTraining, seed: u64) -> Result<SourceFit> {
    let model0 = SoftmaxModel::zeros(source.num_classes(), source.dim(), st.momentum)?;
    let clean = source.with_noisy_labels(source.y_clean().to_vec())?;
    let mut cfg = TrainConfig::new(LossKind::Ce, st.lr, st.epochs, st.batch_size, seed);
    cfg.record = false;
    let res = train_on_noisy(&model0, &clean, None, &cfg)?;
    let train_accuracy = res.model.accuracy(source, source.y_clean());
    Ok(SourceFit { model: res.model, train_accuracy, diverged: res.diverged })
}

/// Labels the target with the model's arg-max (ties to the lowest class).
pub fn pseudo_label(model: &SoftmaxModel, target: &NoisyDataset) -> Result<NoisyDataset> {
    if model.dim() != target.dim() {
        return Err(Error::Dimension { expected: model.dim(), got: target.dim() });
    }
    target.with_noisy_labels(model.predict(target.features().view()))
}

pub const NEVER: usize = usize::MAX;

/// First recorded step at which agreement with the noisy labels reaches
/// `threshold`, searching from the curve's minimum onward. Starting at the
/// minimum discounts the initial model's agreement with its own
/// pseudo-labels. Returns [`NEVER`] if the threshold is not reached.
pub fn steps_to_fit(curve: &[CurveRecord], threshold: f64) -> usize {
    let Some(start) = curve
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.acc_vs_noisy_labels.total_cmp(&b.1.acc_vs_noisy_labels))
        .map(|(i, _)| i)
    else {
        return NEVER;
    };
    curve[start..].iter().find(|r| r.acc_vs_noisy_labels >= threshold).map_or(NEVER, |r| r.step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MemorizationSpeed {
    pub steps_unbounded: usize,
    pub steps_bounded: usize,
}

/// Steps until CE fits `threshold` of the noisy labels, for two label sets
/// on the same features.
pub fn memorization_speed(
    model0: &SoftmaxModel,
    unbounded: &NoisyDataset,
    bounded: &NoisyDataset,
    cfg: &TrainConfig,
    threshold: f64,
) -> Result<MemorizationSpeed> {
    if unbounded.features() != bounded.features() {
        return Err(Error::Spec("datasets must share features".into()));
    }
    let mut ce = cfg.clone();
    ce.loss = LossKind::Ce.into();
    ce.record = true;
    let a = train_on_noisy(model0, unbounded, None, &ce)?;
    let b = train_on_noisy(model0, bounded, None, &ce)?;
    Ok(MemorizationSpeed { steps_unbounded: steps_to_fit(&a.curve, threshold), steps_bounded: steps_to_fit(&b.curve, threshold) })
}

/// Settings of the standard bench problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSetup {
    pub shape: DomainShape,
    pub n_source: usize,
    pub n_target: usize,
    pub source: SourceTraining,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for BenchSetup {
    fn default() -> Self {
        Self::standard()
    }
}

impl Default for DomainShape {
    fn default() -> Self {
        BenchSetup::standard().shape
    }
}

impl Default for SourceTraining {
    fn default() -> Self {
        BenchSetup::standard().source
    }
}

impl BenchSetup {
    pub fn standard() -> Self {
        BenchSetup {
            shape: DomainShape { k: 5, d: 20, sep: 4.0, sigma: 1.0, delta_scale: 3.2, shift_pair: (0, 1) },
            n_source: 500,
            n_target: 500,
            source: SourceTraining { lr: 0.5, epochs: 200, batch_size: 128, momentum: Some(0.1) },
            lr: 0.02,
            epochs: 600,
            batch_size: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::range("n", "sample counts must be positive"));
        }
        Ok(())
    }

    pub fn train_config(&self, loss: LossKind, seed: u64) -> TrainConfig {
        TrainConfig::new(loss, self.lr, self.epochs, self.batch_size, seed)
    }
}

/// Everything a bench run starts from: domains, the source model and its
/// pseudo-labels on the target.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub domains: Domains,
    pub source: SourceFit,
    pub target: NoisyDataset,
}

pub fn prepare(setup: &BenchSetup, seed: u64) -> Result<Prepared> {
    setup.validate()?;
    let domains = gen_multiclass_domains(&setup.shape, setup.n_source, setup.n_target, seed)?;
    let source = fit_source_model(&domains.source, &setup.source, rng::derive(seed, rng::tag::SOURCE))?;
    let target = pseudo_label(&source.model, &domains.target)?;
    Ok(Prepared { domains, source, target })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(fits: &[f64]) -> Vec<CurveRecord> {
        fits.iter()
            .enumerate()
            .map(|(i, &f)| CurveRecord {
                step: i * 10,
                alignment: 0.0,
                norm: 0.0,
                kappa_on_mislabeled: 0.0,
                mean_loss: 0.0,
                acc_vs_ground_truth: 0.0,
                acc_noisy_fit: f,
                acc_vs_noisy_labels: f,
                labeling_accuracy: 0.0,
            })
            .collect()
    }

    #[test]
    fn steps_to_fit_searches_after_trough() {
        assert_eq!(steps_to_fit(&curve(&[1.0, 0.8, 0.7, 0.85, 0.93, 0.99]), 0.9), 40);
        assert_eq!(steps_to_fit(&curve(&[0.8, 0.7, 0.85]), 0.9), NEVER);
        assert_eq!(steps_to_fit(&curve(&[1.0, 1.0, 1.0]), 0.9), 0);
    }

    #[test]
    fn shape_validation() {
        let mut s = BenchSetup::standard().shape;
        s.d = 3;
        assert!(s.validate().is_err());
        let mut s = BenchSetup::standard().shape;
        s.shift_pair = (1, 1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn delta_direction() {
        let s = DomainShape { k: 3, d: 4, sep: 2.0, sigma: 1.0, delta_scale: 2.0_f64.sqrt(), shift_pair: (0, 1) };
        let d = s.delta();
        assert!((d[0] + 1.0).abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15 && d[2] == 0.0);
    }
}
