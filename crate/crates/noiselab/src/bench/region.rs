use serde::{Deserialize, Serialize};

use super::model::{agreement, SoftmaxModel};
use super::train::{train_on_noisy, TrainConfig};
use crate::domain::{sample_domain, DomainSpec, Which};
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::noise::{annotate_with_source, sample_region_r, RegionRSpec};
use crate::rng;

/// Robust losses trained on source-annotated target data, compared with a
/// CE model trained on the clean labels, on draws from region R.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionDisagreementConfig {
    pub d: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub delta_conf: f64,
    pub n_train: usize,
    pub n_region: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub losses: Vec<LossKind>,
}

impl Default for RegionDisagreementConfig {
    fn default() -> Self {
        RegionDisagreementConfig {
            d: 100,
            sigma: 1.0,
            alpha: 0.2,
            delta_conf: 0.01,
            n_train: 10_000,
            n_region: 2000,
            lr: 0.05,
            steps: 20_000,
            batch_size: 128,
            losses: vec![LossKind::Mae, LossKind::Gce { q: 0.7 }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossDisagreement {
    pub loss: String,
    /// Fraction of R draws where the model and the reference predict differently.
    pub disagreement: f64,
    /// Fraction of R draws the model assigns to the noisy (source) label.
    pub follows_noise: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionDisagreement {
    pub noise_rate: f64,
    pub reference_accuracy_on_r: f64,
    pub region_mislabel_rate: f64,
    pub results: Vec<LossDisagreement>,
}

pub fn region_disagreement(cfg: &RegionDisagreementConfig, seed: u64) -> Result<RegionDisagreement> {
    if cfg.d == 0 || cfg.n_train == 0 || cfg.n_region == 0 || cfg.steps == 0 || cfg.batch_size == 0 {
        return Err(Error::range("region_disagreement", "sizes must be positive"));
    }
    let spec = DomainSpec::along_ones(vec![0.0; cfg.d], cfg.sigma, cfg.alpha)?;
    let rspec = RegionRSpec::new(cfg.delta_conf, spec.clone())?;
    let clean = sample_domain(&spec, Which::Target, cfg.n_train, rng::derive(seed, rng::tag::TARGET))?;
    let noisy = annotate_with_source(&clean, &spec)?;
    let region = sample_region_r(&rspec, cfg.n_region, rng::derive(seed, rng::tag::REGION))?;
    let model0 = SoftmaxModel::from_gaussian_bayes(&spec)?;

    let epochs = (cfg.steps * cfg.batch_size).div_ceil(cfg.n_train);
    let train = |kind: LossKind, data| {
        let mut tc = TrainConfig::new(kind, cfg.lr, epochs, cfg.batch_size, seed);
        tc.record = false;
        train_on_noisy(&model0, data, None, &tc)
    };
    let clean_labeled = clean.with_noisy_labels(clean.y_clean().to_vec())?;
    let reference = train(LossKind::Ce, &clean_labeled)?;
    let rx = region.data.features().view();
    let ref_pred = reference.model.predict(rx);

    let mut results = Vec::new();
    for kind in &cfg.losses {
        let res = train(kind.clone(), &noisy)?;
        let pred = res.model.predict(rx);
        results.push(LossDisagreement {
            loss: kind.name(),
            disagreement: 1.0 - agreement(&pred, &ref_pred),
            follows_noise: agreement(&pred, region.data.y_noisy()),
            diverged: res.diverged,
        });
    }
    Ok(RegionDisagreement {
        noise_rate: noisy.noise_rate(),
        reference_accuracy_on_r: agreement(&ref_pred, region.data.y_clean()),
        region_mislabel_rate: region.mislabel_estimate().estimate,
        results,
    })
}
