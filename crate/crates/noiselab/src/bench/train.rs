use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{agreement, argmax, SoftmaxModel};
use crate::dataset::NoisyDataset;
use crate::error::{Error, Result};
use crate::losses::{self, ElrState, LossKind, LossSpec};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElrConfig {
    pub beta: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Corrector {
    /// At each epoch end, relabel samples whose max probability exceeds the threshold.
    EpochRelabel { confidence_threshold: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSchedule {
    pub per_batch_until: usize,
    pub then_every: f64,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        EvalSchedule { per_batch_until: 90, then_every: 0.3 }
    }
}

impl EvalSchedule {
    /// Step interval after the per-batch phase.
    pub fn interval(&self, steps_per_epoch: usize) -> usize {
        ((self.then_every * steps_per_epoch as f64).floor() as usize).max(1)
    }

    fn due(&self, step: usize, interval: usize) -> bool {
        step <= self.per_batch_until || step % interval == 0
    }
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    #[serde(default)]
    pub elr: Option<ElrConfig>,
    /// Extra loss added to the objective with weight `lambda` (e.g. SR).
    #[serde(default)]
    pub regularizer: Option<LossSpec>,
    #[serde(default)]
    pub corrector: Option<Corrector>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub eval_schedule: EvalSchedule,
    pub seed: u64,
    /// Update the running input mean during training.
    #[serde(default = "default_true")]
    pub adapt_center: bool,
    /// Record curves at all (off for source fitting).
    #[serde(default = "default_true")]
    pub record: bool,
}

impl TrainConfig {
    pub fn new(loss: LossKind, lr: f64, epochs: usize, batch_size: usize, seed: u64) -> Self {
        TrainConfig {
            loss: loss.into(),
            elr: None,
            regularizer: None,
            corrector: None,
            lr,
            epochs,
            batch_size,
            eval_schedule: EvalSchedule::default(),
            seed,
            adapt_center: true,
            record: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if matches!(self.loss.kind, LossKind::Sr) {
            return Err(Error::range("loss", "SR alone has no label term; use it as a regularizer"));
        }
        if let Some(r) = &self.regularizer {
            r.validate()?;
            if matches!(r.kind, LossKind::Gjs { .. }) {
                return Err(Error::range("regularizer", "GJS is only supported as the base loss"));
            }
        }
        if let Some(e) = self.elr {
            if !(0.0..1.0).contains(&e.beta) {
                return Err(Error::range("elr.beta", format!("must lie in [0,1), got {}", e.beta)));
            }
            if !(e.lambda.is_finite() && e.lambda >= 0.0) {
                return Err(Error::range("elr.lambda", "must be finite and nonnegative"));
            }
        }
        if let Some(Corrector::EpochRelabel { confidence_threshold: t }) = self.corrector {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::range("confidence_threshold", format!("must lie in (0,1), got {t}")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::range("lr", "must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::range("epochs/batch_size", "must be positive"));
        }
        if !(self.eval_schedule.then_every > 0.0) {
            return Err(Error::range("eval_schedule.then_every", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRecord {
    pub step: usize,
    /// Cosine between class-centered weights and class-centered means.
    pub alignment: f64,
    /// Frobenius norm of the weights.
    pub norm: f64,
    pub kappa_on_mislabeled: f64,
    pub mean_loss: f64,
    pub acc_vs_ground_truth: f64,
    /// Agreement with the labels currently used for training.
    pub acc_noisy_fit: f64,
    /// Agreement with the original noisy labels.
    pub acc_vs_noisy_labels: f64,
    pub labeling_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: SoftmaxModel,
    pub curve: Vec<CurveRecord>,
    pub steps: usize,
    pub diverged: bool,
    pub elr_clamps: usize,
    pub final_labels: Vec<usize>,
}

impl TrainResult {
    pub fn last(&self) -> &CurveRecord {
        self.curve.last().expect("curve always has the initial record")
    }

    /// Highest ground-truth accuracy among records at or before `step`.
    pub fn peak_until(&self, step: usize) -> f64 {
        self.curve.iter().filter(|r| r.step <= step).map(|r| r.acc_vs_ground_truth).fold(f64::NEG_INFINITY, f64::max)
    }
}

fn centered_cosine(w: &Array2<f64>, means: Option<&Array2<f64>>) -> f64 {
    let Some(m) = means else { return f64::NAN };
    let wc = w - &w.mean_axis(Axis(0)).expect("rows").insert_axis(Axis(0));
    let mc = m - &m.mean_axis(Axis(0)).expect("rows").insert_axis(Axis(0));
    let num = (&wc * &mc).sum();
    let den = (wc.mapv(|v| v * v).sum() * mc.mapv(|v| v * v).sum()).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

struct Evaluator<'a> {
    data: &'a NoisyDataset,
    means: Option<&'a Array2<f64>>,
    base: &'a LossKind,
}

impl Evaluator<'_> {
    fn record(&self, step: usize, model: &SoftmaxModel, labels: &[usize]) -> CurveRecord {
        let probs = model.predict_proba(self.data.features().view());
        let pred: Vec<usize> = probs.rows().into_iter().map(|r| argmax(r.as_slice().unwrap())).collect();
        let mut loss = 0.0;
        for (row, &y) in probs.rows().into_iter().zip(labels) {
            loss += losses::loss_value_unchecked(self.base, row.as_slice().unwrap(), y);
        }
        let mask = self.data.noise_mask();
        let nb = mask.iter().filter(|&&m| m).count();
        let kappa = if nb == 0 {
            1.0
        } else {
            pred.iter()
                .zip(self.data.y_clean())
                .zip(mask)
                .filter(|(_, &m)| m)
                .filter(|((p, y), _)| p == y)
                .count() as f64
                / nb as f64
        };
        CurveRecord {
            step,
            alignment: centered_cosine(&model.weights, self.means),
            norm: model.weights.mapv(|v| v * v).sum().sqrt(),
            kappa_on_mislabeled: kappa,
            mean_loss: loss / self.data.n() as f64,
            acc_vs_ground_truth: agreement(&pred, self.data.y_clean()),
            acc_noisy_fit: agreement(&pred, labels),
            acc_vs_noisy_labels: agreement(&pred, self.data.y_noisy()),
            labeling_accuracy: self.data.labeling_accuracy(),
        }
    }
}

/// Minibatch SGD on the noisy labels of `data`, starting from `model0`.
///
/// `means` (K×d) is only used for the alignment column.
pub fn train_on_noisy(
    model0: &SoftmaxModel,
    data: &NoisyDataset,
    means: Option<&Array2<f64>>,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    if data.dim() != model0.dim() || data.num_classes() != model0.num_classes() {
        return Err(Error::Dimension { expected: model0.dim(), got: data.dim() });
    }
    let n = data.n();
    let k = model0.num_classes();
    let mut model = model0.clone();
    let mut labels = data.y_noisy().to_vec();
    let mut elr = cfg.elr.map(|e| ElrState::new(n, k, e.beta)).transpose()?;
    let ev = Evaluator { data, means, base: &cfg.loss.kind };

    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let interval = cfg.eval_schedule.interval(steps_per_epoch);
    let shuffle_seed = rng::derive(cfg.seed, rng::tag::SHUFFLE);
    let perturb_seed = rng::derive(cfg.seed, rng::tag::PERTURB);

    let mut curve = Vec::new();
    if cfg.record {
        curve.push(ev.record(0, &model, &labels));
    }
    let mut step = 0usize;
    let mut diverged = false;
    let mut elr_clamps = 0usize;
    let mut order: Vec<usize> = (0..n).collect();

    'outer: for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(shuffle_seed, epoch as u64));
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let xb = data.features().select(Axis(0), chunk);
            let xc = match (model.momentum, cfg.adapt_center) {
                (Some(mom), true) => {
                    let bm = xb.mean_axis(Axis(0)).expect("non-empty batch");
                    model.center = &model.center * (1.0 - mom) + &bm * mom;
                    &xb - &bm.insert_axis(Axis(0))
                }
                _ => &xb - &model.center.view().insert_axis(Axis(0)),
            };
            let clamps = sgd_step(&mut model, &xc, chunk, &labels, cfg, elr.as_mut(), perturb_seed, step)?;
            elr_clamps += clamps;
            if !model.is_finite() {
                diverged = true;
                break 'outer;
            }
            if cfg.record && cfg.eval_schedule.due(step, interval) {
                curve.push(ev.record(step, &model, &labels));
            }
        }
        if let Some(Corrector::EpochRelabel { confidence_threshold }) = cfg.corrector {
            let probs = model.predict_proba(data.features().view());
            for (row, lab) in probs.rows().into_iter().zip(labels.iter_mut()) {
                let r = row.as_slice().unwrap();
                let top = argmax(r);
                if r[top] > confidence_threshold {
                    *lab = top;
                }
            }
        }
    }
    if cfg.record && curve.last().map(|r| r.step) != Some(step) {
        curve.push(ev.record(step, &model, &labels));
    }
    Ok(TrainResult { model, curve, steps: step, diverged, elr_clamps, final_labels: labels })
}

#[allow(clippy::too_many_arguments)]
fn sgd_step(
    model: &mut SoftmaxModel,
    xc: &Array2<f64>,
    idx: &[usize],
    labels: &[usize],
    cfg: &TrainConfig,
    mut elr: Option<&mut ElrState>,
    perturb_seed: u64,
    step: usize,
) -> Result<usize> {
    let b = idx.len() as f64;
    let k = model.num_classes();
    let logits = xc.dot(&model.weights.t()) + &model.bias;
    let mut dz = Array2::<f64>::zeros((idx.len(), k));
    let mut dw = Array2::<f64>::zeros(model.weights.raw_dim());
    let mut clamps = 0;

    for (r, &i) in idx.iter().enumerate() {
        let p = losses::softmax(logits.row(r).as_slice().unwrap());
        let y = labels[i];
        let mut extra = vec![0.0; k];
        let mut any_extra = false;
        if let (Some(st), Some(e)) = (elr.as_deref_mut(), cfg.elr) {
            st.update(i, &p)?;
            let pen = st.penalty(i, &p)?;
            clamps += usize::from(pen.clamped);
            extra.iter_mut().zip(&pen.grad).for_each(|(a, g)| *a += e.lambda * g);
            any_extra = true;
        }
        if let Some(reg) = &cfg.regularizer {
            let g = losses::loss_grad_unchecked(&reg.kind, &p, y);
            extra.iter_mut().zip(&g).for_each(|(a, gi)| *a += reg.lambda * gi);
            any_extra = true;
        }
        let mut row = match &cfg.loss.kind {
            LossKind::Gjs { .. } => vec![0.0; k],
            kind => losses::logit_grad(kind, &p, y),
        };
        if any_extra {
            let back = losses::softmax_backward(&p, &extra);
            row.iter_mut().zip(&back).for_each(|(a, g)| *a += g);
        }
        dz.row_mut(r).assign(&Array1::from(row));
    }
    dw += &dz.t().dot(xc);

    if let LossKind::Gjs { pi, perturb_sigma } = &cfg.loss.kind {
        let m = pi.len() - 1;
        let mut r = rng::stream(perturb_seed, step as u64);
        let copies: Vec<Array2<f64>> = (0..m)
            .map(|_| xc.mapv(|v| v + perturb_sigma * r.sample::<f64, _>(StandardNormal)))
            .collect();
        let probs: Vec<Array2<f64>> = copies
            .iter()
            .map(|xp| {
                let mut z = xp.dot(&model.weights.t()) + &model.bias;
                for mut row in z.rows_mut() {
                    let p = losses::softmax(row.as_slice().unwrap());
                    row.assign(&Array1::from(p));
                }
                z
            })
            .collect();
        let mut dzs: Vec<Array2<f64>> = (0..m).map(|_| Array2::zeros((idx.len(), k))).collect();
        for (row, &i) in idx.iter().enumerate() {
            let preds: Vec<&[f64]> = probs.iter().map(|p| p.row(row).to_slice().unwrap()).collect();
            let grads = losses::gjs_grads(pi, labels[i], &preds);
            for j in 0..m {
                let back = losses::softmax_backward(preds[j], &grads[j]);
                dzs[j].row_mut(row).assign(&Array1::from(back));
            }
        }
        for (dzj, xp) in dzs.iter().zip(&copies) {
            dw += &dzj.t().dot(xp);
            dz += dzj;
        }
    }

    model.weights.scaled_add(-cfg.lr / b, &dw);
    let db = dz.sum_axis(Axis(0));
    model.bias.scaled_add(-cfg.lr / b, &db);
    Ok(clamps)
}
