use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::dataset::NoisyDataset;
use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::losses::softmax;

/// Affine softmax classifier over inputs shifted by a running mean.
///
/// During training each batch is centered by its own mean and the running
/// mean is updated; evaluation centers by the running mean. With
/// `momentum = None` inputs are used as-is.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub center: Array1<f64>,
    pub momentum: Option<f64>,
}

impl SoftmaxModel {
    pub fn zeros(k: usize, d: usize, momentum: Option<f64>) -> Result<Self> {
        if k < 2 || d == 0 {
            return Err(Error::range("shape", format!("need K >= 2 and d >= 1, got K={k}, d={d}")));
        }
        if let Some(m) = momentum {
            if !(m > 0.0 && m <= 1.0) {
                return Err(Error::range("momentum", format!("must lie in (0,1], got {m}")));
            }
        }
        Ok(SoftmaxModel {
            weights: Array2::zeros((k, d)),
            bias: Array1::zeros(k),
            center: Array1::zeros(d),
            momentum,
        })
    }

    /// The Bayes rule of a binary Gaussian mixture as a softmax model:
    /// row k holds μ_k/σ² and bias −‖μ_k‖²/(2σ²), so z₀ − z₁ = h_S.
    pub fn from_gaussian_bayes(spec: &DomainSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim();
        let s2 = spec.sigma * spec.sigma;
        let mut m = Self::zeros(2, d, None)?;
        for (k, mu) in [&spec.mu1, &spec.mu2].into_iter().enumerate() {
            for j in 0..d {
                m.weights[[k, j]] = mu[j] / s2;
            }
            m.bias[k] = -mu.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2);
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).chain(self.center.iter()).all(|v| v.is_finite())
    }

    /// Evaluation-mode logits.
    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let xc = &x - &self.center.view().insert_axis(Axis(0));
        xc.dot(&self.weights.t()) + &self.bias
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut s = self.scores(x);
        for mut row in s.rows_mut() {
            let p = softmax(row.as_slice().expect("contiguous"));
            row.assign(&Array1::from(p));
        }
        s
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.scores(x).rows().into_iter().map(|r| argmax(r.as_slice().expect("contiguous"))).collect()
    }

    pub fn accuracy(&self, data: &NoisyDataset, labels: &[usize]) -> f64 {
        let pred = self.predict(data.features().view());
        agreement(&pred, labels)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn agreement(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
