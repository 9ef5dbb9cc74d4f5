use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Binary problems use class 0 for the first mixture component (y = +1)
/// and class 1 for the second (y = -1).
pub fn sign_of_class(c: usize) -> f64 {
    if c == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn class_of_sign(s: f64) -> usize {
    if s > 0.0 {
        0
    } else {
        1
    }
}

/// Features with clean and noisy labels.
///
/// The noise mask is always derived from the two label vectors, so it
/// cannot disagree with them.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataset {
    features: Array2<f64>,
    y_clean: Vec<usize>,
    y_noisy: Vec<usize>,
    noise_mask: Vec<bool>,
    in_region_r: Option<Vec<bool>>,
    num_classes: usize,
}

impl NoisyDataset {
    pub fn new_clean(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let noisy = labels.clone();
        Self::new(features, labels, noisy, num_classes)
    }

    pub fn new(
        features: Array2<f64>,
        y_clean: Vec<usize>,
        y_noisy: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::range("n", "dataset needs at least one sample"));
        }
        if num_classes < 2 {
            return Err(Error::range("num_classes", "need at least two classes"));
        }
        if y_clean.len() != n {
            return Err(Error::Dimension { expected: n, got: y_clean.len() });
        }
        if y_noisy.len() != n {
            return Err(Error::Dimension { expected: n, got: y_noisy.len() });
        }
        if let Some(&bad) = y_clean.iter().chain(&y_noisy).find(|&&c| c >= num_classes) {
            return Err(Error::range("label", format!("{bad} not in 0..{num_classes}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("non-finite feature value".into()));
        }
        let noise_mask = y_clean.iter().zip(&y_noisy).map(|(a, b)| a != b).collect();
        Ok(NoisyDataset { features, y_clean, y_noisy, noise_mask, in_region_r: None, num_classes })
    }

    /// Same features and clean labels, new noisy labels.
    pub fn with_noisy_labels(&self, y_noisy: Vec<usize>) -> Result<Self> {
        let mut out = Self::new(self.features.clone(), self.y_clean.clone(), y_noisy, self.num_classes)?;
        out.in_region_r = self.in_region_r.clone();
        Ok(out)
    }

    pub fn with_region_r(mut self, in_r: Vec<bool>) -> Result<Self> {
        if in_r.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), got: in_r.len() });
        }
        self.in_region_r = Some(in_r);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn x(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn y_clean(&self) -> &[usize] {
        &self.y_clean
    }

    pub fn y_noisy(&self) -> &[usize] {
        &self.y_noisy
    }

    pub fn noise_mask(&self) -> &[bool] {
        &self.noise_mask
    }

    pub fn in_region_r(&self) -> Option<&[bool]> {
        self.in_region_r.as_deref()
    }

    pub fn num_noisy(&self) -> usize {
        self.noise_mask.iter().filter(|&&m| m).count()
    }

    pub fn noise_rate(&self) -> f64 {
        self.num_noisy() as f64 / self.n() as f64
    }

    /// Fraction of samples whose noisy label is correct.
    pub fn labeling_accuracy(&self) -> f64 {
        1.0 - self.noise_rate()
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if self.num_classes != 2 {
            return Err(Error::Spec(format!("expected binary labels, dataset has {} classes", self.num_classes)));
        }
        Ok(())
    }
}
