use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One feature vector with its ground-truth label, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// 1 = positive, 0 = negative. Absent for labels that were stripped.
    pub hidden_label: Option<u8>,
}

/// How a PU split is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub alpha: f64,
    pub n_labeled_positive: usize,
    pub n_unlabeled: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(alpha: f64, n_labeled_positive: usize, n_unlabeled: usize, seed: u64) -> Self {
        Self {
            alpha,
            n_labeled_positive,
            n_unlabeled,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.n_labeled_positive == 0 || self.n_unlabeled == 0 {
            return Err(Error::config(
                "both the labeled-positive and unlabeled sets must be nonempty",
            ));
        }
        Ok(())
    }

    /// Number of positives placed in the unlabeled set, `round(alpha * n_u)`.
    pub fn n_unlabeled_positive(&self) -> usize {
        ((self.alpha * self.n_unlabeled as f64).round() as usize).min(self.n_unlabeled)
    }

    pub fn n_unlabeled_negative(&self) -> usize {
        self.n_unlabeled - self.n_unlabeled_positive()
    }
}

/// Fully labeled samples, used for held-out evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Labeled positives plus an unlabeled mixture.
///
/// Ground-truth labels of the unlabeled set and the held-out test split are
/// kept private. Training code receives a [`TrainingView`], which has no
/// path to them; evaluation goes through [`PuDataset::evaluation`].
#[derive(Debug, Clone, PartialEq)]
pub struct PuDataset {
    dim: usize,
    positives: Array2<f64>,
    unlabeled: Array2<f64>,
    hidden: Option<Vec<u8>>,
    alpha_true: Option<f64>,
    seed: u64,
    test: Option<LabeledSet>,
}

/// Features only: what a training loop is allowed to see.
#[derive(Debug, Clone, Copy)]
pub struct TrainingView<'a> {
    pub positives: ArrayView2<'a, f64>,
    pub unlabeled: ArrayView2<'a, f64>,
}

impl TrainingView<'_> {
    pub fn dim(&self) -> usize {
        self.positives.ncols()
    }
}

/// Ground truth for scoring a trained model.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationView<'a> {
    pub unlabeled_features: ArrayView2<'a, f64>,
    pub unlabeled_labels: &'a [u8],
    pub alpha_true: f64,
    pub test: Option<&'a LabeledSet>,
}

impl PuDataset {
    pub(crate) fn from_parts(
        positives: Array2<f64>,
        unlabeled: Array2<f64>,
        hidden: Option<Vec<u8>>,
        alpha_true: Option<f64>,
        seed: u64,
        test: Option<LabeledSet>,
    ) -> Result<Self> {
        let dim = positives.ncols();
        if dim == 0 {
            return Err(Error::config("dataset dimensionality must be at least 1"));
        }
        if unlabeled.ncols() != dim {
            return Err(Error::shape(
                format!("{dim} unlabeled features"),
                unlabeled.ncols(),
            ));
        }
        if let Some(h) = &hidden {
            if h.len() != unlabeled.nrows() {
                return Err(Error::shape(
                    format!("{} hidden labels", unlabeled.nrows()),
                    h.len(),
                ));
            }
            if h.iter().any(|&l| l > 1) {
                return Err(Error::config("hidden labels must be 0 or 1"));
            }
        }
        if let Some(t) = &test {
            if t.dim() != dim || t.features.nrows() != t.labels.len() {
                return Err(Error::shape(
                    format!("test split with {dim} features"),
                    t.dim(),
                ));
            }
        }
        Ok(Self {
            dim,
            positives,
            unlabeled,
            hidden,
            alpha_true,
            seed,
            test,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_positive(&self) -> usize {
        self.positives.nrows()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.test.as_ref().map_or(0, LabeledSet::len)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The mixing ratio the data was generated with, if known.
    pub fn alpha_true(&self) -> Option<f64> {
        self.alpha_true
    }

    pub fn has_hidden_labels(&self) -> bool {
        self.hidden.is_some()
    }

    pub fn training_view(&self) -> TrainingView<'_> {
        TrainingView {
            positives: self.positives.view(),
            unlabeled: self.unlabeled.view(),
        }
    }

    /// Access to ground truth. Fails when the labels were stripped.
    pub fn evaluation(&self) -> Result<EvaluationView<'_>> {
        let hidden = self
            .hidden
            .as_deref()
            .ok_or_else(|| Error::usage("dataset carries no hidden labels"))?;
        Ok(EvaluationView {
            unlabeled_features: self.unlabeled.view(),
            unlabeled_labels: hidden,
            alpha_true: self.alpha_true.unwrap_or_else(|| empirical_alpha(hidden)),
            test: self.test.as_ref(),
        })
    }

    /// Drops all ground truth, including the held-out split.
    pub fn without_hidden_labels(&self) -> Self {
        Self {
            hidden: None,
            alpha_true: None,
            test: None,
            ..self.clone()
        }
    }

    /// Attaches a held-out labeled split.
    pub fn with_test(mut self, test: LabeledSet) -> Result<Self> {
        if test.dim() != self.dim {
            return Err(Error::shape(
                format!("{} test features", self.dim),
                test.dim(),
            ));
        }
        self.test = Some(test);
        Ok(self)
    }

    pub(crate) fn raw_parts(
        &self,
    ) -> (
        &Array2<f64>,
        &Array2<f64>,
        Option<&[u8]>,
        Option<&LabeledSet>,
    ) {
        (
            &self.positives,
            &self.unlabeled,
            self.hidden.as_deref(),
            self.test.as_ref(),
        )
    }

    /// Labeled positives as samples (label 1).
    pub fn positive_samples(&self) -> impl Iterator<Item = Sample> + '_ {
        self.positives.axis_iter(Axis(0)).map(|row| Sample {
            features: row.to_vec(),
            hidden_label: Some(1),
        })
    }

    /// Unlabeled samples with their ground truth, when retained.
    pub fn unlabeled_samples(&self) -> impl Iterator<Item = Sample> + '_ {
        self.unlabeled
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| Sample {
                features: row.to_vec(),
                hidden_label: self.hidden.as_ref().map(|h| h[i]),
            })
    }
}

pub(crate) fn empirical_alpha(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64
}

/// Stacks row vectors into a matrix.
pub(crate) fn rows_to_array(rows: &[Vec<f64>], dim: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), dim), flat).expect("rows share one dimensionality")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_round() {
        let s = SplitSpec::new(0.3, 10, 1000, 0);
        assert_eq!(s.n_unlabeled_positive(), 300);
        assert_eq!(s.n_unlabeled_negative(), 700);
        let s = SplitSpec::new(0.5, 10, 7, 0);
        assert_eq!(s.n_unlabeled_positive() + s.n_unlabeled_negative(), 7);
    }

    #[test]
    fn alpha_out_of_range_rejected() {
        for a in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(matches!(
                SplitSpec::new(a, 1, 1, 0).validate(),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn stripped_dataset_refuses_evaluation() {
        let ds = PuDataset::from_parts(
            Array2::zeros((2, 3)),
            Array2::zeros((4, 3)),
            Some(vec![1, 0, 0, 1]),
            Some(0.5),
            1,
            None,
        )
        .unwrap();
        assert!(ds.evaluation().is_ok());
        let stripped = ds.without_hidden_labels();
        assert!(matches!(stripped.evaluation(), Err(Error::Usage(_))));
        assert_eq!(
            stripped.training_view().unlabeled,
            ds.training_view().unlabeled
        );
    }
}
