//! Synthetic PU data with known class-conditional distributions.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::{rows_to_array, LabeledSet, PuDataset, SplitSpec};
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

/// A generator for one class-conditional distribution per label.
pub trait ClassConditional {
    fn dim(&self) -> usize;
    fn sample(&self, positive: bool, rng: &mut Rng) -> Vec<f64>;
}

/// Two 1-D Gaussians, parameterized by mean and variance.
#[derive(Debug, Clone, Copy)]
pub struct GaussianClasses {
    pos: Normal<f64>,
    neg: Normal<f64>,
}

impl GaussianClasses {
    pub fn new(mu_pos: f64, var_pos: f64, mu_neg: f64, var_neg: f64) -> Result<Self> {
        let check = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::config(format!(
                    "{name} variance must be positive, got {v}"
                )))
            }
        };
        let (vp, vn) = (check(var_pos, "positive")?, check(var_neg, "negative")?);
        let make = |mu: f64, var: f64| {
            Normal::new(mu, var.sqrt()).map_err(|e| Error::config(e.to_string()))
        };
        Ok(Self {
            pos: make(mu_pos, vp)?,
            neg: make(mu_neg, vn)?,
        })
    }
}

impl ClassConditional for GaussianClasses {
    fn dim(&self) -> usize {
        1
    }

    fn sample(&self, positive: bool, rng: &mut Rng) -> Vec<f64> {
        let d = if positive { self.pos } else { self.neg };
        vec![d.sample(rng)]
    }
}

/// Positives from `N(0, I_d)`, negatives from `N(s/sqrt(d) * 1, I_d)`, so
/// the class means are exactly `s` apart.
#[derive(Debug, Clone, Copy)]
pub struct IsotropicGaussianClasses {
    dim: usize,
    separation: f64,
}

impl IsotropicGaussianClasses {
    pub fn new(dim: usize, separation: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dimension must be at least 1"));
        }
        if !(separation >= 0.0 && separation.is_finite()) {
            return Err(Error::config(format!(
                "separation must be a finite nonnegative number, got {separation}"
            )));
        }
        Ok(Self { dim, separation })
    }

    pub fn negative_mean(&self) -> Vec<f64> {
        vec![self.separation / (self.dim as f64).sqrt(); self.dim]
    }
}

impl ClassConditional for IsotropicGaussianClasses {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, positive: bool, rng: &mut Rng) -> Vec<f64> {
        let shift = if positive {
            0.0
        } else {
            self.separation / (self.dim as f64).sqrt()
        };
        (0..self.dim)
            .map(|_| shift + Distribution::<f64>::sample(&StandardNormal, rng))
            .collect::<Vec<f64>>()
    }
}

/// Draws a PU dataset from `source`: `n_p` labeled positives, then an
/// unlabeled set with exactly `round(alpha * n_u)` positives, shuffled.
pub fn make_pu<S: ClassConditional + ?Sized>(source: &S, spec: &SplitSpec) -> Result<PuDataset> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let dim = source.dim();
    let positives: Vec<Vec<f64>> = (0..spec.n_labeled_positive)
        .map(|_| source.sample(true, &mut rng))
        .collect();
    let n_up = spec.n_unlabeled_positive();
    let mut unlabeled: Vec<(Vec<f64>, u8)> = (0..spec.n_unlabeled)
        .map(|i| {
            let pos = i < n_up;
            (source.sample(pos, &mut rng), pos as u8)
        })
        .collect();
    unlabeled.shuffle(&mut rng);
    let (rows, labels): (Vec<_>, Vec<_>) = unlabeled.into_iter().unzip();
    PuDataset::from_parts(
        rows_to_array(&positives, dim),
        rows_to_array(&rows, dim),
        Some(labels),
        Some(spec.alpha),
        spec.seed,
        None,
    )
}

/// Draws `n` fully labeled samples with `round(alpha * n)` positives.
pub fn sample_labeled<S: ClassConditional + ?Sized>(
    source: &S,
    n: usize,
    alpha: f64,
    seed: u64,
) -> Result<LabeledSet> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let mut rng = seeded(seed);
    let n_pos = ((alpha * n as f64).round() as usize).min(n);
    let mut rows: Vec<(Vec<f64>, u8)> = (0..n)
        .map(|i| {
            let pos = i < n_pos;
            (source.sample(pos, &mut rng), pos as u8)
        })
        .collect();
    rows.shuffle(&mut rng);
    let (rows, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok(LabeledSet {
        features: rows_to_array(&rows, source.dim()),
        labels,
    })
}

/// The 1-D two-Gaussian toy problem.
pub fn make_gaussian_toy(
    mu_pos: f64,
    var_pos: f64,
    mu_neg: f64,
    var_neg: f64,
    spec: &SplitSpec,
) -> Result<PuDataset> {
    make_pu(
        &GaussianClasses::new(mu_pos, var_pos, mu_neg, var_neg)?,
        spec,
    )
}

/// `d`-dimensional isotropic Gaussians whose means are `separation` apart.
pub fn make_gaussian_highdim(d: usize, separation: f64, spec: &SplitSpec) -> Result<PuDataset> {
    make_pu(&IsotropicGaussianClasses::new(d, separation)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    fn mean(xs: impl Iterator<Item = f64>) -> (f64, f64, usize) {
        let v: Vec<f64> = xs.collect();
        let n = v.len();
        let m = v.iter().sum::<f64>() / n as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, var, n)
    }

    #[test]
    fn toy_unlabeled_mean_near_midpoint() {
        let ds =
            make_gaussian_toy(0.0, 9.0, 30.0, 25.0, &SplitSpec::new(0.5, 100, 2000, 3)).unwrap();
        let (m, var, n) = mean(ds.training_view().unlabeled.iter().copied());
        let se = (var / n as f64).sqrt();
        assert!((m - 15.0).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn toy_exact_positive_count() {
        let ds =
            make_gaussian_toy(0.0, 9.0, 30.0, 25.0, &SplitSpec::new(0.3, 50, 1000, 9)).unwrap();
        let ev = ds.evaluation().unwrap();
        assert_eq!(ev.unlabeled_labels.iter().filter(|&&l| l == 1).count(), 300);
        assert_eq!(ds.positive_samples().count(), 50);
        assert!(ds.positive_samples().all(|s| s.hidden_label == Some(1)));
    }

    #[test]
    fn identical_classes_are_indistinguishable() {
        let ds =
            make_gaussian_toy(0.0, 1.0, 0.0, 1.0, &SplitSpec::new(0.5, 2000, 4000, 5)).unwrap();
        let ev = ds.evaluation().unwrap();
        let (mp, vp, np) = mean(ds.training_view().positives.iter().copied());
        let (mn, vn, nn) = mean(
            ev.unlabeled_features
                .axis_iter(Axis(0))
                .zip(ev.unlabeled_labels)
                .filter(|(_, &l)| l == 0)
                .map(|(r, _)| r[0]),
        );
        let z = (mp - mn) / (vp / np as f64 + vn / nn as f64).sqrt();
        assert!(z.abs() < 3.29, "two-sample z = {z}");
    }

    #[test]
    fn invalid_variance_rejected() {
        let spec = SplitSpec::new(0.5, 1, 1, 0);
        assert!(matches!(
            make_gaussian_toy(0.0, 0.0, 1.0, 1.0, &spec),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            make_gaussian_toy(0.0, 1.0, 1.0, -1.0, &spec),
            Err(Error::Config(_))
        ));
        let bad = SplitSpec::new(1.0, 1, 1, 0);
        assert!(matches!(
            make_gaussian_toy(0.0, 1.0, 1.0, 1.0, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn highdim_mean_distance_is_separation() {
        let g = IsotropicGaussianClasses::new(16, 8.0).unwrap();
        let d: f64 = g.negative_mean().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((d - 8.0).abs() < 1e-12);
        assert!(matches!(
            make_gaussian_highdim(0, 1.0, &SplitSpec::new(0.5, 1, 1, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SplitSpec::new(0.4, 30, 200, 77);
        let a = make_gaussian_highdim(5, 2.0, &spec).unwrap();
        let b = make_gaussian_highdim(5, 2.0, &spec).unwrap();
        assert_eq!(a, b);
    }
}
