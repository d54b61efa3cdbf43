//! Row samplers and the stacked linear system.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ClassConditional;
use crate::encoder::Encoder;
use crate::rng::{seeded, Rng};
use crate::{Error, Result};

/// A source of feature (Jacobian) rows for one class.
pub trait RowSampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut Rng) -> Vec<f64>;
}

/// `mean + std * z` with `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRows {
    pub mean: Vec<f64>,
    pub std: f64,
}

/// `mean + u` with `u` uniform on `[-half_width, half_width]^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformRows {
    pub mean: Vec<f64>,
    pub half_width: f64,
}

/// The same row every time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRows {
    pub row: Vec<f64>,
}

impl RowSampler for GaussianRows {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .map(|m| m + self.std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect()
    }
}

impl RowSampler for UniformRows {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let h = self.half_width;
        self.mean
            .iter()
            .map(|m| {
                if h > 0.0 {
                    m + rng.random_range(-h..=h)
                } else {
                    *m
                }
            })
            .collect()
    }
}

impl RowSampler for ConstantRows {
    fn dim(&self) -> usize {
        self.row.len()
    }

    fn sample(&self, _rng: &mut Rng) -> Vec<f64> {
        self.row.clone()
    }
}

/// Gradient of one encoder output coordinate w.r.t. all parameters, at
/// inputs drawn from one class of `source`.
pub struct EncoderJacobianRows {
    pub encoder: Encoder,
    pub source: Arc<dyn ClassConditional + Send + Sync>,
    pub positive: bool,
    pub output_index: usize,
}

impl RowSampler for EncoderJacobianRows {
    fn dim(&self) -> usize {
        self.encoder.num_params()
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let x = self.source.sample(self.positive, rng);
        self.encoder
            .output_jacobian_row(&x, self.output_index)
            .expect("sampler input matches the encoder")
    }
}

/// Sizes, class prior, scalar targets and seed of one system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_p: usize,
    pub n_up: usize,
    pub n_un: usize,
    pub alpha: f64,
    pub mu_p: f64,
    pub mu_u: f64,
    pub seed: u64,
}

/// The three unscaled Jacobian blocks with the prior and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub j_p: DMatrix<f64>,
    pub j_up: DMatrix<f64>,
    pub j_un: DMatrix<f64>,
    pub alpha: f64,
    pub mu_p: f64,
    pub mu_u: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )))
    }
}

impl LinearizedSystem {
    pub fn from_blocks(
        j_p: DMatrix<f64>,
        j_up: DMatrix<f64>,
        j_un: DMatrix<f64>,
        alpha: f64,
        mu_p: f64,
        mu_u: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if [j_p.nrows(), j_up.nrows(), j_un.nrows()].contains(&0) {
            return Err(Error::config("every block needs at least one row"));
        }
        let d = j_p.ncols();
        if j_up.ncols() != d || j_un.ncols() != d {
            return Err(Error::shape(
                format!("{d} columns in every block"),
                format!("{} and {}", j_up.ncols(), j_un.ncols()),
            ));
        }
        Ok(Self {
            j_p,
            j_up,
            j_un,
            alpha,
            mu_p,
            mu_u,
        })
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.j_p.nrows(), self.j_up.nrows(), self.j_un.nrows()]
    }

    pub fn dim(&self) -> usize {
        self.j_p.ncols()
    }

    pub fn total_rows(&self) -> usize {
        self.sizes().iter().sum()
    }

    /// Per-block row scalings `1/sqrt(n_p)`, `sqrt(a/n_up)`, `sqrt((1-a)/n_un)`.
    pub fn scalings(&self) -> [f64; 3] {
        let [np, nup, nun] = self.sizes().map(|n| n as f64);
        [
            1.0 / np.sqrt(),
            (self.alpha / nup).sqrt(),
            ((1.0 - self.alpha) / nun).sqrt(),
        ]
    }

    /// The scaled, stacked Jacobian.
    pub fn stacked(&self) -> DMatrix<f64> {
        let s = self.scalings();
        let mut j = DMatrix::zeros(self.total_rows(), self.dim());
        let mut row = 0;
        for (block, scale) in [&self.j_p, &self.j_up, &self.j_un].into_iter().zip(s) {
            j.rows_mut(row, block.nrows()).copy_from(&(block * scale));
            row += block.nrows();
        }
        j
    }

    /// The stacked target: each block's scaling times its class target.
    pub fn target(&self) -> DVector<f64> {
        let s = self.scalings();
        let values = [self.mu_p * s[0], self.mu_u * s[1], self.mu_u * s[2]];
        self.block_vector(values)
    }

    /// A stacked vector that is constant within each block.
    pub(crate) fn block_vector(&self, values: [f64; 3]) -> DVector<f64> {
        let mut v = DVector::zeros(self.total_rows());
        let mut row = 0;
        for (n, x) in self.sizes().into_iter().zip(values) {
            v.rows_mut(row, n).fill(x);
            row += n;
        }
        v
    }
}

/// Draws `n_p` and `n_up` rows from `positive` and `n_un` from `negative`, in
/// that order, from one generator seeded with `config.seed`.
pub fn build_system(
    positive: &dyn RowSampler,
    negative: &dyn RowSampler,
    config: &SystemConfig,
) -> Result<LinearizedSystem> {
    check_alpha(config.alpha)?;
    if config.n_p == 0 || config.n_up == 0 || config.n_un == 0 {
        return Err(Error::config("n_p, n_up and n_un must all be at least 1"));
    }
    let d = positive.dim();
    if negative.dim() != d || d == 0 {
        return Err(Error::shape(
            format!("{d} features per row"),
            negative.dim(),
        ));
    }
    let mut rng = seeded(config.seed);
    let mut draw = |sampler: &dyn RowSampler, n: usize| {
        let flat: Vec<f64> = (0..n).flat_map(|_| sampler.sample(&mut rng)).collect();
        DMatrix::from_row_slice(n, d, &flat)
    };
    let j_p = draw(positive, config.n_p);
    let j_up = draw(positive, config.n_up);
    let j_un = draw(negative, config.n_un);
    LinearizedSystem::from_blocks(j_p, j_up, j_un, config.alpha, config.mu_p, config.mu_u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_assembled_unit_system() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let s =
            LinearizedSystem::from_blocks(one.clone(), one.clone(), one, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(s.target().as_slice(), &[1.0, 0.0, 0.0]);
        let j = s.stacked();
        assert_eq!(j[(0, 0)], 1.0);
        assert_eq!(j[(1, 0)], 0.5f64.sqrt());
        assert_eq!(j[(2, 0)], 0.5f64.sqrt());
    }

    #[test]
    fn alpha_must_be_interior() {
        let g = ConstantRows { row: vec![1.0] };
        for alpha in [0.0, 1.0, -0.2, f64::NAN] {
            let cfg = SystemConfig {
                n_p: 2,
                n_up: 2,
                n_un: 2,
                alpha,
                mu_p: 1.0,
                mu_u: 0.0,
                seed: 0,
            };
            assert!(matches!(build_system(&g, &g, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn build_is_seeded() {
        let g = GaussianRows {
            mean: vec![1.0, 0.0, 2.0],
            std: 0.3,
        };
        let cfg = SystemConfig {
            n_p: 5,
            n_up: 4,
            n_un: 3,
            alpha: 0.4,
            mu_p: 1.0,
            mu_u: 0.0,
            seed: 11,
        };
        let a = build_system(&g, &g, &cfg).unwrap();
        assert_eq!(a, build_system(&g, &g, &cfg).unwrap());
        assert_eq!(a.stacked().shape(), (12, 3));
    }
}
