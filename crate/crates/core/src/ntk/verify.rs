//! Gradient-descent dynamics on the linearized system and the checks built
//! on them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::system::{build_system, LinearizedSystem, RowSampler, SystemConfig};
use crate::exec::Parallelism;
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Stopping horizon used when the window has no upper end.
pub const UNBOUNDED_HORIZON: u64 = 10_000;

/// Residual norm, relative to the target, beyond which descent has diverged.
const DIVERGENCE_RATIO: f64 = 1e6;

/// Runs `steps` iterations of `theta <- theta - eta * J^T (J theta - y)`
/// from `theta = 0`, calling `visit(t, r_t)` for `t = 0..=steps`.
/// Returns the final parameters.
pub fn gradient_descent(
    j: &DMatrix<f64>,
    y: &DVector<f64>,
    eta: f64,
    steps: u64,
    mut visit: impl FnMut(u64, &DVector<f64>),
) -> Result<DVector<f64>> {
    let mut theta = DVector::zeros(j.ncols());
    let mut r = -y;
    let limit = DIVERGENCE_RATIO * y.norm();
    visit(0, &r);
    for t in 1..=steps {
        theta -= eta * j.tr_mul(&r);
        r = j * &theta - y;
        if !(r.norm() <= limit) {
            return Err(Error::Training(format!(
                "gradient descent diverged at step {t}: step size {eta} is unstable"
            )));
        }
        visit(t, &r);
    }
    Ok(theta)
}

/// Residuals `r_0 ..= r_{t_max}` of descent with `theta_0 = 0`.
pub fn residual_dynamics(
    system: &LinearizedSystem,
    eta: f64,
    t_max: u64,
) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(t_max as usize + 1);
    gradient_descent(&system.stacked(), &system.target(), eta, t_max, |_, r| {
        out.push(r.clone())
    })?;
    Ok(out)
}

/// `y` split along the near-null direction and its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct YDecomposition {
    pub y_parallel: DVector<f64>,
    pub y_perp: DVector<f64>,
}

/// `w`: `sqrt(alpha)/sqrt(n_p)` on the labeled block, `-1/sqrt(n_up)` on the
/// unlabeled-positive block, zero elsewhere.
pub fn null_direction(system: &LinearizedSystem) -> DVector<f64> {
    let [np, nup, _] = system.sizes().map(|n| n as f64);
    system.block_vector([system.alpha.sqrt() / np.sqrt(), -1.0 / nup.sqrt(), 0.0])
}

/// The collapsed target shared by both positive groups.
pub fn fixed_point(system: &LinearizedSystem) -> f64 {
    (system.mu_p + system.alpha * system.mu_u) / (1.0 + system.alpha)
}

/// Projector form: `y_par = w_hat w_hat^T y`, `y_perp = y - y_par`.
pub fn y_perp_decomposition(system: &LinearizedSystem) -> YDecomposition {
    let y = system.target();
    let w_hat = null_direction(system) / (1.0 + system.alpha).sqrt();
    let y_parallel = &w_hat * w_hat.dot(&y);
    let y_perp = &y - &y_parallel;
    debug_assert!(
        (&y_perp - closed_form_y_perp(system)).amax() <= 1e-9 * (1.0 + y.amax()),
        "projector disagrees with the block formula"
    );
    YDecomposition { y_parallel, y_perp }
}

/// Block formula for `y_perp`.
pub fn closed_form_y_perp(system: &LinearizedSystem) -> DVector<f64> {
    let s = system.scalings();
    let c = fixed_point(system);
    system.block_vector([c * s[0], c * s[1], system.mu_u * s[2]])
}

/// Curvatures, step size and stopping window of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralQuantities {
    pub w: Vec<f64>,
    pub w_hat: Vec<f64>,
    /// `||J^T w||`.
    pub jt_w_norm: f64,
    /// `sqrt(alpha) * (||mean(J_p) - phi|| + ||mean(J_up) - phi||)`, with
    /// `phi` the pooled positive-row mean.
    pub jt_w_bound: f64,
    /// `w_hat^T J J^T w_hat`: curvature along the near-null direction.
    pub null_curvature: f64,
    /// `v_hat^T J J^T v_hat` with `v_hat = y_perp / ||y_perp||`.
    pub signal_curvature: f64,
    /// The mean-feature approximation of the signal curvature.
    pub signal_curvature_approx: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub t_min: u64,
    /// `None` when the window is unbounded above.
    pub t_max: Option<u64>,
    /// Mean positive row (labeled and unlabeled pooled).
    pub phi: Vec<f64>,
    /// Mean negative row.
    pub phi_tilde: Vec<f64>,
}

impl SpectralQuantities {
    /// The curvature gap the argument needs: `null < signal`.
    pub fn regime_met(&self) -> bool {
        self.null_curvature < self.signal_curvature
    }

    /// `epsilon = 2` makes the lower end zero, which says nothing.
    pub fn t_min_degenerate(&self) -> bool {
        self.t_min == 0
    }

    /// The iteration count to stop at: the geometric middle of the window,
    /// with an unbounded upper end capped at [`UNBOUNDED_HORIZON`]. `None`
    /// when the window is empty.
    pub fn stopping_time(&self) -> Option<u64> {
        if !self.regime_met() {
            return None;
        }
        let lo = self.t_min.max(1);
        let hi = self
            .t_max
            .unwrap_or(UNBOUNDED_HORIZON)
            .min(UNBOUNDED_HORIZON);
        (lo <= hi).then(|| ((lo as f64 * hi as f64).sqrt().round() as u64).clamp(lo, hi))
    }
}

fn row_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.row_mean().transpose()
}

pub fn spectral_quantities(system: &LinearizedSystem, epsilon: f64) -> Result<SpectralQuantities> {
    if !(epsilon > 0.0 && epsilon <= 2.0) {
        return Err(Error::config(format!(
            "epsilon must lie in (0, 2], got {epsilon}"
        )));
    }
    let j = system.stacked();
    let parts = y_perp_decomposition(system);
    let perp_norm = parts.y_perp.norm();
    if perp_norm == 0.0 {
        return Err(Error::usage("y_perp is zero; both targets vanish"));
    }
    let alpha = system.alpha;
    let w = null_direction(system);
    let w_hat = &w / (1.0 + alpha).sqrt();
    let jt_w_norm = j.tr_mul(&w).norm();
    let null_curvature = j.tr_mul(&w_hat).norm_squared();
    let v_hat = &parts.y_perp / perp_norm;
    let signal_curvature = j.tr_mul(&v_hat).norm_squared();

    let (mp, mup) = (row_mean(&system.j_p), row_mean(&system.j_up));
    let [np, nup, _] = system.sizes().map(|n| n as f64);
    let phi = (&mp * np + &mup * nup) / (np + nup);
    let phi_tilde = row_mean(&system.j_un);
    let jt_w_bound = alpha.sqrt() * ((&mp - &phi).norm() + (&mup - &phi).norm());
    let (mu_p, mu_u) = (system.mu_p, system.mu_u);
    let mixed = &phi * (mu_p + alpha * mu_u) + &phi_tilde * ((1.0 - alpha) * mu_u);
    let signal_curvature_approx = (1.0 + alpha) * mixed.norm_squared()
        / (mu_p * mu_p + mu_u * mu_u + 2.0 * alpha * mu_p * mu_u);

    let t_min = (2.0 / epsilon).ln().ceil().max(0.0) as u64;
    let ratio = null_curvature / signal_curvature;
    let t_max = if ratio == 0.0 {
        None
    } else if ratio >= 1.0 {
        Some(0)
    } else {
        let t = (1.0 - epsilon / 2.0).ln() / (1.0 - ratio).ln();
        t.is_finite().then(|| t.floor() as u64)
    };
    Ok(SpectralQuantities {
        w: w.as_slice().to_vec(),
        w_hat: w_hat.as_slice().to_vec(),
        jt_w_norm,
        jt_w_bound,
        null_curvature,
        signal_curvature,
        signal_curvature_approx,
        eta: 1.0 / (2.0 * signal_curvature),
        epsilon,
        t_min,
        t_max,
        phi: phi.as_slice().to_vec(),
        phi_tilde: phi_tilde.as_slice().to_vec(),
    })
}

/// One point of a verifier trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub residual_norm: f64,
    /// `||J theta_t - y_perp||`.
    pub perp_gap: f64,
}

/// Outcome of running the dynamics to the stopping time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub sizes: [usize; 3],
    pub alpha: f64,
    pub mu_p: f64,
    pub mu_u: f64,
    pub spectral: SpectralQuantities,
    pub t_used: Option<u64>,
    /// `||J theta_T - y_perp|| / ||y||`.
    pub residual_ratio: Option<f64>,
    /// Mean unscaled prediction per block: labeled, unlabeled positive,
    /// unlabeled negative.
    pub block_means: Option<[f64; 3]>,
    pub fixed_point: f64,
    /// `||(I - eta JJ^T)^T y_perp|| <= (1 - eta Delta)^T ||y_perp||`.
    pub perp_decay_holds: Option<bool>,
    /// `||y_par - (I - eta JJ^T)^T y_par|| <= (1 - (1 - eta delta)^T) ||y_par||`.
    pub parallel_leak_holds: Option<bool>,
    pub pass: bool,
    pub diagnostic: Option<String>,
}

/// `(I - eta J J^T)^t v`.
fn propagate(j: &DMatrix<f64>, v: &DVector<f64>, eta: f64, t: u64) -> DVector<f64> {
    let mut x = v.clone();
    for _ in 0..t {
        x -= eta * (j * j.tr_mul(&x));
    }
    x
}

/// Runs descent to the stopping time and checks `||J theta_T - y_perp|| <=
/// epsilon ||y||`. Also returns the trajectory.
pub fn verify_theorem(
    system: &LinearizedSystem,
    epsilon: f64,
) -> Result<(TheoremReport, Vec<TrajectoryPoint>)> {
    let spectral = spectral_quantities(system, epsilon)?;
    let mut report = TheoremReport {
        sizes: system.sizes(),
        alpha: system.alpha,
        mu_p: system.mu_p,
        mu_u: system.mu_u,
        t_used: spectral.stopping_time(),
        residual_ratio: None,
        block_means: None,
        fixed_point: fixed_point(system),
        perp_decay_holds: None,
        parallel_leak_holds: None,
        pass: false,
        diagnostic: None,
        spectral,
    };
    let Some(t) = report.t_used else {
        let s = &report.spectral;
        report.diagnostic = Some(format!(
            "theorem regime not met: window [{}, {}] is empty (delta/Delta = {:.3e})",
            s.t_min,
            s.t_max.map_or("inf".to_string(), |m| m.to_string()),
            s.null_curvature / s.signal_curvature,
        ));
        return Ok((report, Vec::new()));
    };

    let j = system.stacked();
    let y = system.target();
    let parts = y_perp_decomposition(system);
    let eta = report.spectral.eta;
    let mut trajectory = Vec::with_capacity(t as usize + 1);
    let theta = match gradient_descent(&j, &y, eta, t, |t, r| {
        trajectory.push(TrajectoryPoint {
            t,
            residual_norm: r.norm(),
            perp_gap: (r + &parts.y_parallel).norm(),
        })
    }) {
        Ok(theta) => theta,
        Err(Error::Training(msg)) => {
            report.diagnostic = Some(msg);
            return Ok((report, trajectory));
        }
        Err(e) => return Err(e),
    };

    let fit = &j * &theta;
    let ratio = (&fit - &parts.y_perp).norm() / y.norm();
    let mean = |block: &DMatrix<f64>| (block * &theta).mean();
    report.block_means = Some([mean(&system.j_p), mean(&system.j_up), mean(&system.j_un)]);
    report.residual_ratio = Some(ratio);

    let s = &report.spectral;
    let slack = 1e-12 * y.norm();
    let perp_left = propagate(&j, &parts.y_perp, eta, t).norm();
    report.perp_decay_holds = Some(
        perp_left <= (1.0 - eta * s.signal_curvature).powi(t as i32) * parts.y_perp.norm() + slack,
    );
    let par_moved = (&parts.y_parallel - propagate(&j, &parts.y_parallel, eta, t)).norm();
    let leak_bound = 1.0 - (1.0 - eta * s.null_curvature).powi(t as i32);
    report.parallel_leak_holds = Some(par_moved <= leak_bound * parts.y_parallel.norm() + slack);

    report.pass = ratio <= epsilon;
    if !report.pass {
        report.diagnostic = Some(format!(
            "residual ratio {ratio:.4} exceeds epsilon {epsilon}"
        ));
    }
    Ok((report, trajectory))
}

/// Independent systems with seeds derived from `config.seed`; one report per
/// trial, in trial order.
pub fn verify_trials(
    positive: &dyn RowSampler,
    negative: &dyn RowSampler,
    config: &SystemConfig,
    epsilon: f64,
    trials: usize,
    par: Parallelism,
) -> Result<Vec<TheoremReport>> {
    par.map(trials, |i| {
        let cfg = SystemConfig {
            seed: derive_seed(config.seed, i as u64),
            ..*config
        };
        let system = build_system(positive, negative, &cfg)?;
        verify_theorem(&system, epsilon).map(|(r, _)| r)
    })
    .into_iter()
    .collect()
}

/// Vector targets, one scalar problem per coordinate over the same rows.
pub fn verify_coordinates(
    system: &LinearizedSystem,
    mu_p: &[f64],
    mu_u: &[f64],
    epsilon: f64,
) -> Result<Vec<TheoremReport>> {
    if mu_p.len() != mu_u.len() || mu_p.is_empty() {
        return Err(Error::shape(mu_p.len(), mu_u.len()));
    }
    mu_p.iter()
        .zip(mu_u)
        .map(|(&p, &u)| {
            let s = LinearizedSystem {
                mu_p: p,
                mu_u: u,
                ..system.clone()
            };
            verify_theorem(&s, epsilon).map(|(r, _)| r)
        })
        .collect()
}

/// Monte-Carlo means at one block size of an `n`-sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub mean_jt_w_norm: f64,
    pub mean_null_curvature: f64,
    pub mean_signal_curvature: f64,
    /// Smallest upper window end over the draws; `None` if all unbounded.
    pub min_t_max: Option<u64>,
}

/// For each `n`, draws `draws` systems with `n` rows per block and averages
/// the spectral quantities.
pub fn sample_size_sweep(
    positive: &dyn RowSampler,
    negative: &dyn RowSampler,
    base: &SystemConfig,
    sizes: &[usize],
    draws: usize,
    epsilon: f64,
    par: Parallelism,
) -> Result<Vec<SweepPoint>> {
    if draws == 0 {
        return Err(Error::config("a sweep needs at least one draw per size"));
    }
    sizes
        .iter()
        .map(|&n| {
            let per_draw: Vec<SpectralQuantities> = par
                .map(draws, |i| {
                    let cfg = SystemConfig {
                        n_p: n,
                        n_up: n,
                        n_un: n,
                        seed: derive_seed(derive_seed(base.seed, n as u64), i as u64),
                        ..*base
                    };
                    spectral_quantities(&build_system(positive, negative, &cfg)?, epsilon)
                })
                .into_iter()
                .collect::<Result<_>>()?;
            let mean = |f: fn(&SpectralQuantities) -> f64| {
                per_draw.iter().map(f).sum::<f64>() / draws as f64
            };
            Ok(SweepPoint {
                n,
                mean_jt_w_norm: mean(|s| s.jt_w_norm),
                mean_null_curvature: mean(|s| s.null_curvature),
                mean_signal_curvature: mean(|s| s.signal_curvature),
                min_t_max: per_draw.iter().filter_map(|s| s.t_max).min(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntk::{ConstantRows, GaussianRows};

    fn gaussian(n: usize, seed: u64) -> LinearizedSystem {
        let mut pos = vec![0.0; 20];
        pos[0] = 1.0;
        let mut neg = vec![0.0; 20];
        neg[1] = 1.0;
        let cfg = SystemConfig {
            n_p: n,
            n_up: n,
            n_un: n,
            alpha: 0.5,
            mu_p: 1.0,
            mu_u: 0.0,
            seed,
        };
        build_system(
            &GaussianRows {
                mean: pos,
                std: 0.1,
            },
            &GaussianRows {
                mean: neg,
                std: 0.1,
            },
            &cfg,
        )
        .unwrap()
    }

    #[test]
    fn zero_step_keeps_initial_residual() {
        let s = gaussian(10, 1);
        let traj = residual_dynamics(&s, 0.0, 5).unwrap();
        for r in traj {
            assert_eq!(r, -s.target());
        }
    }

    #[test]
    fn orthonormal_rows_converge_in_one_step() {
        let j_p = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let j_up = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let j_un = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]);
        // alpha = 0.5 scales the last two rows to sqrt(0.5); rescale them back
        let s = LinearizedSystem::from_blocks(
            j_p,
            j_up * 2f64.sqrt(),
            j_un * 2f64.sqrt(),
            0.5,
            2.0,
            -1.0,
        )
        .unwrap();
        let r = residual_dynamics(&s, 1.0, 1).unwrap();
        assert!(r[1].amax() < 1e-15);
    }

    #[test]
    fn constant_features_have_exact_null_direction() {
        let s = build_system(
            &ConstantRows {
                row: vec![1.0, 2.0],
            },
            &ConstantRows {
                row: vec![-1.0, 0.5],
            },
            &SystemConfig {
                n_p: 4,
                n_up: 6,
                n_un: 5,
                alpha: 0.3,
                mu_p: 1.0,
                mu_u: 0.0,
                seed: 0,
            },
        )
        .unwrap();
        let q = spectral_quantities(&s, 0.05).unwrap();
        assert!(q.jt_w_norm < 1e-15);
        assert_eq!(q.t_max, None);
        let (rep, _) = verify_theorem(&s, 0.05).unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn epsilon_two_is_degenerate() {
        let q = spectral_quantities(&gaussian(20, 2), 2.0).unwrap();
        assert!(q.t_min_degenerate());
        assert!(spectral_quantities(&gaussian(20, 2), 2.5).is_err());
    }

    #[test]
    fn equal_targets_leave_y_whole() {
        let mut s = gaussian(7, 3);
        s.mu_p = 0.4;
        s.mu_u = 0.4;
        let d = y_perp_decomposition(&s);
        assert!(d.y_parallel.amax() < 1e-15);
    }

    #[test]
    fn gaussian_system_passes() {
        let (rep, traj) = verify_theorem(&gaussian(500, 4), 0.1).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(traj.len() as u64, rep.t_used.unwrap() + 1);
    }

    #[test]
    fn small_sample_tight_epsilon_fails_with_diagnostic() {
        let (rep, _) = verify_theorem(&gaussian(2, 5), 1e-6).unwrap();
        assert!(!rep.pass);
        assert!(rep.diagnostic.is_some());
    }
}
