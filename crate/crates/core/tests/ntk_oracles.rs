//! Linearized dynamics against dense linear algebra done independently.

use nalgebra::{DMatrix, DVector};
use vqpu::ntk::{
    build_system, closed_form_y_perp, fixed_point, gradient_descent, residual_dynamics,
    spectral_quantities, verify_theorem, GaussianRows, LinearizedSystem, SystemConfig, UniformRows,
};

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

fn system(n: [usize; 3], alpha: f64, mu: (f64, f64), seed: u64) -> LinearizedSystem {
    let pos = GaussianRows {
        mean: unit(20, 0),
        std: 0.1,
    };
    let neg = GaussianRows {
        mean: unit(20, 1),
        std: 0.1,
    };
    let cfg = SystemConfig {
        n_p: n[0],
        n_up: n[1],
        n_un: n[2],
        alpha,
        mu_p: mu.0,
        mu_u: mu.1,
        seed,
    };
    build_system(&pos, &neg, &cfg).unwrap()
}

#[test]
fn residuals_are_matrix_powers() {
    for seed in 0..3 {
        let s = system([12, 20, 16], 0.6, (2.0, -1.0), seed);
        let eta = spectral_quantities(&s, 0.1).unwrap().eta;
        let j = s.stacked();
        let n = j.nrows();
        let m = DMatrix::identity(n, n) - eta * &j * j.transpose();
        let r0 = -s.target();
        let mut power = DMatrix::<f64>::identity(n, n);
        for (t, r) in residual_dynamics(&s, eta, 150).unwrap().iter().enumerate() {
            assert!((&power * &r0 - r).amax() < 1e-9, "seed {seed}, t {t}");
            power = &m * power;
        }
    }
}

#[test]
fn long_descent_reaches_min_norm_least_squares() {
    // Fewer rows than columns: J^+ y interpolates and is the limit of
    // descent from zero.
    let s = system([4, 5, 6], 0.5, (1.0, 0.0), 9);
    let j = s.stacked();
    let y = s.target();
    let svd = j.clone().svd(true, true);
    let lambda_max = svd.singular_values.max().powi(2);
    let oracle = svd.pseudo_inverse(1e-12).unwrap() * &y;
    let theta = gradient_descent(&j, &y, 1.0 / lambda_max, 400_000, |_, _| {}).unwrap();
    assert!(
        (&theta - &oracle).amax() < 1e-6,
        "gap {}",
        (&theta - &oracle).amax()
    );
    assert!((&j * &theta - &y).norm() < 1e-8);
}

#[test]
fn closed_form_matches_projection_onto_null_complement() {
    let mut k = 0;
    for &alpha in &[0.1, 0.35, 0.5, 0.8] {
        for &(mp, mu) in &[(1.0, 0.0), (-2.0, 3.5), (0.25, 0.25)] {
            k += 1;
            let s = system([3 + k, 11, 7 + 2 * k], alpha, (mp, mu), k as u64);
            let [np, nup, nun] = s.sizes();
            let mut w = DVector::zeros(np + nup + nun);
            w.rows_mut(0, np).fill((alpha / np as f64).sqrt());
            w.rows_mut(np, nup).fill(-1.0 / (nup as f64).sqrt());
            let w = w.normalize();
            let y = s.target();
            let projected = &y - w.dot(&y) * &w;
            assert!((closed_form_y_perp(&s) - projected).amax() < 1e-12);
        }
    }
}

#[test]
fn stopped_predictions_sit_at_the_collapsed_target() {
    let s = system([500, 500, 500], 0.4, (1.0, 0.0), 21);
    // The residual bound itself is checked over many trials elsewhere; one
    // draw can land just past epsilon = 0.1, so this uses a looser one.
    let (report, _) = verify_theorem(&s, 0.2).unwrap();
    assert!(report.pass, "{:?}", report.diagnostic);
    let means = report.block_means.unwrap();
    let c = fixed_point(&s);
    assert!((c - 1.0 / 1.4).abs() < 1e-15);
    assert!(
        (means[0] - c).abs() < 0.05 && (means[1] - c).abs() < 0.05,
        "{means:?} vs {c}"
    );
    assert!(means[2].abs() < 0.05, "{means:?}");
}

#[test]
fn null_direction_norm_shrinks_like_inverse_root_n() {
    let pos = UniformRows {
        mean: unit(10, 0),
        half_width: 0.2,
    };
    let neg = UniformRows {
        mean: unit(10, 1),
        half_width: 0.2,
    };
    let sizes = [100usize, 400, 1600];
    let mean_norm: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            (0..30)
                .map(|seed| {
                    let cfg = SystemConfig {
                        n_p: n,
                        n_up: n,
                        n_un: n,
                        alpha: 0.5,
                        mu_p: 1.0,
                        mu_u: 0.0,
                        seed,
                    };
                    spectral_quantities(&build_system(&pos, &neg, &cfg).unwrap(), 0.1)
                        .unwrap()
                        .jt_w_norm
                })
                .sum::<f64>()
                / 30.0
        })
        .collect();
    // Each 4x step in n should halve the norm.
    for w in mean_norm.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.4..0.6).contains(&ratio), "{mean_norm:?}");
    }
}
