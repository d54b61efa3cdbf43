//! Adam on a scalar quadratic against the bias-corrected recursion written out by hand.

use vqpu::encoder::{Adam, AdamConfig};

#[test]
fn scalar_trajectory_matches_recursion() {
    let cfg = AdamConfig {
        learning_rate: 0.05,
        beta1: 0.8,
        beta2: 0.99,
        epsilon: 1e-6,
    };
    let grad = |x: f64| 2.0 * (x - 3.0) + (x * 1.7).sin();
    let mut adam = Adam::new(cfg, &[1]);
    let mut x = [-1.0];
    let (mut xo, mut m, mut v) = (-1.0f64, 0.0f64, 0.0f64);
    for t in 1..=200 {
        let g = grad(x[0]);
        adam.step(&mut [&mut x], &[&[g]]).unwrap();

        let go = grad(xo);
        m = 0.8 * m + 0.2 * go;
        v = 0.99 * v + 0.01 * go * go;
        let m_hat = m / (1.0 - 0.8f64.powi(t));
        let v_hat = v / (1.0 - 0.99f64.powi(t));
        xo -= 0.05 * m_hat / (v_hat.sqrt() + 1e-6);

        assert!(
            (x[0] - xo).abs() <= 1e-14 * xo.abs().max(1.0),
            "step {t}: {} vs {xo}",
            x[0]
        );
    }
    assert_eq!(adam.steps(), 200);
}
