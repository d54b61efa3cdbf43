//! Analytic gradients against central finite differences (float64, h = 1e-5).

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use vqpu::codebook::{AnchorPolicy, Codebook};
use vqpu::encoder::{Architecture, Encoder, InitConfig, LayerSpec};
use vqpu::loss::{ablation_loss, objective, single_vector_loss, vq_pu_loss, LossConfig, Variant};
use vqpu::rng::seeded;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

fn random_input(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeded(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5..1.5))
}

/// Norm-wise relative error between two gradient vectors.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn numeric_param_grad(enc: &Encoder, f: impl Fn(&Encoder) -> f64) -> Vec<f64> {
    let base = enc.params_flat();
    let mut probe = enc.clone();
    let mut out = Vec::with_capacity(base.len());
    let mut theta = base.clone();
    for i in 0..base.len() {
        theta[i] = base[i] + H;
        probe.set_params_flat(&theta).unwrap();
        let up = f(&probe);
        theta[i] = base[i] - H;
        probe.set_params_flat(&theta).unwrap();
        let down = f(&probe);
        theta[i] = base[i];
        out.push((up - down) / (2.0 * H));
    }
    out
}

/// An encoder with every parameter, biases included, drawn at random.
fn random_encoder(arch: Architecture, seed: u64) -> Encoder {
    let mut enc = Encoder::new(arch, InitConfig::default()).unwrap();
    let mut rng = seeded(seed);
    let params: Vec<f64> = (0..enc.num_params())
        .map(|_| rng.random_range(-0.6..0.6))
        .collect();
    enc.set_params_flat(&params).unwrap();
    enc
}

/// Two small convolutions; the second halves the resolution.
fn small_conv() -> Architecture {
    let first = LayerSpec::Conv2d {
        in_channels: 1,
        height: 5,
        width: 5,
        out_channels: 2,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let second = LayerSpec::Conv2d {
        in_channels: 2,
        height: 5,
        width: 5,
        out_channels: 3,
        kernel: 3,
        stride: 2,
        padding: 1,
    };
    Architecture {
        name: "small-conv".into(),
        input_dim: 25,
        layers: vec![first, second],
        k: 9,
        p: 3,
    }
}

/// `sum(weights * encodings)`: a generic scalar loss for checking backward.
fn check_backward(arch: Architecture, seed: u64, n: usize) -> f64 {
    let d = arch.input_dim;
    let enc = random_encoder(arch, seed);
    let x = random_input(n, d, seed + 100);
    let w = random_input(n, enc.k() * enc.p(), seed + 200);
    let (_, tape) = enc.forward(x.view()).unwrap();
    let analytic = enc.backward(&tape, w.view()).unwrap().flatten();
    let numeric = numeric_param_grad(&enc, |e| (&e.forward(x.view()).unwrap().0 * &w).sum());
    rel_err(&analytic, &numeric)
}

#[test]
fn dense_stack_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let err = check_backward(Architecture::mlp(5, &[7, 6], 2, 3), seed, 4);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn single_dense_layer_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let err = check_backward(Architecture::mlp(4, &[], 1, 3), seed, 3);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn conv_stack_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let err = check_backward(small_conv(), seed, 3);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn six_layer_conv_preset_matches_finite_differences() {
    let err = check_backward(Architecture::conv_six(8, 8, 4, 2).unwrap(), 3, 1);
    assert!(err < TOL, "relative error {err}");
}

fn vq_setup(seed: u64) -> (Encoder, Codebook, Array2<f64>, Array2<f64>) {
    let enc = random_encoder(Architecture::mlp(4, &[8], 2, 3), seed);
    let cb = Codebook::init(6, 3, seed + 1, AnchorPolicy::RecomputeEachStep).unwrap();
    (
        enc,
        cb,
        random_input(5, 4, seed + 2),
        random_input(7, 4, seed + 3),
    )
}

/// Commitment terms of the VQ loss with anchors held constant.
fn commitment(enc: &Encoder, cb: &Codebook, pos: ArrayView2<f64>, unl: ArrayView2<f64>) -> f64 {
    let term = |x: ArrayView2<f64>, anchor: usize| {
        let v = enc.forward(x).unwrap().0;
        let a = cb.vectors().row(anchor);
        v.rows()
            .into_iter()
            .flat_map(|r| r.to_vec())
            .enumerate()
            .map(|(i, x)| (x - a[i % a.len()]).powi(2))
            .sum::<f64>()
    };
    term(pos, cb.high_anchor_index()) + term(unl, cb.low_anchor_index())
}

#[test]
fn vq_encoder_gradient_is_commitment_gradient() {
    for seed in 0..INSTANCES {
        let (enc, cb, pos, unl) = vq_setup(seed);
        let (_, grad, _) = vq_pu_loss(&enc, &cb, pos.view(), unl.view()).unwrap();
        let numeric = numeric_param_grad(&enc, |e| commitment(e, &cb, pos.view(), unl.view()));
        let err = rel_err(&grad.flatten(), &numeric);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn vq_codebook_gradient_is_code_gradient_with_frozen_assignments() {
    for seed in 0..INSTANCES {
        let (enc, cb, pos, unl) = vq_setup(seed);
        let (_, _, grad) = vq_pu_loss(&enc, &cb, pos.view(), unl.view()).unwrap();
        let v = ndarray::concatenate(
            ndarray::Axis(0),
            &[
                enc.forward(pos.view()).unwrap().0.view(),
                enc.forward(unl.view()).unwrap().0.view(),
            ],
        )
        .unwrap();
        let vecs: Vec<Vec<f64>> = v
            .rows()
            .into_iter()
            .flat_map(|r| {
                r.to_vec()
                    .chunks(3)
                    .map(<[f64]>::to_vec)
                    .collect::<Vec<_>>()
            })
            .collect();
        let frozen: Vec<usize> = vecs.iter().map(|x| cb.nearest(x).0).collect();
        let code_term = |c: &Array2<f64>| -> f64 {
            vecs.iter()
                .zip(&frozen)
                .map(|(x, &r)| {
                    x.iter()
                        .zip(c.row(r))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                })
                .sum()
        };
        let mut c = cb.vectors().clone();
        let mut numeric = Vec::new();
        for i in 0..c.len() {
            let base = c.as_slice().unwrap()[i];
            c.as_slice_mut().unwrap()[i] = base + H;
            let up = code_term(&c);
            c.as_slice_mut().unwrap()[i] = base - H;
            let down = code_term(&c);
            c.as_slice_mut().unwrap()[i] = base;
            numeric.push((up - down) / (2.0 * H));
        }
        let err = rel_err(grad.as_slice().unwrap(), &numeric);
        assert!(err < 1e-6, "seed {seed}: relative error {err}");
    }
}

#[test]
fn single_vector_gradient_matches_finite_differences() {
    for seed in 0..INSTANCES {
        let enc = random_encoder(Architecture::mlp(3, &[6], 1, 2), seed);
        let (pos, unl) = (random_input(4, 3, seed + 5), random_input(6, 3, seed + 6));
        let (mu_p, mu_u) = ([1.0, -0.5], [0.0, 0.25]);
        let (_, grad) = single_vector_loss(&enc, &mu_p, &mu_u, pos.view(), unl.view()).unwrap();
        let oracle = |e: &Encoder| {
            let mean_sq = |x: &Array2<f64>, mu: &[f64]| {
                let v = e.forward(x.view()).unwrap().0;
                v.rows()
                    .into_iter()
                    .map(|r| r.iter().zip(mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .sum::<f64>()
                    / v.nrows() as f64
            };
            mean_sq(&pos, &mu_p) + mean_sq(&unl, &mu_u)
        };
        let err = rel_err(&grad.flatten(), &numeric_param_grad(&enc, oracle));
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn distributional_gradient_matches_finite_differences() {
    let cfg = LossConfig::new(Variant::DistributionalEncodings).with_anchor_scalar(5.0);
    for seed in 0..INSTANCES {
        let pos = random_input(6, 4, seed);
        let unl = random_input(5, 4, seed + 50);
        let obj = objective(&cfg, None, pos.view(), unl.view(), 2, 2).unwrap();
        let loss = |p: &Array2<f64>| {
            objective(&cfg, None, p.view(), unl.view(), 2, 2)
                .unwrap()
                .loss
        };
        let mut p = pos.clone();
        let mut numeric = Vec::new();
        for i in 0..p.len() {
            let base = p.as_slice().unwrap()[i];
            p.as_slice_mut().unwrap()[i] = base + H;
            let up = loss(&p);
            p.as_slice_mut().unwrap()[i] = base - H;
            let down = loss(&p);
            p.as_slice_mut().unwrap()[i] = base;
            numeric.push((up - down) / (2.0 * H));
        }
        let err = rel_err(obj.d_pos.as_slice().unwrap(), &numeric);
        assert!(err < TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn encoder_gradient_ignores_non_anchor_codes() {
    for seed in 0..INSTANCES {
        let (enc, cb, pos, unl) = vq_setup(seed);
        let (_, g0, _) = vq_pu_loss(&enc, &cb, pos.view(), unl.view()).unwrap();
        let (lo, hi) = (cb.low_anchor_index(), cb.high_anchor_index());
        let norms = cb.row_norms();
        let target = 0.5 * (norms[lo] + norms[hi]);
        let mut moved = cb.vectors().clone();
        let mut rng = seeded(seed + 9);
        for r in (0..moved.nrows()).filter(|&r| r != lo && r != hi) {
            let mut row: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x *= target / len);
            moved.row_mut(r).assign(&ndarray::Array1::from(row));
        }
        let cb2 = Codebook::from_vectors(moved, AnchorPolicy::RecomputeEachStep).unwrap();
        assert_eq!((cb2.low_anchor_index(), cb2.high_anchor_index()), (lo, hi));
        let (_, g1, _) = vq_pu_loss(&enc, &cb2, pos.view(), unl.view()).unwrap();
        assert_eq!(g0, g1, "seed {seed}");
    }
}

#[test]
fn cross_terms_are_exactly_zero() {
    for seed in 0..INSTANCES {
        let (enc, cb, pos, unl) = vq_setup(seed);
        let cfg = LossConfig::new(Variant::VqFull).with_codebook_size(cb.len());
        let eval = ablation_loss(&cfg, &enc, Some(&cb), pos.view(), unl.view()).unwrap();
        let vp = enc.forward(pos.view()).unwrap().0;
        let vu = enc.forward(unl.view()).unwrap().0;

        // Codebook gradient rebuilt from the code terms alone: anchors get
        // nothing from the commitment terms.
        let mut expect = Array2::<f64>::zeros(cb.vectors().raw_dim());
        for v in vp.rows().into_iter().chain(vu.rows()) {
            for chunk in v.to_vec().chunks(3) {
                let r = cb.nearest(chunk).0;
                for j in 0..3 {
                    expect[[r, j]] += 2.0 * (cb.vectors()[[r, j]] - chunk[j]);
                }
            }
        }
        assert_eq!(eval.codebook_grad.unwrap(), expect, "seed {seed}");

        // Encoder gradient rebuilt from the commitment terms alone: the code
        // terms contribute nothing.
        let (_, tape) = enc
            .forward(
                ndarray::concatenate(ndarray::Axis(0), &[pos.view(), unl.view()])
                    .unwrap()
                    .view(),
            )
            .unwrap();
        let mut up = Array2::<f64>::zeros((pos.nrows() + unl.nrows(), 6));
        let hi = cb.high_anchor();
        let lo = cb.low_anchor();
        for ((i, c), u) in up.indexed_iter_mut() {
            *u = if i < pos.nrows() {
                2.0 * (vp[[i, c]] - hi[c % 3])
            } else {
                2.0 * (vu[[i - pos.nrows(), c]] - lo[c % 3])
            };
        }
        assert_eq!(
            eval.encoder_grad,
            enc.backward(&tape, up.view()).unwrap(),
            "seed {seed}"
        );
    }
}
