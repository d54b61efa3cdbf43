//! Property tests over random inputs.

use ndarray::Array2;
use proptest::prelude::*;
use vqpu::classify::score;
use vqpu::cluster::{kmeans2, KMeansConfig};
use vqpu::codebook::{AnchorPolicy, Codebook};
use vqpu::data::{make_gaussian_highdim, SplitSpec};
use vqpu::encoder::{Architecture, Encoder, InitConfig};
use vqpu::Parallelism;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-10.0..10.0f64, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nearest_code_is_the_argmin(codes in matrix(7, 3), v in prop::collection::vec(-10.0..10.0f64, 3)) {
        let cb = Codebook::from_vectors(codes.clone(), AnchorPolicy::RecomputeEachStep).unwrap();
        let (idx, _) = cb.nearest(&v);
        let best = (0..7).map(|r| sq(codes.row(r).as_slice().unwrap(), &v)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(sq(codes.row(idx).as_slice().unwrap(), &v), best);
    }

    #[test]
    fn anchors_are_extreme_norms(codes in matrix(6, 4)) {
        let cb = Codebook::from_vectors(codes, AnchorPolicy::RecomputeEachStep).unwrap();
        let norms = cb.row_norms();
        let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(norms[cb.low_anchor_index()], lo);
        prop_assert_eq!(norms[cb.high_anchor_index()], hi);
    }

    #[test]
    fn kmeans_is_a_lloyd_fixed_point(points in matrix(25, 2), seed in 0u64..1000) {
        let km = kmeans2(points.view(), &KMeansConfig { seed, ..KMeansConfig::default() }, Parallelism::Sequential).unwrap();
        prop_assume!(!km.degenerate);
        for c in 0..2u8 {
            let members: Vec<usize> = (0..25).filter(|&i| km.assignments[i] == c).collect();
            prop_assert!(!members.is_empty());
            for j in 0..2 {
                let mean = members.iter().map(|&i| points[[i, j]]).sum::<f64>() / members.len() as f64;
                prop_assert!((mean - km.centroids[[c as usize, j]]).abs() < 1e-9);
            }
        }
        for i in 0..25 {
            let p = points.row(i).to_vec();
            let d0 = sq(&p, km.centroids.row(0).as_slice().unwrap());
            let d1 = sq(&p, km.centroids.row(1).as_slice().unwrap());
            let own_is_nearest = if km.assignments[i] == 0 { d0 <= d1 } else { d1 <= d0 };
            prop_assert!(own_is_nearest);
        }
        let d = sq(km.centroids.row(0).as_slice().unwrap(), km.centroids.row(1).as_slice().unwrap()).sqrt();
        prop_assert!((d - km.centroid_distance).abs() < 1e-9);
    }

    #[test]
    fn accuracy_is_a_fraction(pairs in prop::collection::vec((0u8..2, 0u8..2), 1..200)) {
        let (pred, labels): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let e = score(&pred, &labels).unwrap();
        let c = e.confusion;
        prop_assert_eq!(c.true_positive + c.false_positive + c.true_negative + c.false_negative, labels.len());
        prop_assert!((0.0..=1.0).contains(&e.accuracy));
        let flipped: Vec<u8> = pred.iter().map(|p| 1 - p).collect();
        prop_assert!((score(&flipped, &labels).unwrap().accuracy + e.accuracy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_has_exact_composition(alpha in 0.05..0.95f64, n_u in 10usize..300, n_p in 1usize..50, seed in 0u64..100) {
        let ds = make_gaussian_highdim(3, 1.0, &SplitSpec::new(alpha, n_p, n_u, seed)).unwrap();
        let eval = ds.evaluation().unwrap();
        let positives = eval.unlabeled_labels.iter().filter(|&&y| y == 1).count();
        prop_assert_eq!(positives, (alpha * n_u as f64).round() as usize);
        prop_assert_eq!(ds.n_positive(), n_p);
    }

    #[test]
    fn encoding_is_the_same_in_both_modes(x in matrix(40, 5), seed in 0u64..50) {
        let enc = Encoder::new(Architecture::mlp(5, &[8], 2, 3), InitConfig { seed, ..InitConfig::default() }).unwrap();
        let a = enc.encode(x.view(), Parallelism::Sequential).unwrap();
        let b = enc.encode(x.view(), Parallelism::Parallel).unwrap();
        prop_assert_eq!(a, b);
    }
}
