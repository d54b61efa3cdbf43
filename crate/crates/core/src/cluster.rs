//! 2-means with k-means++ seeding and Lloyd iterations.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::exec::Parallelism;
use crate::rng::{derive_seed, seeded, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            restarts: 5,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Two rows, one per cluster.
    pub centroids: Array2<f64>,
    pub assignments: Vec<u8>,
    pub inertia: f64,
    pub centroid_distance: f64,
    /// Set when the points admit no split (all identical).
    pub degenerate: bool,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn cluster_sizes(&self) -> [usize; 2] {
        let ones = self.assignments.iter().filter(|&&a| a == 1).count();
        [self.assignments.len() - ones, ones]
    }

    /// The same clustering with cluster ids exchanged.
    pub fn swapped(&self) -> Self {
        let mut out = self.clone();
        for (i, row) in [1, 0].into_iter().enumerate() {
            out.centroids.row_mut(i).assign(&self.centroids.row(row));
        }
        out.assignments.iter_mut().for_each(|a| *a = 1 - *a);
        out
    }

    /// Nearest centroid, ties to cluster 0.
    pub fn assign(&self, point: ArrayView1<f64>) -> u8 {
        nearest(&self.centroids, point).0
    }
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centroids: &Array2<f64>, p: ArrayView1<f64>) -> (u8, f64) {
    let d0 = sq_dist(centroids.row(0), p);
    let d1 = sq_dist(centroids.row(1), p);
    if d1 < d0 {
        (1, d1)
    } else {
        (0, d0)
    }
}

/// k-means++ for two centers. `None` when every point coincides with the first.
fn seed_centroids(points: &ArrayView2<f64>, rng: &mut Rng) -> Option<Array2<f64>> {
    let n = points.nrows();
    let first = rng.random_range(0..n);
    let d2: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, points.row(first)))
        .collect();
    let total: f64 = d2.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut second = n - 1;
    for (i, &d) in d2.iter().enumerate() {
        acc += d;
        if acc > target && d > 0.0 {
            second = i;
            break;
        }
    }
    if d2[second] == 0.0 {
        second = d2.iter().rposition(|&d| d > 0.0).expect("total > 0");
    }
    let mut c = Array2::zeros((2, points.ncols()));
    c.row_mut(0).assign(&points.row(first));
    c.row_mut(1).assign(&points.row(second));
    Some(c)
}

fn assign_all(points: &ArrayView2<f64>, c: &Array2<f64>, par: Parallelism) -> (Vec<u8>, f64) {
    let pairs = par.map_chunks(points.nrows(), 512, |r| {
        r.map(|i| nearest(c, points.row(i))).collect()
    });
    let inertia = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), inertia)
}

/// Recomputes means; an empty cluster keeps its previous centroid.
fn update(points: &ArrayView2<f64>, assign: &[u8], c: &mut Array2<f64>) {
    let mut sums = Array2::<f64>::zeros(c.raw_dim());
    let mut counts = [0usize; 2];
    for (row, &a) in points.rows().into_iter().zip(assign) {
        sums.row_mut(a as usize).zip_mut_with(&row, |s, &x| *s += x);
        counts[a as usize] += 1;
    }
    for k in 0..2 {
        if counts[k] > 0 {
            let mean = &sums.row(k) / counts[k] as f64;
            c.row_mut(k).assign(&mean);
        }
    }
}

fn lloyd(
    points: &ArrayView2<f64>,
    mut c: Array2<f64>,
    max_iter: usize,
    par: Parallelism,
) -> (Array2<f64>, Vec<u8>, f64, usize) {
    let (mut assign, mut inertia) = assign_all(points, &c, par);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        update(points, &assign, &mut c);
        let (next, next_inertia) = assign_all(points, &c, par);
        debug_assert!(
            next_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia rose from {inertia} to {next_inertia}"
        );
        inertia = next_inertia;
        if next == assign {
            break;
        }
        assign = next;
    }
    (c, assign, inertia, iterations)
}

/// Splits `points` (one per row) into two clusters. The lowest-inertia
/// restart wins; equal inertia keeps the earlier restart.
pub fn kmeans2(
    points: ArrayView2<f64>,
    config: &KMeansConfig,
    par: Parallelism,
) -> Result<KMeansResult> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::usage(format!(
            "2-means needs at least 2 points, got {n}"
        )));
    }
    if config.restarts == 0 || config.max_iter == 0 {
        return Err(Error::config(
            "2-means needs restarts >= 1 and max_iter >= 1",
        ));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::Training(
            "2-means input contains non-finite values".into(),
        ));
    }
    let runs = par.map(config.restarts, |r| {
        let mut rng = seeded(derive_seed(config.seed, r as u64));
        seed_centroids(&points, &mut rng).map(|c| lloyd(&points, c, config.max_iter, par))
    });
    let mut best: Option<(Array2<f64>, Vec<u8>, f64, usize)> = None;
    for run in runs.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    Ok(match best {
        Some((centroids, assignments, inertia, iterations)) => KMeansResult {
            centroid_distance: sq_dist(centroids.row(0), centroids.row(1)).sqrt(),
            centroids,
            assignments,
            inertia,
            degenerate: false,
            iterations,
        },
        None => {
            let mut centroids = Array2::zeros((2, points.ncols()));
            centroids.row_mut(0).assign(&points.row(0));
            centroids.row_mut(1).assign(&points.row(0));
            KMeansResult {
                centroids,
                assignments: vec![0; n],
                inertia: 0.0,
                centroid_distance: 0.0,
                degenerate: true,
                iterations: 0,
            }
        }
    })
}
