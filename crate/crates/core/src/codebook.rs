//! Codebook, nearest-code quantization and norm-ordered anchors.
//!
//! The low anchor is the minimum-norm row and the high anchor the
//! maximum-norm row (ties go to the lower index). Positive encodings are
//! pulled toward the high anchor and unlabeled encodings toward the low one.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec::Parallelism;
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// Anchors follow the current min/max-norm rows after every update.
    #[default]
    RecomputeEachStep,
    /// Anchors are chosen once, at initialization.
    FixedAtInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    vectors: Array2<f64>,
    policy: AnchorPolicy,
    low: usize,
    high: usize,
}

/// Nearest-code indices for the `k` vectors of one encoding, plus the codes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedRepresentation {
    pub indices: Vec<usize>,
    pub quantized_vectors: Array2<f64>,
}

fn sq_dist(a: &[f64], b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    /// `m` rows drawn i.i.d. from `N(0, I_p)`.
    pub fn init(m: usize, p: usize, seed: u64, policy: AnchorPolicy) -> Result<Self> {
        if m < 2 || p == 0 {
            return Err(Error::config(format!(
                "codebook needs m >= 2 and p >= 1, got m={m}, p={p}"
            )));
        }
        let mut rng = seeded(seed);
        let vectors = Array2::from_shape_simple_fn((m, p), || StandardNormal.sample(&mut rng));
        Self::from_vectors(vectors, policy)
    }

    /// Rows `0..m/2` from `N(0, I)`, the rest from `N(a * 1, I)`.
    pub fn bimodal(m: usize, p: usize, a: f64, seed: u64, policy: AnchorPolicy) -> Result<Self> {
        let mut cb = Self::init(m, p, seed, policy)?;
        let half = m / 2;
        cb.vectors
            .slice_mut(ndarray::s![half.., ..])
            .mapv_inplace(|x| x + a);
        cb.refresh_anchors_unconditionally();
        Ok(cb)
    }

    pub fn from_vectors(vectors: Array2<f64>, policy: AnchorPolicy) -> Result<Self> {
        if vectors.nrows() < 2 || vectors.ncols() == 0 {
            return Err(Error::config(
                "codebook needs at least 2 rows of dimension >= 1",
            ));
        }
        if vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::config("codebook vectors must be finite"));
        }
        let mut cb = Self {
            vectors,
            policy,
            low: 0,
            high: 0,
        };
        cb.refresh_anchors_unconditionally();
        Ok(cb)
    }

    /// Restores a codebook with explicit anchors (checkpoint loading).
    pub(crate) fn from_parts(
        vectors: Array2<f64>,
        policy: AnchorPolicy,
        low: usize,
        high: usize,
    ) -> Result<Self> {
        let mut cb = Self::from_vectors(vectors, policy)?;
        if low >= cb.len() || high >= cb.len() {
            return Err(Error::config("anchor index out of range"));
        }
        cb.low = low;
        cb.high = high;
        Ok(cb)
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn policy(&self) -> AnchorPolicy {
        self.policy
    }

    pub fn low_anchor_index(&self) -> usize {
        self.low
    }

    pub fn high_anchor_index(&self) -> usize {
        self.high
    }

    pub fn low_anchor(&self) -> ArrayView1<'_, f64> {
        self.vectors.row(self.low)
    }

    pub fn high_anchor(&self) -> ArrayView1<'_, f64> {
        self.vectors.row(self.high)
    }

    pub fn row_norms(&self) -> Vec<f64> {
        self.vectors
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .collect()
    }

    fn refresh_anchors_unconditionally(&mut self) {
        let norms = self.row_norms();
        let (mut low, mut high) = (0, 0);
        for (i, &n) in norms.iter().enumerate() {
            if n < norms[low] {
                low = i;
            }
            if n > norms[high] {
                high = i;
            }
        }
        self.low = low;
        self.high = high;
    }

    /// Re-identifies anchors under [`AnchorPolicy::RecomputeEachStep`].
    pub fn refresh_anchors(&mut self) {
        if self.policy == AnchorPolicy::RecomputeEachStep {
            self.refresh_anchors_unconditionally();
        }
    }

    /// True when the anchors satisfy the current policy's definition.
    pub fn anchors_consistent(&self) -> bool {
        match self.policy {
            AnchorPolicy::FixedAtInit => true,
            AnchorPolicy::RecomputeEachStep => {
                let mut probe = self.clone();
                probe.refresh_anchors_unconditionally();
                probe.low == self.low && probe.high == self.high
            }
        }
    }

    /// Applies `update` to the raw vectors, then refreshes anchors.
    pub fn update_vectors<F: FnOnce(&mut [f64]) -> Result<()>>(&mut self, update: F) -> Result<()> {
        update(self.vectors.as_slice_mut().expect("standard layout"))?;
        if self.vectors.iter().any(|x| !x.is_finite()) {
            return Err(Error::Training("codebook became non-finite".into()));
        }
        self.refresh_anchors();
        debug_assert!(self.anchors_consistent());
        Ok(())
    }

    /// Index of the nearest row and its squared distance (ties: lowest index).
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, row) in self.vectors.rows().into_iter().enumerate() {
            let d = sq_dist(v, row);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    fn check_width(&self, len: usize, k: usize) -> Result<()> {
        if k == 0 || len != k * self.dim() {
            return Err(Error::shape(
                format!("{k} vectors of dimension {}", self.dim()),
                format!("{len} values"),
            ));
        }
        Ok(())
    }

    /// Nearest-code indices for one encoding stored as `k` consecutive
    /// `p`-vectors.
    pub fn indices(&self, encoding: &[f64], k: usize) -> Result<Vec<usize>> {
        self.check_width(encoding.len(), k)?;
        Ok(encoding
            .chunks(self.dim())
            .map(|v| self.nearest(v).0)
            .collect())
    }

    /// Quantizes a `k x p` encoding.
    pub fn quantize(&self, encoding: ArrayView2<f64>) -> Result<QuantizedRepresentation> {
        if encoding.ncols() != self.dim() {
            return Err(Error::shape(self.dim(), encoding.ncols()));
        }
        let flat: Vec<f64> = encoding.iter().copied().collect();
        let indices = self.indices(&flat, encoding.nrows())?;
        let quantized_vectors = self.vectors.select(ndarray::Axis(0), &indices);
        Ok(QuantizedRepresentation {
            indices,
            quantized_vectors,
        })
    }

    /// Index vectors for a batch of flattened encodings (`n x k*p`).
    pub fn indices_batch(
        &self,
        encodings: ArrayView2<f64>,
        k: usize,
        par: Parallelism,
    ) -> Result<Array2<usize>> {
        self.check_width(encodings.ncols(), k)?;
        let flat = par.map_chunks(encodings.nrows(), 128, |r| {
            r.flat_map(|i| {
                let row = encodings.row(i);
                let row = row
                    .as_slice()
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| row.to_vec());
                row.chunks(self.dim())
                    .map(|v| self.nearest(v).0)
                    .collect::<Vec<_>>()
            })
            .collect()
        });
        Ok(Array2::from_shape_vec((encodings.nrows(), k), flat).expect("k indices per row"))
    }

    /// Gradient of `sum_j |sg(v_j) - c_{idx(j)}|^2` w.r.t. the codebook:
    /// row `r` accumulates `2 (c_r - v_j)` over every `v_j` assigned to it.
    pub fn codebook_grad(
        &self,
        encoding: ArrayView2<f64>,
        quantized: &QuantizedRepresentation,
    ) -> Result<Array2<f64>> {
        let mut grad = Array2::zeros(self.vectors.raw_dim());
        self.accumulate_grad(&mut grad, encoding, &quantized.indices)?;
        Ok(grad)
    }

    pub(crate) fn accumulate_grad(
        &self,
        grad: &mut Array2<f64>,
        encoding: ArrayView2<f64>,
        indices: &[usize],
    ) -> Result<()> {
        if encoding.nrows() != indices.len() || encoding.ncols() != self.dim() {
            return Err(Error::shape(
                format!("{} x {}", indices.len(), self.dim()),
                format!("{:?}", encoding.dim()),
            ));
        }
        for (v, &r) in encoding.rows().into_iter().zip(indices) {
            let c = self.vectors.row(r);
            let mut g = grad.row_mut(r);
            for j in 0..self.dim() {
                g[j] += 2.0 * (c[j] - v[j]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_orders_anchors_by_norm() {
        let cb = Codebook::init(512, 64, 3, AnchorPolicy::default()).unwrap();
        let norms = cb.row_norms();
        let (lo, hi) = (norms[cb.low_anchor_index()], norms[cb.high_anchor_index()]);
        assert!(norms.iter().all(|&n| lo <= n && n <= hi));
        assert_eq!(cb.vectors().dim(), (512, 64));
    }

    #[test]
    fn two_row_anchors() {
        let cb = Codebook::from_vectors(array![[0.5], [-2.0]], AnchorPolicy::default()).unwrap();
        assert_eq!((cb.low_anchor_index(), cb.high_anchor_index()), (0, 1));
    }

    #[test]
    fn equal_norm_tie_goes_to_lower_index() {
        let cb = Codebook::from_vectors(
            array![[3.0, 0.0], [0.0, 3.0], [1.0, 1.0]],
            AnchorPolicy::default(),
        )
        .unwrap();
        assert_eq!(cb.high_anchor_index(), 0);
        let cb =
            Codebook::from_vectors(array![[5.0], [1.0], [-1.0]], AnchorPolicy::default()).unwrap();
        assert_eq!(cb.low_anchor_index(), 1);
    }

    #[test]
    fn too_small_codebook_rejected() {
        assert!(matches!(
            Codebook::init(1, 4, 0, AnchorPolicy::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn quantize_picks_nearest_with_low_tie() {
        let cb = Codebook::from_vectors(array![[0.0], [10.0]], AnchorPolicy::default()).unwrap();
        assert_eq!(cb.indices(&[4.0], 1).unwrap(), vec![0]);
        assert_eq!(cb.indices(&[6.0], 1).unwrap(), vec![1]);
        assert_eq!(cb.indices(&[5.0], 1).unwrap(), vec![0]);
    }

    #[test]
    fn exact_row_quantizes_to_itself() {
        let cb = Codebook::init(16, 3, 8, AnchorPolicy::default()).unwrap();
        let v = cb.vectors().row(7).to_owned().insert_axis(ndarray::Axis(0));
        let q = cb.quantize(v.view()).unwrap();
        assert_eq!(q.indices, vec![7]);
        assert_eq!(q.quantized_vectors, v);
    }

    #[test]
    fn grad_closed_form() {
        let cb = Codebook::from_vectors(array![[0.0, 0.0], [5.0, 5.0]], AnchorPolicy::default())
            .unwrap();
        let v = array![[1.0, 0.0]];
        let q = cb.quantize(v.view()).unwrap();
        let g = cb.codebook_grad(v.view(), &q).unwrap();
        assert_eq!(g, array![[-2.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn fixed_policy_keeps_anchors() {
        let mut cb =
            Codebook::from_vectors(array![[1.0], [2.0], [3.0]], AnchorPolicy::FixedAtInit).unwrap();
        cb.update_vectors(|v| {
            v[2] = 0.0;
            Ok(())
        })
        .unwrap();
        assert_eq!((cb.low_anchor_index(), cb.high_anchor_index()), (0, 2));
        let mut cb =
            Codebook::from_vectors(array![[1.0], [2.0], [3.0]], AnchorPolicy::RecomputeEachStep)
                .unwrap();
        cb.update_vectors(|v| {
            v[2] = 0.0;
            Ok(())
        })
        .unwrap();
        assert_eq!((cb.low_anchor_index(), cb.high_anchor_index()), (2, 1));
    }

    #[test]
    fn bimodal_halves() {
        let cb = Codebook::bimodal(10, 4, 50.0, 1, AnchorPolicy::default()).unwrap();
        let norms = cb.row_norms();
        assert!(norms[..5].iter().all(|&n| n < 20.0));
        assert!(norms[5..].iter().all(|&n| n > 80.0));
        assert!(cb.high_anchor_index() >= 5 && cb.low_anchor_index() < 5);
    }

    #[test]
    fn batch_indices_match_single() {
        let cb = Codebook::init(32, 4, 2, AnchorPolicy::default()).unwrap();
        let enc =
            Array2::from_shape_fn((50, 8), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 3.0 - 1.5);
        let b = cb
            .indices_batch(enc.view(), 2, Parallelism::Parallel)
            .unwrap();
        for i in 0..50 {
            assert_eq!(
                b.row(i).to_vec(),
                cb.indices(enc.row(i).as_slice().unwrap(), 2).unwrap()
            );
        }
    }
}
