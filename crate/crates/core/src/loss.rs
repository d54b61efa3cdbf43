//! Disentangling objectives.
//!
//! Every objective is computed on encodings first ([`objective`]), giving the
//! loss and its gradient w.r.t. the encodings. The `*_loss` functions wrap
//! that with one encoder forward/backward over the joined batch.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::codebook::{AnchorPolicy, Codebook};
use crate::encoder::{Encoder, Gradient};
use crate::{Error, Result};

/// Anchor scalars used by the published ablation table.
pub const STANDARD_ANCHOR_SCALARS: [f64; 4] = [1.0, 5.0, 50.0, 100.0];

const MIN_VARIANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// VQ loss with a 512-row codebook drawn from `N(0, I)`, codes updated.
    VqFull,
    VqTwoCodesUpdated,
    /// Half the rows near `0`, half near `a * 1`; codes never move.
    VqNoUpdateBimodal,
    /// One row near `0`, one near `a * 1`; codes never move.
    VqTwoCodesFixed,
    /// Squared distance to fixed targets `0` (unlabeled) and `a * 1` (positive).
    ConstantEncodings,
    /// Diagonal-Gaussian KL from batch moments to `N(0, I)` / `N(a * 1, I)`.
    DistributionalEncodings,
    /// Single output vector pulled to `mu_p` / `mu_u` with batch-mean weights.
    SingleVector,
}

impl Variant {
    pub const ABLATIONS: [Variant; 6] = [
        Variant::VqFull,
        Variant::VqTwoCodesUpdated,
        Variant::VqNoUpdateBimodal,
        Variant::VqTwoCodesFixed,
        Variant::ConstantEncodings,
        Variant::DistributionalEncodings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VqFull => "vq_full",
            Variant::VqTwoCodesUpdated => "vq_two_codes_updated",
            Variant::VqNoUpdateBimodal => "vq_no_update_bimodal",
            Variant::VqTwoCodesFixed => "vq_two_codes_fixed",
            Variant::ConstantEncodings => "constant_encodings",
            Variant::DistributionalEncodings => "distributional_encodings",
            Variant::SingleVector => "single_vector",
        }
    }

    pub fn uses_codebook(self) -> bool {
        matches!(
            self,
            Variant::VqFull
                | Variant::VqTwoCodesUpdated
                | Variant::VqNoUpdateBimodal
                | Variant::VqTwoCodesFixed
        )
    }

    pub fn updates_codebook(self) -> bool {
        matches!(self, Variant::VqFull | Variant::VqTwoCodesUpdated)
    }

    pub fn needs_anchor_scalar(self) -> bool {
        matches!(
            self,
            Variant::VqNoUpdateBimodal
                | Variant::VqTwoCodesFixed
                | Variant::ConstantEncodings
                | Variant::DistributionalEncodings
        )
    }

    pub fn default_codebook_size(self) -> Option<usize> {
        match self {
            Variant::VqFull | Variant::VqNoUpdateBimodal => Some(512),
            Variant::VqTwoCodesUpdated | Variant::VqTwoCodesFixed => Some(2),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ABLATIONS
            .iter()
            .chain(&[Variant::SingleVector])
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown loss variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub variant: Variant,
    /// The scalar `a` of the ablation variants.
    #[serde(default)]
    pub anchor_scalar: Option<f64>,
    /// Overrides the variant's default codebook size.
    #[serde(default)]
    pub codebook_size: Option<usize>,
    #[serde(default)]
    pub anchor_policy: AnchorPolicy,
    /// Targets of [`Variant::SingleVector`].
    #[serde(default)]
    pub mu_p: Option<Vec<f64>>,
    #[serde(default)]
    pub mu_u: Option<Vec<f64>>,
}

impl LossConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            anchor_scalar: None,
            codebook_size: None,
            anchor_policy: AnchorPolicy::default(),
            mu_p: None,
            mu_u: None,
        }
    }

    pub fn with_anchor_scalar(mut self, a: f64) -> Self {
        self.anchor_scalar = Some(a);
        self
    }

    pub fn with_codebook_size(mut self, m: usize) -> Self {
        self.codebook_size = Some(m);
        self
    }

    pub fn single_vector(mu_p: Vec<f64>, mu_u: Vec<f64>) -> Self {
        Self {
            mu_p: Some(mu_p),
            mu_u: Some(mu_u),
            ..Self::new(Variant::SingleVector)
        }
    }

    /// False when `a` lies outside the published ablation grid.
    pub fn anchor_scalar_is_standard(&self) -> bool {
        self.anchor_scalar
            .is_none_or(|a| STANDARD_ANCHOR_SCALARS.contains(&a))
    }

    pub fn codebook_size(&self) -> Option<usize> {
        self.codebook_size.or(self.variant.default_codebook_size())
    }

    /// Checks the config against an encoder producing `k` vectors of size `p`.
    pub fn validate(&self, k: usize, p: usize) -> Result<()> {
        let v = self.variant;
        match (v.needs_anchor_scalar(), self.anchor_scalar) {
            (true, None) => return Err(Error::config(format!("variant {v} needs anchor_scalar"))),
            (false, Some(_)) => {
                return Err(Error::config(format!("variant {v} takes no anchor_scalar")))
            }
            (_, Some(a)) if !a.is_finite() => {
                return Err(Error::config("anchor_scalar must be finite"))
            }
            _ => {}
        }
        if v.uses_codebook() {
            let m = self.codebook_size().unwrap_or(0);
            if m < 2 {
                return Err(Error::config(format!(
                    "codebook size must be >= 2, got {m}"
                )));
            }
        } else if self.codebook_size.is_some() {
            return Err(Error::config(format!("variant {v} has no codebook")));
        }
        if v == Variant::SingleVector {
            if k != 1 {
                return Err(Error::config(format!(
                    "single-vector loss needs an encoder with one output vector, got K={k}"
                )));
            }
            for (name, mu) in [("mu_p", &self.mu_p), ("mu_u", &self.mu_u)] {
                match mu {
                    Some(m) if m.len() == p => {}
                    Some(m) => {
                        return Err(Error::config(format!(
                            "{name} has length {}, expected {p}",
                            m.len()
                        )))
                    }
                    None => return Err(Error::config(format!("single-vector loss needs {name}"))),
                }
            }
        } else if self.mu_p.is_some() || self.mu_u.is_some() {
            return Err(Error::config(format!("variant {v} takes no mu_p/mu_u")));
        }
        Ok(())
    }

    /// The codebook this variant starts from, if it uses one.
    pub fn build_codebook(&self, p: usize, seed: u64) -> Result<Option<Codebook>> {
        let Some(m) = self
            .codebook_size()
            .filter(|_| self.variant.uses_codebook())
        else {
            return Ok(None);
        };
        let cb = match self.variant {
            Variant::VqFull | Variant::VqTwoCodesUpdated => {
                Codebook::init(m, p, seed, self.anchor_policy)?
            }
            _ => Codebook::bimodal(
                m,
                p,
                self.anchor_scalar.unwrap_or_default(),
                seed,
                self.anchor_policy,
            )?,
        };
        Ok(Some(cb))
    }
}

/// Loss value and gradients w.r.t. encodings and codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    /// Part of the loss whose gradient reaches the encoder.
    pub encoder_term: f64,
    /// Part of the loss whose gradient reaches the codebook.
    pub codebook_term: f64,
    pub d_pos: Array2<f64>,
    pub d_unl: Array2<f64>,
    pub codebook_grad: Option<Array2<f64>>,
}

/// Result of a loss evaluated through the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub encoder_term: f64,
    pub codebook_term: f64,
    pub encoder_grad: Gradient,
    pub codebook_grad: Option<Array2<f64>>,
}

fn check_batches(pos: &ArrayView2<f64>, unl: &ArrayView2<f64>, width: usize) -> Result<()> {
    if pos.nrows() == 0 || unl.nrows() == 0 {
        return Err(Error::usage(
            "positive and unlabeled batches must be nonempty",
        ));
    }
    for b in [pos, unl] {
        if b.ncols() != width {
            return Err(Error::shape(width, b.ncols()));
        }
    }
    Ok(())
}

/// VQ terms for one branch: commitment toward `anchor` (encoder side)
/// and code pull toward the encodings (codebook side).
fn vq_branch(
    codebook: &Codebook,
    anchor: usize,
    enc: ArrayView2<f64>,
    p: usize,
    d_enc: &mut Array2<f64>,
    cb_grad: &mut Array2<f64>,
) -> (f64, f64) {
    let anchor = codebook.vectors().row(anchor);
    let (mut commit, mut pull) = (0.0, 0.0);
    let mut indices = Vec::new();
    for (i, row) in enc.rows().into_iter().enumerate() {
        let row = row.to_vec();
        indices.clear();
        for (j, v) in row.chunks(p).enumerate() {
            let (idx, dist) = codebook.nearest(v);
            indices.push(idx);
            pull += dist;
            for (c, (&x, &a)) in v.iter().zip(anchor.iter()).enumerate() {
                commit += (x - a) * (x - a);
                d_enc[[i, j * p + c]] = 2.0 * (x - a);
            }
        }
        let vecs = ArrayView2::from_shape((row.len() / p, p), &row).expect("k x p");
        codebook
            .accumulate_grad(cb_grad, vecs, &indices)
            .expect("shapes checked by caller");
    }
    (commit, pull)
}

/// Batch-mean squared distance of every output vector to a fixed target.
fn target_branch(enc: ArrayView2<f64>, target: &[f64], d_enc: &mut Array2<f64>) -> f64 {
    let p = target.len();
    let scale = 1.0 / enc.nrows() as f64;
    let mut loss = 0.0;
    for ((i, c), &x) in enc.indexed_iter() {
        let diff = x - target[c % p];
        loss += diff * diff;
        d_enc[[i, c]] = 2.0 * diff * scale;
    }
    loss * scale
}

/// `KL(N(m, s^2) || N(t, 1))` summed over dimensions, where `m`, `s^2` are
/// the per-dimension moments of every output vector in the batch.
fn kl_branch(enc: ArrayView2<f64>, p: usize, t: f64, d_enc: &mut Array2<f64>) -> f64 {
    let n = (enc.len() / p) as f64;
    let mut mean = Array1::<f64>::zeros(p);
    for ((_, c), &x) in enc.indexed_iter() {
        mean[c % p] += x;
    }
    mean /= n;
    let mut var = Array1::<f64>::zeros(p);
    for ((_, c), &x) in enc.indexed_iter() {
        var[c % p] += (x - mean[c % p]).powi(2);
    }
    var.mapv_inplace(|v| (v / n).max(MIN_VARIANCE));
    let kl = mean
        .iter()
        .zip(&var)
        .map(|(&m, &s2)| 0.5 * (s2 + (m - t).powi(2) - 1.0 - s2.ln()))
        .sum();
    for ((i, c), &x) in enc.indexed_iter() {
        let (m, s2) = (mean[c % p], var[c % p]);
        d_enc[[i, c]] = ((m - t) + (1.0 - 1.0 / s2) * (x - m)) / n;
    }
    kl
}

/// Evaluates `config`'s objective on flattened `k * p` encodings.
pub fn objective(
    config: &LossConfig,
    codebook: Option<&Codebook>,
    enc_pos: ArrayView2<f64>,
    enc_unl: ArrayView2<f64>,
    k: usize,
    p: usize,
) -> Result<Objective> {
    config.validate(k, p)?;
    check_batches(&enc_pos, &enc_unl, k * p)?;
    let mut d_pos = Array2::zeros(enc_pos.raw_dim());
    let mut d_unl = Array2::zeros(enc_unl.raw_dim());
    let a = config.anchor_scalar.unwrap_or_default();
    let mut codebook_grad = None;
    let (encoder_term, codebook_term) = match config.variant {
        v if v.uses_codebook() => {
            let cb =
                codebook.ok_or_else(|| Error::config(format!("variant {v} needs a codebook")))?;
            if cb.dim() != p {
                return Err(Error::config(format!(
                    "codebook dimension {} does not match encoder p={p}",
                    cb.dim()
                )));
            }
            let mut g = Array2::zeros(cb.vectors().raw_dim());
            let (c1, q1) = vq_branch(cb, cb.high_anchor_index(), enc_pos, p, &mut d_pos, &mut g);
            let (c2, q2) = vq_branch(cb, cb.low_anchor_index(), enc_unl, p, &mut d_unl, &mut g);
            codebook_grad = Some(g);
            (c1 + c2, q1 + q2)
        }
        Variant::ConstantEncodings => {
            let lp = target_branch(enc_pos, &vec![a; p], &mut d_pos);
            let lu = target_branch(enc_unl, &vec![0.0; p], &mut d_unl);
            (lp + lu, 0.0)
        }
        Variant::DistributionalEncodings => {
            let lp = kl_branch(enc_pos, p, a, &mut d_pos);
            let lu = kl_branch(enc_unl, p, 0.0, &mut d_unl);
            (lp + lu, 0.0)
        }
        Variant::SingleVector => {
            let lp = target_branch(
                enc_pos,
                config.mu_p.as_deref().unwrap_or_default(),
                &mut d_pos,
            );
            let lu = target_branch(
                enc_unl,
                config.mu_u.as_deref().unwrap_or_default(),
                &mut d_unl,
            );
            (lp + lu, 0.0)
        }
        _ => unreachable!("codebook variants handled above"),
    };
    Ok(Objective {
        loss: encoder_term + codebook_term,
        encoder_term,
        codebook_term,
        d_pos,
        d_unl,
        codebook_grad,
    })
}

/// Any variant, evaluated through the encoder with one forward/backward pass.
pub fn ablation_loss(
    config: &LossConfig,
    encoder: &Encoder,
    codebook: Option<&Codebook>,
    pos: ArrayView2<f64>,
    unl: ArrayView2<f64>,
) -> Result<LossEval> {
    if pos.nrows() == 0 || unl.nrows() == 0 {
        return Err(Error::usage(
            "positive and unlabeled batches must be nonempty",
        ));
    }
    let joined = concatenate(Axis(0), &[pos, unl]).map_err(|e| Error::shape(pos.ncols(), e))?;
    let (enc, tape) = encoder.forward(joined.view())?;
    let np = pos.nrows();
    let obj = objective(
        config,
        codebook,
        enc.slice(s![..np, ..]),
        enc.slice(s![np.., ..]),
        encoder.k(),
        encoder.p(),
    )?;
    let upstream =
        concatenate(Axis(0), &[obj.d_pos.view(), obj.d_unl.view()]).expect("same widths");
    let encoder_grad = encoder.backward(&tape, upstream.view())?;
    if !obj.loss.is_finite() || !encoder_grad.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss ({}) or gradient in {} objective",
            obj.loss, config.variant
        )));
    }
    Ok(LossEval {
        loss: obj.loss,
        encoder_term: obj.encoder_term,
        codebook_term: obj.codebook_term,
        encoder_grad,
        codebook_grad: obj.codebook_grad,
    })
}

/// The VQ loss: returns the loss, the encoder gradient (commitment terms only) and
/// the codebook gradient (code terms only).
pub fn vq_pu_loss(
    encoder: &Encoder,
    codebook: &Codebook,
    pos: ArrayView2<f64>,
    unl: ArrayView2<f64>,
) -> Result<(f64, Gradient, Array2<f64>)> {
    let config = LossConfig::new(Variant::VqFull).with_codebook_size(codebook.len());
    let eval = ablation_loss(&config, encoder, Some(codebook), pos, unl)?;
    Ok((
        eval.loss,
        eval.encoder_grad,
        eval.codebook_grad.expect("vq variant"),
    ))
}

/// Single-vector loss with batch sizes standing in for `n_p` and `n_u`.
pub fn single_vector_loss(
    encoder: &Encoder,
    mu_p: &[f64],
    mu_u: &[f64],
    pos: ArrayView2<f64>,
    unl: ArrayView2<f64>,
) -> Result<(f64, Gradient)> {
    let config = LossConfig::single_vector(mu_p.to_vec(), mu_u.to_vec());
    let eval = ablation_loss(&config, encoder, None, pos, unl)?;
    Ok((eval.loss, eval.encoder_grad))
}
