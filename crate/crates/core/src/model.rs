//! A trained PU model (encoder plus optional codebook), its representation
//! spaces and the binary checkpoint format.
//!
//! Checkpoint layout: an 8-byte little-endian header length, a JSON header,
//! then every parameter as a little-endian `f32` (encoder layers in order,
//! weights before biases, then codebook rows).

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::codebook::{AnchorPolicy, Codebook};
use crate::encoder::{Architecture, Encoder, InputNorm, Layer};
use crate::exec::Parallelism;
use crate::loss::Variant;
use crate::{Error, Result};

const MAGIC: &str = "vqpu-checkpoint";
const VERSION: u32 = 1;

/// Space in which unlabeled data is clustered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// The length-`k` vector of nearest-code indices, cast to reals.
    IndexVector,
    /// The `k * p` quantized vectors.
    QuantizedVectors,
    /// The `k * p` encodings before quantization.
    RawEncodings,
}

impl FeatureMode {
    pub fn default_for(variant: Variant) -> Self {
        if variant.uses_codebook() {
            FeatureMode::IndexVector
        } else {
            FeatureMode::RawEncodings
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PuModel {
    pub encoder: Encoder,
    pub codebook: Option<Codebook>,
    pub variant: Variant,
    pub seed: u64,
    pub step: u64,
}

impl PuModel {
    /// Features for every row of `x` in the requested space.
    pub fn representation(
        &self,
        x: ArrayView2<f64>,
        mode: FeatureMode,
        par: Parallelism,
    ) -> Result<Array2<f64>> {
        let enc = self.encoder.encode(x, par)?;
        let k = self.encoder.k();
        let cb = match (mode, &self.codebook) {
            (FeatureMode::RawEncodings, _) => return Ok(enc),
            (_, Some(cb)) => cb,
            (_, None) => {
                return Err(Error::config(format!(
                    "feature mode {mode:?} needs a codebook, but variant {} has none",
                    self.variant
                )))
            }
        };
        let idx = cb.indices_batch(enc.view(), k, par)?;
        Ok(match mode {
            FeatureMode::IndexVector => idx.mapv(|i| i as f64),
            _ => {
                let p = cb.dim();
                Array2::from_shape_fn((idx.nrows(), k * p), |(r, c)| {
                    cb.vectors()[[idx[[r, c / p]], c % p]]
                })
            }
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: MAGIC.into(),
            version: VERSION,
            variant: self.variant,
            seed: self.seed,
            step: self.step,
            architecture: self.encoder.architecture().clone(),
            input_norm: self.encoder.input_norm().cloned(),
            shapes: self
                .encoder
                .layers()
                .iter()
                .map(|l| [l.weight.nrows(), l.weight.ncols()])
                .collect(),
            codebook: self.codebook.as_ref().map(|cb| CodebookMeta {
                m: cb.len(),
                p: cb.dim(),
                anchor_policy: cb.policy(),
                low_anchor_index: cb.low_anchor_index(),
                high_anchor_index: cb.high_anchor_index(),
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + 4 * self.encoder.num_params());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let cb_params = self
            .codebook
            .iter()
            .flat_map(|cb| cb.vectors().iter().copied());
        for x in self.encoder.params_flat().into_iter().chain(cb_params) {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fmt = |offset: usize, msg: String| Error::format(path, offset as u64, msg);
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| fmt(bytes.len(), "missing checkpoint header length".into()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let body = 8usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                fmt(
                    bytes.len(),
                    format!("header of {header_len} bytes is truncated"),
                )
            })?;
        let header: Header = serde_json::from_slice(&bytes[8..body])
            .map_err(|e| fmt(8 + e.column().saturating_sub(1), format!("bad header: {e}")))?;
        if header.format != MAGIC || header.version != VERSION {
            return Err(fmt(8, format!("not a v{VERSION} checkpoint")));
        }
        let blob = &bytes[body..];
        if blob.len() % 4 != 0 {
            return Err(fmt(
                bytes.len(),
                "parameter blob is not a whole number of f32".into(),
            ));
        }
        let mut values = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);

        let arch = header.architecture;
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (spec, shape) in arch.layers.iter().zip(&header.shapes) {
            if spec.weight_shape() != (shape[0], shape[1]) {
                return Err(fmt(8, "layer shapes disagree with the architecture".into()));
            }
            let mut layer = Layer::zeros(*spec);
            let n = layer.weight.len() + layer.bias.len();
            let take: Vec<f64> = values.by_ref().take(n).collect();
            if take.len() < n {
                return Err(fmt(bytes.len(), "parameter blob is truncated".into()));
            }
            let (w, b) = take.split_at(layer.weight.len());
            layer.weight =
                Array2::from_shape_vec(layer.weight.raw_dim(), w.to_vec()).expect("sized");
            layer.bias = Array1::from(b.to_vec());
            layers.push(layer);
        }
        let encoder = Encoder::from_layers(arch, layers, header.input_norm)?;
        let codebook = match header.codebook {
            Some(meta) => {
                let rows: Vec<f64> = values.by_ref().take(meta.m * meta.p).collect();
                if rows.len() < meta.m * meta.p {
                    return Err(fmt(bytes.len(), "codebook blob is truncated".into()));
                }
                let vectors = Array2::from_shape_vec((meta.m, meta.p), rows).expect("sized");
                Some(Codebook::from_parts(
                    vectors,
                    meta.anchor_policy,
                    meta.low_anchor_index,
                    meta.high_anchor_index,
                )?)
            }
            None => None,
        };
        if values.next().is_some() {
            return Err(fmt(
                bytes.len(),
                "trailing parameters after the codebook".into(),
            ));
        }
        Ok(Self {
            encoder,
            codebook,
            variant: header.variant,
            seed: header.seed,
            step: header.step,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    variant: Variant,
    seed: u64,
    step: u64,
    architecture: Architecture,
    input_norm: Option<InputNorm>,
    shapes: Vec<[usize; 2]>,
    codebook: Option<CodebookMeta>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodebookMeta {
    m: usize,
    p: usize,
    anchor_policy: AnchorPolicy,
    low_anchor_index: usize,
    high_anchor_index: usize,
}
