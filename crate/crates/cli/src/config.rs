//! Run configuration: the TOML schema, built-in presets and overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vqpu::classify::EvalSplit;
use vqpu::loss::{LossConfig, Variant, STANDARD_ANCHOR_SCALARS};
use vqpu::model::FeatureMode;
use vqpu::train::{EncoderConfig, TrainConfig};
use vqpu::{Error, Parallelism, Result};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "VQPU_OUT_ROOT";
/// Environment variable naming the MNIST directory when a config leaves it unset.
pub const MNIST_DIR_ENV: &str = "MNIST_DIR";

pub const PRESETS: [&str; 3] = ["toy-1d", "synthetic-d16", "paper-mnist"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Names the default output directory.
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// `sequential` gives bit-identical reruns regardless of thread count.
    #[serde(default)]
    pub parallelism: Parallelism,
    pub data: DataConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablate: AblateConfig,
    #[serde(default)]
    pub ntk: NtkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Required for every source except `csv`.
    #[serde(default)]
    pub split: Option<SplitConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Two 1-D Gaussians, given by means and variances.
    Toy1d {
        mu_pos: f64,
        var_pos: f64,
        mu_neg: f64,
        var_neg: f64,
    },
    /// Unit-variance isotropic Gaussians whose means are `separation` apart.
    GaussianHighdim { dim: usize, separation: f64 },
    /// MNIST IDX files; `dir` falls back to `$MNIST_DIR`, then `data/mnist`.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        positive_classes: Vec<u8>,
    },
    /// A dataset previously written by `simulate`.
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub alpha: f64,
    pub n_p: usize,
    pub n_u: usize,
    /// Held-out labeled samples. For MNIST, `None` keeps the whole test file.
    #[serde(default)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "test_split")]
    pub split: EvalSplit,
    /// Defaults to `best.ckpt` in the output directory.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Score the eval split at every distance check during `train`.
    #[serde(default = "yes")]
    pub monitor: bool,
}

fn test_split() -> EvalSplit {
    EvalSplit::Test
}

fn yes() -> bool {
    true
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: EvalSplit::Test,
            checkpoint: None,
            monitor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    #[serde(default = "all_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "standard_scalars")]
    pub anchor_scalars: Vec<f64>,
    /// Training seeds; empty means the run seed alone.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn all_variants() -> Vec<Variant> {
    Variant::ABLATIONS.to_vec()
}

fn standard_scalars() -> Vec<f64> {
    STANDARD_ANCHOR_SCALARS.to_vec()
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: all_variants(),
            anchor_scalars: standard_scalars(),
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RowsConfig {
    /// Means default to the first and second unit vectors.
    Gaussian {
        dim: usize,
        std: f64,
        #[serde(default)]
        positive_mean: Option<Vec<f64>>,
        #[serde(default)]
        negative_mean: Option<Vec<f64>>,
    },
    Uniform {
        dim: usize,
        half_width: f64,
        #[serde(default)]
        positive_mean: Option<Vec<f64>>,
        #[serde(default)]
        negative_mean: Option<Vec<f64>>,
    },
    Constant {
        positive: Vec<f64>,
        negative: Vec<f64>,
    },
    /// Parameter gradients of one output of a randomly initialized MLP on
    /// isotropic Gaussian inputs.
    Encoder {
        input_dim: usize,
        separation: f64,
        hidden: Vec<usize>,
        #[serde(default)]
        output_index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtkConfig {
    pub rows: RowsConfig,
    pub n_p: usize,
    pub n_up: usize,
    pub n_un: usize,
    pub alpha: f64,
    pub mu_p: f64,
    pub mu_u: f64,
    pub epsilon: f64,
    pub trials: usize,
    /// Block sizes for the `||J^T w||` scaling sweep; empty skips it.
    #[serde(default)]
    pub sweep_sizes: Vec<usize>,
    #[serde(default = "fifty")]
    pub sweep_draws: usize,
}

fn fifty() -> usize {
    50
}

impl Default for NtkConfig {
    fn default() -> Self {
        Self {
            rows: RowsConfig::Gaussian {
                dim: 20,
                std: 0.1,
                positive_mean: None,
                negative_mean: None,
            },
            n_p: 500,
            n_up: 500,
            n_un: 500,
            alpha: 0.5,
            mu_p: 1.0,
            mu_u: 0.0,
            epsilon: 0.1,
            trials: 20,
            sweep_sizes: vec![125, 250, 500, 1000, 2000, 4000],
            sweep_draws: 50,
        }
    }
}

fn train_config(
    encoder: EncoderConfig,
    lr: f64,
    mode: FeatureMode,
    max_epochs: usize,
) -> TrainConfig {
    let mut t = TrainConfig::new(LossConfig::new(Variant::VqFull), encoder, 0);
    t.adam.learning_rate = lr;
    t.feature_mode = Some(mode);
    t.max_epochs = max_epochs;
    t
}

/// The named presets.
pub fn preset(name: &str) -> Result<RunConfig> {
    let (data, train) = match name {
        "toy-1d" => (
            DataConfig {
                source: DataSource::Toy1d {
                    mu_pos: 0.0,
                    var_pos: 9.0,
                    mu_neg: 30.0,
                    var_neg: 25.0,
                },
                split: Some(SplitConfig {
                    alpha: 0.5,
                    n_p: 1000,
                    n_u: 4000,
                    n_test: Some(2000),
                }),
            },
            train_config(
                EncoderConfig::mlp(vec![64, 64], 1, 1),
                1e-3,
                FeatureMode::QuantizedVectors,
                50,
            ),
        ),
        "synthetic-d16" => (
            DataConfig {
                source: DataSource::GaussianHighdim {
                    dim: 16,
                    separation: 4.0,
                },
                split: Some(SplitConfig {
                    alpha: 0.5,
                    n_p: 1000,
                    n_u: 4000,
                    n_test: Some(2000),
                }),
            },
            train_config(
                EncoderConfig::mlp(vec![256, 128], 4, 4),
                3e-4,
                FeatureMode::QuantizedVectors,
                100,
            ),
        ),
        "paper-mnist" => {
            let mut encoder = EncoderConfig::mlp(vec![256, 128], 4, 4);
            encoder.standardize_inputs = false;
            (
                DataConfig {
                    source: DataSource::Mnist {
                        dir: None,
                        positive_classes: vec![0, 2, 4, 6, 8],
                    },
                    split: Some(SplitConfig {
                        alpha: 0.5,
                        n_p: 1000,
                        n_u: 10000,
                        n_test: None,
                    }),
                },
                train_config(encoder, 1e-4, FeatureMode::RawEncodings, 100),
            )
        }
        other => {
            return Err(Error::Usage(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(RunConfig {
        name: name.to_string(),
        seed: 0,
        out: None,
        parallelism: Parallelism::default(),
        data,
        train,
        eval: EvalConfig::default(),
        ablate: AblateConfig {
            seeds: (0..5).collect(),
            ..AblateConfig::default()
        },
        ntk: NtkConfig::default(),
    })
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// Parses `key=value`; the value is read as a TOML literal, or as a string
/// when it is not one.
fn parse_override(s: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{s}` is not of the form key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.trim().split('.').map(str::to_string).collect(), value))
}

fn apply_override(root: &mut toml::Value, path: &[String], value: toml::Value) -> Result<()> {
    let mut node = root;
    for (i, part) in path.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a table", path[..i].join("."))))?;
        if i + 1 == path.len() {
            table.insert(part.clone(), value);
            return Ok(());
        }
        node = table
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Usage("empty override key".into()))
}

/// Where a run's configuration comes from.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub preset: Option<String>,
    pub path: Option<PathBuf>,
    /// Dotted `key=value` overrides, applied in order.
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sequential: bool,
}

impl ConfigSource {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.to_string()),
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut value = match (&self.preset, &self.path) {
            (Some(_), Some(_)) => {
                return Err(Error::Usage(
                    "give either a preset or a config file, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Usage("a preset or a config file is required".into()))
            }
            (Some(name), None) => toml::Value::try_from(preset(name)?)
                .map_err(|e| Error::Config(format!("preset {name}: {e}")))?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let table: toml::Table = toml::from_str(&text).map_err(|e| config_err(path, e))?;
                toml::Value::Table(table)
            }
        };
        for o in &self.overrides {
            let (key, v) = parse_override(o)?;
            apply_override(&mut value, &key, v)?;
        }
        let mut cfg: RunConfig = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        if self.sequential {
            cfg.parallelism = Parallelism::Sequential;
        }
        cfg.train.seed = cfg.seed;
        cfg.train.parallelism = cfg.parallelism;
        Ok(cfg)
    }
}

impl RunConfig {
    /// `out`, else `$VQPU_OUT_ROOT/<name>/seed-<seed>` with `runs` as root.
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let root =
                std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(&self.name).join(format!("seed-{}", self.seed))
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            let text = cfg.to_toml().unwrap();
            let back: RunConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn overrides_and_flags_apply() {
        let src = ConfigSource {
            overrides: vec![
                "train.adam.learning_rate=0.5".into(),
                "data.split.n_p=7".into(),
            ],
            seed: Some(9),
            sequential: true,
            ..ConfigSource::preset("toy-1d")
        };
        let cfg = src.resolve().unwrap();
        assert_eq!(cfg.train.adam.learning_rate, 0.5);
        assert_eq!(cfg.data.split.unwrap().n_p, 7);
        assert_eq!((cfg.seed, cfg.train.seed), (9, 9));
        assert_eq!(cfg.train.parallelism, Parallelism::Sequential);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let src = ConfigSource {
            overrides: vec!["train.learning_rate=0.5".into()],
            ..ConfigSource::preset("toy-1d")
        };
        assert!(matches!(src.resolve(), Err(Error::Config(_))));
        assert!(matches!(preset("nope"), Err(Error::Usage(_))));
    }

    #[test]
    fn string_override_falls_back_to_text() {
        let (k, v) = parse_override("data.source.kind=csv").unwrap();
        assert_eq!(k, ["data", "source", "kind"]);
        assert_eq!(v.as_str(), Some("csv"));
    }
}
