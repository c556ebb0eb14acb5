//! Experiment configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use autodesign::amc::AmcConfig;
use autodesign::archsearch::{FrontierConfig, SearchConfig, SearchSpace};
use autodesign::haq::HaqConfig;
use autodesign::hwmodel::HardwareSpec;
use autodesign::nncore::NetSpec;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSpec;
use crate::error::{BenchError, BenchResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Search,
    Prune,
    Quantize,
    Oracle,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Search => "search",
            Pipeline::Prune => "prune",
            Pipeline::Quantize => "quantize",
            Pipeline::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKindSpec {
    Macs,
    Latency,
    Energy,
    ModelSize,
}

impl BudgetKindSpec {
    pub fn name(self) -> &'static str {
        match self {
            BudgetKindSpec::Macs => "macs",
            BudgetKindSpec::Latency => "latency",
            BudgetKindSpec::Energy => "energy",
            BudgetKindSpec::ModelSize => "model_size",
        }
    }
}

/// A resource limit: absolute (`limit`), a `fraction` of the reference
/// cost (the unpruned network, or the all-8-bit policy for quantization),
/// or the cost of the uniform `uniform_bits` policy (quantization only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    pub kind: BudgetKindSpec,
    #[serde(default)]
    pub limit: Option<f64>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub uniform_bits: Option<u8>,
}

impl BudgetSpec {
    /// Absolute limit given the reference cost and the cost of a uniform
    /// policy at a given bitwidth.
    pub fn resolve(&self, reference: f64, uniform_cost: impl FnOnce(u8) -> f64) -> f64 {
        match (self.limit, self.fraction, self.uniform_bits) {
            (Some(l), _, _) => l,
            (None, Some(f), _) => f * reference,
            (None, None, Some(b)) => uniform_cost(b),
            (None, None, None) => unreachable!("validated budget has a bound"),
        }
    }

    fn validate(&self) -> BenchResult<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let given = [self.limit.is_some(), self.fraction.is_some(), self.uniform_bits.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(BenchError::Config(format!(
                "{} budget needs exactly one of `limit`, `fraction` or `uniform_bits`",
                self.kind.name()
            )));
        }
        let valid = self.limit.map_or(true, ok)
            && self.fraction.map_or(true, ok)
            && self.uniform_bits.map_or(true, |b| (1..=8).contains(&b));
        if !valid {
            return Err(BenchError::Config(format!(
                "{} budget must be positive (uniform_bits within 1..=8)",
                self.kind.name()
            )));
        }
        Ok(())
    }
}

/// Pre-training of the network that prune and quantize compress. The seed
/// is the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSpec {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

fn default_hardware() -> Vec<String> {
    vec!["edge".into()]
}

fn default_frontier() -> FrontierConfig {
    FrontierConfig {
        epochs: 10,
        batch_size: 32,
        lr: 0.1,
        seed: 0,
        cap: 512,
    }
}

/// One experiment. Every seed-dependent part (data excepted) takes its seed
/// from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the CLI subcommand when given.
    #[serde(default)]
    pub pipeline: Option<Pipeline>,
    pub seed: u64,
    /// Consecutive seeds starting at `seed`; defaults to 10 under
    /// `acceptance`, otherwise 1.
    #[serde(default)]
    pub seeds: Option<usize>,
    #[serde(default)]
    pub acceptance: bool,
    /// Built-in profile names or profile file paths (relative to the config).
    #[serde(default = "default_hardware")]
    pub hardware: Vec<String>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Wall time is 0 in results unless set, which keeps result files
    /// byte-identical across reruns.
    #[serde(default)]
    pub record_wall_time: bool,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub budgets: Vec<BudgetSpec>,
    #[serde(default)]
    pub network: Option<NetSpec>,
    #[serde(default)]
    pub pretrain: Option<PretrainSpec>,
    #[serde(default)]
    pub space: Option<SearchSpace>,
    #[serde(default)]
    pub search: Option<SearchConfig>,
    /// Stand-alone training of architectures (oracle sweep and the final
    /// evaluation of searched architectures).
    #[serde(default = "default_frontier")]
    pub frontier: FrontierConfig,
    #[serde(default)]
    pub prune: Option<AmcConfig>,
    #[serde(default)]
    pub quantize: Option<HaqConfig>,
}

/// A parsed config together with its verbatim text and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub text: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> BenchResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_text(text, base_dir)
    }

    pub fn from_text(text: String, base_dir: PathBuf) -> BenchResult<Self> {
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(Self {
            config,
            text,
            base_dir,
        })
    }

    /// Resolves each hardware entry as a built-in name or a path relative to
    /// the config file.
    pub fn hardware(&self) -> BenchResult<Vec<HardwareSpec>> {
        self.config
            .hardware
            .iter()
            .map(|h| {
                if let Some(hw) = HardwareSpec::builtin(h) {
                    return Ok(hw);
                }
                let p = self.base_dir.join(h);
                if !p.exists() {
                    return Err(BenchError::Config(format!(
                        "hardware `{h}` is neither a built-in profile ({}) nor an existing file",
                        HardwareSpec::builtin_names().join(", ")
                    )));
                }
                HardwareSpec::load(&p).map_err(|e| BenchError::Config(format!("{}: {e}", p.display())))
            })
            .collect()
    }
}

impl ExperimentConfig {
    pub fn num_seeds(&self) -> usize {
        self.seeds.unwrap_or(if self.acceptance { 10 } else { 1 })
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.num_seeds() as u64).map(|i| self.seed + i).collect()
    }

    /// Checks that the sections `pipeline` needs are present and consistent.
    pub fn validate(&self, pipeline: Pipeline) -> BenchResult<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if let Some(p) = self.pipeline {
            if p != pipeline {
                return bad(format!("config is for the {p} pipeline, not {pipeline}"));
            }
        }
        if self.num_seeds() == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.hardware.is_empty() {
            return bad("at least one hardware profile is required".into());
        }
        self.dataset.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        for b in &self.budgets {
            b.validate()?;
        }
        let allowed: &[BudgetKindSpec] = match pipeline {
            Pipeline::Search => &[BudgetKindSpec::Latency],
            Pipeline::Prune => &[BudgetKindSpec::Macs, BudgetKindSpec::Latency],
            Pipeline::Quantize => &[BudgetKindSpec::Latency, BudgetKindSpec::Energy, BudgetKindSpec::ModelSize],
            Pipeline::Oracle => &[],
        };
        for b in &self.budgets {
            if !allowed.contains(&b.kind) {
                return bad(format!("{pipeline} does not take a {} budget", b.kind.name()));
            }
            if pipeline == Pipeline::Search && b.limit.is_none() {
                return bad("search budgets are absolute target latencies (`limit`)".into());
            }
            if pipeline != Pipeline::Quantize && b.uniform_bits.is_some() {
                return bad("`uniform_bits` budgets apply to quantization only".into());
            }
        }
        let row = self.dataset.row_len();
        match pipeline {
            Pipeline::Search | Pipeline::Oracle => {
                let Some(space) = &self.space else {
                    return bad(format!("{pipeline} needs a [space] section"));
                };
                space.validate().map_err(|e| BenchError::Config(e.to_string()))?;
                if space.in_channels * space.spatial.0 * space.spatial.1 != row
                    || space.num_classes != self.dataset.classes
                {
                    return bad("[space] input shape or class count does not match [dataset]".into());
                }
                if pipeline == Pipeline::Search {
                    let Some(s) = &self.search else {
                        return bad("search needs a [search] section".into());
                    };
                    s.validate().map_err(|e| BenchError::Config(e.to_string()))?;
                }
            }
            Pipeline::Prune | Pipeline::Quantize => {
                let Some(net) = &self.network else {
                    return bad(format!("{pipeline} needs a [network] section"));
                };
                net.validate().map_err(|e| BenchError::Config(e.to_string()))?;
                let first = &net.layers[0];
                if first.in_channels * first.spatial_in.0 * first.spatial_in.1 != row
                    || net.num_classes != self.dataset.classes
                {
                    return bad("[network] input shape or class count does not match [dataset]".into());
                }
                if self.pretrain.is_none() {
                    return bad(format!("{pipeline} needs a [pretrain] section"));
                }
                if self.budgets.is_empty() {
                    return bad(format!("{pipeline} needs at least one [[budgets]] entry"));
                }
                let missing = match pipeline {
                    Pipeline::Prune => self.prune.is_none(),
                    _ => self.quantize.is_none(),
                };
                if missing {
                    return bad(format!("{pipeline} needs a [{pipeline}] section"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 1
[dataset]
n = 40
classes = 2
image_size = 4
difficulty = 0.5
seed = 0
[space]
in_channels = 1
channels = 2
spatial = [4, 4]
num_classes = 2
choices = [["zero", "mb3_3x3"]]
"#;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(LoadedConfig::from_text(BASE.into(), PathBuf::new()).is_ok());
        let typo = BASE.replace("seed = 1", "seed = 1\nsead = 2");
        assert!(matches!(
            LoadedConfig::from_text(typo, PathBuf::new()),
            Err(BenchError::Config(_))
        ));
    }

    #[test]
    fn seed_is_mandatory_and_sections_are_checked() {
        assert!(LoadedConfig::from_text(BASE.replacen("seed = 1", "", 1), PathBuf::new()).is_err());
        let c = LoadedConfig::from_text(BASE.into(), PathBuf::new()).unwrap().config;
        assert!(c.validate(Pipeline::Oracle).is_ok());
        assert!(c.validate(Pipeline::Search).is_err());
        assert!(c.validate(Pipeline::Prune).is_err());
        assert_eq!(c.seed_list(), vec![1]);
    }

    #[test]
    fn budgets_need_one_positive_bound() {
        let with = |b: &str| {
            let c = LoadedConfig::from_text(format!("{BASE}\n[[budgets]]\n{b}\n"), PathBuf::new())
                .unwrap()
                .config;
            c.budgets[0].validate()
        };
        assert!(with("kind = \"macs\"\nfraction = 0.5").is_ok());
        assert!(with("kind = \"macs\"\nfraction = 0.0").is_err());
        assert!(with("kind = \"macs\"").is_err());
        assert!(with("kind = \"macs\"\nfraction = 0.5\nlimit = 3.0").is_err());
        assert!(with("kind = \"latency\"\nuniform_bits = 4").is_ok());
        assert!(with("kind = \"latency\"\nuniform_bits = 9").is_err());
    }

    #[test]
    fn missing_hardware_file_is_a_config_error() {
        let c = LoadedConfig::from_text(
            BASE.replace("seed = 1", "seed = 1\nhardware = [\"nope.toml\"]"),
            PathBuf::from("/nonexistent"),
        )
        .unwrap();
        assert!(matches!(c.hardware(), Err(BenchError::Config(_))));
    }
}
