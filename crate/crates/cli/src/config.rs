use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cranio_core::cohort::{ClassLabel, SyntheticFactorSpec};
use cranio_core::planning::Target;
use cranio_core::sdvae::{ModelConfig, TrainingConfig};
use cranio_service::ServiceConfig;
use serde::{Deserialize, Serialize};

/// Everything a run needs. Stage seeds derive from `seed`, so a config file
/// plus a seed reproduces a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub dataset: DatasetPaths,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub augment: AugmentConfig,
    pub spectra: SpectraConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub plan: PlanConfig,
    pub service: ServiceConfig,
}

/// An existing cohort to use instead of `synth`. Mesh paths in the manifest
/// are relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetPaths {
    pub manifest: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub segmentation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub counts: BTreeMap<ClassLabel, i64>,
    pub spec: SyntheticFactorSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            counts: ClassLabel::builtin()
                .into_iter()
                .map(|c| {
                    let n = if c == ClassLabel::healthy() { 300 } else { 120 };
                    (c, n)
                })
                .collect(),
            spec: SyntheticFactorSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Train, validation and test fractions per class.
    pub ratios: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// When false, `augment` leaves the cohort unchanged.
    pub enabled: bool,
    /// Per-class training count; defaults to the largest class.
    pub target: Option<usize>,
    /// Eigenpairs used for interpolation.
    pub basis_k: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            target: None,
            basis_k: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraConfig {
    pub components: usize,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        Self { components: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Traversal range in prior standard deviations.
    pub sweep: [f64; 2],
    pub diversity_samples: usize,
    /// Latent the traversals start from; zeros when absent.
    pub baseline: Option<Vec<f64>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sweep: [-3.0, 3.0],
            diversity_samples: 1000,
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Subject to plan for; defaults to the first non-healthy test subject.
    pub patient: Option<String>,
    /// Procedure to interpolate; defaults to the best-ranked one.
    pub procedure: Option<String>,
    /// Procedure registry file; the built-in procedures when absent.
    pub registry: Option<PathBuf>,
    pub target: Target,
    pub steps: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            patient: None,
            procedure: None,
            registry: None,
            target: Target::Mean,
            steps: 5,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            dataset: DatasetPaths::default(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            augment: AugmentConfig::default(),
            spectra: SpectraConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            plan: PlanConfig::default(),
            service: ServiceConfig {
                root: PathBuf::new(),
                ..ServiceConfig::default()
            },
        }
    }
}

/// Per-stage generator seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub synth: u64,
    pub split: u64,
    pub augment: u64,
    pub init: u64,
    pub training: u64,
    pub diversity: u64,
}

impl Seeds {
    pub fn derive(base: u64) -> Self {
        let at = |k: u64| base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Self {
            synth: at(1),
            split: at(2),
            augment: at(3),
            init: at(4),
            training: at(5),
            diversity: at(6),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).context("parsing run config")?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Applies `dotted.key=value` assignments; values are TOML literals, and
    /// anything that does not parse as one is taken as a string.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        if sets.is_empty() {
            return Ok(self.clone());
        }
        let mut root = toml::Table::try_from(self).context("serialising run config")?;
        for set in sets {
            let (key, raw) = set
                .split_once('=')
                .with_context(|| format!("override `{set}` is not of the form key=value"))?;
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.to_string()));
            let mut path: Vec<&str> = key.trim().split('.').collect();
            let last = path.pop().filter(|k| !k.is_empty()).context("empty override key")?;
            let mut table = &mut root;
            for part in path {
                table = table
                    .entry(part)
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .with_context(|| format!("override `{key}`: `{part}` is not a table"))?;
            }
            table.insert(last.to_string(), value);
        }
        let config: Self = root.try_into().context("applying overrides")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        if self.eval.sweep[0] >= self.eval.sweep[1] {
            bail!("eval.sweep must be increasing");
        }
        if self.plan.steps == 0 {
            bail!("plan.steps must be positive");
        }
        if let Some(b) = &self.eval.baseline {
            if b.len() != cranio_core::LATENT_DIM {
                bail!("eval.baseline must have {} values", cranio_core::LATENT_DIM);
            }
        }
        let d = &self.dataset;
        if d.manifest.is_some() != d.template.is_some() || d.manifest.is_some() != d.segmentation.is_some() {
            bail!("dataset.manifest, dataset.template and dataset.segmentation go together");
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    /// Store directory for `serve`; `<out>/service` unless configured.
    pub fn service_root(&self) -> PathBuf {
        if self.service.root.as_os_str().is_empty() {
            self.out.join("service")
        } else {
            self.service.root.clone()
        }
    }
}
