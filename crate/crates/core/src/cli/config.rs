use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::EvalSource;
use crate::error::{Error, Result};
use crate::reference::ReferenceDist;
use crate::rjmcmc::{ChainConfig, InnerKernel};
use crate::targets::{factor::FaHyper, varsel::VsHyper};
use crate::vi::TrainerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetName {
    Sas,
    FactorAnalysis,
    VariableSelection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Sas,
    FactorAnalysis,
    VariableSelection,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sas" => Ok(Preset::Sas),
            "factor-analysis" => Ok(Preset::FactorAnalysis),
            "variable-selection" => Ok(Preset::VariableSelection),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; expected sas, factor-analysis or variable-selection"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Sas => "sas",
            Preset::FactorAnalysis => "factor-analysis",
            Preset::VariableSelection => "variable-selection",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub name: TargetName,
    /// Observation file; factor analysis expects 143 rows of 6 columns,
    /// variable selection rows of `x1 x2 x3 y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Generate data from a fixed simulation instead of reading `data`.
    #[serde(default)]
    pub synthetic_data: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_seed: Option<u64>,
    #[serde(default)]
    pub variable_selection: VsHyper,
    #[serde(default)]
    pub factor_analysis: FaHyper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// One context-conditioned stack over the saturated space instead of one
    /// stack per model.
    pub conditional: bool,
    /// Depth per model; a single entry applies to every model.
    pub depth: Vec<usize>,
    pub hidden: Vec<usize>,
    pub alternate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<usize>,
    pub reference: ReferenceDist,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            conditional: false,
            depth: vec![8],
            hidden: vec![256],
            alternate: true,
            split: None,
            reference: ReferenceDist::StandardGaussian,
        }
    }
}

impl FlowConfig {
    pub fn depth_for(&self, k: usize) -> Result<usize> {
        match self.depth.as_slice() {
            [] => Err(Error::Config("flow.depth must not be empty".into())),
            [d] => Ok(*d),
            ds => ds
                .get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("flow.depth has {} entries, model {k} has none", ds.len()))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// Per-model transport maps through a shared reference space.
    Trj,
    /// One conditional transport map over the saturated space.
    Ctp,
    /// Block swap between parameters and Gaussian auxiliaries.
    Saturated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportSource {
    /// Checkpoints written by `train`.
    Trained,
    /// Analytic maps; only the SAS target has them.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kernel: KernelKind,
    pub transport: TransportSource,
    /// Directory holding flow checkpoints; defaults to the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<PathBuf>,
    /// Rows of `q(k' | k)`; the target's default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_proposal: Option<Vec<Vec<f64>>>,
    pub within: InnerKernel,
    /// Within-model steps after every jump.
    pub within_steps: usize,
    /// Auxiliary variance of the saturated sampler.
    pub aux_var: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kernel: KernelKind::Trj,
            transport: TransportSource::Trained,
            checkpoints: None,
            index_proposal: None,
            within: InnerKernel::default(),
            within_steps: 1,
            aux_var: 100.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Trace files to summarize; all `trace_chain*.csv` in the checkpoint
    /// directory when empty.
    pub traces: Vec<PathBuf>,
    /// Evaluation states per model for each bridge-estimator replicate.
    pub eval_states: usize,
    pub replicates: usize,
    pub eval_source: EvalSource,
    /// Discarded independence-sampler steps before evaluation states are kept.
    pub eval_burn: usize,
    pub anchor: usize,
    /// Importance samples per model for `evidence`.
    pub evidence_samples: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            traces: Vec::new(),
            eval_states: 500,
            replicates: 80,
            eval_source: EvalSource::FlowIndependence,
            eval_burn: 100,
            anchor: 0,
            evidence_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub depths: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { depths: vec![4, 8, 12, 16] }
    }
}

/// Everything a command needs; serialized verbatim into run manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub target: TargetConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn preset(p: Preset) -> Self {
        let base = |name| RunConfig {
            preset: Some(p),
            seed: 0,
            out: default_out(),
            target: TargetConfig {
                name,
                data: None,
                synthetic_data: false,
                observations: None,
                data_seed: None,
                variable_selection: VsHyper::default(),
                factor_analysis: FaHyper::default(),
            },
            flow: FlowConfig::default(),
            trainer: TrainerConfig::default(),
            chain: ChainConfig::default(),
            sampler: SamplerConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            ablation: AblationConfig::default(),
        };
        match p {
            Preset::Sas => {
                let mut c = base(TargetName::Sas);
                c.flow.depth = vec![8, 9];
                c.diagnostics.eval_source = EvalSource::ExactMap;
                c
            }
            Preset::FactorAnalysis => {
                let mut c = base(TargetName::FactorAnalysis);
                c.flow.depth = vec![16];
                c.sampler.index_proposal = None;
                c
            }
            Preset::VariableSelection => {
                let mut c = base(TargetName::VariableSelection);
                c.target.synthetic_data = true;
                c.flow.conditional = true;
                c.flow.depth = vec![8];
                c.trainer.max_iters = 40_000;
                c.sampler.kernel = KernelKind::Ctp;
                c.sampler.within_steps = 0;
                c
            }
        }
    }

    /// Parse a TOML document. A `preset` key (or `preset` argument) supplies
    /// defaults that the document's tables override field by field.
    pub fn from_toml(text: &str, preset: Option<Preset>) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        // a run manifest carries its configuration under `config`
        if let Some(toml::Value::Table(inner)) = user.remove("config") {
            user = inner;
        }
        let named = match user.get("preset") {
            Some(toml::Value::String(s)) => Some(s.parse::<Preset>()?),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => None,
        };
        let chosen = preset.or(named);
        let merged = match chosen {
            Some(p) => {
                let mut base = toml::Table::try_from(Self::preset(p)).map_err(|e| Error::Config(e.to_string()))?;
                merge(&mut base, user);
                base.insert("preset".into(), toml::Value::String(p.to_string()));
                base
            }
            None => user,
        };
        let cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, preset).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 || self.trainer.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seeds must be at most {}", i64::MAX)));
        }
        self.trainer.validate()?;
        self.chain.validate()?;
        self.flow.reference.validate()?;
        self.target.variable_selection.validate()?;
        if self.flow.depth.is_empty() {
            return Err(Error::Config("flow.depth must not be empty".into()));
        }
        if self.sampler.kernel == KernelKind::Ctp && !self.flow.conditional {
            return Err(Error::Config("sampler.kernel = \"ctp\" needs flow.conditional = true".into()));
        }
        if self.sampler.kernel == KernelKind::Trj && self.flow.conditional && self.sampler.transport == TransportSource::Trained {
            return Err(Error::Config("sampler.kernel = \"trj\" needs per-model flows (flow.conditional = false)".into()));
        }
        if self.sampler.transport == TransportSource::Exact && self.target.name != TargetName::Sas {
            return Err(Error::Config("sampler.transport = \"exact\" is only available for the sas target".into()));
        }
        if !(self.sampler.aux_var > 0.0) {
            return Err(Error::Config(format!("sampler.aux_var must be positive, got {}", self.sampler.aux_var)));
        }
        if self.diagnostics.evidence_samples == 0 || self.diagnostics.replicates == 0 {
            return Err(Error::Config("diagnostics.evidence_samples and diagnostics.replicates must be >= 1".into()));
        }
        Ok(())
    }
}

/// Overlay `top` onto `base`, recursing into tables present in both.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
