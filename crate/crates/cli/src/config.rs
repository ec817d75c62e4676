//! Experiment configuration: one TOML file per experiment.
//!
//! Unknown keys anywhere in the document are rejected, including inside
//! nested model and domain tables.

use std::path::{Path, PathBuf};

use gibbslab::concentration::{InequalityMode, TestFunctional};
use gibbslab::sampler::{Normalizability, PhaseDomain};
use gibbslab::transport::ConditionalEstimator;
use gibbslab::{FlowConfig, ModelSpec};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    Flow,
    Invariance,
    Lsi,
    Convexity,
    Normalizability,
    Transport,
    GpSolve,
    Zakharov,
    Tail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Report file stem; defaults to the config file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub lattice: Option<LatticeBlock>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub domain: Option<PhaseDomain>,
    #[serde(default)]
    pub sampler: Option<SamplerBlock>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub invariance: Option<InvarianceBlock>,
    #[serde(default)]
    pub lsi: Option<LsiBlock>,
    #[serde(default)]
    pub convexity: Option<ConvexityBlock>,
    #[serde(default)]
    pub normalizability: Option<NormalizabilityBlock>,
    #[serde(default)]
    pub transport: Option<TransportBlock>,
    #[serde(default)]
    pub gp_solve: Option<GpSolveBlock>,
    #[serde(default)]
    pub tail: Option<TailBlock>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    /// Fourier cutoff; the dimension comes from the model.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    pub samples: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    /// Burn-in steps per chain; defaults to 50 thinning intervals.
    #[serde(default)]
    pub burn_in: Option<usize>,
    /// pCN step; tuned on a pilot run when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Load samples from an archive instead of sampling.
    #[serde(default)]
    pub input_archive: Option<PathBuf>,
}

fn default_chains() -> usize {
    4
}

fn default_thin() -> usize {
    10
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceBlock {
    /// Dictionary of observables; a standard set is used when empty.
    #[serde(default)]
    pub functionals: Vec<TestFunctional>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LsiBlock {
    /// Predicted constant to test against.
    pub alpha: f64,
    #[serde(default = "lsi_mode")]
    pub mode: InequalityMode,
    /// Gradient metric H^{-s}.
    #[serde(default = "one")]
    pub metric_s: f64,
    #[serde(default = "default_kmax")]
    pub kmax: i64,
}

fn lsi_mode() -> InequalityMode {
    InequalityMode::Lsi
}

fn one() -> f64 {
    1.0
}

fn default_kmax() -> i64 {
    3
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexityBlock {
    pub pairs: usize,
    /// Mass radius N of the regime.
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizabilityBlock {
    pub p: u32,
    pub lambda: f64,
    pub mass: f64,
    pub cutoffs: Vec<usize>,
    #[serde(default = "probe_samples")]
    pub samples: usize,
    #[serde(default = "ascent_steps")]
    pub ascent_steps: usize,
    /// Expected classification; the run fails if the probe disagrees.
    #[serde(default)]
    pub expect: Option<Normalizability>,
    /// Bisection steps for the critical mass estimate; skipped when absent.
    #[serde(default)]
    pub bisect_iters: Option<usize>,
}

fn probe_samples() -> usize {
    4000
}

fn ascent_steps() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportBlock {
    pub cutoffs: Vec<usize>,
    pub count: usize,
    #[serde(default = "projection")]
    pub estimator: ConditionalEstimator,
}

fn projection() -> ConditionalEstimator {
    ConditionalEstimator::Projection
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSolveBlock {
    /// Scale applied to the free-field draw used as initial data.
    #[serde(default)]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub panels: Option<usize>,
    #[serde(default)]
    pub order: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub norm_s: Option<f64>,
    /// Time step of an optional split-step comparison run.
    #[serde(default)]
    pub compare_dt: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailBlock {
    pub s: f64,
    pub kappas: Vec<f64>,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Report directory, relative to the config file. Defaults to its directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Archive path for sampled ensembles, relative to the report directory.
    #[serde(default)]
    pub archive: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("unknown keys: {}", .0.join(", "))]
    Unknown(Vec<String>),
    #[error("{0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let mut unknown = Vec::new();
        let cfg: Self = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| ConfigError::Parse(e.to_string()))?;
        if !unknown.is_empty() {
            return Err(ConfigError::Unknown(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Ok((Self::parse(&text)?, text))
    }

    fn need<T>(v: &Option<T>, what: &str, kind: ExperimentKind) -> Result<(), ConfigError> {
        if v.is_none() {
            return Err(ConfigError::Invalid(format!("{kind:?} experiments need a [{what}] table")));
        }
        Ok(())
    }

    /// Structural checks and every parameter check the library exposes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        use ExperimentKind::*;
        let inv = |e: gibbslab::Error| ConfigError::Invalid(e.to_string());
        let k = self.kind;
        match k {
            Sample | Flow | Invariance | Lsi | Convexity | Transport | GpSolve | Tail => {
                Self::need(&self.model, "model", k)?;
                Self::need(&self.lattice, "lattice", k)?;
            }
            Zakharov => Self::need(&self.lattice, "lattice", k)?,
            Normalizability => Self::need(&self.normalizability, "normalizability", k)?,
        }
        match k {
            Sample | Flow | Invariance | Lsi | Zakharov => Self::need(&self.sampler, "sampler", k)?,
            _ => {}
        }
        match k {
            Flow | Invariance | Zakharov => Self::need(&self.flow, "flow", k)?,
            Lsi => Self::need(&self.lsi, "lsi", k)?,
            Convexity => Self::need(&self.convexity, "convexity", k)?,
            Transport => Self::need(&self.transport, "transport", k)?,
            Tail => Self::need(&self.tail, "tail", k)?,
            _ => {}
        }
        if let Some(m) = &self.model {
            m.validate().map_err(inv)?;
            let z = matches!(m, ModelSpec::Zakharov { .. });
            if k == Zakharov && !z {
                return Err(ConfigError::Invalid("zakharov experiments take a zakharov model or none".into()));
            }
        }
        if let Some(l) = &self.lattice {
            if l.n == 0 {
                return Err(ConfigError::Invalid("lattice cutoff must be at least 1".into()));
            }
        }
        if let Some(d) = &self.domain {
            d.validate().map_err(inv)?;
        }
        if let Some(f) = &self.flow {
            f.validate().map_err(inv)?;
        }
        if let Some(s) = &self.sampler {
            if s.chains == 0 || s.thin == 0 {
                return Err(ConfigError::Invalid("sampler chains and thin must be at least 1".into()));
            }
            if s.samples < s.chains && s.input_archive.is_none() && k != Sample {
                return Err(ConfigError::Invalid("need at least one sample per chain".into()));
            }
            if let Some(b) = s.beta {
                if !(b > 0.0 && b <= 1.0) {
                    return Err(ConfigError::Invalid(format!("pCN step {b} outside (0, 1]")));
                }
            }
        }
        if let Some(l) = &self.lsi {
            if !(l.alpha > 0.0) || l.kmax < 1 {
                return Err(ConfigError::Invalid("lsi needs alpha > 0 and kmax ≥ 1".into()));
            }
        }
        if let Some(c) = &self.convexity {
            if c.pairs == 0 || !(c.mass > 0.0) {
                return Err(ConfigError::Invalid("convexity needs pairs ≥ 1 and mass > 0".into()));
            }
        }
        if let Some(nb) = &self.normalizability {
            if nb.cutoffs.is_empty() || nb.cutoffs.contains(&0) || nb.samples < 2 {
                return Err(ConfigError::Invalid("normalizability needs positive cutoffs and ≥ 2 samples".into()));
            }
        }
        if let Some(t) = &self.transport {
            if t.cutoffs.is_empty() || t.count < 2 {
                return Err(ConfigError::Invalid("transport needs cutoffs and count ≥ 2".into()));
            }
            if !matches!(self.model, Some(ModelSpec::Gp { .. })) {
                return Err(ConfigError::Invalid("transport sweeps run on the GP model".into()));
            }
        }
        if k == GpSolve && !matches!(self.model, Some(ModelSpec::Gp { .. })) {
            return Err(ConfigError::Invalid("gp-solve needs a GP model".into()));
        }
        if let Some(t) = &self.tail {
            if t.kappas.len() < 2 || t.samples < 2 {
                return Err(ConfigError::Invalid("tail needs at least two radii and two samples".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
kind = "sample"
seed = 3
[lattice]
n = 8
[model]
kind = "nls"
p = 4
lambda = 0.0
dim = 1
[sampler]
samples = 100
"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.kind, ExperimentKind::Sample);
        assert_eq!(c.sampler.unwrap().chains, 4);
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        let top = format!("{BASE}\ncolour = 1\n");
        assert!(matches!(ExperimentConfig::parse(&top), Err(ConfigError::Parse(_) | ConfigError::Unknown(_))));
        let nested = BASE.replace("dim = 1", "dim = 1\nmasss = 2");
        let e = ExperimentConfig::parse(&nested).unwrap_err();
        assert!(e.to_string().contains("masss"), "{e}");
        let potential = BASE
            .replace("kind = \"sample\"", "kind = \"gp-solve\"")
            .replace("kind = \"nls\"\np = 4\nlambda = 0.0\ndim = 1", "kind = \"gp\"\nlambda = 1.0\nkappa = 0.0\nrho = 1.0\nb = 0.0\npotential = { Gaussian = { amplitude = 1.0, width = 2.0, depth = 3.0 } }");
        let e = ExperimentConfig::parse(&potential).unwrap_err();
        assert!(e.to_string().contains("depth"), "{e}");
    }

    #[test]
    fn missing_tables_are_reported() {
        let lsi = BASE.replace("kind = \"sample\"", "kind = \"lsi\"");
        assert!(matches!(ExperimentConfig::parse(&lsi), Err(ConfigError::Invalid(_))));
        let bad = BASE.replace("p = 4", "p = 9");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(ConfigError::Invalid(_))));
    }
}
