//! Declarative experiment configs (TOML or JSON, version 1).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analytic::{canonical_bimodal, AnalyticTarget, Classifier, Context, GaussianMixture};
use crate::cfgig::{CfgigConfig, Refinement};
use crate::error::{Error, Result};
use crate::guidance::Guidance;
use crate::schedule::NoiseSchedule;
use crate::smc::SmcConfig;
use crate::solvers::SolverMethod;
use crate::Point;

pub const CONFIG_VERSION: u32 = 1;

fn cfg_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Reads a TOML file, or JSON when the extension is `.json`.
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    parse(&text, path.extension().is_some_and(|e| e == "json"))
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str, json: bool) -> Result<T> {
    if json {
        serde_json::from_str(text).map_err(cfg_err)
    } else {
        toml::from_str(text).map_err(cfg_err)
    }
}

fn check_version(version: u32) -> Result<()> {
    if version != CONFIG_VERSION {
        return Err(Error::Config(format!("unsupported config version {version}, expected {CONFIG_VERSION}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<Vec<f64>>,
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config("matrices must be non-empty and rectangular".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn mixture(components: &[ComponentSpec]) -> Result<GaussianMixture> {
    GaussianMixture::new(
        components.iter().map(|c| c.weight).collect(),
        components.iter().map(|c| Point::from_column_slice(&c.mean)).collect(),
        components.iter().map(|c| matrix(&c.cov)).collect::<Result<_>>()?,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum TargetSpec {
    /// Prior `N(0, 1)`, observation `c ~ N(x, γ²)`.
    #[serde(rename = "gaussian")]
    Gaussian { gamma: f64, context: f64 },
    /// Two-component 1D prior with a Gaussian likelihood that favours one mode.
    #[serde(rename = "canonical-bimodal")]
    CanonicalBimodal,
    #[serde(rename = "linear-gaussian")]
    LinearGaussian { prior: Vec<ComponentSpec>, observation: Vec<Vec<f64>>, gamma: f64, context: Vec<f64> },
    #[serde(rename = "class-mixture")]
    ClassMixture { class_priors: Vec<f64>, classes: Vec<Vec<ComponentSpec>>, class: usize },
    /// Classifier that ignores `x`; conditional equals prior.
    #[serde(rename = "uninformative")]
    Uninformative { prior: Vec<ComponentSpec> },
}

impl TargetSpec {
    pub fn build(&self) -> Result<(AnalyticTarget, Context)> {
        let built = match self {
            TargetSpec::Gaussian { gamma, context } => {
                (AnalyticTarget::gaussian_case(*gamma)?, Context::scalar(*context))
            }
            TargetSpec::CanonicalBimodal => canonical_bimodal()?,
            TargetSpec::LinearGaussian { prior, observation, gamma, context } => (
                AnalyticTarget::new(
                    mixture(prior)?,
                    Classifier::LinearGaussian { observation: matrix(observation)?, gamma: *gamma },
                )?,
                Context::Observation(Point::from_column_slice(context)),
            ),
            TargetSpec::ClassMixture { class_priors, classes, class } => (
                AnalyticTarget::from_classes(
                    class_priors.clone(),
                    classes.iter().map(|c| mixture(c)).collect::<Result<_>>()?,
                )?,
                Context::Class(*class),
            ),
            TargetSpec::Uninformative { prior } => {
                (AnalyticTarget::new(mixture(prior)?, Classifier::Constant)?, Context::None)
            }
        };
        built.0.check_context(&built.1)?;
        Ok(built)
    }
}

fn default_sigma_min() -> f64 {
    0.002
}
fn default_sigma_max() -> f64 {
    80.0
}
fn default_steps() -> usize {
    64
}
fn default_rho() -> f64 {
    7.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_sigma_min")]
    pub sigma_min: f64,
    #[serde(default = "default_sigma_max")]
    pub sigma_max: f64,
    /// Number of levels; one solver update per level.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { sigma_min: default_sigma_min(), sigma_max: default_sigma_max(), steps: default_steps(), rho: default_rho() }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::karras(self.sigma_min, self.sigma_max, self.steps, self.rho)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub method: SolverMethod,
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum SamplerSpec {
    /// One deterministic flow per chain with a guided denoiser.
    #[serde(rename = "flow")]
    Flow {
        guidance: Guidance,
        /// Initial noise at the midpoint quantiles `σ_max Φ⁻¹((i+½)/n)` (1D only).
        #[serde(default)]
        stratified: bool,
    },
    #[serde(rename = "cfgig")]
    Cfgig {
        w0: f64,
        w: f64,
        repetitions: usize,
        total_steps: usize,
        initial_steps: usize,
        sigma_star: f64,
        #[serde(default)]
        refinement: Refinement,
        #[serde(default)]
        exact_flow: bool,
        #[serde(default)]
        stratified: bool,
    },
    #[serde(rename = "smc")]
    Smc {
        w: f64,
        #[serde(default = "default_threshold")]
        resample_threshold: f64,
        #[serde(default)]
        proposal: Option<Guidance>,
    },
}

fn default_reference() -> usize {
    10_000
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSpec {
    /// Size of the tilted reference sample.
    #[serde(default = "default_reference")]
    pub reference: usize,
    /// Scale of the reference tilt; defaults to the sampler's scale.
    #[serde(default)]
    pub reference_w: Option<f64>,
    /// Quantile-grid reference draws (1D closed-form tilts).
    #[serde(default)]
    pub stratified_reference: bool,
    #[serde(default = "yes")]
    pub w2: bool,
    #[serde(default = "yes")]
    pub ks: bool,
    /// Neighbour count for precision/recall/density/coverage.
    #[serde(default)]
    pub prdc: Option<usize>,
    /// Minor mode is the region `x_1 < threshold`.
    #[serde(default)]
    pub mode_threshold: Option<f64>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            reference: default_reference(),
            reference_w: None,
            stratified_reference: false,
            w2: true,
            ks: true,
            prdc: None,
            mode_threshold: None,
        }
    }
}

fn default_samples() -> String {
    "samples.csv".into()
}
fn default_metrics() -> String {
    "metrics.json".into()
}
fn default_manifest() -> String {
    "manifest.json".into()
}
fn default_cap() -> usize {
    crate::solvers::DEFAULT_TRAJECTORY_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_samples")]
    pub samples: String,
    #[serde(default = "default_metrics")]
    pub metrics: String,
    #[serde(default = "default_manifest")]
    pub manifest: String,
    /// Flow trajectories (flow sampler only).
    #[serde(default)]
    pub trajectories: Option<String>,
    #[serde(default = "default_cap")]
    pub trajectory_cap: usize,
    /// Per-repetition iterates (cfgig only).
    #[serde(default)]
    pub iterations: Option<String>,
    /// Per-step effective sample sizes (smc only).
    #[serde(default)]
    pub ess_trace: Option<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            metrics: default_metrics(),
            manifest: default_manifest(),
            trajectories: None,
            trajectory_cap: default_cap(),
            iterations: None,
            ess_trace: None,
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Number of chains, or particles for smc.
    pub ensemble: usize,
    pub target: TargetSpec,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Names accepted by [`ExperimentConfig::set`].
pub const SWEEP_PARAMETERS: &[&str] = &[
    "seed", "ensemble", "w", "w0", "lambda", "delta", "sigma_star", "repetitions", "total_steps",
    "initial_steps", "steps", "sigma_min", "sigma_max", "rho", "gamma", "context", "reference",
];

fn as_count(name: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{name} must be a nonnegative integer, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg: Self = load(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = parse(text, false)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-checks every section; no sampling happens before this passes.
    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        if self.ensemble == 0 {
            return Err(Error::Config("ensemble must be at least 1".into()));
        }
        let (target, _) = self.target.build()?;
        let dim = target.dim();
        match &self.sampler {
            SamplerSpec::Flow { guidance, stratified } => {
                guidance.validate()?;
                self.schedule.build()?;
                if *stratified && dim != 1 {
                    return Err(Error::Config("stratified initial noise needs d = 1".into()));
                }
            }
            SamplerSpec::Cfgig { stratified, .. } => {
                self.cfgig()?.expect("cfgig sampler").validate()?;
                if *stratified && dim != 1 {
                    return Err(Error::Config("stratified initial noise needs d = 1".into()));
                }
            }
            SamplerSpec::Smc { .. } => {
                self.schedule.build()?;
                self.smc()?.expect("smc sampler").validate()?;
            }
        }
        if self.metrics.reference == 0 {
            return Err(Error::Config("metrics.reference must be at least 1".into()));
        }
        if let Some(w) = self.metrics.reference_w {
            if !(w == 0.0 || w >= 1.0) {
                return Err(Error::Config(format!("reference_w must be 0 or at least 1, got {w}")));
            }
        }
        if let Some(k) = self.metrics.prdc {
            if k == 0 || k >= self.ensemble.min(self.metrics.reference) {
                return Err(Error::Config(format!("prdc neighbour count {k} out of range")));
            }
        }
        if self.output.trajectories.is_some() && !matches!(self.sampler, SamplerSpec::Flow { .. }) {
            return Err(Error::Config("trajectory output needs the flow sampler".into()));
        }
        if self.output.iterations.is_some() && !matches!(self.sampler, SamplerSpec::Cfgig { .. }) {
            return Err(Error::Config("iteration output needs the cfgig sampler".into()));
        }
        if self.output.ess_trace.is_some() && !matches!(self.sampler, SamplerSpec::Smc { .. }) {
            return Err(Error::Config("ESS trace output needs the smc sampler".into()));
        }
        Ok(())
    }

    /// The sampler's refinement config, when it is a cfgig sampler.
    pub fn cfgig(&self) -> Result<Option<CfgigConfig>> {
        Ok(match &self.sampler {
            SamplerSpec::Cfgig { w0, w, repetitions, total_steps, initial_steps, sigma_star, refinement, exact_flow, .. } => {
                Some(CfgigConfig {
                    w0: *w0,
                    w: *w,
                    repetitions: *repetitions,
                    total_steps: *total_steps,
                    initial_steps: *initial_steps,
                    sigma_star: *sigma_star,
                    sigma_max: self.schedule.sigma_max,
                    sigma_min: self.schedule.sigma_min,
                    rho: self.schedule.rho,
                    method: self.solver.method,
                    seed: self.seed,
                    refinement: *refinement,
                    exact_flow: *exact_flow,
                })
            }
            _ => None,
        })
    }

    pub fn smc(&self) -> Result<Option<SmcConfig>> {
        Ok(match &self.sampler {
            SamplerSpec::Smc { resample_threshold, proposal, .. } => Some(SmcConfig {
                particles: self.ensemble,
                seed: self.seed,
                resample_threshold: *resample_threshold,
                proposal: proposal.clone(),
            }),
            _ => None,
        })
    }

    /// Scale of the tilt the sampler aims at (0 for the prior).
    pub fn sampler_scale(&self) -> f64 {
        match &self.sampler {
            SamplerSpec::Flow { guidance, .. } => match guidance {
                Guidance::Unconditional => 0.0,
                Guidance::Conditional | Guidance::CfgPp { .. } => 1.0,
                g => g.scale().unwrap_or(1.0),
            },
            SamplerSpec::Cfgig { w, .. } | SamplerSpec::Smc { w, .. } => *w,
        }
    }

    pub fn reference_scale(&self) -> f64 {
        self.metrics.reference_w.unwrap_or_else(|| self.sampler_scale())
    }

    /// Overrides one named parameter; used by sweeps.
    pub fn set(&mut self, parameter: &str, value: f64) -> Result<()> {
        match parameter {
            "seed" => self.seed = as_count(parameter, value)? as u64,
            "ensemble" => self.ensemble = as_count(parameter, value)?,
            "reference" => self.metrics.reference = as_count(parameter, value)?,
            "steps" => self.schedule.steps = as_count(parameter, value)?,
            "sigma_min" => self.schedule.sigma_min = value,
            "sigma_max" => self.schedule.sigma_max = value,
            "rho" => self.schedule.rho = value,
            "w" | "lambda" => match &mut self.sampler {
                SamplerSpec::Flow { guidance, .. } => *guidance = guidance.with_scale(value)?,
                SamplerSpec::Cfgig { w, .. } | SamplerSpec::Smc { w, .. } if parameter == "w" => *w = value,
                _ => return Err(Error::Config(format!("{parameter} does not apply to this sampler"))),
            },
            "delta" => match &mut self.sampler {
                SamplerSpec::Flow { guidance: Guidance::Delayed { delta, .. }, .. }
                | SamplerSpec::Cfgig { refinement: Refinement::Delayed { delta }, .. } => *delta = value,
                _ => return Err(Error::Config("delta needs delayed guidance".into())),
            },
            "w0" | "sigma_star" | "repetitions" | "total_steps" | "initial_steps" => match &mut self.sampler {
                SamplerSpec::Cfgig { w0, sigma_star, repetitions, total_steps, initial_steps, .. } => {
                    match parameter {
                        "w0" => *w0 = value,
                        "sigma_star" => *sigma_star = value,
                        "repetitions" => *repetitions = as_count(parameter, value)?,
                        "total_steps" => *total_steps = as_count(parameter, value)?,
                        _ => *initial_steps = as_count(parameter, value)?,
                    }
                }
                _ => return Err(Error::Config(format!("{parameter} needs the cfgig sampler"))),
            },
            "gamma" | "context" => match &mut self.target {
                TargetSpec::Gaussian { gamma, context } => {
                    if parameter == "gamma" {
                        *gamma = value
                    } else {
                        *context = value
                    }
                }
                _ => return Err(Error::Config(format!("{parameter} needs the gaussian target"))),
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep parameter '{other}' (known: {})",
                    SWEEP_PARAMETERS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Canonical JSON form, hashed into manifests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Parameter sweep attached to a config file or given on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Reads a run config that may carry a `[sweep]` table.
pub fn load_with_sweep(path: &Path) -> Result<(ExperimentConfig, Option<SweepSpec>)> {
    let mut value: serde_json::Value = load(path)?;
    let sweep = match value.as_object_mut().and_then(|m| m.remove("sweep")) {
        Some(v) => Some(serde_json::from_value(v).map_err(cfg_err)?),
        None => None,
    };
    let cfg: ExperimentConfig = serde_json::from_value(value).map_err(cfg_err)?;
    cfg.validate()?;
    Ok((cfg, sweep))
}

fn default_gamma() -> f64 {
    1.0
}
fn default_ws() -> Vec<f64> {
    vec![1.5, 2.0, 3.0, 5.0]
}
fn default_sigma_stars() -> Vec<f64> {
    (0..=40).map(|i| 10f64.powf(-2.0 + i as f64 * 2.5 / 40.0)).collect()
}
fn default_rs() -> Vec<u32> {
    vec![1, 2, 4, 8, 16, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_ws")]
    pub w: Vec<f64>,
    #[serde(default = "default_sigma_stars")]
    pub sigma_star: Vec<f64>,
    #[serde(default = "default_rs")]
    pub r: Vec<u32>,
    #[serde(default = "default_theory_file")]
    pub output: String,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_theory_file() -> String {
    "gaussian_theory.csv".into()
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            gamma: default_gamma(),
            w: default_ws(),
            sigma_star: default_sigma_stars(),
            r: default_rs(),
            output: default_theory_file(),
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        if self.w.is_empty() || self.sigma_star.is_empty() || self.r.is_empty() {
            return Err(Error::Config("theory grids must be non-empty".into()));
        }
        Ok(())
    }
}

fn default_chains() -> usize {
    1000
}

/// Side-by-side CFG / ideal / CFGiG comparison on the canonical bimodal target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure2Config {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    /// Midpoint-quantile initial noise and reference draws.
    #[serde(default)]
    pub stratified: bool,
    #[serde(default = "default_reference")]
    pub reference: usize,
    /// Record the CFG and ideal trajectories.
    #[serde(default = "yes")]
    pub trajectories: bool,
    #[serde(default)]
    pub cfgig: Figure2Cfgig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure2Cfgig {
    pub w0: f64,
    pub sigma_star: f64,
    pub repetitions: usize,
    pub initial_steps: usize,
    pub steps_per_repetition: usize,
}

impl Default for Figure2Cfgig {
    fn default() -> Self {
        Self { w0: 1.0, sigma_star: 0.75, repetitions: 8, initial_steps: 32, steps_per_repetition: 16 }
    }
}

impl Default for Figure2Config {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            chains: default_chains(),
            schedule: ScheduleSpec::default(),
            solver: SolverSpec::default(),
            stratified: false,
            reference: default_reference(),
            trajectories: true,
            cfgig: Figure2Cfgig::default(),
        }
    }
}

impl Figure2Config {
    pub fn validate(&self) -> Result<()> {
        check_version(self.version)?;
        if self.chains == 0 || self.reference == 0 {
            return Err(Error::Config("chains and reference must be positive".into()));
        }
        self.schedule.build()?;
        Ok(())
    }
}
