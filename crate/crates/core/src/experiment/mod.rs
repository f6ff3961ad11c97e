//! Config-driven runs that write samples, metrics and a reproducibility
//! manifest.
//!
//! Every artifact is a pure function of the resolved config: chains draw from
//! streams keyed by `(seed, chain, iteration, tag)`, so thread count never
//! changes a byte of output.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{
    load, load_with_sweep, parse, ComponentSpec, ExperimentConfig, Figure2Cfgig, Figure2Config, MetricsSpec,
    OutputSpec, SamplerSpec, ScheduleSpec, SolverSpec, SweepSpec, TargetSpec, TheoryConfig, CONFIG_VERSION,
    SWEEP_PARAMETERS,
};

use crate::analytic::{
    canonical_bimodal, mass_below, normal_quantile, sample_reference, stratified_reference_1d, AnalyticTarget,
    ConditionedTarget, Context, CANONICAL_BIMODAL_W,
};
use crate::cfgig::{write_iterations, CfgigConfig, CfgigSampler, Chain};
use crate::error::{Error, Result};
use crate::gaussian_theory::{theory_grid, write_theory_csv, TheoryRow};
use crate::guidance::{Guidance, GuidanceBase, GuidedDenoiser};
use crate::io::{coordinate_columns, float, CsvWriter};
use crate::metrics::{mass_below as sample_mass_below, wasserstein2_1d, MetricSelection, MetricsReport, SampleSet};
use crate::rng::{normal_vector, stream, tags};
use crate::smc::{fk_smc_sample, write_ess_trace, SmcOutput};
use crate::solvers::{integrate_ensemble, write_trajectories, Flow, SolverRun};
use crate::Point;

pub const TOOL: &str = "guidance-lab";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to regenerate a set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// `run`, `sweep`, `gaussian-theory` or `figure2`.
    pub kind: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    /// Extra inputs of a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    /// File name to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    fn new<C: Serialize>(kind: &str, seed: u64, config: &C) -> Self {
        let json = serde_json::to_string(config).expect("config serializes");
        Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            kind: kind.into(),
            seed,
            config_sha256: sha256_hex(json.as_bytes()),
            config: serde_json::from_str(&json).expect("round trip"),
            sweep: None,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad manifest: {e}")))
    }

    fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes") + "\n")?;
        Ok(path)
    }
}

struct Artifacts<'a> {
    dir: &'a Path,
    manifest: Manifest,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path, manifest: Manifest) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir, manifest })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.manifest.artifacts.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    fn finish(self, name: &str) -> Result<Manifest> {
        self.manifest.write(self.dir, name)?;
        Ok(self.manifest)
    }
}

/// `X_{σ_max}` for `n` chains: independent draws, or `σ_max Φ⁻¹((i+½)/n)`.
pub fn initial_noise(n: usize, dim: usize, sigma_max: f64, seed: u64, stratified: bool) -> Result<Vec<Point>> {
    if stratified {
        if dim != 1 {
            return Err(Error::Unsupported("stratified initial noise needs d = 1".into()));
        }
        return Ok((0..n)
            .map(|i| Point::from_element(1, sigma_max * normal_quantile((i as f64 + 0.5) / n as f64)))
            .collect());
    }
    Ok((0..n as u64)
        .map(|i| normal_vector(&mut stream(seed, i, 0, tags::INITIAL), dim) * sigma_max)
        .collect())
}

/// `n` draws from the tilt at scale `w` (the prior when `w = 0`).
pub fn reference_sample(
    target: &AnalyticTarget,
    c: &Context,
    w: f64,
    n: usize,
    seed: u64,
    stratified: bool,
) -> Result<Vec<Point>> {
    if w == 0.0 {
        let prior = target.prior();
        if stratified {
            return (0..n).map(|i| Ok(Point::from_element(1, prior.quantile_1d((i as f64 + 0.5) / n as f64)?))).collect();
        }
        let mut rng = stream(seed, 0, 0, tags::REFERENCE);
        return Ok((0..n).map(|_| prior.sample(&mut rng)).collect());
    }
    if stratified {
        let xs = stratified_reference_1d(&target.tilt(c, w)?, n)?;
        return Ok(xs.into_iter().map(|x| Point::from_element(1, x)).collect());
    }
    Ok(sample_reference(target, c, w, n, seed)?.points)
}

/// Solver work per chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub solver_steps: usize,
    pub denoiser_calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_per_repetition: Option<usize>,
}

/// Sampler output before anything touches the filesystem.
pub struct Simulation {
    pub samples: Vec<Point>,
    pub reference: Vec<Point>,
    pub budget: Budget,
    pub flows: Option<Vec<Flow>>,
    pub chains: Option<Vec<Chain>>,
    pub smc: Option<SmcOutput>,
}

fn conditioned(config: &ExperimentConfig) -> Result<(AnalyticTarget, Context, Arc<ConditionedTarget>)> {
    let (target, c) = config.target.build()?;
    let base = Arc::new(target.condition(&c)?);
    Ok((target, c, base))
}

/// Runs the configured sampler and draws the reference sample.
pub fn simulate(config: &ExperimentConfig) -> Result<Simulation> {
    config.validate()?;
    let (target, c, base) = conditioned(config)?;
    let dim = target.dim();
    let method = config.solver.method;
    let mut sim = match &config.sampler {
        SamplerSpec::Flow { guidance, stratified } => {
            let schedule = config.schedule.build()?;
            let levels = schedule.len();
            let denoiser = Arc::new(GuidedDenoiser::new(base.clone(), guidance.clone())?);
            let mut run = SolverRun::new(schedule, denoiser, method);
            if config.output.trajectories.is_some() {
                run = run.with_trajectory(config.output.trajectory_cap);
            }
            let init = initial_noise(config.ensemble, dim, config.schedule.sigma_max, config.seed, *stratified)?;
            let flows = integrate_ensemble(&init, &run)?;
            Simulation {
                samples: flows.iter().map(|f| f.state.clone()).collect(),
                reference: Vec::new(),
                budget: Budget { solver_steps: levels, denoiser_calls: method.denoiser_calls(levels), steps_per_repetition: None },
                flows: Some(flows),
                chains: None,
                smc: None,
            }
        }
        SamplerSpec::Cfgig { stratified, .. } => {
            let cc = config.cfgig()?.expect("cfgig sampler");
            let sampler = CfgigSampler::new(&base, cc.clone())?;
            let chains: Vec<Chain> = if *stratified {
                let init = initial_noise(config.ensemble, dim, cc.sigma_max, config.seed, true)?;
                init.into_par_iter().enumerate().map(|(i, x)| sampler.refine_from(i as u64, x)).collect::<Result<_>>()?
            } else {
                sampler.sample_ensemble(config.ensemble)?
            };
            let plan = sampler.plan();
            Simulation {
                samples: chains.iter().map(|ch| ch.last().clone()).collect(),
                reference: Vec::new(),
                budget: Budget {
                    solver_steps: plan.total_steps(cc.repetitions),
                    denoiser_calls: method.denoiser_calls(plan.initial_levels)
                        + cc.repetitions * method.denoiser_calls(plan.levels_per_repetition),
                    steps_per_repetition: Some(plan.levels_per_repetition),
                },
                flows: None,
                chains: Some(chains),
                smc: None,
            }
        }
        SamplerSpec::Smc { w, .. } => {
            let schedule = config.schedule.build()?;
            let smc_cfg = config.smc()?.expect("smc sampler");
            let base_dyn: Arc<dyn GuidanceBase> = base.clone();
            let out = fk_smc_sample(&base_dyn, *w, &schedule, &smc_cfg)?;
            let transitions = schedule.len() - 1;
            Simulation {
                samples: out.resampled.clone(),
                reference: Vec::new(),
                budget: Budget { solver_steps: transitions, denoiser_calls: transitions, steps_per_repetition: None },
                flows: None,
                chains: None,
                smc: Some(out),
            }
        }
    };
    sim.reference = reference_sample(
        &target,
        &c,
        config.reference_scale(),
        config.metrics.reference,
        config.seed,
        config.metrics.stratified_reference,
    )?;
    Ok(sim)
}

fn mode_threshold(config: &ExperimentConfig) -> Option<f64> {
    config.metrics.mode_threshold.or(match config.target {
        TargetSpec::CanonicalBimodal => Some(0.0),
        _ => None,
    })
}

fn samples_csv(points: &[Point]) -> Result<Vec<u8>> {
    let dim = points.first().map_or(1, |p| p.len());
    let mut header = vec!["chain_id".to_string()];
    header.extend(coordinate_columns(dim));
    let mut csv = CsvWriter::new(Vec::new(), &header)?;
    for (i, p) in points.iter().enumerate() {
        let mut cells = vec![i.to_string()];
        cells.extend(p.iter().map(|v| float(*v)));
        csv.row(cells)?;
    }
    csv.finish()
}

/// Artifacts and summary of one run.
pub struct RunOutput {
    pub simulation: Simulation,
    pub report: MetricsReport,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

/// Simulates, scores against the reference and writes all artifacts.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunOutput> {
    info!("run '{}': {} chains, seed {}", config.name, config.ensemble, config.seed);
    let sim = simulate(config)?;
    let sample = SampleSet::new(config.name.clone(), sim.samples.clone())?;
    let reference = SampleSet::new("reference", sim.reference.clone())?;
    let select = MetricSelection {
        w2: config.metrics.w2,
        ks: config.metrics.ks,
        prdc: config.metrics.prdc,
        mode_threshold: mode_threshold(config),
    };
    let report = MetricsReport::compute(&sample, &reference, &select)?;

    let mut metrics = serde_json::to_value(&report).expect("report serializes");
    let obj = metrics.as_object_mut().expect("report is an object");
    obj.insert("reference_w".into(), config.reference_scale().into());
    obj.insert("solver_steps".into(), sim.budget.solver_steps.into());
    obj.insert("denoiser_calls".into(), sim.budget.denoiser_calls.into());
    if let Some(k) = sim.budget.steps_per_repetition {
        obj.insert("steps_per_repetition".into(), k.into());
    }
    if let Some(smc) = &sim.smc {
        let (m, v) = smc.ensemble.moments(0)?;
        obj.insert("weighted_mean".into(), m.into());
        obj.insert("weighted_variance".into(), v.into());
        obj.insert("final_ess".into(), smc.ensemble.ess.into());
    }

    let mut art = Artifacts::new(out_dir, Manifest::new("run", config.seed, config))?;
    art.put(&config.output.samples, &samples_csv(&sim.samples)?)?;
    art.put(&config.output.metrics, (serde_json::to_string_pretty(&metrics).expect("json") + "\n").as_bytes())?;
    if let (Some(name), Some(flows)) = (&config.output.trajectories, &sim.flows) {
        let chains: Vec<(usize, &[_])> = flows.iter().enumerate().map(|(i, f)| (i, f.trajectory.as_slice())).collect();
        art.put(name, &write_trajectories(Vec::new(), &chains)?)?;
    }
    if let (Some(name), Some(chains)) = (&config.output.iterations, &sim.chains) {
        art.put(name, &write_iterations(Vec::new(), chains)?)?;
    }
    if let (Some(name), Some(smc)) = (&config.output.ess_trace, &sim.smc) {
        art.put(name, &write_ess_trace(Vec::new(), &smc.ess_trace)?)?;
    }
    let manifest = art.finish(&config.output.manifest)?;
    Ok(RunOutput { simulation: sim, report, manifest, out_dir: out_dir.to_path_buf() })
}

/// One line of a sweep's aggregate table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub budget: Budget,
    pub report: MetricsReport,
}

pub const AGGREGATE_COLUMNS: &[&str] = &[
    "parameter",
    "value",
    "ensemble",
    "solver_steps",
    "steps_per_repetition",
    "mean",
    "variance",
    "reference_mean",
    "reference_variance",
    "w2",
    "ks",
    "minor_mode_mass",
    "reference_minor_mode_mass",
];

fn opt(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

fn value_dir(parameter: &str, value: f64) -> String {
    format!("{parameter}={value}")
}

/// Runs `base` once per value of `parameter`; each run lands in its own
/// subdirectory and the reports are collected in `aggregate.csv`.
pub fn sweep(base: &ExperimentConfig, spec: &SweepSpec, out_dir: &Path) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let configs: Vec<ExperimentConfig> = spec
        .values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            c.set(&spec.parameter, *v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(configs.len());
    for (config, value) in configs.iter().zip(&spec.values) {
        let out = run(config, &out_dir.join(value_dir(&spec.parameter, *value)))?;
        rows.push(SweepRow { value: *value, budget: out.simulation.budget, report: out.report });
    }
    let mut csv = CsvWriter::new(Vec::new(), AGGREGATE_COLUMNS)?;
    for (row, config) in rows.iter().zip(&configs) {
        let r = &row.report;
        csv.row(vec![
            spec.parameter.clone(),
            float(row.value),
            config.ensemble.to_string(),
            row.budget.solver_steps.to_string(),
            row.budget.steps_per_repetition.map(|k| k.to_string()).unwrap_or_default(),
            float(r.mean),
            float(r.variance),
            float(r.reference_mean),
            float(r.reference_variance),
            opt(r.w2),
            opt(r.ks),
            opt(r.minor_mode_mass),
            opt(r.reference_minor_mode_mass),
        ])?;
    }
    let mut manifest = Manifest::new("sweep", base.seed, base);
    manifest.sweep = Some(spec.clone());
    let mut art = Artifacts::new(out_dir, manifest)?;
    art.put("aggregate.csv", &csv.finish()?)?;
    art.finish("manifest.json")?;
    Ok(rows)
}

/// Writes the `(w, σ*, R)` grid of closed-form variances and biases.
pub fn gaussian_theory(config: &TheoryConfig, out_dir: &Path) -> Result<Vec<TheoryRow>> {
    config.validate()?;
    let rows = theory_grid(config.gamma, &config.w, &config.sigma_star, &config.r)?;
    let mut art = Artifacts::new(out_dir, Manifest::new("gaussian-theory", 0, config))?;
    art.put(&config.output, &write_theory_csv(&rows, Vec::new())?)?;
    art.finish("manifest.json")?;
    Ok(rows)
}

/// Scalar summary of the bimodal comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Figure2Summary {
    pub w: f64,
    pub chains: usize,
    pub w2_cfg: f64,
    pub w2_ideal: f64,
    pub w2_cfgig: f64,
    pub minor_mass_cfg: f64,
    pub minor_mass_ideal: f64,
    pub minor_mass_cfgig: f64,
    pub minor_mass_reference: f64,
    /// Minor-mode mass of the tilt by quadrature.
    pub minor_mass_oracle: f64,
    pub cfgig_steps: usize,
}

pub struct Figure2Data {
    pub cfg: Vec<Flow>,
    pub ideal: Vec<Flow>,
    pub cfgig: Vec<Chain>,
    pub reference: Vec<f64>,
    pub summary: Figure2Summary,
}

/// CFG, ideal-denoiser and CFGiG ensembles from shared initial noise.
pub fn figure2_data(config: &Figure2Config) -> Result<Figure2Data> {
    config.validate()?;
    let (target, c) = canonical_bimodal()?;
    let w = CANONICAL_BIMODAL_W;
    let base = Arc::new(target.condition(&c)?);
    let schedule = config.schedule.build()?;
    let method = config.solver.method;
    let init = initial_noise(config.chains, 1, config.schedule.sigma_max, config.seed, config.stratified)?;

    let flows = |g: Guidance| -> Result<Vec<Flow>> {
        let mut run = SolverRun::new(schedule.clone(), Arc::new(GuidedDenoiser::new(base.clone(), g)?), method);
        if config.trajectories {
            run = run.with_trajectory(schedule.len() + 1);
        }
        integrate_ensemble(&init, &run)
    };
    let cfg = flows(Guidance::Cfg { w })?;
    let ideal = flows(Guidance::Ideal { w })?;

    let f = &config.cfgig;
    let cc = CfgigConfig {
        w0: f.w0,
        w,
        repetitions: f.repetitions,
        total_steps: f.initial_steps + f.repetitions * f.steps_per_repetition,
        initial_steps: f.initial_steps,
        sigma_star: f.sigma_star,
        sigma_max: config.schedule.sigma_max,
        sigma_min: config.schedule.sigma_min,
        rho: config.schedule.rho,
        method,
        seed: config.seed,
        refinement: Default::default(),
        exact_flow: false,
    };
    let sampler = CfgigSampler::new(&base, cc.clone())?;
    let cfgig: Vec<Chain> =
        init.par_iter().enumerate().map(|(i, x)| sampler.refine_from(i as u64, x.clone())).collect::<Result<_>>()?;

    let reference: Vec<f64> = reference_sample(&target, &c, w, config.reference, config.seed, config.stratified)?
        .iter()
        .map(|p| p[0])
        .collect();
    let tilt = target.tilt(&c, w)?;
    let set = |label: &str, xs: Vec<f64>| SampleSet::from_scalars(label, &xs);
    let ref_set = set("reference", reference.clone())?;
    let cfg_set = set("cfg", cfg.iter().map(|f| f.state[0]).collect())?;
    let ideal_set = set("ideal", ideal.iter().map(|f| f.state[0]).collect())?;
    let cfgig_set = set("cfgig", cfgig.iter().map(|ch| ch.last()[0]).collect())?;
    let summary = Figure2Summary {
        w,
        chains: config.chains,
        w2_cfg: wasserstein2_1d(&cfg_set, &ref_set)?,
        w2_ideal: wasserstein2_1d(&ideal_set, &ref_set)?,
        w2_cfgig: wasserstein2_1d(&cfgig_set, &ref_set)?,
        minor_mass_cfg: sample_mass_below(&cfg_set, 0, 0.0),
        minor_mass_ideal: sample_mass_below(&ideal_set, 0, 0.0),
        minor_mass_cfgig: sample_mass_below(&cfgig_set, 0, 0.0),
        minor_mass_reference: sample_mass_below(&ref_set, 0, 0.0),
        minor_mass_oracle: mass_below(&tilt, 0.0)?,
        cfgig_steps: cc.total_steps,
    };
    Ok(Figure2Data { cfg, ideal, cfgig, reference, summary })
}

/// Writes the bimodal comparison: side-by-side trajectories, final samples
/// and a metrics summary.
pub fn figure2(config: &Figure2Config, out_dir: &Path) -> Result<Figure2Summary> {
    let data = figure2_data(config)?;
    let mut art = Artifacts::new(out_dir, Manifest::new("figure2", config.seed, config))?;
    if config.trajectories {
        let mut csv = CsvWriter::new(Vec::new(), &["chain_id", "step_index", "sigma", "x_cfg", "x_ideal"])?;
        for (i, (a, b)) in data.cfg.iter().zip(&data.ideal).enumerate() {
            for (p, q) in a.trajectory.iter().zip(&b.trajectory) {
                csv.row(vec![i.to_string(), p.step_index.to_string(), float(p.sigma), float(p.state[0]), float(q.state[0])])?;
            }
        }
        art.put("figure2_trajectories.csv", &csv.finish()?)?;
    }
    let mut csv = CsvWriter::new(Vec::new(), &["chain_id", "cfg", "ideal", "cfgig"])?;
    for i in 0..config.chains {
        csv.row(vec![
            i.to_string(),
            float(data.cfg[i].state[0]),
            float(data.ideal[i].state[0]),
            float(data.cfgig[i].last()[0]),
        ])?;
    }
    art.put("figure2_samples.csv", &csv.finish()?)?;
    art.put("figure2_metrics.json", (serde_json::to_string_pretty(&data.summary).expect("json") + "\n").as_bytes())?;
    art.finish("manifest.json")?;
    Ok(data.summary)
}

/// Artifacts whose regenerated hash differs from the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub manifest: Manifest,
    pub mismatched: Vec<String>,
}

impl ReplayReport {
    pub fn reproduced(&self) -> bool {
        self.mismatched.is_empty()
    }
}

fn from_manifest<T: for<'de> Deserialize<'de>>(m: &Manifest) -> Result<T> {
    serde_json::from_value(m.config.clone()).map_err(|e| Error::Config(format!("manifest config: {e}")))
}

/// Regenerates every artifact from a manifest alone into `out_dir`.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ReplayReport> {
    let original = Manifest::load(manifest_path)?;
    let regenerated = match original.kind.as_str() {
        "run" => run(&from_manifest(&original)?, out_dir)?.manifest,
        "sweep" => {
            let base: ExperimentConfig = from_manifest(&original)?;
            let spec = original.sweep.clone().ok_or_else(|| Error::Config("sweep manifest lacks values".into()))?;
            sweep(&base, &spec, out_dir)?;
            Manifest::load(&out_dir.join("manifest.json"))?
        }
        "gaussian-theory" => {
            gaussian_theory(&from_manifest(&original)?, out_dir)?;
            Manifest::load(&out_dir.join("manifest.json"))?
        }
        "figure2" => {
            figure2(&from_manifest(&original)?, out_dir)?;
            Manifest::load(&out_dir.join("manifest.json"))?
        }
        other => return Err(Error::Config(format!("unknown manifest kind '{other}'"))),
    };
    let mismatched = original
        .artifacts
        .iter()
        .filter(|(name, hash)| regenerated.artifacts.get(*name) != Some(hash))
        .map(|(name, _)| name.clone())
        .collect();
    Ok(ReplayReport { manifest: original, mismatched })
}
