//! Gibbs-like refinement: renoise to σ*, denoise with guidance, repeat.
//!
//! A chain first runs the full schedule at scale `w0`, then `R` times adds
//! `σ*·Z` and integrates a fresh sub-schedule from σ* at scale `w`. With the
//! ideal tilted denoiser the refinement kernel leaves the tilt invariant;
//! with CFG it approximates it with a bias that shrinks with σ*.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{Classifier, ConditionedTarget, Context};
use crate::error::{invalid, Error, Result};
use crate::gaussian_theory::{exact_flow_ratio, flow_contraction};
use crate::guidance::{Denoiser, Guidance, GuidanceBase, GuidedDenoiser};
use crate::io::{coordinate_columns, float, CsvWriter};
use crate::rng::{normal_vector, stream, tags};
use crate::schedule::{sub_schedule, NoiseSchedule};
use crate::solvers::{integrate_flow, SolverMethod, SolverRun};
use crate::Point;

/// Denoiser used inside the refinement repetitions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Refinement {
    #[default]
    #[serde(rename = "cfg")]
    Cfg,
    #[serde(rename = "delayed")]
    Delayed { delta: f64 },
    #[serde(rename = "ideal")]
    Ideal,
}

impl Refinement {
    pub fn guidance(self, w: f64) -> Guidance {
        match self {
            Refinement::Cfg => Guidance::Cfg { w },
            Refinement::Delayed { delta } => Guidance::Delayed { w, delta },
            Refinement::Ideal => Guidance::Ideal { w },
        }
    }
}

fn default_rho() -> f64 {
    7.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfgigConfig {
    /// Scale of the initial run.
    pub w0: f64,
    /// Scale of the refinement runs.
    pub w: f64,
    pub repetitions: usize,
    /// Total solver steps `T` across the initial run and all repetitions.
    pub total_steps: usize,
    /// Steps `T0` of the initial run before the remainder is added.
    pub initial_steps: usize,
    pub sigma_star: f64,
    pub sigma_max: f64,
    pub sigma_min: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub method: SolverMethod,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub refinement: Refinement,
    /// Replace the numeric solver by the closed-form flow (scalar Gaussian
    /// case at context 0 only).
    #[serde(default)]
    pub exact_flow: bool,
}

/// Step bookkeeping derived from a config.
#[derive(Debug, Clone, PartialEq)]
pub struct CfgigPlan {
    pub remainder: usize,
    pub initial_levels: usize,
    pub levels_per_repetition: usize,
    pub initial_schedule: NoiseSchedule,
    pub refinement_schedule: NoiseSchedule,
}

impl CfgigPlan {
    pub fn total_steps(&self, repetitions: usize) -> usize {
        self.initial_levels + repetitions * self.levels_per_repetition
    }
}

impl CfgigConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0.is_finite() && self.w0 >= 1.0) {
            return Err(invalid(format!("w0 must be at least 1, got {}", self.w0)));
        }
        if !(self.w.is_finite() && self.w >= self.w0) {
            return Err(invalid(format!("w ({}) must not be below w0 ({})", self.w, self.w0)));
        }
        if self.repetitions == 0 {
            return Err(invalid("repetitions must be at least 1"));
        }
        if !(2 <= self.initial_steps && self.initial_steps <= self.total_steps) {
            return Err(invalid(format!(
                "need 2 <= initial_steps <= total_steps, got {} and {}",
                self.initial_steps, self.total_steps
            )));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_star && self.sigma_star < self.sigma_max) {
            return Err(invalid(format!(
                "need sigma_min < sigma_star < sigma_max, got {} < {} < {}",
                self.sigma_min, self.sigma_star, self.sigma_max
            )));
        }
        if (self.total_steps - self.initial_steps) / self.repetitions < 2 {
            return Err(invalid(format!(
                "each repetition needs at least 2 steps, got floor(({} - {}) / {})",
                self.total_steps, self.initial_steps, self.repetitions
            )));
        }
        if let Refinement::Delayed { delta } = self.refinement {
            Guidance::Delayed { w: self.w, delta }.validate()?;
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<CfgigPlan> {
        self.validate()?;
        let rest = self.total_steps - self.initial_steps;
        let remainder = rest % self.repetitions;
        let levels_per_repetition = rest / self.repetitions;
        let initial_levels = self.initial_steps + remainder;
        Ok(CfgigPlan {
            remainder,
            initial_levels,
            levels_per_repetition,
            initial_schedule: NoiseSchedule::karras(self.sigma_min, self.sigma_max, initial_levels, self.rho)?,
            refinement_schedule: sub_schedule(self.sigma_star, levels_per_repetition, self.sigma_min, self.rho)?,
        })
    }
}

/// One renoise-then-denoise transition.
#[derive(Debug, Clone)]
pub enum GibbsKernel {
    Solver { run: SolverRun, sigma_star: f64 },
    /// `x ↦ c(σ*)(x + σ* Z)` for the scalar Gaussian case.
    Exact { contraction: f64, sigma_star: f64 },
}

impl GibbsKernel {
    pub fn sigma_star(&self) -> f64 {
        match self {
            GibbsKernel::Solver { sigma_star, .. } | GibbsKernel::Exact { sigma_star, .. } => *sigma_star,
        }
    }

    /// Solver updates one transition costs.
    pub fn steps(&self) -> usize {
        match self {
            GibbsKernel::Solver { run, .. } => run.schedule.len(),
            GibbsKernel::Exact { .. } => 0,
        }
    }
}

/// `X_{σ*} = x0 + σ* Z`, then the flow back to zero.
pub fn gibbs_iteration<R: Rng + ?Sized>(x0: &Point, kernel: &GibbsKernel, rng: &mut R) -> Result<Point> {
    let z = normal_vector(rng, x0.len());
    let noisy = x0 + z * kernel.sigma_star();
    match kernel {
        GibbsKernel::Solver { run, .. } => Ok(integrate_flow(&noisy, run)?.state),
        GibbsKernel::Exact { contraction, .. } => Ok(noisy * *contraction),
    }
}

/// Iterates of one chain: index 0 is the initial run's output, index r the
/// output of repetition r.
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub iterates: Vec<Point>,
    pub steps: usize,
}

impl Chain {
    pub fn last(&self) -> &Point {
        self.iterates.last().expect("a chain always has its initial iterate")
    }
}

/// γ of the scalar Gaussian case at context 0, if the target is one.
pub fn gaussian_case_gamma(target: &ConditionedTarget) -> Option<f64> {
    let prior = target.target().prior();
    if prior.dim() != 1 || prior.len() != 1 || prior.means()[0][0] != 0.0 || prior.covariances()[0][(0, 0)] != 1.0 {
        return None;
    }
    match (target.target().classifier(), target.context()) {
        (Classifier::LinearGaussian { observation, gamma }, Context::Observation(c))
            if observation[(0, 0)] == 1.0 && c[0] == 0.0 =>
        {
            Some(*gamma)
        }
        _ => None,
    }
}

enum Initial {
    Solver(SolverRun),
    Exact(f64),
}

/// A configured refinement sampler.
pub struct CfgigSampler {
    config: CfgigConfig,
    plan: CfgigPlan,
    initial: Initial,
    kernel: GibbsKernel,
    dim: usize,
}

impl CfgigSampler {
    pub fn new(target: &ConditionedTarget, config: CfgigConfig) -> Result<Self> {
        let plan = config.plan()?;
        let dim = GuidanceBase::dim(target);
        if config.exact_flow {
            let gamma = gaussian_case_gamma(target).ok_or_else(|| {
                Error::Unsupported("exact flow needs the scalar Gaussian case at context 0".into())
            })?;
            if config.refinement != Refinement::Cfg {
                return Err(Error::Unsupported("exact flow is defined for CFG refinement only".into()));
            }
            return Ok(Self {
                initial: Initial::Exact(exact_flow_ratio(gamma, config.w0, config.sigma_max, 0.0)),
                kernel: GibbsKernel::Exact {
                    contraction: flow_contraction(gamma, config.w, config.sigma_star)?,
                    sigma_star: config.sigma_star,
                },
                config,
                plan,
                dim,
            });
        }
        let base: Arc<dyn GuidanceBase> = Arc::new(target.clone());
        Self::with_base(base, config, plan)
    }

    /// Sampler over an arbitrary conditional/unconditional pair.
    pub fn from_base(base: Arc<dyn GuidanceBase>, config: CfgigConfig) -> Result<Self> {
        if config.exact_flow {
            return Err(Error::Unsupported("exact flow needs an analytic target".into()));
        }
        let plan = config.plan()?;
        Self::with_base(base, config, plan)
    }

    fn with_base(base: Arc<dyn GuidanceBase>, config: CfgigConfig, plan: CfgigPlan) -> Result<Self> {
        let dim = base.dim();
        let initial: Arc<dyn Denoiser> = Arc::new(GuidedDenoiser::new(base.clone(), Guidance::Cfg { w: config.w0 })?);
        let refine: Arc<dyn Denoiser> =
            Arc::new(GuidedDenoiser::new(base, config.refinement.guidance(config.w))?);
        Ok(Self {
            initial: Initial::Solver(SolverRun::new(plan.initial_schedule.clone(), initial, config.method)),
            kernel: GibbsKernel::Solver {
                run: SolverRun::new(plan.refinement_schedule.clone(), refine, config.method),
                sigma_star: config.sigma_star,
            },
            config,
            plan,
            dim,
        })
    }

    pub fn config(&self) -> &CfgigConfig {
        &self.config
    }

    pub fn plan(&self) -> &CfgigPlan {
        &self.plan
    }

    pub fn kernel(&self) -> &GibbsKernel {
        &self.kernel
    }

    /// Runs chain `chain_id` with streams keyed by the config seed.
    pub fn sample_chain(&self, chain_id: u64) -> Result<Chain> {
        let seed = self.config.seed;
        let x_t = normal_vector(&mut stream(seed, chain_id, 0, tags::INITIAL), self.dim) * self.config.sigma_max;
        self.refine_from(chain_id, x_t)
    }

    /// Runs a chain from a given initial noise `X_{σ_max}`.
    pub fn refine_from(&self, chain_id: u64, x_t: Point) -> Result<Chain> {
        let mut iterates = Vec::with_capacity(self.config.repetitions + 1);
        let (mut x, mut steps) = match &self.initial {
            Initial::Solver(run) => {
                let flow = integrate_flow(&x_t, run)?;
                (flow.state, flow.steps)
            }
            Initial::Exact(ratio) => (x_t * *ratio, self.plan.initial_levels),
        };
        iterates.push(x.clone());
        for r in 1..=self.config.repetitions {
            let mut rng = stream(self.config.seed, chain_id, r as u64, tags::RENOISE);
            x = gibbs_iteration(&x, &self.kernel, &mut rng)?;
            steps += match self.kernel {
                GibbsKernel::Exact { .. } => self.plan.levels_per_repetition,
                _ => self.kernel.steps(),
            };
            iterates.push(x.clone());
        }
        Ok(Chain { iterates, steps })
    }

    /// Chains `0..n` in parallel; the result does not depend on threading.
    pub fn sample_ensemble(&self, n: usize) -> Result<Vec<Chain>> {
        (0..n as u64).into_par_iter().map(|i| self.sample_chain(i)).collect()
    }
}

/// Final iterate of chain 0.
pub fn cfgig_sample(target: &ConditionedTarget, config: CfgigConfig) -> Result<Point> {
    Ok(CfgigSampler::new(target, config)?.sample_chain(0)?.last().clone())
}

/// Writes `chain_id, iteration, x_1..x_d` rows for every iterate.
pub fn write_iterations<W: Write>(out: W, chains: &[Chain]) -> Result<W> {
    let dim = chains.first().map(|c| c.last().len()).unwrap_or(1);
    let mut header = vec!["chain_id".to_string(), "iteration".into()];
    header.extend(coordinate_columns(dim));
    let mut csv = CsvWriter::new(out, &header)?;
    for (id, chain) in chains.iter().enumerate() {
        for (r, x) in chain.iterates.iter().enumerate() {
            let mut cells = vec![id.to_string(), r.to_string()];
            cells.extend(x.iter().map(|v| float(*v)));
            csv.row(cells)?;
        }
    }
    csv.finish()
}
