//! Feynman–Kac sequential Monte Carlo corrector for CFG.
//!
//! Particles move with the DDPM-style kernel built on a guided denoiser and
//! are reweighted by `w(w−1)(σ_{t+1}² − σ_t²)/(2σ_{t+1}²σ_t²)·‖D_c − D_u‖²`,
//! so the terminal weighted ensemble targets the tilted distribution.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::mixture::log_sum_exp;
use crate::error::{invalid, Error, Result};
use crate::guidance::{combine, Denoiser, Guidance, GuidanceBase, GuidedDenoiser};
use crate::io::{float, CsvWriter};
use crate::rng::{normal_vector, stream, tags};
use crate::schedule::NoiseSchedule;
use crate::Point;

/// Effective sample size `(Σw)²/Σw²` of unnormalized log-weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    let lse = checked_lse(log_weights)?;
    let sum_sq: f64 = log_weights.iter().map(|l| (2.0 * (l - lse)).exp()).sum();
    Ok(1.0 / sum_sq)
}

fn checked_lse(log_weights: &[f64]) -> Result<f64> {
    if log_weights.is_empty() {
        return Err(Error::EmptySample);
    }
    if log_weights.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(Error::NonFiniteInput);
    }
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights);
    }
    Ok(lse)
}

/// Normalized weights from log-weights.
pub fn normalize(log_weights: &[f64]) -> Result<Vec<f64>> {
    let lse = checked_lse(log_weights)?;
    Ok(log_weights.iter().map(|l| (l - lse).exp()).collect())
}

/// Systematic resampling: one uniform, `n` evenly spaced pointers.
pub fn systematic_resample<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<Vec<usize>> {
    let weights = normalize(log_weights)?;
    let n = weights.len();
    let u: f64 = rng.random();
    let mut out = Vec::with_capacity(n);
    let mut acc = weights[0];
    let mut j = 0;
    for i in 0..n {
        let pointer = (i as f64 + u) / n as f64;
        while acc < pointer && j + 1 < n {
            j += 1;
            acc += weights[j];
        }
        out.push(j);
    }
    Ok(out)
}

/// Weighted particle approximation at one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub states: Vec<Point>,
    pub log_weights: Vec<f64>,
    pub sigma: f64,
    pub ess: f64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn weights(&self) -> Result<Vec<f64>> {
        normalize(&self.log_weights)
    }

    /// Self-normalized estimate of `E[f(X)]`.
    pub fn expectation(&self, f: impl Fn(&Point) -> f64) -> Result<f64> {
        let w = self.weights()?;
        Ok(self.states.iter().zip(&w).map(|(x, w)| w * f(x)).sum())
    }

    /// Weighted mean and variance of coordinate `axis`.
    pub fn moments(&self, axis: usize) -> Result<(f64, f64)> {
        let w = self.weights()?;
        let xs: Vec<f64> = self.states.iter().map(|x| x[axis]).collect();
        Ok(weighted_mean_var(&xs, &w))
    }
}

/// Mean and (plug-in) variance under normalized weights.
pub fn weighted_mean_var(xs: &[f64], weights: &[f64]) -> (f64, f64) {
    let total: f64 = weights.iter().sum();
    let mean = xs.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / total;
    let var = xs.iter().zip(weights).map(|(x, w)| w * (x - mean) * (x - mean)).sum::<f64>() / total;
    (mean, var)
}

fn default_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmcConfig {
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    /// Resample when `ESS < threshold · N`.
    #[serde(default = "default_threshold")]
    pub resample_threshold: f64,
    /// Denoiser in the kernel mean; plain CFG at the target scale if absent.
    #[serde(default)]
    pub proposal: Option<Guidance>,
}

impl SmcConfig {
    pub fn new(particles: usize, seed: u64) -> Self {
        Self { particles, seed, resample_threshold: default_threshold(), proposal: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(invalid(format!("need at least 2 particles, got {}", self.particles)));
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(invalid("resample_threshold must lie in [0, 1]"));
        }
        if let Some(g) = &self.proposal {
            g.validate()?;
        }
        Ok(())
    }
}

/// ESS after reweighting at one transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EssRecord {
    pub step: usize,
    pub sigma: f64,
    pub ess: f64,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct SmcOutput {
    /// Weighted ensemble at the last schedule level.
    pub ensemble: ParticleEnsemble,
    /// Unweighted draws obtained by one systematic resampling of `ensemble`.
    pub resampled: Vec<Point>,
    pub ess_trace: Vec<EssRecord>,
}

/// Runs the corrector over `schedule` (from `σ_max` down to `σ_min`).
pub fn fk_smc_sample(
    base: &Arc<dyn GuidanceBase>,
    w: f64,
    schedule: &NoiseSchedule,
    config: &SmcConfig,
) -> Result<SmcOutput> {
    config.validate()?;
    if !(w.is_finite() && w >= 0.0) {
        return Err(invalid(format!("guidance scale must be finite and nonnegative, got {w}")));
    }
    let proposal = match &config.proposal {
        Some(Guidance::Cfg { w: pw }) if *pw == w => None,
        Some(g) => Some(GuidedDenoiser::new(base.clone(), g.clone())?),
        None => None,
    };
    let n = config.particles;
    let dim = base.dim();
    let seed = config.seed;
    let sigmas = schedule.sigmas();
    let mut states: Vec<Point> = (0..n as u64)
        .map(|i| normal_vector(&mut stream(seed, i, 0, tags::INITIAL), dim) * sigmas[0])
        .collect();
    let mut log_weights = vec![0.0; n];
    let mut ess_trace = Vec::with_capacity(sigmas.len() - 1);

    for (step, pair) in sigmas.windows(2).enumerate() {
        let (hi, lo) = (pair[0], pair[1]);
        let (hi2, lo2) = (hi * hi, lo * lo);
        let evals: Vec<(Point, Point)> = states
            .par_iter()
            .map(|x| Ok((base.conditional(x, hi)?, base.unconditional(x, hi)?)))
            .collect::<Result<_>>()?;
        let factor = w * (w - 1.0) * (hi2 - lo2) / (2.0 * hi2 * lo2);
        for (lw, (dc, du)) in log_weights.iter_mut().zip(&evals) {
            *lw += factor * (dc - du).norm_squared();
        }
        let current = ess(&log_weights)?;
        if current < 2.0 {
            return Err(Error::EssCollapse { step, ess: current });
        }
        let resample = current < config.resample_threshold * n as f64;
        let (states_now, evals_now) = if resample {
            let idx = systematic_resample(&log_weights, &mut stream(seed, 0, step as u64, tags::RESAMPLE))?;
            log_weights.iter_mut().for_each(|l| *l = 0.0);
            (
                idx.iter().map(|&i| states[i].clone()).collect(),
                idx.iter().map(|&i| evals[i].clone()).collect(),
            )
        } else {
            (states, evals)
        };
        ess_trace.push(EssRecord { step, sigma: hi, ess: current, resampled: resample });

        let r = lo2 / hi2;
        let sd = (lo2 * (hi2 - lo2) / hi2).sqrt();
        states = states_now
            .par_iter()
            .zip(evals_now.par_iter())
            .enumerate()
            .map(|(i, (x, (dc, du)))| {
                let d = match &proposal {
                    Some(p) => p.denoise_in_step(x, hi, hi, lo)?,
                    None => combine(w, dc, du),
                };
                let noise = normal_vector(&mut stream(seed, i as u64, step as u64 + 1, tags::KERNEL), dim);
                let next = x * r + d * (1.0 - r) + noise * sd;
                if next.iter().all(|v| v.is_finite()) {
                    Ok(next)
                } else {
                    Err(Error::NonFiniteState { step, sigma: lo })
                }
            })
            .collect::<Result<_>>()?;
    }

    let final_ess = ess(&log_weights)?;
    let ensemble = ParticleEnsemble { states, log_weights, sigma: schedule.sigma_min(), ess: final_ess };
    let idx = systematic_resample(&ensemble.log_weights, &mut stream(seed, 1, sigmas.len() as u64, tags::RESAMPLE))?;
    let resampled = idx.iter().map(|&i| ensemble.states[i].clone()).collect();
    Ok(SmcOutput { ensemble, resampled, ess_trace })
}

/// Writes `step, sigma, ess, resampled` rows.
pub fn write_ess_trace<W: Write>(out: W, trace: &[EssRecord]) -> Result<W> {
    let mut csv = CsvWriter::new(out, &["step", "sigma", "ess", "resampled"])?;
    for rec in trace {
        csv.row(vec![rec.step.to_string(), float(rec.sigma), float(rec.ess), (rec.resampled as u8).to_string()])?;
    }
    csv.finish()
}
