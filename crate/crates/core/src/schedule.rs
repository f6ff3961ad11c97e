//! Decreasing noise-level sequences driving every solver.
//!
//! Schedules are ordered for generation: the first level is the largest
//! (`sigma_max`) and the last is the smallest strictly positive level
//! (`sigma_min`). The terminal jump to σ = 0 is performed by the solver, never
//! stored here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A strictly decreasing sequence of positive noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    rho: Option<f64>,
}

impl NoiseSchedule {
    /// Karras-style warped spacing: `σ_t^{1/ρ}` is affine in `t`.
    ///
    /// Returns `steps` levels from `sigma_max` down to `sigma_min`; both
    /// endpoints are stored exactly.
    pub fn karras(sigma_min: f64, sigma_max: f64, steps: usize, rho: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidSchedule(format!("need at least 2 levels, got {steps}")));
        }
        if !(sigma_min > 0.0 && sigma_min.is_finite()) || !sigma_max.is_finite() {
            return Err(Error::InvalidSchedule(format!(
                "levels must be finite and positive (sigma_min = {sigma_min}, sigma_max = {sigma_max})"
            )));
        }
        if sigma_min >= sigma_max {
            return Err(Error::InvalidSchedule(format!(
                "sigma_min ({sigma_min}) must be below sigma_max ({sigma_max})"
            )));
        }
        if !(rho >= 1.0 && rho.is_finite()) {
            return Err(Error::InvalidSchedule(format!("rho must be >= 1, got {rho}")));
        }
        let lo = sigma_min.powf(1.0 / rho);
        let hi = sigma_max.powf(1.0 / rho);
        let last = (steps - 1) as f64;
        let mut sigmas: Vec<f64> = (0..steps)
            .rev()
            .map(|t| (lo + (t as f64 / last) * (hi - lo)).powf(rho))
            .collect();
        sigmas[0] = sigma_max;
        sigmas[steps - 1] = sigma_min;
        let schedule = Self { sigmas, rho: Some(rho) };
        schedule.check_decreasing()?;
        Ok(schedule)
    }

    /// Schedule given by an explicit table of levels (e.g. a VP model's
    /// σ(t) evaluated on a uniform diffusion-time grid).
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 levels, got {}",
                levels.len()
            )));
        }
        if levels.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidSchedule("levels must be finite and positive".into()));
        }
        let schedule = Self { sigmas: levels, rho: None };
        schedule.check_decreasing()?;
        Ok(schedule)
    }

    /// Uniform steps in diffusion time mapped through `sigma_of_t`.
    ///
    /// `t_start` is the time of the noisiest level; `t_end` the least noisy.
    pub fn uniform_in_time(
        sigma_of_t: impl Fn(f64) -> f64,
        t_start: f64,
        t_end: f64,
        steps: usize,
    ) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidSchedule(format!("need at least 2 levels, got {steps}")));
        }
        let last = (steps - 1) as f64;
        let levels = (0..steps)
            .map(|i| sigma_of_t(t_start + (i as f64 / last) * (t_end - t_start)))
            .collect();
        Self::from_levels(levels)
    }

    fn check_decreasing(&self) -> Result<()> {
        for (i, pair) in self.sigmas.windows(2).enumerate() {
            if pair[1] >= pair[0] {
                return Err(Error::InvalidSchedule(format!(
                    "levels must be strictly decreasing (index {i}: {} then {})",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    /// Warp exponent, when the schedule was built by [`NoiseSchedule::karras`].
    pub fn rho(&self) -> Option<f64> {
        self.rho
    }

    /// Consecutive `(from, to)` pairs, excluding the final jump to zero.
    pub fn transitions(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.sigmas.windows(2).map(|p| (p[0], p[1]))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.sigmas).expect("levels serialize")
    }
}

/// Sub-schedule used by a Gibbs refinement: restarts at `sigma_star`.
pub fn sub_schedule(sigma_star: f64, steps: usize, sigma_min: f64, rho: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::karras(sigma_min, sigma_star, steps, rho)
}

/// Free-function form of [`NoiseSchedule::karras`].
pub fn karras_sigmas(sigma_min: f64, sigma_max: f64, steps: usize, rho: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::karras(sigma_min, sigma_max, steps, rho)
}

impl Serialize for NoiseSchedule {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.sigmas.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for NoiseSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let levels = Vec::<f64>::deserialize(deserializer)?;
        NoiseSchedule::from_levels(levels).map_err(serde::de::Error::custom)
    }
}
