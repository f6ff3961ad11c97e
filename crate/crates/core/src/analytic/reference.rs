//! Reference draws from tilted distributions.

use log::warn;
use rand::Rng;

use super::mixture::log_sum_exp;
use super::quadrature::{Domain, Oracle};
use super::target::{AnalyticTarget, Context, TiltedTarget};
use crate::error::{invalid, Error, Result};
use crate::rng::{stream, tags};
use crate::Point;

/// Unweighted draws plus importance-sampling diagnostics.
#[derive(Debug, Clone)]
pub struct ReferenceSample {
    pub points: Vec<Point>,
    /// Effective sample size of the proposal weights (`n` for exact draws).
    pub ess: f64,
    /// Set when the effective sample size fell below `n / 10`.
    pub low_ess_warning: bool,
}

/// Draws `n` points from `π(· | c; w)`.
///
/// Closed-form tilts are sampled exactly; class-mixture tilts use the
/// conditional as an importance proposal followed by systematic resampling.
pub fn sample_reference(target: &AnalyticTarget, c: &Context, w: f64, n: usize, seed: u64) -> Result<ReferenceSample> {
    if n == 0 {
        return Err(invalid("reference sample size must be at least 1"));
    }
    let tilt = target.tilt(c, w)?;
    let mut rng = stream(seed, 0, 0, tags::REFERENCE);
    if let Some(mixture) = tilt.mixture() {
        let points = (0..n).map(|_| mixture.sample(&mut rng)).collect();
        return Ok(ReferenceSample { points, ess: n as f64, low_ess_warning: false });
    }
    let proposal = target.conditional(c)?;
    let mut proposals = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for _ in 0..n {
        let x = proposal.sample(&mut rng);
        log_w.push(tilt.log_density(&x)? - proposal.log_density(&x)?);
        proposals.push(x);
    }
    let lse = log_sum_exp(&log_w);
    let weights: Vec<f64> = log_w.iter().map(|l| (l - lse).exp()).collect();
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let low_ess_warning = ess < n as f64 / 10.0;
    if low_ess_warning {
        warn!("reference importance sampling: effective sample size {ess:.1} of {n}");
    }
    let u: f64 = rng.random();
    let mut points = Vec::with_capacity(n);
    let mut acc = weights[0];
    let mut j = 0;
    for i in 0..n {
        let target_u = (i as f64 + u) / n as f64;
        while acc < target_u && j + 1 < n {
            j += 1;
            acc += weights[j];
        }
        points.push(proposals[j].clone());
    }
    Ok(ReferenceSample { points, ess, low_ess_warning })
}

/// Deterministic quantile-grid draws `F⁻¹((i + ½)/n)` of a one-dimensional
/// closed-form tilt.
pub fn stratified_reference_1d(tilt: &TiltedTarget, n: usize) -> Result<Vec<f64>> {
    let mixture = tilt
        .mixture()
        .ok_or_else(|| Error::Unsupported("stratified draws need a closed-form tilt".into()))?;
    (0..n).map(|i| mixture.quantile_1d((i as f64 + 0.5) / n as f64)).collect()
}

/// Mass of a one-dimensional tilt below `threshold`.
pub fn mass_below(tilt: &TiltedTarget, threshold: f64) -> Result<f64> {
    match tilt {
        TiltedTarget::Mixture { mixture, .. } => mixture.cdf_1d(threshold),
        TiltedTarget::Numeric(t) => {
            if t.domain().dim() != 1 {
                return Err(Error::Unsupported("basin masses are one-dimensional".into()));
            }
            let (lo, hi) = t.domain().bounds(0);
            if threshold <= lo {
                return Ok(0.0);
            }
            let mut breaks: Vec<f64> = t.domain().axis(0).iter().copied().filter(|b| *b < threshold).collect();
            breaks.push(threshold.min(hi));
            let dom = Domain::new(vec![breaks])?;
            let v = Oracle::default().integrate(
                &|p: &[f64]| {
                    tilt.log_density(&Point::from_column_slice(p))
                        .map(f64::exp)
                        .unwrap_or(0.0)
                },
                &dom,
            )?;
            Ok(v)
        }
    }
}
