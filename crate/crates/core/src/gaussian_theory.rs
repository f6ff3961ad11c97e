//! Closed forms for the scalar Gaussian case.
//!
//! Prior `N(0, 1)`, likelihood `g(c | x₀) = N(c; x₀, γ²)`. Everything here is
//! evaluated in the log domain so large guidance scales do not overflow.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::io::{float, CsvWriter};

/// Parameters of the scalar Gaussian case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianCase {
    pub gamma: f64,
    pub w: f64,
    #[serde(default)]
    pub c: f64,
    pub sigma_star: f64,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("gamma must be positive, got {gamma}")))
    }
}

/// Variance of the CFG marginal at level σ:
/// `v(w, σ²) = (1+σ²)((1+σ²)γ² + σ²)/(w + γ²(1+σ²) + σ²)`.
pub fn cfg_marginal_variance(gamma: f64, w: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let g2 = gamma * gamma;
    (1.0 + s2) * ((1.0 + s2) * g2 + s2) / (w + g2 * (1.0 + s2) + s2)
}

/// Same variance written as `((1+σ²)γ² + σ²)/(w/(1+σ²) + γ² + σ²/(1+σ²))`.
pub fn cfg_marginal_variance_reduced(gamma: f64, w: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let g2 = gamma * gamma;
    ((1.0 + s2) * g2 + s2) / (w / (1.0 + s2) + g2 + s2 / (1.0 + s2))
}

/// Variance of the tilt, `V(w) = γ²/(γ² + w)`.
pub fn tilted_variance(gamma: f64, w: f64) -> f64 {
    let g2 = gamma * gamma;
    g2 / (g2 + w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InequalityCheck {
    pub holds: bool,
    /// `σ² + V(w) − v(w, σ²)`.
    pub margin: f64,
}

/// Compares the CFG marginal variance with the variance any noised
/// distribution with the tilt as its clean marginal would need.
pub fn example1_inequality(gamma: f64, w: f64, sigma: f64) -> Result<InequalityCheck> {
    check_gamma(gamma)?;
    if !(w > 1.0 && w.is_finite()) {
        return Err(invalid(format!("needs w > 1, got {w}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("needs sigma > 0, got {sigma}")));
    }
    // Closed form of the gap avoids cancellation between nearly equal terms:
    // σ² + γ²/(γ²+w) − v = (w−1)wσ² / ((γ²+w)(w + γ²(1+σ²) + σ²)).
    let s2 = sigma * sigma;
    let g2 = gamma * gamma;
    let margin = (w - 1.0) * w * s2 / ((g2 + w) * (w + g2 * (1.0 + s2) + s2));
    Ok(InequalityCheck { holds: margin > 0.0, margin })
}

/// Mean and variance of the tilt, `(wc/(w+γ²), γ²/(w+γ²))`.
pub fn tilted_posterior(gamma: f64, w: f64, c: f64) -> Result<(f64, f64)> {
    check_gamma(gamma)?;
    if !(w >= 1.0 && w.is_finite()) {
        return Err(invalid(format!("needs w >= 1, got {w}")));
    }
    let g2 = gamma * gamma;
    Ok((w * c / (w + g2), g2 / (w + g2)))
}

/// `F(s) = (w/2) ln(γ² + (1+γ²)s²) + ((1−w)/2) ln(1+s²)`, the log-potential
/// of the guided flow at context 0.
pub fn flow_potential(gamma: f64, w: f64, s: f64) -> f64 {
    let g2 = gamma * gamma;
    0.5 * w * (g2 + (1.0 + g2) * s * s).ln() + 0.5 * (1.0 - w) * (s * s).ln_1p()
}

/// Exact ratio `x(σ_to)/x(σ_from)` of the CFG flow at context 0.
pub fn exact_flow_ratio(gamma: f64, w: f64, sigma_from: f64, sigma_to: f64) -> f64 {
    (flow_potential(gamma, w, sigma_to) - flow_potential(gamma, w, sigma_from)).exp()
}

fn log_contraction(gamma: f64, w: f64, sigma_star: f64) -> f64 {
    let s2 = sigma_star * sigma_star;
    let g2 = gamma * gamma;
    w * gamma.ln() + 0.5 * (w - 1.0) * s2.ln_1p() - 0.5 * w * (g2 + (1.0 + g2) * s2).ln()
}

/// `c(σ*) = γ^w (1+σ*²)^{(w−1)/2} / (γ² + (1+γ²)σ*²)^{w/2}`.
pub fn flow_contraction(gamma: f64, w: f64, sigma_star: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if !(w >= 0.0 && w.is_finite()) {
        return Err(invalid(format!("needs w >= 0, got {w}")));
    }
    if !(sigma_star > 0.0 && sigma_star.is_finite()) {
        return Err(invalid(format!("needs sigma_star > 0, got {sigma_star}")));
    }
    Ok(log_contraction(gamma, w, sigma_star).exp())
}

/// Stationary variance `V∞ = σ*² c² / (1 − c²)` of the exact-flow recursion.
pub fn stationary_variance(gamma: f64, w: f64, sigma_star: f64) -> Result<f64> {
    flow_contraction(gamma, w, sigma_star)?;
    let two_log_c = 2.0 * log_contraction(gamma, w, sigma_star);
    if two_log_c >= 0.0 {
        return Err(invalid(format!("flow is not contracting (c = {})", (0.5 * two_log_c).exp())));
    }
    Ok(sigma_star * sigma_star * two_log_c.exp() / -two_log_c.exp_m1())
}

/// `V_R = c^{2R} V₀ + c²σ*²(1 − c^{2R})/(1 − c²)` with `V₀ = γ²/(γ²+1)`.
pub fn finite_r_variance(gamma: f64, w: f64, sigma_star: f64, r: u32) -> Result<f64> {
    let v_inf = stationary_variance(gamma, w, sigma_star)?;
    let v0 = tilted_variance(gamma, 1.0);
    let c2r = (2.0 * r as f64 * log_contraction(gamma, w, sigma_star)).exp();
    Ok(c2r * v0 + v_inf * (1.0 - c2r))
}

/// `|V_R − V(w)|`.
pub fn mixing_bias(gamma: f64, w: f64, sigma_star: f64, r: u32) -> Result<f64> {
    Ok((finite_r_variance(gamma, w, sigma_star, r)? - tilted_variance(gamma, w)).abs())
}

/// One row of the mixing sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoryRow {
    pub gamma: f64,
    pub w: f64,
    pub sigma_star: f64,
    pub r: u32,
    pub v_r: f64,
    pub v_inf: f64,
    pub v: f64,
    pub c: f64,
    pub bias: f64,
}

pub fn theory_grid(gamma: f64, ws: &[f64], sigma_stars: &[f64], rs: &[u32]) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::with_capacity(ws.len() * sigma_stars.len() * rs.len());
    for &w in ws {
        for &sigma_star in sigma_stars {
            for &r in rs {
                let v_r = finite_r_variance(gamma, w, sigma_star, r)?;
                let v = tilted_variance(gamma, w);
                rows.push(TheoryRow {
                    gamma,
                    w,
                    sigma_star,
                    r,
                    v_r,
                    v_inf: stationary_variance(gamma, w, sigma_star)?,
                    v,
                    c: flow_contraction(gamma, w, sigma_star)?,
                    bias: (v_r - v).abs(),
                });
            }
        }
    }
    Ok(rows)
}

pub const THEORY_COLUMNS: [&str; 9] = ["gamma", "w", "sigma_star", "r", "v_r", "v_inf", "v", "c", "bias"];

pub fn write_theory_csv<W: Write>(rows: &[TheoryRow], out: W) -> Result<W> {
    let mut csv = CsvWriter::new(out, &THEORY_COLUMNS)?;
    for row in rows {
        csv.row([
            float(row.gamma),
            float(row.w),
            float(row.sigma_star),
            row.r.to_string(),
            float(row.v_r),
            float(row.v_inf),
            float(row.v),
            float(row.c),
            float(row.bias),
        ])?;
    }
    csv.finish()
}
