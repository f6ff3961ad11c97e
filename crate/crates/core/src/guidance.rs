//! Guidance strategies as combinators over a conditional/unconditional pair.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::Point;

/// Anything mapping a noisy point at level σ to an estimate of clean data.
pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    fn denoise(&self, x: &Point, sigma: f64) -> Result<Point>;

    /// Evaluation inside the solver transition `from → to`. Only strategies
    /// whose scale depends on the transition (CFG++) override this.
    fn denoise_in_step(&self, x: &Point, sigma: f64, _from: f64, _to: f64) -> Result<Point> {
        self.denoise(x, sigma)
    }
}

/// The two denoisers every guidance strategy is built from.
pub trait GuidanceBase: Send + Sync {
    fn dim(&self) -> usize;

    /// `D_σ(x | c)`.
    fn conditional(&self, x: &Point, sigma: f64) -> Result<Point>;

    /// `D_σ(x)`.
    fn unconditional(&self, x: &Point, sigma: f64) -> Result<Point>;

    /// Exact denoiser of the tilt `g^w p`, when the base can provide one.
    fn tilted(&self, _w: f64) -> Result<Arc<dyn Denoiser>> {
        Err(Error::Unsupported("this base has no tilted denoiser".into()))
    }
}

/// A base made of two arbitrary denoising functions.
pub struct DenoiserPair<C, U> {
    dim: usize,
    conditional: C,
    unconditional: U,
}

impl<C, U> DenoiserPair<C, U>
where
    C: Fn(&Point, f64) -> Result<Point> + Send + Sync,
    U: Fn(&Point, f64) -> Result<Point> + Send + Sync,
{
    pub fn new(dim: usize, conditional: C, unconditional: U) -> Self {
        Self { dim, conditional, unconditional }
    }
}

impl<C, U> GuidanceBase for DenoiserPair<C, U>
where
    C: Fn(&Point, f64) -> Result<Point> + Send + Sync,
    U: Fn(&Point, f64) -> Result<Point> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn conditional(&self, x: &Point, sigma: f64) -> Result<Point> {
        (self.conditional)(x, sigma)
    }

    fn unconditional(&self, x: &Point, sigma: f64) -> Result<Point> {
        (self.unconditional)(x, sigma)
    }
}

/// Guidance strategy and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Guidance {
    #[serde(rename = "uncond")]
    Unconditional,
    #[serde(rename = "cond")]
    Conditional,
    #[serde(rename = "cfg")]
    Cfg { w: f64 },
    /// CFG inside `[sigma_lo, sigma_hi]` (inclusive), conditional outside.
    #[serde(rename = "li-cfg")]
    LiCfg { w: f64, sigma_lo: f64, sigma_hi: f64 },
    /// CFG with the per-transition scale `λσ_from/(σ_from − σ_to)`.
    #[serde(rename = "cfg++")]
    CfgPp { lambda: f64 },
    /// Conditional and unconditional denoisers at two shifted levels.
    #[serde(rename = "delayed")]
    Delayed { w: f64, delta: f64 },
    /// Exact denoiser of the tilted target.
    #[serde(rename = "ideal")]
    Ideal { w: f64 },
}

impl Guidance {
    pub fn name(&self) -> &'static str {
        match self {
            Guidance::Unconditional => "uncond",
            Guidance::Conditional => "cond",
            Guidance::Cfg { .. } => "cfg",
            Guidance::LiCfg { .. } => "li-cfg",
            Guidance::CfgPp { .. } => "cfg++",
            Guidance::Delayed { .. } => "delayed",
            Guidance::Ideal { .. } => "ideal",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |w: f64, what: &str| {
            if w.is_finite() && w >= 0.0 {
                Ok(())
            } else {
                Err(invalid(format!("{what} must be finite and non-negative, got {w}")))
            }
        };
        match *self {
            Guidance::Unconditional | Guidance::Conditional => Ok(()),
            Guidance::Cfg { w } => finite_nonneg(w, "guidance scale"),
            Guidance::LiCfg { w, sigma_lo, sigma_hi } => {
                finite_nonneg(w, "guidance scale")?;
                finite_nonneg(sigma_lo, "sigma_lo")?;
                if !(sigma_hi.is_finite() && sigma_lo < sigma_hi) {
                    return Err(invalid(format!("need sigma_lo < sigma_hi, got [{sigma_lo}, {sigma_hi}]")));
                }
                Ok(())
            }
            Guidance::CfgPp { lambda } => {
                if (0.0..=1.0).contains(&lambda) {
                    Ok(())
                } else {
                    Err(invalid(format!("lambda must lie in [0, 1], got {lambda}")))
                }
            }
            Guidance::Delayed { w, delta } => delayed_levels(w, delta, 1.0).map(|_| ()),
            Guidance::Ideal { w } => {
                if w.is_finite() && w >= 1.0 {
                    Ok(())
                } else {
                    Err(invalid(format!("ideal guidance needs w >= 1, got {w}")))
                }
            }
        }
    }

    /// Guidance scale, for strategies that have one.
    pub fn scale(&self) -> Option<f64> {
        match *self {
            Guidance::Cfg { w } | Guidance::LiCfg { w, .. } | Guidance::Delayed { w, .. } | Guidance::Ideal { w } => {
                Some(w)
            }
            Guidance::CfgPp { lambda } => Some(lambda),
            Guidance::Unconditional | Guidance::Conditional => None,
        }
    }

    /// Same strategy with its scale replaced.
    pub fn with_scale(&self, value: f64) -> Result<Self> {
        let out = match self.clone() {
            Guidance::Cfg { .. } => Guidance::Cfg { w: value },
            Guidance::LiCfg { sigma_lo, sigma_hi, .. } => Guidance::LiCfg { w: value, sigma_lo, sigma_hi },
            Guidance::CfgPp { .. } => Guidance::CfgPp { lambda: value },
            Guidance::Delayed { delta, .. } => Guidance::Delayed { w: value, delta },
            Guidance::Ideal { .. } => Guidance::Ideal { w: value },
            other => {
                return Err(invalid(format!("strategy {} has no scale", other.name())));
            }
        };
        out.validate()?;
        Ok(out)
    }
}

/// `w·D_c + (1 − w)·D_u`.
pub fn combine(w: f64, cond: &Point, uncond: &Point) -> Point {
    cond * w + uncond * (1.0 - w)
}

pub fn cfg_denoiser(base: &dyn GuidanceBase, w: f64, x: &Point, sigma: f64) -> Result<Point> {
    Ok(combine(w, &base.conditional(x, sigma)?, &base.unconditional(x, sigma)?))
}

pub fn li_cfg_denoiser(
    base: &dyn GuidanceBase,
    w: f64,
    sigma_lo: f64,
    sigma_hi: f64,
    x: &Point,
    sigma: f64,
) -> Result<Point> {
    if sigma_lo >= sigma_hi {
        return Err(invalid(format!("need sigma_lo < sigma_hi, got [{sigma_lo}, {sigma_hi}]")));
    }
    if (sigma_lo..=sigma_hi).contains(&sigma) {
        cfg_denoiser(base, w, x, sigma)
    } else {
        base.conditional(x, sigma)
    }
}

/// Guidance scale making a DDIM step from `sigma_from` to `sigma_to` the
/// CFG++ update: `λσ_from/(σ_from − σ_to)`.
pub fn cfg_pp_scale(lambda: f64, sigma_from: f64, sigma_to: f64) -> Result<f64> {
    if !(sigma_from > sigma_to && sigma_to >= 0.0) {
        return Err(invalid(format!(
            "CFG++ needs a strictly decreasing transition, got {sigma_from} -> {sigma_to}"
        )));
    }
    Ok(lambda * sigma_from / (sigma_from - sigma_to))
}

/// Levels `(σ₊, σ₋) = (σ√((w − 1)/δ), σ√(w/(1 + δ)))`.
pub fn delayed_levels(w: f64, delta: f64, sigma: f64) -> Result<(f64, f64)> {
    if !(w.is_finite() && w > 1.0) {
        return Err(invalid(format!("delayed guidance needs w > 1, got {w}")));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(invalid(format!("delayed guidance needs delta > 0, got {delta}")));
    }
    Ok((sigma * ((w - 1.0) / delta).sqrt(), sigma * (w / (1.0 + delta)).sqrt()))
}

/// `w·D_{σ₋}(x | c) + (1 − w)·D_{σ₊}(x)`.
pub fn delayed_denoiser(base: &dyn GuidanceBase, w: f64, delta: f64, x: &Point, sigma: f64) -> Result<Point> {
    let (plus, minus) = delayed_levels(w, delta, sigma)?;
    Ok(combine(w, &base.conditional(x, minus)?, &base.unconditional(x, plus)?))
}

pub fn ideal_denoiser(base: &dyn GuidanceBase, w: f64, x: &Point, sigma: f64) -> Result<Point> {
    base.tilted(w)?.denoise(x, sigma)
}

/// A guidance strategy bound to a base.
#[derive(Clone)]
pub struct GuidedDenoiser {
    base: Arc<dyn GuidanceBase>,
    guidance: Guidance,
    tilted: Option<Arc<dyn Denoiser>>,
}

impl std::fmt::Debug for GuidedDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GuidedDenoiser").field("guidance", &self.guidance).finish_non_exhaustive()
    }
}

impl GuidedDenoiser {
    pub fn new(base: Arc<dyn GuidanceBase>, guidance: Guidance) -> Result<Self> {
        guidance.validate()?;
        let tilted = match guidance {
            Guidance::Ideal { w } => Some(base.tilted(w)?),
            _ => None,
        };
        Ok(Self { base, guidance, tilted })
    }

    pub fn guidance(&self) -> &Guidance {
        &self.guidance
    }

    pub fn base(&self) -> &Arc<dyn GuidanceBase> {
        &self.base
    }
}

impl Denoiser for GuidedDenoiser {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn denoise(&self, x: &Point, sigma: f64) -> Result<Point> {
        let base = self.base.as_ref();
        match self.guidance {
            Guidance::Unconditional => base.unconditional(x, sigma),
            Guidance::Conditional => base.conditional(x, sigma),
            Guidance::Cfg { w } => cfg_denoiser(base, w, x, sigma),
            Guidance::LiCfg { w, sigma_lo, sigma_hi } => li_cfg_denoiser(base, w, sigma_lo, sigma_hi, x, sigma),
            Guidance::CfgPp { .. } => Err(Error::Unsupported(
                "CFG++ is defined per solver transition; use denoise_in_step".into(),
            )),
            Guidance::Delayed { w, delta } => delayed_denoiser(base, w, delta, x, sigma),
            Guidance::Ideal { .. } => self.tilted.as_ref().expect("built in new").denoise(x, sigma),
        }
    }

    fn denoise_in_step(&self, x: &Point, sigma: f64, from: f64, to: f64) -> Result<Point> {
        match self.guidance {
            Guidance::CfgPp { lambda } => cfg_denoiser(self.base.as_ref(), cfg_pp_scale(lambda, from, to)?, x, sigma),
            _ => self.denoise(x, sigma),
        }
    }
}
