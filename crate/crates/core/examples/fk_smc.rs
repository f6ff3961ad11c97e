//! Feynman–Kac reweighting of CFG particles towards the tilt.

use std::sync::Arc;

use guidance_lab::analytic::{AnalyticTarget, Context};
use guidance_lab::guidance::GuidanceBase;
use guidance_lab::schedule::NoiseSchedule;
use guidance_lab::smc::{fk_smc_sample, SmcConfig};

pub fn main() -> guidance_lab::Result<()> {
    let base: Arc<dyn GuidanceBase> = Arc::new(AnalyticTarget::gaussian_case(1.0)?.condition(&Context::scalar(3.0))?);
    println!("tilt at w = 2: mean 2, variance 1/3");
    for steps in [64, 256] {
        let schedule = NoiseSchedule::karras(0.002, 80.0, steps, 7.0)?;
        let out = fk_smc_sample(&base, 2.0, &schedule, &SmcConfig::new(2048, 1))?;
        let (m, v) = out.ensemble.moments(0)?;
        let resamples = out.ess_trace.iter().filter(|r| r.resampled).count();
        println!("{steps:>4} levels: mean {m:.4} variance {v:.4} final ESS {:.0} resamples {resamples}", out.ensemble.ess);
    }
    Ok(())
}
