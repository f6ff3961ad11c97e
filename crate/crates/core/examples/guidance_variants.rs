//! CFG, limited-interval CFG, CFG++ and delayed guidance on the scalar
//! Gaussian case, all integrated with the same Heun schedule.

use std::sync::Arc;

use guidance_lab::analytic::{AnalyticTarget, Context};
use guidance_lab::gaussian_theory::tilted_posterior;
use guidance_lab::guidance::{Guidance, GuidanceBase, GuidedDenoiser};
use guidance_lab::schedule::NoiseSchedule;
use guidance_lab::solvers::{integrate_ensemble, SolverMethod, SolverRun};
use guidance_lab::Point;

pub fn main() -> guidance_lab::Result<()> {
    let base: Arc<dyn GuidanceBase> = Arc::new(AnalyticTarget::gaussian_case(1.0)?.condition(&Context::scalar(3.0))?);
    let schedule = NoiseSchedule::karras(0.002, 80.0, 48, 7.0)?;
    let noise: Vec<Point> = (0..2000).map(|i| Point::from_element(1, 80.0 * guidance_lab::analytic::normal_quantile((i as f64 + 0.5) / 2000.0))).collect();
    let (mean, var) = tilted_posterior(1.0, 2.0, 3.0)?;
    println!("tilt at w = 2: mean {mean:.4} variance {var:.4}");
    let variants = [
        Guidance::Conditional,
        Guidance::Cfg { w: 2.0 },
        Guidance::LiCfg { w: 2.0, sigma_lo: 0.3, sigma_hi: 5.0 },
        Guidance::CfgPp { lambda: 0.6 },
        Guidance::Delayed { w: 2.0, delta: 0.5 },
        Guidance::Ideal { w: 2.0 },
    ];
    for g in variants {
        let run = SolverRun::new(schedule.clone(), Arc::new(GuidedDenoiser::new(base.clone(), g.clone())?), SolverMethod::Heun);
        let xs: Vec<f64> = integrate_ensemble(&noise, &run)?.iter().map(|f| f.state[0]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
        println!("{:>8}: mean {m:.4} variance {v:.4}", g.name());
    }
    Ok(())
}
