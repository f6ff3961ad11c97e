//! Euler (DDIM) and Heun errors against the exact guided flow of the scalar
//! Gaussian case.

use std::sync::Arc;

use guidance_lab::analytic::{AnalyticTarget, Context};
use guidance_lab::gaussian_theory::flow_contraction;
use guidance_lab::guidance::{Guidance, GuidedDenoiser};
use guidance_lab::schedule::NoiseSchedule;
use guidance_lab::solvers::{integrate_flow, SolverMethod, SolverRun};
use guidance_lab::Point;

pub fn main() -> guidance_lab::Result<()> {
    let base = Arc::new(AnalyticTarget::gaussian_case(1.0)?.condition(&Context::scalar(0.0))?);
    let denoiser = Arc::new(GuidedDenoiser::new(base, Guidance::Cfg { w: 2.0 })?);
    let exact = flow_contraction(1.0, 2.0, 1.0)?;
    println!("exact contraction c(1) = {exact:.12}");
    for steps in [8, 16, 32, 64, 128] {
        let schedule = NoiseSchedule::karras(0.002, 1.0, steps, 1.0)?;
        let err = |method| -> guidance_lab::Result<f64> {
            let run = SolverRun::new(schedule.clone(), denoiser.clone(), method);
            Ok((integrate_flow(&Point::from_element(1, 1.0), &run)?.state[0] - exact).abs())
        };
        println!("{steps:>4} levels: euler {:.3e} heun {:.3e}", err(SolverMethod::EulerDdim)?, err(SolverMethod::Heun)?);
    }
    Ok(())
}
