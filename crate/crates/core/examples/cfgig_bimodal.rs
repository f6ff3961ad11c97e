//! Refinement on the bimodal target restores minor-mode mass that plain CFG
//! drains away.

use std::sync::Arc;

use guidance_lab::analytic::{canonical_bimodal, mass_below, CANONICAL_BIMODAL_W};
use guidance_lab::cfgig::{CfgigConfig, CfgigSampler, Refinement};
use guidance_lab::guidance::{Guidance, GuidedDenoiser};
use guidance_lab::schedule::NoiseSchedule;
use guidance_lab::solvers::{integrate_ensemble, SolverMethod, SolverRun};
use guidance_lab::experiment::initial_noise;

pub fn main() -> guidance_lab::Result<()> {
    let (target, c) = canonical_bimodal()?;
    let w = CANONICAL_BIMODAL_W;
    let base = Arc::new(target.condition(&c)?);
    let n = 2000;
    let noise = initial_noise(n, 1, 80.0, 5, false)?;

    let schedule = NoiseSchedule::karras(0.002, 80.0, 64, 7.0)?;
    let run = SolverRun::new(schedule, Arc::new(GuidedDenoiser::new(base.clone(), Guidance::Cfg { w })?), SolverMethod::Heun);
    let cfg = integrate_ensemble(&noise, &run)?;

    let config = CfgigConfig {
        w0: 1.0,
        w,
        repetitions: 8,
        total_steps: 160,
        initial_steps: 32,
        sigma_star: 0.75,
        sigma_max: 80.0,
        sigma_min: 0.002,
        rho: 7.0,
        method: SolverMethod::Heun,
        seed: 5,
        refinement: Refinement::Cfg,
        exact_flow: false,
    };
    let sampler = CfgigSampler::new(&base, config)?;
    let minor = |xs: &mut dyn Iterator<Item = f64>| xs.filter(|x| *x < 0.0).count() as f64 / n as f64;
    let chains: Vec<_> = noise.into_iter().enumerate().map(|(i, x)| sampler.refine_from(i as u64, x)).collect::<guidance_lab::Result<_>>()?;

    println!("oracle minor-mode mass {:.4}", mass_below(&target.tilt(&c, w)?, 0.0)?);
    println!("cfg                    {:.4}", minor(&mut cfg.iter().map(|f| f.state[0])));
    for r in [0, 1, 2, 4, 8] {
        println!("cfgig after {r} reps    {:.4}", minor(&mut chains.iter().map(|ch| ch.iterates[r][0])));
    }
    Ok(())
}
