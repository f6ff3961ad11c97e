//! Exact-flow refinement chains on the scalar Gaussian case: the variance
//! after r repetitions follows the closed-form recursion.

use guidance_lab::analytic::{AnalyticTarget, Context};
use guidance_lab::cfgig::{CfgigConfig, CfgigSampler, Refinement};
use guidance_lab::gaussian_theory::{finite_r_variance, stationary_variance, tilted_variance};
use guidance_lab::solvers::SolverMethod;

pub fn main() -> guidance_lab::Result<()> {
    let target = AnalyticTarget::gaussian_case(1.0)?.condition(&Context::scalar(0.0))?;
    let config = CfgigConfig {
        w0: 1.0,
        w: 2.0,
        repetitions: 5,
        total_steps: 60,
        initial_steps: 20,
        sigma_star: 0.5,
        sigma_max: 80.0,
        sigma_min: 0.002,
        rho: 7.0,
        method: SolverMethod::Heun,
        seed: 1,
        refinement: Refinement::Cfg,
        exact_flow: true,
    };
    let chains = CfgigSampler::new(&target, config)?.sample_ensemble(20_000)?;
    println!("V(w) = {:.6}  V_inf = {:.6}", tilted_variance(1.0, 2.0), stationary_variance(1.0, 2.0, 0.5)?);
    for r in 0..=5 {
        let xs: Vec<f64> = chains.iter().map(|c| c.iterates[r][0]).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        println!("r = {r}: empirical {var:.5} closed form {:.5}", finite_r_variance(1.0, 2.0, 0.5, r as u32)?);
    }
    Ok(())
}
