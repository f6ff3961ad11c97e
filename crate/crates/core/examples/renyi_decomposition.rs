//! The tilted score splits into the CFG score plus a Rényi correction that
//! vanishes like σ² as the noise level goes to zero.

use guidance_lab::analytic::{canonical_bimodal, cfg_marginal_score, renyi_gradient, tilted_smoothed_score};
use guidance_lab::Point;

pub fn main() -> guidance_lab::Result<()> {
    let (target, c) = canonical_bimodal()?;
    let w = 4.0;
    let x = Point::from_element(1, -1.0);
    for &sigma in &[1.0, 0.3, 0.1, 0.03, 0.01] {
        let tilted = tilted_smoothed_score(&target, &c, w, &x, sigma)?[0];
        let cfg = cfg_marginal_score(&target, &c, w, &x, sigma)?[0];
        let renyi = renyi_gradient(&target, &c, w, &x, sigma)?[0];
        println!(
            "sigma {sigma:5.2}: tilted {tilted:+.6e} cfg {cfg:+.6e} renyi {renyi:+.6e} residual {:.1e}",
            tilted - cfg - (w - 1.0) * renyi
        );
    }
    Ok(())
}
