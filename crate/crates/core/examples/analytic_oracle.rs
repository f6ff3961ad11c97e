//! Closed-form denoisers and scores against brute-force quadrature.

use guidance_lab::analytic::{canonical_bimodal, Oracle};
use guidance_lab::Point;

pub fn main() -> guidance_lab::Result<()> {
    let (target, c) = canonical_bimodal()?;
    let oracle = Oracle::default();
    let tilt = target.tilt(&c, 4.0)?;
    let domain = target.quadrature_domain()?;
    for &(x, sigma) in &[(-2.0, 0.1), (0.0, 0.5), (1.2, 2.0)] {
        let x = Point::from_element(1, x);
        let exact = tilt.evaluate(&x, sigma)?;
        let m = oracle.smoothed_moments_log(&|p: &[f64]| tilt.log_density(&Point::from_column_slice(p)).unwrap(), &domain, &x, sigma)?;
        println!(
            "x = {:5.2} sigma = {sigma:4.2}: denoiser {:+.12} oracle {:+.12}  score {:+.10} oracle {:+.10}",
            x[0],
            exact.denoiser[0],
            m.first()[0] / m.mass(),
            exact.score[0],
            m.score(&x, sigma)[0],
        );
    }
    Ok(())
}
