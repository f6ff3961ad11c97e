//! Closed-form stationary variance, finite-R variance and bias over σ*.

use guidance_lab::gaussian_theory::{theory_grid, write_theory_csv};

pub fn main() -> guidance_lab::Result<()> {
    let sigma_stars = [0.05, 0.1, 0.25, 0.5, 1.0, 2.0];
    let rows = theory_grid(1.0, &[2.0], &sigma_stars, &[1, 4, 16])?;
    let csv = write_theory_csv(&rows, Vec::new())?;
    print!("{}", String::from_utf8_lossy(&csv));
    let best = rows.iter().filter(|r| r.r == 1).min_by(|a, b| a.bias.total_cmp(&b.bias)).expect("rows");
    println!("smallest R = 1 bias {:.4e} at sigma* = {}", best.bias, best.sigma_star);
    Ok(())
}
