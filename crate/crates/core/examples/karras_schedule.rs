//! Karras noise levels for a full run and for a Gibbs refinement restart.

use guidance_lab::schedule::{sub_schedule, NoiseSchedule};

pub fn main() -> guidance_lab::Result<()> {
    let full = NoiseSchedule::karras(0.002, 80.0, 12, 7.0)?;
    println!("full run: {}", full.to_json());
    let restart = sub_schedule(0.5, 6, full.sigma_min(), 7.0)?;
    println!("restart at 0.5: {}", restart.to_json());
    for (from, to) in restart.transitions() {
        println!("{from:>10.5} -> {to:<10.5} ratio {:.4}", to / from);
    }
    Ok(())
}
