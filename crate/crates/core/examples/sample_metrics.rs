//! Wasserstein-2, KS, moments and precision/recall/density/coverage between
//! two Gaussian clouds.

use guidance_lab::metrics::{ks_p_value, ks_statistic, moments, prdc, wasserstein2_1d, SampleSet, DEFAULT_NEIGHBORS};
use guidance_lab::rng::{normal_vector, stream};

pub fn main() -> guidance_lab::Result<()> {
    let n = 5000;
    let draw = |shift: f64, seed: u64| -> Vec<f64> {
        normal_vector(&mut stream(seed, 0, 0, 0), n).iter().map(|z| z + shift).collect()
    };
    let a = SampleSet::from_scalars("a", &draw(0.0, 1))?;
    let b = SampleSet::from_scalars("b", &draw(0.5, 2))?;
    let d = ks_statistic(&a, &b)?;
    println!("W2 {:.4}", wasserstein2_1d(&a, &b)?);
    println!("KS {d:.4} (p = {:.2e})", ks_p_value(d, n, n));
    println!("moments of a {:?}", moments(&a.column(0), 4)?);
    let p = prdc(&a, &b, DEFAULT_NEIGHBORS)?;
    println!("precision {:.3} recall {:.3} density {:.3} coverage {:.3}", p.precision, p.recall, p.density, p.coverage);
    Ok(())
}
