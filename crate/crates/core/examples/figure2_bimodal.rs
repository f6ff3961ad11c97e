//! CFG and ideal-denoiser flows plus refinement on the bimodal target, from
//! shared initial noise.

use guidance_lab::experiment::{figure2_data, Figure2Config};

pub fn main() -> guidance_lab::Result<()> {
    let config = Figure2Config { chains: 400, reference: 4000, trajectories: false, stratified: true, ..Default::default() };
    let data = figure2_data(&config)?;
    println!("{}", serde_json::to_string_pretty(&data.summary).expect("summary serializes"));
    Ok(())
}
