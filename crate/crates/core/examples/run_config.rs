//! Runs a declarative experiment, then regenerates it from its manifest.

use std::path::Path;

use guidance_lab::experiment::{replay, run, ExperimentConfig};

pub fn main() -> guidance_lab::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/gaussian_cfg.toml");
    let config = ExperimentConfig::from_path(&path)?;
    let out = std::env::temp_dir().join(format!("guidance-lab-run-{}", std::process::id()));
    let result = run(&config, &out)?;
    println!("{}", result.report.to_json());
    let again = out.join("replay");
    let check = replay(&out.join("manifest.json"), &again)?;
    println!("replay reproduced all {} artifacts: {}", check.manifest.artifacts.len(), check.reproduced());
    std::fs::remove_dir_all(&out)?;
    Ok(())
}
