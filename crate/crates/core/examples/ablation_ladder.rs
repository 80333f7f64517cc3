//! Run the five-row ablation ladder over three seeds on a noisy toy bundle
//! and print the table in percent.
//!
//!     cargo run --release --example ablation_ladder

use memehead::bundle::{write_bundle, write_prompts};
use memehead::harness::{cmd_ablate, ExperimentConfig};
use memehead::synthetic::{indicator_prompts, separable_bundle, SyntheticSpec};

fn main() -> memehead::Result<()> {
    let dir = std::env::temp_dir().join("memehead-ablation");
    std::fs::create_dir_all(&dir)?;
    let spec = SyntheticSpec {
        noise_std: 0.8,
        ..Default::default()
    };
    write_bundle(&separable_bundle(&spec), dir.join("toy.meb"))?;
    write_prompts(&indicator_prompts(spec.d_embed), dir.join("toy.mcp"))?;

    let mut cfg = ExperimentConfig::new(dir.join("toy.meb"), dir.join("out"));
    cfg.prompts_path = Some(dir.join("toy.mcp"));
    cfg.head.d_proj = Some(32);
    cfg.train.epochs = Some(5);
    cfg.train.lr = Some(1e-3);

    let table = cmd_ablate(&cfg)?;
    print!("{}", table.display());
    println!("csv and json written to {}", cfg.output_dir.display());
    Ok(())
}
