//! Assign train/val/test splits with a seeded split stratified on the
//! hate label.
//!
//!     cargo run --example split

use memehead::bundle::Split;
use memehead::harness::cmd_split;
use memehead::synthetic::{separable_bundle, SyntheticSpec};

fn main() -> memehead::Result<()> {
    let spec = SyntheticSpec {
        n_train: 1000,
        n_val: 0,
        n_test: 0,
        ..Default::default()
    };
    let bundle = separable_bundle(&spec);
    let split = cmd_split(&bundle, [0.85, 0.05, 0.10], 0)?;
    for s in Split::ALL {
        let view = split.task_view("hate", s)?;
        let hateful = view.labels().iter().filter(|&&y| y == 1).count();
        println!(
            "{:<5} {:>4} records, {hateful:>3} hateful",
            s.name(),
            view.len()
        );
    }
    match cmd_split(&bundle, [0.5, 0.5, 0.5], 0) {
        Err(e) => println!("bad ratios rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
