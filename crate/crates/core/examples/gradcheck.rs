//! Compare analytic gradients with central finite differences for every
//! toggle combination, then show that a corrupted gradient is caught.
//!
//!     cargo run --release --example gradcheck

use memehead::gradcheck::{check_config, desk_grid, run_suite, Fault, GradCheckOptions};
use memehead::head::HeadConfig;

fn main() -> memehead::Result<()> {
    let opts = GradCheckOptions::default();
    let bases = desk_grid(&[3], &[4], &[2, 3]);
    let seeds: Vec<u64> = (0..5).collect();
    for s in run_suite(&bases, &seeds, &opts)? {
        println!(
            "{:<4} {:<20} n={} max rel err {:.2e}",
            if s.passed { "ok" } else { "FAIL" },
            s.label,
            s.n_classes,
            s.max_rel_error
        );
    }

    let faulty = GradCheckOptions {
        fault: Fault::FlipClassifierSign,
        ..opts
    };
    let r = check_config(&HeadConfig::full(2).with_dims(3, 4), 0, &faulty)?;
    println!(
        "flipped classifier gradient: passed={} (max rel err {:.2})",
        r.passed, r.max_rel_error
    );
    Ok(())
}
