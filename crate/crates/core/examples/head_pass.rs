//! Build heads from toggles, count their parameters and run one forward and
//! backward pass by hand.
//!
//!     cargo run --example head_pass

use memehead::head::{backward, count_params, forward, init_params, HeadConfig};
use memehead::numerics::softmax_ce_loss;

fn main() -> memehead::Result<()> {
    for n in [2, 3] {
        println!(
            "full head, {n} classes: {} parameters",
            count_params(&HeadConfig::full(n))
        );
    }
    println!(
        "baseline head: {} parameters",
        count_params(&HeadConfig::baseline(2))
    );

    let cfg = HeadConfig::full(3).with_dims(4, 8);
    for v in cfg.reachable_variants() {
        println!("  {:<20} {:>5}", v.toggle_label(), count_params(&v));
    }

    let mut plain = cfg.clone();
    plain.init_kind = memehead::head::InitKind::Random;
    let params = init_params(&plain, 1, None)?;
    let image = [0.3, -0.1, 0.8, 0.2];
    let text = [0.5, 0.4, -0.2, 0.1];
    let (logits, cache) = forward(&params, &plain, &image, &text)?;
    let (loss, dlogits) = softmax_ce_loss(&logits, 2)?;
    let grads = backward(&params, &plain, &cache, &dlogits)?;
    println!("logits {logits:.3?}, loss {loss:.4}");
    println!(
        "classifier gradient norm {:.4}",
        grads
            .classifier_weight
            .data
            .iter()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    );
    Ok(())
}
