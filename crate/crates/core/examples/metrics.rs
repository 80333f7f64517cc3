//! Accuracy, macro F1 and one-vs-rest macro AUROC on a hand-made example.
//!
//!     cargo run --example metrics

use memehead::bundle::Split;
use memehead::metrics::{argmax, macro_auroc, macro_f1, MetricsReport};

fn main() -> memehead::Result<()> {
    let scores = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.1, 0.8, 0.1],
        vec![0.3, 0.3, 0.4],
        vec![0.5, 0.4, 0.1],
        vec![0.2, 0.2, 0.6],
        vec![0.4, 0.4, 0.2],
    ];
    let labels = vec![0, 1, 2, 1, 2, 1];

    let preds: Vec<usize> = scores.iter().map(|s| argmax(s)).collect();
    println!("predictions {preds:?} (ties go to the lower class)");
    let (f1, per_class) = macro_f1(&preds, &labels, 3)?;
    println!("macro F1 {f1:.4}, per class {per_class:?}");
    println!("macro AUROC {:.4}", macro_auroc(&scores, &labels, 3)?);

    let report = MetricsReport::from_scores("stance", Split::Test, &scores, &labels, 3)?;
    println!("{}", serde_json::to_string_pretty(&report)?);

    // A class with no positives is left out of the AUROC mean.
    let only_two = vec![0, 1, 0, 1, 0, 1];
    println!(
        "AUROC with class 2 absent {:.4}",
        macro_auroc(&scores, &only_two, 3)?
    );
    Ok(())
}
