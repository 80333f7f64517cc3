//! Train the full head on a separable toy bundle, save a checkpoint and
//! evaluate it again from disk.
//!
//!     cargo run --release --example train_synthetic

use memehead::bundle::Split;
use memehead::head::HeadConfig;
use memehead::synthetic::{indicator_prompts, separable_bundle, SyntheticSpec};
use memehead::trainer::{
    evaluate, fit, load_checkpoint_for, save_checkpoint, Checkpoint, TrainConfig,
};

fn main() -> memehead::Result<()> {
    let spec = SyntheticSpec {
        noise_std: 0.3,
        ..Default::default()
    };
    let bundle = separable_bundle(&spec);
    let prompts = indicator_prompts(spec.d_embed);
    let head = HeadConfig::full(2).with_dims(spec.d_embed, 64);
    let mut train = TrainConfig::new("hate", 42);
    train.epochs = 15;

    let (params, history) = fit(&bundle, Some(&prompts), &head, &train)?;
    for e in &history.epochs {
        println!(
            "epoch {:>2}  loss {:.4}  val acc {:.3}  val auroc {:.3}",
            e.epoch, e.train_loss_mean, e.val_accuracy, e.val_macro_auroc
        );
    }
    println!("kept epoch {}", history.best_epoch);

    let path = std::env::temp_dir().join("memehead-toy.mck");
    let ck = Checkpoint {
        params,
        head_config: head.clone(),
        train_config: train,
        history,
    };
    save_checkpoint(&ck, &path)?;
    let loaded = load_checkpoint_for(&path, &head)?;
    let test = evaluate(&loaded.params, &head, &bundle, "hate", Split::Test)?;
    println!(
        "test accuracy {:.3}, macro AUROC {:.3}, macro F1 {:.3}",
        test.accuracy, test.macro_auroc, test.macro_f1
    );
    Ok(())
}
