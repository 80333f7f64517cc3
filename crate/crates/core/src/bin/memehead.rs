use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memehead::bundle::{read_bundle, write_bundle, write_prompts, Split};
use memehead::error::{Error, Result};
use memehead::gradcheck::Fault;
use memehead::harness::{
    cmd_ablate, cmd_eval, cmd_gradcheck, cmd_split, ConfigFile, ExperimentConfig, GradcheckDims,
    HeadOverrides, TrainOverrides,
};
use memehead::head::{ClassifierKind, FusionKind, InitKind};
use memehead::synthetic::{indicator_prompts, separable_bundle, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "memehead",
    version,
    about = "Train and evaluate meme classification heads over frozen embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one head per seed and write checkpoints plus reports.
    Train(RunArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Run the five-row ablation ladder.
    Ablate(RunArgs),
    /// Compare analytic and finite-difference gradients over all toggles.
    Gradcheck(GradcheckArgs),
    /// Reassign splits, stratified on the hate label.
    Split(SplitArgs),
    /// Write a small separable bundle and matching prompt file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Key-value settings file; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    /// Single seed, shorthand for --seeds N.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    head: HeadFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct HeadFlags {
    #[arg(long)]
    d_proj: Option<usize>,
    #[arg(long)]
    adapter_reduction: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    use_projection: Option<bool>,
    #[arg(long)]
    use_adapters: Option<bool>,
    #[arg(long, value_parser = parse_classifier)]
    classifier: Option<ClassifierKind>,
    #[arg(long, value_parser = parse_init)]
    init: Option<InitKind>,
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionKind>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    /// Defaults to the task the checkpoint was trained on.
    #[arg(long)]
    task: Option<String>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Write the report JSON here as well as printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "3,8")]
    d_embed: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "4,16")]
    d_proj: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    n_classes: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    adapter_reduction: usize,
    /// Number of seeds, 0..N.
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    /// One grid point per seed instead of the full cross product.
    #[arg(long)]
    cycle: bool,
    /// Negate the classifier gradient to confirm the check can fail.
    #[arg(long)]
    inject_fault: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.85,0.05,0.10")]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    d_embed: usize,
    #[arg(long, default_value_t = 200)]
    n_train: usize,
    #[arg(long, default_value_t = 40)]
    n_val: usize,
    #[arg(long, default_value_t = 40)]
    n_test: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    prompts_out: Option<PathBuf>,
}

fn parse_classifier(s: &str) -> std::result::Result<ClassifierKind, String> {
    match s {
        "linear" => Ok(ClassifierKind::Linear),
        "cosine" => Ok(ClassifierKind::Cosine),
        _ => Err(format!("expected linear or cosine, got {s}")),
    }
}

fn parse_init(s: &str) -> std::result::Result<InitKind, String> {
    match s {
        "random" => Ok(InitKind::Random),
        "sai" => Ok(InitKind::Sai),
        _ => Err(format!("expected random or sai, got {s}")),
    }
}

fn parse_fusion(s: &str) -> std::result::Result<FusionKind, String> {
    match s {
        "multiply" => Ok(FusionKind::Multiply),
        "concat" => Ok(FusionKind::Concat),
        _ => Err(format!("expected multiply or concat, got {s}")),
    }
}

fn merge<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

impl RunArgs {
    fn resolve(self) -> Result<ExperimentConfig> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let bundle = merge(self.bundle, file.bundle)
            .ok_or_else(|| Error::Config("--bundle is required".into()))?;
        let out = merge(self.out, file.out).unwrap_or_else(|| PathBuf::from("runs"));
        let mut cfg = ExperimentConfig::new(bundle, out);
        cfg.prompts_path = merge(self.prompts, file.prompts);
        if let Some(t) = merge(self.task, file.task) {
            cfg.task = t;
        }
        if let Some(s) = merge(self.seeds.or(self.seed.map(|s| vec![s])), file.seeds) {
            cfg.seeds = s;
        }
        let (h, fh) = (self.head, file.head);
        cfg.head = HeadOverrides {
            d_proj: merge(h.d_proj, fh.d_proj),
            adapter_reduction: merge(h.adapter_reduction, fh.adapter_reduction),
            alpha: merge(h.alpha, fh.alpha),
            sigma: merge(h.sigma, fh.sigma),
            use_projection: merge(h.use_projection, fh.use_projection),
            use_adapters: merge(h.use_adapters, fh.use_adapters),
            classifier: merge(h.classifier, fh.classifier),
            init: merge(h.init, fh.init),
            fusion: merge(h.fusion, fh.fusion),
        };
        let (t, ft) = (self.train, file.train);
        cfg.train = TrainOverrides {
            lr: merge(t.lr, ft.lr),
            batch_size: merge(t.batch_size, ft.batch_size),
            epochs: merge(t.epochs, ft.epochs),
        };
        Ok(cfg)
    }
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let outcome = memehead::harness::cmd_train(&cfg)?;
            for r in &outcome.seed_reports {
                println!(
                    "seed {:>4}  best epoch {:>3}  test acc {}  auroc {}  f1 {}",
                    r.seed,
                    r.best_epoch,
                    pct(r.test.accuracy),
                    pct(r.test.macro_auroc),
                    pct(r.test.macro_f1)
                );
            }
            let t = &outcome.aggregate.test;
            println!(
                "test mean±std  acc {}±{}  auroc {}±{}  f1 {}±{}",
                pct(t.accuracy.mean),
                pct(t.accuracy.std),
                pct(t.macro_auroc.mean),
                pct(t.macro_auroc.std),
                pct(t.macro_f1.mean),
                pct(t.macro_f1.std)
            );
            println!(
                "wrote {} files under {}",
                outcome.files.len(),
                cfg.output_dir.display()
            );
            Ok(true)
        }
        Command::Eval(args) => {
            let r = cmd_eval(
                &args.checkpoint,
                &args.bundle,
                args.task.as_deref(),
                args.split,
                args.out.as_deref(),
            )?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(true)
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            let table = cmd_ablate(&cfg)?;
            print!("{}", table.display());
            Ok(true)
        }
        Command::Gradcheck(args) => {
            let dims = GradcheckDims {
                d_embeds: args.d_embed,
                d_projs: args.d_proj,
                n_classes: args.n_classes,
                adapter_reduction: args.adapter_reduction,
                cycle: args.cycle,
            };
            let seeds: Vec<u64> = (0..args.seeds).collect();
            let fault = if args.inject_fault {
                Fault::FlipClassifierSign
            } else {
                Fault::None
            };
            let report = cmd_gradcheck(&dims, &seeds, fault)?;
            for c in &report.configs {
                println!(
                    "{:<4} {:<20} d_embed={:<3} d_proj={:<3} n={:<2} max_rel_err={:.3e} (seed {})",
                    if c.passed { "ok" } else { "FAIL" },
                    c.label,
                    c.d_embed,
                    c.d_proj,
                    c.n_classes,
                    c.max_rel_error,
                    c.worst_seed
                );
            }
            if let Some(out) = &args.out {
                std::fs::write(out, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            for c in report.failures() {
                eprintln!(
                    "gradient check failed: {} (d_embed={}, d_proj={}, n={})",
                    c.label, c.d_embed, c.d_proj, c.n_classes
                );
            }
            Ok(report.passed)
        }
        Command::Split(args) => {
            let ratios: [f64; 3] = args
                .ratios
                .as_slice()
                .try_into()
                .map_err(|_| Error::Config("--ratios takes exactly three values".into()))?;
            let bundle = read_bundle(&args.bundle)?;
            let split = cmd_split(&bundle, ratios, args.seed)?;
            write_bundle(&split, &args.out)?;
            for s in Split::ALL {
                let n = split.records.iter().filter(|r| r.split == s).count();
                println!("{s}: {n}");
            }
            Ok(true)
        }
        Command::Synth(args) => {
            let spec = SyntheticSpec {
                d_embed: args.d_embed,
                n_train: args.n_train,
                n_val: args.n_val,
                n_test: args.n_test,
                noise_std: args.noise,
                seed: args.seed,
            };
            if spec.d_embed < 2 || !spec.noise_std.is_finite() || spec.noise_std < 0.0 {
                return Err(Error::Config(
                    "need d_embed >= 2 and a non-negative noise".into(),
                ));
            }
            write_bundle(&separable_bundle(&spec), &args.out)?;
            if let Some(p) = &args.prompts_out {
                write_prompts(&indicator_prompts(spec.d_embed), p)?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
