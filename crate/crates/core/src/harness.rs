//! Experiment drivers behind the `memehead` command line: multi-seed
//! training, evaluation, the five-row ablation ladder, gradient checks and
//! seeded split assignment.
//!
//! Every output is plain JSON (or CSV for the ablation table) with metrics
//! stored as fractions in `[0, 1]`; scaling to percentages happens only when
//! printing. Aggregates use the population standard deviation over seeds.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{read_bundle, read_prompts, ClassPromptSet, EmbeddingBundle, Split};
use crate::error::{Error, Result};
use crate::gradcheck::{self, ConfigSummary, Fault, GradCheckOptions};
use crate::head::{ClassifierKind, FusionKind, HeadConfig, InitKind};
use crate::metrics::MetricsReport;
use crate::trainer::{evaluate, fit, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};

/// Optional overrides of the head defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadOverrides {
    pub d_proj: Option<usize>,
    pub adapter_reduction: Option<usize>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub use_projection: Option<bool>,
    pub use_adapters: Option<bool>,
    pub classifier: Option<ClassifierKind>,
    pub init: Option<InitKind>,
    pub fusion: Option<FusionKind>,
}

impl HeadOverrides {
    pub fn apply(&self, mut c: HeadConfig) -> HeadConfig {
        if let Some(v) = self.d_proj {
            c.d_proj = v;
        }
        if let Some(v) = self.adapter_reduction {
            c.adapter_reduction = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.sigma {
            c.sigma = v;
        }
        if let Some(v) = self.use_projection {
            c.use_projection = v;
        }
        if let Some(v) = self.use_adapters {
            c.use_adapters = v;
        }
        if let Some(v) = self.classifier {
            c.classifier_kind = v;
        }
        if let Some(v) = self.init {
            c.init_kind = v;
        }
        if let Some(v) = self.fusion {
            c.fusion_kind = v;
        }
        c
    }

    /// Overrides that only touch dimensions and scalars, for the ablation
    /// ladder where the toggles belong to each row.
    pub fn dims_only(&self) -> Self {
        Self {
            d_proj: self.d_proj,
            adapter_reduction: self.adapter_reduction,
            alpha: self.alpha,
            sigma: self.sigma,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOverrides {
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
}

impl TrainOverrides {
    pub fn apply(&self, mut c: TrainConfig) -> TrainConfig {
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub bundle_path: PathBuf,
    pub prompts_path: Option<PathBuf>,
    pub task: String,
    pub head: HeadOverrides,
    pub train: TrainOverrides,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(bundle_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            bundle_path: bundle_path.into(),
            prompts_path: None,
            task: "hate".into(),
            head: HeadOverrides::default(),
            train: TrainOverrides::default(),
            seeds: vec![0, 1, 2],
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let distinct: HashSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        Ok(())
    }
}

/// Flat key-value settings file (TOML syntax). Keys mirror the long
/// command-line flags with `-` written as `_`; flags given on the command
/// line win over the file.
///
/// ```toml
/// bundle = "memes.meb"
/// prompts = "hate.mcp"
/// task = "hate"
/// seeds = [0, 1, 2]
/// out = "runs/hate"
/// lr = 1e-4
/// epochs = 10
/// d_proj = 1024
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub bundle: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub task: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub head: HeadOverrides,
    #[serde(flatten)]
    pub train: TrainOverrides,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub std: f64,
}

impl MetricStats {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub accuracy: MetricStats,
    pub macro_auroc: MetricStats,
    pub macro_f1: MetricStats,
}

impl SummaryStats {
    pub fn of(reports: &[&MetricsReport]) -> Self {
        let pick = |f: fn(&MetricsReport) -> f64| {
            MetricStats::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        Self {
            accuracy: pick(|r| r.accuracy),
            macro_auroc: pick(|r| r.macro_auroc),
            macro_f1: pick(|r| r.macro_f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub task: String,
    pub head_config: HeadConfig,
    pub train_config: TrainConfig,
    pub best_epoch: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub task: String,
    pub seeds: Vec<u64>,
    pub val: SummaryStats,
    pub test: SummaryStats,
}

impl AggregateReport {
    pub fn from_seeds(task: &str, reports: &[SeedReport]) -> Self {
        Self {
            task: task.to_string(),
            seeds: reports.iter().map(|r| r.seed).collect(),
            val: SummaryStats::of(&reports.iter().map(|r| &r.val).collect::<Vec<_>>()),
            test: SummaryStats::of(&reports.iter().map(|r| &r.test).collect::<Vec<_>>()),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

struct Prepared {
    bundle: EmbeddingBundle,
    prompts: Option<ClassPromptSet>,
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let bundle = read_bundle(&cfg.bundle_path)?;
    bundle.task(&cfg.task)?;
    for split in Split::ALL {
        if bundle.task_view(&cfg.task, split)?.is_empty() {
            return Err(Error::Data(format!(
                "task {} has no {split} samples",
                cfg.task
            )));
        }
    }
    let prompts = cfg.prompts_path.as_ref().map(read_prompts).transpose()?;
    Ok(Prepared { bundle, prompts })
}

fn base_head(bundle: &EmbeddingBundle, task: &str) -> Result<HeadConfig> {
    let n = bundle.task(task)?.num_classes;
    let mut c = HeadConfig::full(n);
    c.d_embed = bundle.d_embed;
    Ok(c)
}

fn check_runnable(head: &HeadConfig, prompts: Option<&ClassPromptSet>) -> Result<()> {
    head.validate()?;
    if head.init_kind == InitKind::Sai {
        let p = prompts.ok_or_else(|| {
            Error::Config("semantic init requested but no --prompts file given".into())
        })?;
        if p.num_classes() != head.n_classes || p.d_embed != head.d_embed {
            return Err(Error::Config(format!(
                "prompt file is {}x{}, task needs {}x{}",
                p.num_classes(),
                p.d_embed,
                head.n_classes,
                head.d_embed
            )));
        }
    }
    Ok(())
}

fn run_seed(
    bundle: &EmbeddingBundle,
    prompts: Option<&ClassPromptSet>,
    head: &HeadConfig,
    train: &TrainConfig,
) -> Result<(Checkpoint, SeedReport)> {
    let (params, history) = fit(bundle, prompts, head, train)?;
    let val = evaluate(&params, head, bundle, &train.task, Split::Val)?;
    let test = evaluate(&params, head, bundle, &train.task, Split::Test)?;
    let report = SeedReport {
        seed: train.seed,
        task: train.task.clone(),
        head_config: head.clone(),
        train_config: train.clone(),
        best_epoch: history.best_epoch,
        val,
        test,
    };
    let ck = Checkpoint {
        params,
        head_config: head.clone(),
        train_config: train.clone(),
        history,
    };
    Ok((ck, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub seed_reports: Vec<SeedReport>,
    pub aggregate: AggregateReport,
    pub files: Vec<PathBuf>,
}

/// Trains one head per seed; writes `seed{N}.mck`, `seed{N}.json` and
/// `aggregate.json` under the output directory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let Prepared { bundle, prompts } = prepare(cfg)?;
    let head = cfg.head.apply(base_head(&bundle, &cfg.task)?);
    check_runnable(&head, prompts.as_ref())?;
    let template = cfg.train.apply(TrainConfig::new(&cfg.task, 0));
    template.validate()?;

    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let train = TrainConfig {
            seed,
            ..template.clone()
        };
        runs.push(run_seed(&bundle, prompts.as_ref(), &head, &train)?);
    }

    fs::create_dir_all(&cfg.output_dir)?;
    let mut files = Vec::new();
    let mut reports = Vec::new();
    for (ck, report) in runs {
        let ck_path = cfg.output_dir.join(format!("seed{}.mck", report.seed));
        save_checkpoint(&ck, &ck_path)?;
        let rep_path = cfg.output_dir.join(format!("seed{}.json", report.seed));
        write_json(&rep_path, &report)?;
        files.extend([ck_path, rep_path]);
        reports.push(report);
    }
    let aggregate = AggregateReport::from_seeds(&cfg.task, &reports);
    let agg_path = cfg.output_dir.join("aggregate.json");
    write_json(&agg_path, &aggregate)?;
    files.push(agg_path);
    Ok(TrainOutcome {
        seed_reports: reports,
        aggregate,
        files,
    })
}

/// Evaluates a saved checkpoint on one split of a bundle.
pub fn cmd_eval(
    checkpoint: impl AsRef<Path>,
    bundle_path: impl AsRef<Path>,
    task: Option<&str>,
    split: Split,
    out: Option<&Path>,
) -> Result<MetricsReport> {
    let ck = load_checkpoint(checkpoint)?;
    let bundle = read_bundle(bundle_path)?;
    let task = task.unwrap_or(&ck.train_config.task);
    let report = evaluate(&ck.params, &ck.head_config, &bundle, task, split)?;
    if let Some(out) = out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        write_json(out, &report)?;
    }
    Ok(report)
}

pub const ABLATION_ROWS: [&str; 5] = ["CLIP", "+PL", "+FA", "+CC", "+SAI"];

/// The ladder: concatenated raw embeddings with a linear classifier, then
/// projections with product fusion, adapters, the cosine classifier (with
/// its pre-output layer), and finally semantic initialization.
pub fn ablation_variants(base: &HeadConfig) -> Vec<(&'static str, HeadConfig)> {
    let clip = HeadConfig {
        use_projection: false,
        use_adapters: false,
        classifier_kind: ClassifierKind::Linear,
        init_kind: InitKind::Random,
        fusion_kind: FusionKind::Concat,
        ..base.clone()
    };
    let pl = HeadConfig {
        use_projection: true,
        fusion_kind: FusionKind::Multiply,
        ..clip.clone()
    };
    let fa = HeadConfig {
        use_adapters: true,
        ..pl.clone()
    };
    let cc = HeadConfig {
        classifier_kind: ClassifierKind::Cosine,
        ..fa.clone()
    };
    let sai = HeadConfig {
        init_kind: InitKind::Sai,
        ..cc.clone()
    };
    ABLATION_ROWS
        .into_iter()
        .zip([clip, pl, fa, cc, sai])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant_name: String,
    pub toggles: String,
    pub head_config: HeadConfig,
    /// Test-split metrics per seed, in seed order.
    pub per_seed: Vec<MetricsReport>,
    pub metrics_mean: BTreeMap<String, f64>,
    pub metrics_std: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub task: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "variant,toggles,accuracy_mean,accuracy_std,macro_auroc_mean,macro_auroc_std,macro_f1_mean,macro_f1_std\n",
        );
        for r in &self.rows {
            s.push_str(&format!("{},{}", r.variant_name, r.toggles));
            for k in ["accuracy", "macro_auroc", "macro_f1"] {
                s.push_str(&format!(",{},{}", r.metrics_mean[k], r.metrics_std[k]));
            }
            s.push('\n');
        }
        s
    }

    /// Percentages, as printed tables show them.
    pub fn display(&self) -> String {
        let mut s = format!(
            "{:<6} {:<22} {:>15} {:>15} {:>15}\n",
            "row", "toggles", "Acc", "AUROC", "F1"
        );
        for r in &self.rows {
            s.push_str(&format!("{:<6} {:<22}", r.variant_name, r.toggles));
            for k in ["accuracy", "macro_auroc", "macro_f1"] {
                let cell = format!(
                    "{:.2}±{:.2}",
                    100.0 * r.metrics_mean[k],
                    100.0 * r.metrics_std[k]
                );
                s.push_str(&format!(" {cell:>15}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs the five ablation rows over every seed and writes `ablation.json`
/// and `ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<AblationTable> {
    let Prepared { bundle, prompts } = prepare(cfg)?;
    let base = cfg.head.dims_only().apply(base_head(&bundle, &cfg.task)?);
    let variants = ablation_variants(&base);
    for (_, head) in &variants {
        check_runnable(head, prompts.as_ref())?;
    }
    let template = cfg.train.apply(TrainConfig::new(&cfg.task, 0));
    template.validate()?;

    let mut rows = Vec::with_capacity(variants.len());
    for (name, head) in variants {
        let mut per_seed = Vec::with_capacity(cfg.seeds.len());
        for &seed in &cfg.seeds {
            let train = TrainConfig {
                seed,
                ..template.clone()
            };
            let (_, report) = run_seed(&bundle, prompts.as_ref(), &head, &train)?;
            per_seed.push(report.test);
        }
        let stats = SummaryStats::of(&per_seed.iter().collect::<Vec<_>>());
        let entries = [
            ("accuracy", stats.accuracy),
            ("macro_auroc", stats.macro_auroc),
            ("macro_f1", stats.macro_f1),
        ];
        rows.push(AblationRow {
            variant_name: name.to_string(),
            toggles: head.toggle_label(),
            head_config: head,
            per_seed,
            metrics_mean: entries
                .iter()
                .map(|(k, s)| (k.to_string(), s.mean))
                .collect(),
            metrics_std: entries
                .iter()
                .map(|(k, s)| (k.to_string(), s.std))
                .collect(),
        });
    }
    let table = AblationTable {
        task: cfg.task.clone(),
        seeds: cfg.seeds.clone(),
        rows,
    };
    fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("ablation.json"), &table)?;
    fs::write(cfg.output_dir.join("ablation.csv"), table.to_csv())?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckDims {
    pub d_embeds: Vec<usize>,
    pub d_projs: Vec<usize>,
    pub n_classes: Vec<usize>,
    pub adapter_reduction: usize,
    /// Visit one grid point per seed instead of the full cross product.
    pub cycle: bool,
}

impl Default for GradcheckDims {
    fn default() -> Self {
        Self {
            d_embeds: vec![3, 8],
            d_projs: vec![4, 16],
            n_classes: vec![2, 4],
            adapter_reduction: 4,
            cycle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub configs: Vec<ConfigSummary>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &ConfigSummary> {
        self.configs.iter().filter(|c| !c.passed)
    }
}

pub fn cmd_gradcheck(dims: &GradcheckDims, seeds: &[u64], fault: Fault) -> Result<GradcheckReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut bases = gradcheck::desk_grid(&dims.d_embeds, &dims.d_projs, &dims.n_classes);
    for b in &mut bases {
        b.adapter_reduction = dims.adapter_reduction;
        b.validate()?;
    }
    let opts = GradCheckOptions {
        fault,
        ..Default::default()
    };
    let configs = if dims.cycle {
        gradcheck::run_cycled(&bases, seeds, &opts)?
    } else {
        gradcheck::run_suite(&bases, seeds, &opts)?
    };
    Ok(GradcheckReport {
        tolerance: opts.tolerance,
        passed: configs.iter().all(|c| c.passed),
        configs,
    })
}

/// Seeded split assignment stratified on the `hate` label.
///
/// Within each stratum (records sorted by id, then shuffled with ChaCha8
/// stream `stratum + 1` of `seed`) the first `round(r_train * n)` records
/// become train, the next `round(r_val * n)` val, the rest test.
pub fn cmd_split(bundle: &EmbeddingBundle, ratios: [f64; 3], seed: u64) -> Result<EmbeddingBundle> {
    let valid = ratios.iter().all(|r| r.is_finite() && *r >= 0.0);
    if !valid || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    if bundle.records.is_empty() {
        return Err(Error::Data("cannot split an empty bundle".into()));
    }
    let hate = bundle.tasks.iter().position(|t| t.name == "hate");
    let mut strata: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, r) in bundle.records.iter().enumerate() {
        let key = hate.and_then(|h| r.labels[h]).map_or(-1, i32::from);
        strata.entry(key).or_default().push(i);
    }
    let needed = ratios.iter().filter(|&&r| r > 0.0).count();
    let mut out = bundle.clone();
    for (s, (key, mut members)) in strata.into_iter().enumerate() {
        if members.len() < needed {
            return Err(Error::Data(format!(
                "stratum hate={key} has {} records, fewer than the {needed} non-empty splits",
                members.len()
            )));
        }
        members.sort_by(|&a, &b| bundle.records[a].id.cmp(&bundle.records[b].id));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64 + 1);
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let n_train = (ratios[0] * n).round() as usize;
        let n_val = ((ratios[1] * n).round() as usize).min(members.len() - n_train);
        for (k, &i) in members.iter().enumerate() {
            out.records[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
