//! Full-head gradient checks against central finite differences.
//!
//! Each check draws a head, a small batch and labels from one seed, then
//! compares the analytic gradient of the mean batch cross-entropy with
//! [`finite_diff_grad`] over every trainable scalar. Draws whose adapter relu
//! pre-activations sit within `kink_margin` of zero are redrawn: a finite
//! difference straddling the kink measures a one-sided slope, not a gradient.
//! Draws where the oracle itself is unreliable are redrawn too: the central
//! difference at `2h` must agree with the one at `h` to within the
//! tolerance, otherwise truncation error (large near small cosine feature
//! norms with a steep logit scale) would dominate the comparison.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{ClassPromptSet, PROMPT_TEMPLATE};
use crate::error::{Error, Result};
use crate::head::{backward_into, forward, init_params, HeadConfig, HeadParams, InitKind};
use crate::numerics::{finite_diff_grad, max_relative_error, softmax_ce_loss};

/// Deliberate corruption of the analytic gradient, used to prove the check
/// can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Negates the classifier-weight gradient.
    FlipClassifierSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub batch: usize,
    pub h: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub tolerance: f64,
    pub kink_margin: f64,
    pub max_redraws: usize,
    /// Half-width of the uniform jitter added to the initialized head.
    pub jitter: f64,
    pub fault: Fault,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            batch: 3,
            h: 1e-5,
            floor: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            max_redraws: 64,
            jitter: 0.1,
            fault: Fault::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub label: String,
    pub d_embed: usize,
    pub d_proj: usize,
    pub n_classes: usize,
    pub seed: u64,
    pub n_params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

struct Instance {
    params: HeadParams,
    batch: Vec<(Vec<f64>, Vec<f64>, usize)>,
    numeric: Vec<f64>,
}

fn numeric_grad(
    params: &HeadParams,
    cfg: &HeadConfig,
    batch: &[(Vec<f64>, Vec<f64>, usize)],
    h: f64,
) -> Vec<f64> {
    let mut probe = params.clone();
    finite_diff_grad(
        |flat| {
            probe.assign_flat(flat).expect("same shape");
            batch_loss(&probe, cfg, batch).unwrap_or(f64::NAN)
        },
        &params.flatten(),
        h,
    )
}

fn random_prompts(cfg: &HeadConfig, rng: &mut ChaCha8Rng) -> ClassPromptSet {
    let u = Uniform::new_inclusive(-1.0f32, 1.0);
    ClassPromptSet {
        task: "gradcheck".into(),
        prompt_template: PROMPT_TEMPLATE.into(),
        class_names: (0..cfg.n_classes).map(|c| format!("class{c}")).collect(),
        d_embed: cfg.d_embed,
        embeddings: (0..cfg.n_classes)
            .map(|_| (0..cfg.d_embed).map(|_| u.sample(rng)).collect())
            .collect(),
    }
}

fn batch_loss(
    params: &HeadParams,
    cfg: &HeadConfig,
    batch: &[(Vec<f64>, Vec<f64>, usize)],
) -> Result<f64> {
    let mut total = 0.0;
    for (img, txt, y) in batch {
        let (z, _) = forward(params, cfg, img, txt)?;
        total += softmax_ce_loss(&z, *y)?.0;
    }
    Ok(total / batch.len() as f64)
}

fn draw(cfg: &HeadConfig, seed: u64, opts: &GradCheckOptions) -> Result<Instance> {
    for attempt in 0..=opts.max_redraws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64 + 1);
        let prompts = (cfg.init_kind == InitKind::Sai).then(|| random_prompts(cfg, &mut rng));
        let mut params = init_params(cfg, rng.gen(), prompts.as_ref())?;
        let u = Uniform::new_inclusive(-1.0, 1.0);
        // Fresh heads have zero biases, so a dead hidden unit feeds an exact
        // zero into the next relu. Jitter every scalar to leave the kink.
        for t in params.tensors_mut() {
            t.iter_mut()
                .for_each(|v| *v += opts.jitter * u.sample(&mut rng));
        }
        let batch: Vec<_> = (0..opts.batch)
            .map(|_| {
                let img: Vec<f64> = (0..cfg.d_embed).map(|_| u.sample(&mut rng)).collect();
                let txt: Vec<f64> = (0..cfg.d_embed).map(|_| u.sample(&mut rng)).collect();
                (img, txt, rng.gen_range(0..cfg.n_classes))
            })
            .collect();
        let mut clear = true;
        for (img, txt, _) in &batch {
            let (_, cache) = forward(&params, cfg, img, txt)?;
            if cache.relu_margin().is_some_and(|m| m < opts.kink_margin) {
                clear = false;
                break;
            }
        }
        if !clear {
            continue;
        }
        let numeric = numeric_grad(&params, cfg, &batch, opts.h);
        let coarse = numeric_grad(&params, cfg, &batch, 2.0 * opts.h);
        if max_relative_error(&numeric, &coarse, opts.floor) < opts.tolerance {
            return Ok(Instance {
                params,
                batch,
                numeric,
            });
        }
    }
    Err(Error::Data(format!(
        "no usable draw after {} attempts",
        opts.max_redraws + 1
    )))
}

/// Checks one configuration at one seed.
pub fn check_config(
    cfg: &HeadConfig,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckResult> {
    cfg.validate()?;
    let Instance {
        params,
        batch,
        numeric,
    } = draw(cfg, seed, opts)?;

    let mut grads = params.zeros_like();
    let inv = 1.0 / batch.len() as f64;
    for (img, txt, y) in &batch {
        let (z, cache) = forward(&params, cfg, img, txt)?;
        let (_, mut dz) = softmax_ce_loss(&z, *y)?;
        dz.iter_mut().for_each(|d| *d *= inv);
        backward_into(&params, cfg, &cache, &dz, &mut grads)?;
    }
    if opts.fault == Fault::FlipClassifierSign {
        grads
            .classifier_weight
            .data
            .iter_mut()
            .for_each(|g| *g = -*g);
    }

    let analytic = grads.flatten();
    let err = max_relative_error(&analytic, &numeric, opts.floor);
    let err = if numeric.iter().any(|v| v.is_nan()) {
        f64::INFINITY
    } else {
        err
    };
    Ok(GradCheckResult {
        label: cfg.toggle_label(),
        d_embed: cfg.d_embed,
        d_proj: cfg.d_proj,
        n_classes: cfg.n_classes,
        seed,
        n_params: analytic.len(),
        max_rel_error: err,
        passed: err < opts.tolerance,
    })
}

/// Worst result per configuration over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub label: String,
    pub d_embed: usize,
    pub d_proj: usize,
    pub n_classes: usize,
    pub seeds: usize,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub passed: bool,
}

/// Runs every reachable toggle configuration of every base config over
/// `seeds`, in parallel. Summaries come back in a fixed order.
pub fn run_suite(
    bases: &[HeadConfig],
    seeds: &[u64],
    opts: &GradCheckOptions,
) -> Result<Vec<ConfigSummary>> {
    let configs: Vec<HeadConfig> = bases.iter().flat_map(|b| b.reachable_variants()).collect();
    configs
        .par_iter()
        .map(|cfg| {
            let results = seeds
                .iter()
                .map(|&s| check_config(cfg, s, opts))
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(&results))
        })
        .collect()
}

/// One summary per toggle configuration; seed `i` runs at the dimensions of
/// `bases[i % bases.len()]`, so every base is visited when there are at
/// least as many seeds as bases. The reported dimensions are those of the
/// worst seed.
pub fn run_cycled(
    bases: &[HeadConfig],
    seeds: &[u64],
    opts: &GradCheckOptions,
) -> Result<Vec<ConfigSummary>> {
    let Some(first) = bases.first() else {
        return Ok(Vec::new());
    };
    let n_variants = first.reachable_variants().len();
    (0..n_variants)
        .into_par_iter()
        .map(|v| {
            let results = seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let cfg = &bases[i % bases.len()].reachable_variants()[v];
                    check_config(cfg, s, opts)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summarize(&results))
        })
        .collect()
}

fn summarize(results: &[GradCheckResult]) -> ConfigSummary {
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("at least one seed");
    ConfigSummary {
        label: worst.label.clone(),
        d_embed: worst.d_embed,
        d_proj: worst.d_proj,
        n_classes: worst.n_classes,
        seeds: results.len(),
        max_rel_error: worst.max_rel_error,
        worst_seed: worst.seed,
        passed: results.iter().all(|r| r.passed),
    }
}

/// Base configs over the desk grid `d_embed x d_proj x n_classes`, using the
/// default scalars (alpha, sigma, reduction).
pub fn desk_grid(d_embeds: &[usize], d_projs: &[usize], n_classes: &[usize]) -> Vec<HeadConfig> {
    let mut out = Vec::new();
    for &de in d_embeds {
        for &dp in d_projs {
            for &n in n_classes {
                out.push(HeadConfig::full(n).with_dims(de, dp));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_model_passes() {
        let cfg = HeadConfig::full(3).with_dims(3, 4);
        let r = check_config(&cfg, 0, &GradCheckOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn flipped_sign_is_caught() {
        let cfg = HeadConfig::full(2).with_dims(3, 4);
        let opts = GradCheckOptions {
            fault: Fault::FlipClassifierSign,
            ..Default::default()
        };
        let r = check_config(&cfg, 0, &opts).unwrap();
        assert!(!r.passed);
        assert_eq!(r.label, "pl+fa+mul+cos+sai");
    }

    #[test]
    fn bottleneck_of_one() {
        let cfg = HeadConfig::full(2).with_dims(3, 4);
        assert_eq!(cfg.d_bottleneck(), 1);
        for s in 0..5 {
            assert!(
                check_config(&cfg, s, &GradCheckOptions::default())
                    .unwrap()
                    .passed
            );
        }
    }
}
