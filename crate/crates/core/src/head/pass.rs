//! Forward and reverse passes of the head.
//!
//! Per modality: optional projection, optional residual adapter
//! `alpha * A(v) + (1 - alpha) * v`. The two branches are fused by an
//! element-wise product (or concatenation for the baseline), passed through
//! the pre-output affine on the cosine path, and classified.

use super::config::{ClassifierKind, FusionKind, HeadConfig};
use super::params::{Adapter, Affine, HeadParams};
use crate::error::{Error, Result};
use crate::numerics::{
    affine_backward, cosine_logits, cosine_logits_backward, relu, relu_backward,
};

/// The parts of a config that determine tensor shapes and the pass itself.
#[derive(Debug, Clone, PartialEq)]
struct Signature {
    d_embed: usize,
    d_proj: usize,
    n_classes: usize,
    use_projection: bool,
    use_adapters: bool,
    classifier_kind: ClassifierKind,
    fusion_kind: FusionKind,
    alpha: f64,
    sigma: f64,
    eps: f64,
}

impl Signature {
    fn of(c: &HeadConfig) -> Self {
        Self {
            d_embed: c.d_embed,
            d_proj: c.d_proj,
            n_classes: c.n_classes,
            use_projection: c.use_projection,
            use_adapters: c.use_adapters,
            classifier_kind: c.classifier_kind,
            fusion_kind: c.fusion_kind,
            alpha: c.alpha,
            sigma: c.sigma,
            eps: c.eps,
        }
    }
}

#[derive(Debug, Clone)]
struct AdapterCache {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    up_pre: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BranchCache {
    input: Vec<f64>,
    projected: Vec<f64>,
    adapter: Option<AdapterCache>,
    out: Vec<f64>,
}

/// Activations recorded by [`forward`] for the matching [`backward`] call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    signature: Signature,
    image: BranchCache,
    text: BranchCache,
    fused: Vec<f64>,
    features: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardCache {
    pub fn fused(&self) -> &[f64] {
        &self.fused
    }

    /// Smallest |pre-activation| over every relu in the adapters, or `None`
    /// when the head has no adapters.
    pub fn relu_margin(&self) -> Option<f64> {
        [&self.image.adapter, &self.text.adapter]
            .into_iter()
            .flatten()
            .flat_map(|a| a.hidden_pre.iter().chain(&a.up_pre))
            .map(|v| v.abs())
            .reduce(f64::min)
    }
}

fn check_finite(v: &[f64], stage: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(stage.to_string()))
    }
}

fn branch_forward(
    x: &[f64],
    proj: Option<&Affine>,
    adapter: Option<&Adapter>,
    alpha: f64,
    name: &str,
) -> Result<BranchCache> {
    let projected = match proj {
        Some(p) => {
            let v = p.forward(x)?;
            check_finite(&v, &format!("{name} projection"))?;
            v
        }
        None => x.to_vec(),
    };
    let (adapter, out) = match adapter {
        Some(a) => {
            let hidden_pre = a.down.forward(&projected)?;
            let hidden = relu(&hidden_pre);
            let up_pre = a.up.forward(&hidden)?;
            let out: Vec<f64> = up_pre
                .iter()
                .zip(&projected)
                .map(|(&u, &v)| alpha * u.max(0.0) + (1.0 - alpha) * v)
                .collect();
            check_finite(&out, &format!("{name} adapter"))?;
            let cache = AdapterCache {
                hidden_pre,
                hidden,
                up_pre,
            };
            (Some(cache), out)
        }
        None => (None, projected.clone()),
    };
    Ok(BranchCache {
        input: x.to_vec(),
        projected,
        adapter,
        out,
    })
}

/// Runs the head on one image/text embedding pair.
pub fn forward(
    params: &HeadParams,
    config: &HeadConfig,
    image_emb: &[f64],
    text_emb: &[f64],
) -> Result<(Vec<f64>, ForwardCache)> {
    if image_emb.len() != config.d_embed || text_emb.len() != config.d_embed {
        return Err(Error::dim(format!(
            "embeddings have {}/{} entries, head expects {}",
            image_emb.len(),
            text_emb.len(),
            config.d_embed
        )));
    }
    if !params.matches(config) {
        return Err(Error::dim("parameter shapes do not match the head config"));
    }
    check_finite(image_emb, "image embedding")?;
    check_finite(text_emb, "text embedding")?;

    let image = branch_forward(
        image_emb,
        params.proj_image.as_ref(),
        params.adapter_image.as_ref(),
        config.alpha,
        "image",
    )?;
    let text = branch_forward(
        text_emb,
        params.proj_text.as_ref(),
        params.adapter_text.as_ref(),
        config.alpha,
        "text",
    )?;

    let fused: Vec<f64> = match config.fusion_kind {
        FusionKind::Multiply => image
            .out
            .iter()
            .zip(&text.out)
            .map(|(a, b)| a * b)
            .collect(),
        FusionKind::Concat => [image.out.as_slice(), text.out.as_slice()].concat(),
    };
    check_finite(&fused, "fusion")?;

    let (features, logits) = match config.classifier_kind {
        ClassifierKind::Cosine => {
            let pre = params
                .pre_output
                .as_ref()
                .ok_or_else(|| Error::State("cosine head without pre-output layer".into()))?;
            let features = pre.forward(&fused)?;
            check_finite(&features, "pre-output")?;
            let logits = cosine_logits(
                &features,
                &params.classifier_weight,
                config.sigma,
                config.eps,
            )?;
            (features, logits)
        }
        ClassifierKind::Linear => {
            let bias = params
                .classifier_bias
                .as_ref()
                .ok_or_else(|| Error::State("linear head without bias".into()))?;
            let logits = crate::numerics::affine_forward(&fused, &params.classifier_weight, bias)?;
            (fused.clone(), logits)
        }
    };
    check_finite(&logits, "classifier")?;

    let cache = ForwardCache {
        signature: Signature::of(config),
        image,
        text,
        fused,
        features,
        logits: logits.clone(),
    };
    Ok((logits, cache))
}

fn branch_backward(
    cache: &BranchCache,
    d_out: &[f64],
    alpha: f64,
    proj: Option<&Affine>,
    adapter: Option<&Adapter>,
    g_proj: &mut Option<Affine>,
    g_adapter: &mut Option<Adapter>,
) {
    let d_projected: Vec<f64> = match (adapter, &cache.adapter, g_adapter.as_mut()) {
        (Some(a), Some(ac), Some(ga)) => {
            let d_up: Vec<f64> = d_out.iter().map(|&g| alpha * g).collect();
            let d_up_pre = relu_backward(&ac.up_pre, &d_up);
            let d_hidden = affine_backward(
                &ac.hidden,
                &a.up.weight,
                &d_up_pre,
                &mut ga.up.weight,
                &mut ga.up.bias,
                true,
            )
            .unwrap();
            let d_hidden_pre = relu_backward(&ac.hidden_pre, &d_hidden);
            let d_via_adapter = affine_backward(
                &cache.projected,
                &a.down.weight,
                &d_hidden_pre,
                &mut ga.down.weight,
                &mut ga.down.bias,
                true,
            )
            .unwrap();
            d_out
                .iter()
                .zip(&d_via_adapter)
                .map(|(&g, &ga)| (1.0 - alpha) * g + ga)
                .collect()
        }
        _ => d_out.to_vec(),
    };
    if let (Some(p), Some(gp)) = (proj, g_proj.as_mut()) {
        affine_backward(
            &cache.input,
            &p.weight,
            &d_projected,
            &mut gp.weight,
            &mut gp.bias,
            false,
        );
    }
}

/// Accumulates `d loss / d params` into `grads` given `d loss / d logits`.
pub fn backward_into(
    params: &HeadParams,
    config: &HeadConfig,
    cache: &ForwardCache,
    dlogits: &[f64],
    grads: &mut HeadParams,
) -> Result<()> {
    if cache.signature != Signature::of(config) {
        return Err(Error::State(
            "forward cache was produced under a different config".into(),
        ));
    }
    if dlogits.len() != config.n_classes {
        return Err(Error::dim(format!(
            "dlogits has {} entries, head has {} classes",
            dlogits.len(),
            config.n_classes
        )));
    }
    if !params.matches(config) || !grads.matches(config) {
        return Err(Error::State(
            "parameter or gradient shapes do not match the config".into(),
        ));
    }

    let d_fused = match config.classifier_kind {
        ClassifierKind::Cosine => {
            let d_features = cosine_logits_backward(
                &cache.features,
                &params.classifier_weight,
                config.sigma,
                config.eps,
                dlogits,
                &mut grads.classifier_weight,
            );
            let pre = params.pre_output.as_ref().unwrap();
            let g_pre = grads.pre_output.as_mut().unwrap();
            affine_backward(
                &cache.fused,
                &pre.weight,
                &d_features,
                &mut g_pre.weight,
                &mut g_pre.bias,
                true,
            )
            .unwrap()
        }
        ClassifierKind::Linear => affine_backward(
            &cache.features,
            &params.classifier_weight,
            dlogits,
            &mut grads.classifier_weight,
            grads.classifier_bias.as_mut().unwrap(),
            true,
        )
        .unwrap(),
    };

    let (d_image, d_text): (Vec<f64>, Vec<f64>) = match config.fusion_kind {
        FusionKind::Multiply => (
            d_fused
                .iter()
                .zip(&cache.text.out)
                .map(|(g, t)| g * t)
                .collect(),
            d_fused
                .iter()
                .zip(&cache.image.out)
                .map(|(g, i)| g * i)
                .collect(),
        ),
        FusionKind::Concat => {
            let (a, b) = d_fused.split_at(cache.image.out.len());
            (a.to_vec(), b.to_vec())
        }
    };

    branch_backward(
        &cache.image,
        &d_image,
        config.alpha,
        params.proj_image.as_ref(),
        params.adapter_image.as_ref(),
        &mut grads.proj_image,
        &mut grads.adapter_image,
    );
    branch_backward(
        &cache.text,
        &d_text,
        config.alpha,
        params.proj_text.as_ref(),
        params.adapter_text.as_ref(),
        &mut grads.proj_text,
        &mut grads.adapter_text,
    );
    Ok(())
}

/// Gradient record for a single sample.
pub fn backward(
    params: &HeadParams,
    config: &HeadConfig,
    cache: &ForwardCache,
    dlogits: &[f64],
) -> Result<HeadParams> {
    let mut grads = params.zeros_like();
    backward_into(params, config, cache, dlogits, &mut grads)?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::config::InitKind;
    use crate::head::params::init_params;
    use crate::numerics::{finite_diff_grad, max_relative_error, softmax_ce_loss, DenseMatrix};

    /// d_embed = d_proj = 2, identity projections, alpha = 0, identity
    /// pre-output, unit cosine classifier.
    fn toy() -> (HeadConfig, HeadParams) {
        let mut cfg = HeadConfig::full(2).with_dims(2, 2);
        cfg.adapter_reduction = 2;
        cfg.alpha = 0.0;
        cfg.sigma = 1.0;
        cfg.init_kind = InitKind::Random;
        let mut p = init_params(&cfg, 1, None).unwrap();
        p.proj_image = Some(Affine::identity(2));
        p.proj_text = Some(Affine::identity(2));
        p.pre_output = Some(Affine::identity(2));
        p.classifier_weight = DenseMatrix::identity(2);
        (cfg, p)
    }

    #[test]
    fn toy_logits() {
        let (cfg, p) = toy();
        let (z, _) = forward(&p, &cfg, &[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(z, [1.0, 0.0]);
        let (z, c) = forward(&p, &cfg, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_eq!(c.fused(), [0.0, 0.0]);
        assert_eq!(z, [0.0, 0.0]);
    }

    #[test]
    fn product_fusion_is_symmetric() {
        let mut cfg = HeadConfig::full(3).with_dims(4, 8);
        cfg.init_kind = InitKind::Random;
        let mut p = init_params(&cfg, 9, None).unwrap();
        p.proj_text = p.proj_image.clone();
        p.adapter_text = p.adapter_image.clone();
        let a = [0.3, -0.1, 0.8, 0.2];
        let b = [-0.5, 0.4, 0.1, 0.9];
        let (_, c1) = forward(&p, &cfg, &a, &b).unwrap();
        let (_, c2) = forward(&p, &cfg, &b, &a).unwrap();
        assert_eq!(c1.fused(), c2.fused());
    }

    #[test]
    fn zero_dlogits_give_zero_grads() {
        let mut cfg = HeadConfig::full(3).with_dims(4, 8);
        cfg.init_kind = InitKind::Random;
        let p = init_params(&cfg, 2, None).unwrap();
        let (_, c) = forward(&p, &cfg, &[0.1, 0.2, 0.3, 0.4], &[0.4, 0.3, 0.2, 0.1]).unwrap();
        let g = backward(&p, &cfg, &c, &[0.0; 3]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alpha_zero_blocks_adapter_gradients() {
        let mut cfg = HeadConfig::full(2).with_dims(3, 4);
        cfg.init_kind = InitKind::Random;
        cfg.alpha = 0.0;
        let p = init_params(&cfg, 4, None).unwrap();
        let (z, c) = forward(&p, &cfg, &[0.5, -0.2, 0.1], &[0.3, 0.3, -0.6]).unwrap();
        let (_, dz) = softmax_ce_loss(&z, 1).unwrap();
        let g = backward(&p, &cfg, &c, &dz).unwrap();
        for a in [&g.adapter_image, &g.adapter_text] {
            let a = a.as_ref().unwrap();
            assert!(a
                .down
                .weight
                .data
                .iter()
                .chain(&a.up.weight.data)
                .all(|&v| v == 0.0));
            assert!(a.down.bias.iter().chain(&a.up.bias).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mismatched_cache_is_a_state_error() {
        let mut cfg = HeadConfig::full(2).with_dims(3, 4);
        cfg.init_kind = InitKind::Random;
        let p = init_params(&cfg, 4, None).unwrap();
        let (_, c) = forward(&p, &cfg, &[0.5, -0.2, 0.1], &[0.3, 0.3, -0.6]).unwrap();
        let mut other = cfg.clone();
        other.alpha = 0.5;
        assert!(matches!(
            backward(&p, &other, &c, &[1.0, -1.0]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn wrong_embedding_length() {
        let (cfg, p) = toy();
        assert!(matches!(
            forward(&p, &cfg, &[1.0], &[1.0, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn every_variant_matches_finite_differences() {
        let base = HeadConfig::full(3).with_dims(3, 4);
        let image = [0.7, -0.3, 0.5];
        let text = [0.2, 0.9, -0.4];
        for mut cfg in base.reachable_variants() {
            cfg.init_kind = InitKind::Random;
            let p = init_params(&cfg, 17, None).unwrap();
            let loss = |flat: &[f64]| {
                let mut q = p.clone();
                q.assign_flat(flat).unwrap();
                let (z, _) = forward(&q, &cfg, &image, &text).unwrap();
                softmax_ce_loss(&z, 2).unwrap().0
            };
            let (z, c) = forward(&p, &cfg, &image, &text).unwrap();
            let (_, dz) = softmax_ce_loss(&z, 2).unwrap();
            let g = backward(&p, &cfg, &c, &dz).unwrap().flatten();
            let fd = finite_diff_grad(loss, &p.flatten(), 1e-5);
            let err = max_relative_error(&g, &fd, 1e-6);
            assert!(err < 1e-4, "{}: {err}", cfg.toggle_label());
        }
    }
}
