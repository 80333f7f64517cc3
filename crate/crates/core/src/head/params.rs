use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ClassifierKind, HeadConfig, InitKind};
use crate::bundle::ClassPromptSet;
use crate::error::{Error, Result};
use crate::numerics::{affine_forward, DenseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: DenseMatrix::zeros(out, inp),
            bias: vec![0.0; out],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            weight: DenseMatrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        affine_forward(x, &self.weight, &self.bias)
    }

    fn uniform(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut a = Self::zeros(inp, out);
        fill_uniform(&mut a.weight, rng);
        a
    }
}

fn fill_uniform(w: &mut DenseMatrix, rng: &mut ChaCha8Rng) {
    let bound = (1.0 / w.cols as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    for v in &mut w.data {
        *v = dist.sample(rng);
    }
}

/// Bottleneck adapter: `relu(up(relu(down(v))))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adapter {
    pub down: Affine,
    pub up: Affine,
}

/// Trainable weights of the head. Disabled components are `None`.
///
/// Gradients and optimizer moments reuse this type. The fixed tensor order
/// used by [`HeadParams::tensors`] and checkpoints is: image projection
/// (W, b), text projection (W, b), image adapter (down W, down b, up W, up b),
/// text adapter (same), pre-output (W, b), classifier W, classifier b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub proj_image: Option<Affine>,
    pub proj_text: Option<Affine>,
    pub adapter_image: Option<Adapter>,
    pub adapter_text: Option<Adapter>,
    pub pre_output: Option<Affine>,
    pub classifier_weight: DenseMatrix,
    pub classifier_bias: Option<Vec<f64>>,
}

impl HeadParams {
    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &HeadConfig) -> Self {
        let (de, dp) = (config.d_embed, config.d_proj);
        let r = config.d_bottleneck();
        let d = config.d_fused();
        let adapter = || Adapter {
            down: Affine::zeros(dp, r),
            up: Affine::zeros(r, dp),
        };
        let cosine = config.classifier_kind == ClassifierKind::Cosine;
        Self {
            proj_image: config.use_projection.then(|| Affine::zeros(de, dp)),
            proj_text: config.use_projection.then(|| Affine::zeros(de, dp)),
            adapter_image: config.use_adapters.then(adapter),
            adapter_text: config.use_adapters.then(adapter),
            pre_output: cosine.then(|| Affine::zeros(d, d)),
            classifier_weight: DenseMatrix::zeros(config.n_classes, d),
            classifier_bias: (!cosine).then(|| vec![0.0; config.n_classes]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(14);
        for a in [&self.proj_image, &self.proj_text].into_iter().flatten() {
            out.push(&a.weight.data);
            out.push(&a.bias);
        }
        for ad in [&self.adapter_image, &self.adapter_text]
            .into_iter()
            .flatten()
        {
            out.push(&ad.down.weight.data);
            out.push(&ad.down.bias);
            out.push(&ad.up.weight.data);
            out.push(&ad.up.bias);
        }
        if let Some(a) = &self.pre_output {
            out.push(&a.weight.data);
            out.push(&a.bias);
        }
        out.push(&self.classifier_weight.data);
        if let Some(b) = &self.classifier_bias {
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(14);
        for a in [&mut self.proj_image, &mut self.proj_text]
            .into_iter()
            .flatten()
        {
            out.push(&mut a.weight.data);
            out.push(&mut a.bias);
        }
        for ad in [&mut self.adapter_image, &mut self.adapter_text]
            .into_iter()
            .flatten()
        {
            out.push(&mut ad.down.weight.data);
            out.push(&mut ad.down.bias);
            out.push(&mut ad.up.weight.data);
            out.push(&mut ad.up.bias);
        }
        if let Some(a) = &mut self.pre_output {
            out.push(&mut a.weight.data);
            out.push(&mut a.bias);
        }
        out.push(&mut self.classifier_weight.data);
        if let Some(b) = &mut self.classifier_bias {
            out.push(b);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::dim(format!(
                "flat vector has {} entries, params have {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// True when every tensor has the shape `config` implies.
    pub fn matches(&self, config: &HeadConfig) -> bool {
        let z = Self::zeros(config);
        let shapes = |p: &Self| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
        shapes(self) == shapes(&z)
            && self.classifier_weight.rows == z.classifier_weight.rows
            && self.classifier_weight.cols == z.classifier_weight.cols
            && self.proj_image.is_some() == z.proj_image.is_some()
            && self.adapter_image.is_some() == z.adapter_image.is_some()
            && self.pre_output.is_some() == z.pre_output.is_some()
            && self.classifier_bias.is_some() == z.classifier_bias.is_some()
    }
}

/// Draws a fresh head: weights uniform in `±sqrt(1/fan_in)`, biases zero.
/// Under semantic init the classifier rows are then replaced by the
/// text-projected prompt embeddings.
pub fn init_params(
    config: &HeadConfig,
    seed: u64,
    prompts: Option<&ClassPromptSet>,
) -> Result<HeadParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = HeadParams::zeros(config);
    let (de, dp) = (config.d_embed, config.d_proj);
    let r = config.d_bottleneck();
    if config.use_projection {
        p.proj_image = Some(Affine::uniform(de, dp, &mut rng));
        p.proj_text = Some(Affine::uniform(de, dp, &mut rng));
    }
    if config.use_adapters {
        for slot in [&mut p.adapter_image, &mut p.adapter_text] {
            let down = Affine::uniform(dp, r, &mut rng);
            let up = Affine::uniform(r, dp, &mut rng);
            *slot = Some(Adapter { down, up });
        }
    }
    if let Some(pre) = &mut p.pre_output {
        fill_uniform(&mut pre.weight, &mut rng);
    }
    match config.init_kind {
        InitKind::Random => fill_uniform(&mut p.classifier_weight, &mut rng),
        InitKind::Sai => {
            let prompts = prompts.ok_or_else(|| {
                Error::Config("semantic init requested without class prompts".into())
            })?;
            apply_semantic_init(&mut p, config, prompts)?;
        }
    }
    Ok(p)
}

/// Sets classifier row `x` to the current text projection of prompt `x`.
pub fn apply_semantic_init(
    params: &mut HeadParams,
    config: &HeadConfig,
    prompts: &ClassPromptSet,
) -> Result<()> {
    if prompts.num_classes() != config.n_classes || prompts.d_embed != config.d_embed {
        return Err(Error::dim(format!(
            "prompts are {}x{}, head expects {}x{}",
            prompts.num_classes(),
            prompts.d_embed,
            config.n_classes,
            config.d_embed
        )));
    }
    let proj = params
        .proj_text
        .as_ref()
        .ok_or_else(|| Error::Config("semantic init requires a text projection".into()))?;
    if params.classifier_weight.cols != proj.bias.len() {
        return Err(Error::dim("classifier width differs from projection width"));
    }
    let rows: Vec<Vec<f64>> = (0..config.n_classes)
        .map(|x| proj.forward(&prompts.row(x)))
        .collect::<Result<_>>()?;
    for (x, row) in rows.into_iter().enumerate() {
        params.classifier_weight.row_mut(x).copy_from_slice(&row);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::config::{count_params, FusionKind};

    fn prompts(rows: Vec<Vec<f32>>) -> ClassPromptSet {
        ClassPromptSet {
            task: "hate".into(),
            prompt_template: crate::bundle::PROMPT_TEMPLATE.into(),
            class_names: (0..rows.len()).map(|i| format!("c{i}")).collect(),
            d_embed: rows[0].len(),
            embeddings: rows,
        }
    }

    #[test]
    fn semantic_init_rows_equal_projected_prompts() {
        let cfg = HeadConfig::full(3).with_dims(5, 8);
        let ps = prompts(vec![
            vec![0.1, -0.2, 0.3, 0.4, 0.5],
            vec![1.0, 0.0, 0.0, -1.0, 0.25],
            vec![-0.7, 0.9, 0.2, 0.0, 0.1],
        ]);
        let p = init_params(&cfg, 11, Some(&ps)).unwrap();
        let proj = p.proj_text.as_ref().unwrap();
        for x in 0..3 {
            let expect = affine_forward(&ps.row(x), &proj.weight, &proj.bias).unwrap();
            let got = p.classifier_weight.row(x);
            assert!(got
                .iter()
                .zip(&expect)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn identity_projection_copies_prompts() {
        let mut cfg = HeadConfig::full(2).with_dims(2, 2);
        cfg.adapter_reduction = 1;
        let ps = prompts(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let mut p = init_params(&cfg, 0, Some(&ps)).unwrap();
        p.proj_text = Some(Affine::identity(2));
        apply_semantic_init(&mut p, &cfg, &ps).unwrap();
        assert_eq!(p.classifier_weight.data, [1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn same_seed_same_params() {
        let mut cfg = HeadConfig::full(2).with_dims(6, 8);
        cfg.init_kind = InitKind::Random;
        assert_eq!(
            init_params(&cfg, 5, None).unwrap(),
            init_params(&cfg, 5, None).unwrap()
        );
        assert_ne!(
            init_params(&cfg, 5, None).unwrap(),
            init_params(&cfg, 6, None).unwrap()
        );
    }

    #[test]
    fn sai_errors() {
        let cfg = HeadConfig::full(2).with_dims(3, 4);
        assert!(matches!(init_params(&cfg, 0, None), Err(Error::Config(_))));
        let bad = prompts(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(
            init_params(&cfg, 0, Some(&bad)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn scalar_count_matches_count_params_for_every_variant() {
        let base = HeadConfig::full(3).with_dims(5, 8);
        for cfg in base.reachable_variants() {
            assert_eq!(
                HeadParams::zeros(&cfg).num_scalars(),
                count_params(&cfg),
                "{cfg:?}"
            );
        }
        let mut cat = base.clone();
        cat.fusion_kind = FusionKind::Concat;
        cat.init_kind = InitKind::Random;
        assert_eq!(HeadParams::zeros(&cat).classifier_weight.cols, 16);
    }

    #[test]
    fn weights_within_fan_in_bound() {
        let mut cfg = HeadConfig::full(2).with_dims(9, 12);
        cfg.init_kind = InitKind::Random;
        let p = init_params(&cfg, 3, None).unwrap();
        let proj = p.proj_image.as_ref().unwrap();
        let bound = (1.0f64 / 9.0).sqrt();
        assert!(proj.weight.data.iter().all(|v| v.abs() <= bound));
        assert!(proj.bias.iter().all(|&v| v == 0.0));
    }
}
