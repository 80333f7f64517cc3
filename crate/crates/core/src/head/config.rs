use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::NORM_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Random,
    Sai,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Multiply,
    Concat,
}

/// Shape and component toggles of the trainable head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub d_embed: usize,
    pub d_proj: usize,
    pub adapter_reduction: usize,
    /// Residual ratio: weight of the adapter output against the projection.
    pub alpha: f64,
    /// Static scale of the cosine logits.
    pub sigma: f64,
    pub eps: f64,
    pub n_classes: usize,
    pub use_projection: bool,
    pub use_adapters: bool,
    pub classifier_kind: ClassifierKind,
    pub init_kind: InitKind,
    pub fusion_kind: FusionKind,
}

impl HeadConfig {
    /// The complete model: projections, adapters, product fusion, cosine
    /// classifier with semantic initialization.
    pub fn full(n_classes: usize) -> Self {
        Self {
            d_embed: 768,
            d_proj: 1024,
            adapter_reduction: 4,
            alpha: 0.2,
            sigma: 30.0,
            eps: NORM_EPS,
            n_classes,
            use_projection: true,
            use_adapters: true,
            classifier_kind: ClassifierKind::Cosine,
            init_kind: InitKind::Sai,
            fusion_kind: FusionKind::Multiply,
        }
    }

    /// Concatenated raw embeddings into a linear classifier.
    pub fn baseline(n_classes: usize) -> Self {
        Self {
            use_projection: false,
            use_adapters: false,
            classifier_kind: ClassifierKind::Linear,
            init_kind: InitKind::Random,
            fusion_kind: FusionKind::Concat,
            ..Self::full(n_classes)
        }
    }

    pub fn with_dims(mut self, d_embed: usize, d_proj: usize) -> Self {
        self.d_embed = d_embed;
        self.d_proj = d_proj;
        self
    }

    /// Width of one modality after the (optional) projection.
    pub fn d_branch(&self) -> usize {
        if self.use_projection {
            self.d_proj
        } else {
            self.d_embed
        }
    }

    pub fn d_fused(&self) -> usize {
        match self.fusion_kind {
            FusionKind::Multiply => self.d_branch(),
            FusionKind::Concat => 2 * self.d_branch(),
        }
    }

    pub fn d_bottleneck(&self) -> usize {
        self.d_proj / self.adapter_reduction
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.d_embed == 0 || self.d_proj == 0 || self.n_classes == 0 {
            return fail("d_embed, d_proj and n_classes must be positive");
        }
        if self.adapter_reduction == 0 || !self.d_proj.is_multiple_of(self.adapter_reduction) {
            return fail("d_proj must be divisible by adapter_reduction");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sigma) || !positive(self.eps) {
            return fail("sigma and eps must be positive");
        }
        if self.use_adapters && !self.use_projection {
            return fail("adapters require projection layers");
        }
        if self.init_kind == InitKind::Sai {
            if self.classifier_kind != ClassifierKind::Cosine || !self.use_projection {
                return fail("semantic init requires the cosine classifier and projections");
            }
            if self.fusion_kind != FusionKind::Multiply {
                return fail(
                    "semantic init requires product fusion (classifier rows are d_proj wide)",
                );
            }
        }
        Ok(())
    }

    /// Every configuration the toggles can reach. Dimensions and scalars are
    /// copied from `self`.
    pub fn reachable_variants(&self) -> Vec<HeadConfig> {
        let mut out = Vec::new();
        for use_projection in [false, true] {
            for use_adapters in [false, true] {
                for fusion_kind in [FusionKind::Multiply, FusionKind::Concat] {
                    for (classifier_kind, init_kind) in [
                        (ClassifierKind::Linear, InitKind::Random),
                        (ClassifierKind::Cosine, InitKind::Random),
                        (ClassifierKind::Cosine, InitKind::Sai),
                    ] {
                        let c = HeadConfig {
                            use_projection,
                            use_adapters,
                            fusion_kind,
                            classifier_kind,
                            init_kind,
                            ..self.clone()
                        };
                        if c.validate().is_ok() {
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }

    /// Short human-readable tag for the toggle state, e.g. `pl+fa+mul+cos+sai`.
    pub fn toggle_label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_projection {
            parts.push("pl");
        }
        if self.use_adapters {
            parts.push("fa");
        }
        parts.push(match self.fusion_kind {
            FusionKind::Multiply => "mul",
            FusionKind::Concat => "cat",
        });
        parts.push(match self.classifier_kind {
            ClassifierKind::Linear => "lin",
            ClassifierKind::Cosine => "cos",
        });
        if self.init_kind == InitKind::Sai {
            parts.push("sai");
        }
        parts.join("+")
    }
}

/// Trainable scalar count implied by the toggles. Frozen encoders are not
/// part of the head and never counted.
pub fn count_params(config: &HeadConfig) -> usize {
    let affine = |inp: usize, out: usize| inp * out + out;
    let mut n = 0;
    if config.use_projection {
        n += 2 * affine(config.d_embed, config.d_proj);
    }
    if config.use_adapters {
        let r = config.d_bottleneck();
        n += 2 * (affine(config.d_proj, r) + affine(r, config.d_proj));
    }
    let d = config.d_fused();
    match config.classifier_kind {
        ClassifierKind::Cosine => n += affine(d, d) + config.n_classes * d,
        ClassifierKind::Linear => n += affine(d, config.n_classes),
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameter_count() {
        let c = HeadConfig::full(2);
        // 2(768*1024+1024) + 2(1024*256+256 + 256*1024+1024) + (1024^2+1024) + 2*1024
        assert_eq!(count_params(&c), 3_677_696);
        assert_eq!(
            count_params(&HeadConfig::full(4)) - count_params(&c),
            2 * 1024
        );
    }

    #[test]
    fn baseline_parameter_count() {
        assert_eq!(count_params(&HeadConfig::baseline(2)), 2 * 768 * 2 + 2);
    }

    #[test]
    fn invalid_combinations() {
        let mut c = HeadConfig::full(2);
        c.use_projection = false;
        assert!(c.validate().is_err());
        let mut c = HeadConfig::full(2);
        c.classifier_kind = ClassifierKind::Linear;
        assert!(c.validate().is_err());
        let mut c = HeadConfig::full(2);
        c.adapter_reduction = 3;
        assert!(c.validate().is_err());
        let mut c = HeadConfig::full(2);
        c.alpha = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn reachable_variant_count() {
        let v = HeadConfig::full(2).reachable_variants();
        // 4 without projection, 10 with (sai only under product fusion).
        assert_eq!(v.len(), 14);
        assert!(v.iter().all(|c| c.validate().is_ok()));
    }
}
