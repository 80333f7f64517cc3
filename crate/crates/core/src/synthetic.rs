//! A small separable dataset for smoke tests, examples and the end-to-end
//! acceptance run: image and text embeddings are both the class indicator
//! vector plus Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bundle::{
    ClassPromptSet, EmbeddingBundle, EmbeddingRecord, Split, TaskSchema, PROMPT_TEMPLATE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub d_embed: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d_embed: 8,
            n_train: 200,
            n_val: 40,
            n_test: 40,
            noise_std: 0.1,
            seed: 7,
        }
    }
}

/// Two-class bundle with a single `hate` task. Classes alternate, so every
/// split is balanced.
pub fn separable_bundle(spec: &SyntheticSpec) -> EmbeddingBundle {
    assert!(spec.d_embed >= 2, "need room for two indicator coordinates");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_std).expect("finite std");
    let mut bundle =
        EmbeddingBundle::new(spec.d_embed, vec![TaskSchema::canonical("hate").unwrap()]);
    let splits = std::iter::repeat_n(Split::Train, spec.n_train)
        .chain(std::iter::repeat_n(Split::Val, spec.n_val))
        .chain(std::iter::repeat_n(Split::Test, spec.n_test));
    for (i, split) in splits.enumerate() {
        let class = i % 2;
        let mut sample = || -> Vec<f32> {
            (0..spec.d_embed)
                .map(|j| {
                    let base = if j == class { 1.0 } else { 0.0 };
                    (base + noise.sample(&mut rng)) as f32
                })
                .collect()
        };
        let image_embedding = sample();
        let text_embedding = sample();
        bundle.records.push(EmbeddingRecord {
            id: format!("syn-{i:05}"),
            split,
            image_embedding,
            text_embedding,
            labels: vec![Some(class as u16)],
        });
    }
    bundle
}

/// Noise-free class indicators standing in for encoded class prompts.
pub fn indicator_prompts(d_embed: usize) -> ClassPromptSet {
    let schema = TaskSchema::canonical("hate").unwrap();
    ClassPromptSet {
        task: schema.name,
        prompt_template: PROMPT_TEMPLATE.into(),
        d_embed,
        embeddings: (0..2)
            .map(|c| {
                (0..d_embed)
                    .map(|j| if j == c { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
        class_names: schema.class_names,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_balance() {
        let b = separable_bundle(&SyntheticSpec::default());
        b.validate().unwrap();
        let train = b.task_view("hate", Split::Train).unwrap();
        assert_eq!(train.len(), 200);
        assert_eq!(train.labels().iter().filter(|&&l| l == 1).count(), 100);
        assert_eq!(b.task_view("hate", Split::Test).unwrap().len(), 40);
        indicator_prompts(8).validate().unwrap();
    }
}
