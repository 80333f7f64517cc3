use memehead::bundle::{
    read_bundle, write_bundle, ClassPromptSet, EmbeddingBundle, EmbeddingRecord, Split, TaskSchema,
    PROMPT_TEMPLATE,
};
use memehead::head::{init_params, HeadConfig};
use memehead::synthetic::{indicator_prompts, separable_bundle, SyntheticSpec};
use memehead::trainer::{
    fit, load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, TrainConfig,
    TrainHistory,
};
use memehead::Error;
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<f32>().prop_filter("finite", |v| v.is_finite())
}

fn record(d: usize) -> impl Strategy<Value = EmbeddingRecord> {
    (
        "[a-z0-9_/.-]{1,12}",
        prop::sample::select(Split::ALL.to_vec()),
        prop::collection::vec(finite_f32(), d),
        prop::collection::vec(finite_f32(), d),
        prop::option::of(0u16..2),
        prop::option::of(0u16..3),
        prop::option::of(0u16..2),
    )
        .prop_map(
            |(id, split, image_embedding, text_embedding, hate, stance, humor)| EmbeddingRecord {
                id,
                split,
                image_embedding,
                text_embedding,
                labels: vec![hate, stance, humor],
            },
        )
}

fn bundle() -> impl Strategy<Value = EmbeddingBundle> {
    (1usize..6).prop_flat_map(|d| {
        prop::collection::btree_map("[a-z0-9]{1,10}", record(d), 0..12).prop_map(move |recs| {
            let mut b = EmbeddingBundle::new(
                d,
                ["hate", "stance", "humor"]
                    .iter()
                    .map(|t| TaskSchema::canonical(t).unwrap())
                    .collect(),
            );
            b.records = recs
                .into_iter()
                .map(|(id, mut r)| {
                    r.id = id;
                    r
                })
                .collect();
            b
        })
    })
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bundle_round_trip_is_bitwise(b in bundle()) {
        let back = EmbeddingBundle::from_bytes(&b.to_bytes().unwrap()).unwrap();
        prop_assert_eq!(back.records.len(), b.records.len());
        for (x, y) in b.records.iter().zip(&back.records) {
            prop_assert_eq!(&x.id, &y.id);
            prop_assert_eq!(x.split, y.split);
            prop_assert_eq!(&x.labels, &y.labels);
            prop_assert_eq!(bits(&x.image_embedding), bits(&y.image_embedding));
            prop_assert_eq!(bits(&x.text_embedding), bits(&y.text_embedding));
        }
        prop_assert_eq!(back, b);
    }

    #[test]
    fn prompts_round_trip_is_bitwise(rows in prop::collection::vec(prop::collection::vec(finite_f32(), 4), 1..5)) {
        let p = ClassPromptSet {
            task: "custom".into(),
            prompt_template: PROMPT_TEMPLATE.into(),
            class_names: (0..rows.len()).map(|i| format!("class {i}")).collect(),
            d_embed: 4,
            embeddings: rows,
        };
        let back = ClassPromptSet::from_bytes(&p.to_bytes().unwrap()).unwrap();
        for (a, b) in p.embeddings.iter().zip(&back.embeddings) {
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(back, p);
    }

    #[test]
    fn any_single_byte_flip_is_detected(b in bundle(), pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
        let mut bytes = b.to_bytes().unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= mask;
        prop_assert!(EmbeddingBundle::from_bytes(&bytes).is_err());
    }
}

fn trained() -> Checkpoint {
    let spec = SyntheticSpec {
        n_train: 40,
        n_val: 10,
        n_test: 10,
        ..Default::default()
    };
    let bundle = separable_bundle(&spec);
    let head = HeadConfig::full(2).with_dims(8, 16);
    let mut train = TrainConfig::new("hate", 5);
    train.epochs = 2;
    let (params, history) = fit(&bundle, Some(&indicator_prompts(8)), &head, &train).unwrap();
    Checkpoint {
        params,
        head_config: head,
        train_config: train,
        history,
    }
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let ck = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.mck");
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let flat = |c: &Checkpoint| {
        c.params
            .flatten()
            .iter()
            .map(|v| v.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(flat(&back), flat(&ck));
    assert_eq!(back, ck);
    assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes().unwrap());
}

#[test]
fn truncated_checkpoint_is_corruption() {
    let bytes = trained().to_bytes().unwrap();
    for cut in [bytes.len() - 1, bytes.len() / 2, 3] {
        assert!(
            matches!(
                Checkpoint::from_bytes(&bytes[..cut]),
                Err(Error::Corruption(_))
            ),
            "cut {cut}"
        );
    }
}

#[test]
fn mismatched_config_is_reported() {
    let ck = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.mck");
    save_checkpoint(&ck, &path).unwrap();
    let other = HeadConfig::full(2).with_dims(8, 32);
    match load_checkpoint_for(&path, &other) {
        Err(Error::ConfigMismatch(msg)) => assert!(msg.contains("d_proj"), "{msg}"),
        r => panic!("expected mismatch, got {r:?}"),
    }
    load_checkpoint_for(&path, &ck.head_config).unwrap();
}

#[test]
fn bundle_files_round_trip() {
    let b = separable_bundle(&SyntheticSpec::default());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.meb");
    write_bundle(&b, &path).unwrap();
    assert_eq!(read_bundle(&path).unwrap(), b);
    assert!(matches!(
        read_bundle(dir.path().join("missing.meb")),
        Err(Error::Io(_))
    ));
}

#[test]
fn untrained_checkpoint_round_trips() {
    let head = HeadConfig::baseline(4).with_dims(3, 4);
    let ck = Checkpoint {
        params: init_params(&head, 1, None).unwrap(),
        head_config: head,
        train_config: TrainConfig::new("stance", 1),
        history: TrainHistory {
            epochs: Vec::new(),
            best_epoch: 0,
        },
    };
    assert_eq!(Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);
}
