//! Embedding bundles (`MEB1`) and class-prompt sets (`MCP1`).
//!
//! A bundle holds one pair of frozen-encoder embeddings per meme together
//! with its split tag and per-task labels. Everything downstream works from
//! these vectors; raw images and text never enter the crate.
//!
//! `MEB1` layout, all integers little-endian:
//!
//! ```text
//! "MEB1" | u32 header_len | header JSON
//! per record: u32 id_len | id bytes | u8 split | i16 label per task (-1 = missing)
//!             | d_embed f32 image | d_embed f32 text
//! u32 CRC-32 of everything above
//! ```
//!
//! `MCP1` uses the same framing with a prompt header followed by
//! `n_classes x d_embed` f32 rows.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, Reader};
use crate::error::{Error, Result};

pub const BUNDLE_MAGIC: &[u8; 4] = b"MEB1";
pub const PROMPTS_MAGIC: &[u8; 4] = b"MCP1";
pub const FORMAT_VERSION: u32 = 1;
pub const PROMPT_TEMPLATE: &str = "A photo of {LABEL}";

const MISSING_LABEL: i16 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    fn to_byte(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Lookup {
                kind: "split",
                name: other.to_string(),
            }),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchema {
    pub name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl TaskSchema {
    pub fn new(name: &str, class_names: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            num_classes: class_names.len(),
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// The four canonical label schemas.
    pub fn canonical(name: &str) -> Option<Self> {
        let names: &[&str] = match name {
            "hate" => &["No Hate", "Hate"],
            "target" => &["Undirected", "Individual", "Community", "Organization"],
            "stance" => &["Neutral", "Support", "Oppose"],
            "humor" => &["No Humor", "Humor"],
            _ => return None,
        };
        Some(Self::new(name, names))
    }

    pub fn canonical_all() -> Vec<Self> {
        ["hate", "target", "stance", "humor"]
            .iter()
            .map(|n| Self::canonical(n).unwrap())
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::invalid(format!("task:{}", self.name), reason));
        if self.name.is_empty() {
            return fail("empty task name".into());
        }
        if self.num_classes == 0 || self.num_classes > i16::MAX as usize {
            return fail(format!("num_classes {} out of range", self.num_classes));
        }
        if self.num_classes != self.class_names.len() {
            return fail(format!(
                "num_classes {} but {} class names",
                self.num_classes,
                self.class_names.len()
            ));
        }
        let mut seen = HashSet::new();
        for c in &self.class_names {
            if c.is_empty() || !seen.insert(c.as_str()) {
                return fail(format!("class name {c:?} is empty or repeated"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub split: Split,
    pub image_embedding: Vec<f32>,
    pub text_embedding: Vec<f32>,
    /// One entry per bundle task, in header order. `None` is a missing label.
    pub labels: Vec<Option<u16>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub schema_version: u32,
    pub d_embed: usize,
    pub tasks: Vec<TaskSchema>,
    pub records: Vec<EmbeddingRecord>,
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    version: u32,
    d_embed: usize,
    tasks: Vec<TaskSchema>,
    num_records: usize,
}

/// One labelled sample of a task view, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskView {
    pub task: String,
    pub split: Split,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl TaskView {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

impl EmbeddingBundle {
    pub fn new(d_embed: usize, tasks: Vec<TaskSchema>) -> Self {
        Self {
            schema_version: FORMAT_VERSION,
            d_embed,
            tasks,
            records: Vec::new(),
        }
    }

    pub fn task_index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == task)
            .ok_or_else(|| Error::Lookup {
                kind: "task",
                name: task.to_string(),
            })
    }

    pub fn task(&self, task: &str) -> Result<&TaskSchema> {
        Ok(&self.tasks[self.task_index(task)?])
    }

    /// Checks every type invariant, naming the first offending record.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported bundle version {}",
                self.schema_version
            )));
        }
        if self.d_embed == 0 {
            return Err(Error::invalid("header", "d_embed must be positive"));
        }
        let mut names = HashSet::new();
        for t in &self.tasks {
            t.validate()?;
            if !names.insert(t.name.as_str()) {
                return Err(Error::invalid(
                    format!("task:{}", t.name),
                    "duplicate task name",
                ));
            }
        }
        let hate = self.tasks.iter().position(|t| t.name == "hate");
        let target = self.tasks.iter().position(|t| t.name == "target");
        let mut ids = HashSet::with_capacity(self.records.len());
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::invalid(&r.id, "duplicate record id"));
            }
            if r.image_embedding.len() != self.d_embed || r.text_embedding.len() != self.d_embed {
                return Err(Error::invalid(
                    &r.id,
                    format!(
                        "embedding lengths {}/{} differ from d_embed {}",
                        r.image_embedding.len(),
                        r.text_embedding.len(),
                        self.d_embed
                    ),
                ));
            }
            if r.image_embedding
                .iter()
                .chain(&r.text_embedding)
                .any(|v| !v.is_finite())
            {
                return Err(Error::invalid(&r.id, "non-finite embedding value"));
            }
            if r.labels.len() != self.tasks.len() {
                return Err(Error::invalid(
                    &r.id,
                    format!("{} labels for {} tasks", r.labels.len(), self.tasks.len()),
                ));
            }
            for (t, l) in self.tasks.iter().zip(&r.labels) {
                if let Some(l) = l {
                    if *l as usize >= t.num_classes {
                        return Err(Error::invalid(
                            &r.id,
                            format!("label {l} out of range for task {}", t.name),
                        ));
                    }
                }
            }
            if let (Some(h), Some(t)) = (hate, target) {
                if r.labels[t].is_some() && r.labels[h] != Some(1) {
                    return Err(Error::invalid(
                        &r.id,
                        "target label present but hate label is not 1",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&BundleHeader {
            version: self.schema_version,
            d_embed: self.d_embed,
            tasks: self.tasks.clone(),
            num_records: self.records.len(),
        })?;
        let per_record = 4 + 1 + 2 * self.tasks.len() + 8 * self.d_embed;
        let mut payload = Vec::with_capacity(self.records.len() * (per_record + 16));
        for r in &self.records {
            payload.extend_from_slice(&(r.id.len() as u32).to_le_bytes());
            payload.extend_from_slice(r.id.as_bytes());
            payload.push(r.split.to_byte());
            for l in &r.labels {
                let v = l.map_or(MISSING_LABEL, |l| l as i16);
                payload.extend_from_slice(&v.to_le_bytes());
            }
            for v in r.image_embedding.iter().chain(&r.text_embedding) {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(container::encode(BUNDLE_MAGIC, &header, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(BUNDLE_MAGIC, bytes)?;
        let header: BundleHeader = serde_json::from_slice(header)
            .map_err(|e| Error::Format(format!("bundle header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported bundle version {}",
                header.version
            )));
        }
        let mut rd = Reader::new(payload);
        let mut records = Vec::with_capacity(header.num_records);
        for i in 0..header.num_records {
            let id_len = rd.u32()? as usize;
            let id = String::from_utf8(rd.take(id_len)?.to_vec())
                .map_err(|_| Error::Format(format!("record {i}: id is not UTF-8")))?;
            let split = Split::from_byte(rd.u8()?)
                .ok_or_else(|| Error::Format(format!("record {id}: bad split tag")))?;
            let mut labels = Vec::with_capacity(header.tasks.len());
            for _ in &header.tasks {
                let v = rd.i16()?;
                labels.push(match v {
                    MISSING_LABEL => None,
                    v if v >= 0 => Some(v as u16),
                    v => return Err(Error::invalid(&id, format!("negative label {v}"))),
                });
            }
            let image_embedding = rd.f32s(header.d_embed)?;
            let text_embedding = rd.f32s(header.d_embed)?;
            records.push(EmbeddingRecord {
                id,
                split,
                image_embedding,
                text_embedding,
                labels,
            });
        }
        rd.finish()?;
        let bundle = Self {
            schema_version: header.version,
            d_embed: header.d_embed,
            tasks: header.tasks,
            records,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Records of `split` labelled for `task`, sorted by id.
    pub fn task_view(&self, task: &str, split: Split) -> Result<TaskView> {
        let ti = self.task_index(task)?;
        let mut picked: Vec<&EmbeddingRecord> = self
            .records
            .iter()
            .filter(|r| r.split == split && r.labels[ti].is_some())
            .collect();
        picked.sort_by(|a, b| a.id.cmp(&b.id));
        let widen = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        Ok(TaskView {
            task: task.to_string(),
            split,
            num_classes: self.tasks[ti].num_classes,
            samples: picked
                .into_iter()
                .map(|r| Sample {
                    id: r.id.clone(),
                    image: widen(&r.image_embedding),
                    text: widen(&r.text_embedding),
                    label: r.labels[ti].unwrap() as usize,
                })
                .collect(),
        })
    }
}

pub fn write_bundle(bundle: &EmbeddingBundle, path: impl AsRef<Path>) -> Result<()> {
    let bytes = bundle.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    EmbeddingBundle::from_bytes(&fs::read(path)?)
}

/// Encoder embeddings of one templated prompt per class, in class order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPromptSet {
    pub task: String,
    pub prompt_template: String,
    pub class_names: Vec<String>,
    pub d_embed: usize,
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct PromptHeader {
    version: u32,
    task: String,
    prompt_template: String,
    d_embed: usize,
    class_names: Vec<String>,
}

impl ClassPromptSet {
    pub fn num_classes(&self) -> usize {
        self.embeddings.len()
    }

    pub fn row(&self, class: usize) -> Vec<f64> {
        self.embeddings[class].iter().map(|&v| v as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let id = format!("prompts:{}", self.task);
        if self.embeddings.len() != self.class_names.len() || self.embeddings.is_empty() {
            return Err(Error::invalid(
                id,
                format!(
                    "{} rows for {} class names",
                    self.embeddings.len(),
                    self.class_names.len()
                ),
            ));
        }
        for (c, row) in self.embeddings.iter().enumerate() {
            if row.len() != self.d_embed {
                return Err(Error::invalid(
                    id,
                    format!(
                        "row {c} has {} columns, expected {}",
                        row.len(),
                        self.d_embed
                    ),
                ));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    id,
                    format!("row {c} has a non-finite value"),
                ));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let header = serde_json::to_vec(&PromptHeader {
            version: FORMAT_VERSION,
            task: self.task.clone(),
            prompt_template: self.prompt_template.clone(),
            d_embed: self.d_embed,
            class_names: self.class_names.clone(),
        })?;
        let payload: Vec<u8> = self
            .embeddings
            .iter()
            .flatten()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        Ok(container::encode(PROMPTS_MAGIC, &header, &payload))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = container::decode(PROMPTS_MAGIC, bytes)?;
        let header: PromptHeader = serde_json::from_slice(header)
            .map_err(|e| Error::Format(format!("prompt header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported prompt file version {}",
                header.version
            )));
        }
        let mut rd = Reader::new(payload);
        let mut embeddings = Vec::with_capacity(header.class_names.len());
        for _ in &header.class_names {
            embeddings.push(rd.f32s(header.d_embed)?);
        }
        rd.finish()?;
        let set = Self {
            task: header.task,
            prompt_template: header.prompt_template,
            class_names: header.class_names,
            d_embed: header.d_embed,
            embeddings,
        };
        set.validate()?;
        Ok(set)
    }
}

pub fn write_prompts(prompts: &ClassPromptSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, prompts.to_bytes()?)?;
    Ok(())
}

pub fn read_prompts(path: impl AsRef<Path>) -> Result<ClassPromptSet> {
    ClassPromptSet::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, split: Split, labels: Vec<Option<u16>>) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            split,
            image_embedding: vec![0.5, -1.0, 2.25, 1e-7],
            text_embedding: vec![-0.0, 3.0, f32::MIN_POSITIVE, 7.5],
            labels,
        }
    }

    fn bits(r: &EmbeddingRecord) -> Vec<u32> {
        r.image_embedding
            .iter()
            .chain(&r.text_embedding)
            .map(|v| v.to_bits())
            .collect()
    }

    #[test]
    fn canonical_schemas() {
        let t = TaskSchema::canonical("target").unwrap();
        assert_eq!(t.num_classes, 4);
        assert_eq!(t.class_names[3], "Organization");
        assert_eq!(
            TaskSchema::canonical("stance").unwrap().class_names[2],
            "Oppose"
        );
        assert_eq!(
            TaskSchema::canonical("humor").unwrap().class_names[0],
            "No Humor"
        );
        assert!(TaskSchema::canonical("sarcasm").is_none());
    }

    #[test]
    fn empty_bundle_round_trips() {
        let b = EmbeddingBundle::new(4, TaskSchema::canonical_all());
        let bytes = b.to_bytes().unwrap();
        let back = EmbeddingBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back.records.len(), 0);
        assert_eq!(back, b);
    }

    #[test]
    fn single_record_round_trips_bit_exact() {
        let mut b = EmbeddingBundle::new(4, TaskSchema::canonical_all());
        b.records
            .push(rec("m1", Split::Val, vec![Some(1), None, Some(2), Some(0)]));
        let bytes = b.to_bytes().unwrap();
        let back = EmbeddingBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back.records[0].id, "m1");
        assert_eq!(back.records[0].split, Split::Val);
        assert_eq!(
            back.records[0].labels,
            vec![Some(1), None, Some(2), Some(0)]
        );
        assert_eq!(bits(&back.records[0]), bits(&b.records[0]));
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn target_without_hate_is_rejected() {
        let mut b = EmbeddingBundle::new(4, TaskSchema::canonical_all());
        b.records.push(rec(
            "bad-7",
            Split::Train,
            vec![Some(0), Some(2), None, None],
        ));
        match b.to_bytes() {
            Err(Error::Validation { id, .. }) => assert_eq!(id, "bad-7"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn flipped_checksum_and_bad_magic() {
        let mut b = EmbeddingBundle::new(4, TaskSchema::canonical_all());
        b.records
            .push(rec("a", Split::Train, vec![Some(0), None, None, None]));
        let mut bytes = b.to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(
            EmbeddingBundle::from_bytes(&bytes),
            Err(Error::Corruption(_))
        ));
        bytes[last] ^= 0x01;
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            EmbeddingBundle::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn nan_embedding_is_a_validation_error_on_read() {
        // Hand-frame a record containing NaN with a valid checksum.
        let mut b = EmbeddingBundle::new(4, vec![TaskSchema::canonical("hate").unwrap()]);
        b.records.push(rec("n", Split::Train, vec![Some(0)]));
        let bytes = b.to_bytes().unwrap();
        let (header, payload) = container::decode(BUNDLE_MAGIC, &bytes).unwrap();
        let mut payload = payload.to_vec();
        // id_len(4) + "n"(1) + split(1) + label(2) = first embedding value
        payload[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        let framed = container::encode(BUNDLE_MAGIC, header, &payload);
        assert!(matches!(
            EmbeddingBundle::from_bytes(&framed),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn humor_view_skips_missing_labels() {
        let mut b = EmbeddingBundle::new(4, TaskSchema::canonical_all());
        for i in 0..10 {
            let humor = if i % 3 == 0 && i < 9 { None } else { Some(1) };
            b.records.push(rec(
                &format!("r{i}"),
                Split::Train,
                vec![Some(0), None, None, humor],
            ));
        }
        let v = b.task_view("humor", Split::Train).unwrap();
        assert_eq!(v.len(), 7);
        assert!(matches!(
            b.task_view("sarcasm", Split::Train),
            Err(Error::Lookup { .. })
        ));
    }

    #[test]
    fn view_is_sorted_by_id() {
        let mut b = EmbeddingBundle::new(4, vec![TaskSchema::canonical("hate").unwrap()]);
        for id in ["c", "a", "b"] {
            b.records.push(rec(id, Split::Test, vec![Some(0)]));
        }
        let v = b.task_view("hate", Split::Test).unwrap();
        let ids: Vec<_> = v.samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn prompts_round_trip() {
        let p = ClassPromptSet {
            task: "hate".into(),
            prompt_template: PROMPT_TEMPLATE.into(),
            class_names: vec!["No Hate".into(), "Hate".into()],
            d_embed: 3,
            embeddings: vec![vec![1.0, 0.0, -0.5], vec![0.25, 2.0, 1.0]],
        };
        let bytes = p.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"MCP1");
        assert_eq!(ClassPromptSet::from_bytes(&bytes).unwrap(), p);
    }
}
