//! Class-balanced, stratified, conversation-format supervision data.

pub mod augment;
pub mod sharegpt;
pub mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::PromptMode;
use crate::{fsio, imageio};
use crate::scenegen::ManifestRecord;
use crate::species::Species;

pub use augment::{balance_classes, rotate_augment, rotate_image, rotate_quarter, species_counts};
pub use sharegpt::{answer_text, is_structured_answer, to_sharegpt, ConversationExample, ShareGptRecord};
pub use split::{split_dataset, SplitRatios, Splits};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub image_path: String,
    pub species: Species,
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_k: Option<u8>,
}

impl AnnotationRecord {
    pub fn original(image_id: String, image_path: String, species: Species, count: u32) -> Self {
        Self { image_id, image_path, species, count, augmented_from: None, rotation_k: None }
    }

    /// Records from a corpus manifest; images are referenced under `images/`.
    pub fn from_manifest(r: &ManifestRecord) -> Self {
        let id = r.id();
        Self::original(id.clone(), format!("images/{id}.png"), r.species, r.count)
    }

    /// The original this record descends from (itself for originals).
    pub fn family(&self) -> &str {
        self.augmented_from.as_deref().unwrap_or(&self.image_id)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitOrder {
    /// Balance the whole pool, then split.
    #[default]
    AugmentFirst,
    /// Split originals, then balance the training split only.
    SplitFirst,
}

impl std::str::FromStr for SplitOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "augment-first" => Ok(SplitOrder::AugmentFirst),
            "split-first" => Ok(SplitOrder::SplitFirst),
            other => Err(format!("unknown split order {other:?} (expected augment-first or split-first)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    pub balance: bool,
    pub split_order: SplitOrder,
    pub ratios: SplitRatios,
    /// Prompt modes cycled over the examples of each split.
    pub prompt_modes: Vec<PromptMode>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            balance: true,
            split_order: SplitOrder::AugmentFirst,
            ratios: SplitRatios::default(),
            prompt_modes: vec![PromptMode::ClosedSet, PromptMode::OpenSet],
        }
    }
}

/// Records in val/test whose original (or a sibling copy) sits in train.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub leaked_val: usize,
    pub leaked_test: usize,
    pub families_spanning_splits: usize,
}

impl LeakageAudit {
    pub fn of(splits: &Splits) -> Self {
        let fam = |rs: &[AnnotationRecord]| rs.iter().map(|r| r.family().to_string()).collect::<BTreeSet<_>>();
        let train = fam(&splits.train);
        let leaked = |rs: &[AnnotationRecord]| rs.iter().filter(|r| train.contains(r.family())).count();
        let (va, te) = (fam(&splits.val), fam(&splits.test));
        let spanning = train
            .iter()
            .chain(&va)
            .chain(&te)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter(|f| [&train, &va, &te].iter().filter(|s| s.contains(*f)).count() > 1)
            .count();
        Self { leaked_val: leaked(&splits.val), leaked_test: leaked(&splits.test), families_spanning_splits: spanning }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub split_order: SplitOrder,
    pub total: usize,
    pub split_sizes: BTreeMap<String, usize>,
    pub per_species: BTreeMap<String, BTreeMap<Species, usize>>,
    pub leakage: LeakageAudit,
}

impl DatasetManifest {
    pub fn of(splits: &Splits, cfg: &DatasetConfig) -> Self {
        let mut split_sizes = BTreeMap::new();
        let mut per_species = BTreeMap::new();
        for (name, part) in splits.parts() {
            split_sizes.insert(name.to_string(), part.len());
            per_species.insert(name.to_string(), species_counts(part));
        }
        Self {
            seed: cfg.seed,
            ratios: cfg.ratios,
            split_order: cfg.split_order,
            total: splits.len(),
            split_sizes,
            per_species,
            leakage: LeakageAudit::of(splits),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub splits: Splits,
    pub train: Vec<ConversationExample>,
    pub val: Vec<ConversationExample>,
    pub test: Vec<ConversationExample>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn examples(&self, split: &str) -> &[ConversationExample] {
        match split {
            "train" => &self.train,
            "val" => &self.val,
            _ => &self.test,
        }
    }
}

fn conversations(records: &[AnnotationRecord], modes: &[PromptMode]) -> Result<Vec<ConversationExample>> {
    records.iter().enumerate().map(|(i, r)| to_sharegpt(r, modes[i % modes.len()])).collect()
}

/// Balancing and splitting in the configured order, then conversion.
pub fn build_dataset(records: &[AnnotationRecord], cfg: &DatasetConfig) -> Result<Dataset> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.prompt_modes.is_empty() || cfg.prompt_modes.contains(&PromptMode::Habitat) {
        return Err(Error::Config("dataset prompt modes must be a non-empty subset of closed/open".into()));
    }
    let splits = match cfg.split_order {
        SplitOrder::AugmentFirst => {
            let pool = if cfg.balance { balance_classes(records, cfg.seed)? } else { records.to_vec() };
            split_dataset(&pool, cfg.ratios, cfg.seed)?
        }
        SplitOrder::SplitFirst => {
            let mut s = split_dataset(records, cfg.ratios, cfg.seed)?;
            if cfg.balance {
                s.train = balance_classes(&s.train, cfg.seed)?;
            }
            s
        }
    };
    Ok(Dataset {
        train: conversations(&splits.train, &cfg.prompt_modes)?,
        val: conversations(&splits.val, &cfg.prompt_modes)?,
        test: conversations(&splits.test, &cfg.prompt_modes)?,
        manifest: DatasetManifest::of(&splits, cfg),
        splits,
    })
}

/// Colour twin of a record, written next to the thermal images.
pub fn rgb_path(record: &AnnotationRecord) -> String {
    format!("rgb/{}.png", record.image_id)
}

/// Copies every record's thermal image from a generated corpus to
/// `dir/<image_path>`, rotating augmented copies, and its colour twin to
/// `dir/rgb/`.
pub fn materialize_images(splits: &Splits, corpus: &Path, dir: &Path) -> Result<()> {
    fsio::create_dir_all(&dir.join("images"))?;
    fsio::create_dir_all(&dir.join("rgb"))?;
    for (_, records) in splits.parts() {
        for r in records {
            let family = r.family();
            let thermal = imageio::load_png(&corpus.join("thermal").join(format!("{family}.png")))?;
            let rgb = imageio::load_png(&corpus.join("rgb").join(format!("{family}.png")))?;
            let (thermal, rgb) = match r.rotation_k {
                Some(k) => (rotate_image(&thermal, k)?, rotate_image(&rgb, k)?),
                None => (thermal, rgb),
            };
            imageio::save_png(&dir.join(&r.image_path), &thermal)?;
            imageio::save_png(&dir.join(rgb_path(r)), &rgb)?;
        }
    }
    Ok(())
}

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const MANIFEST_FILE: &str = "dataset_manifest.json";

fn split_file(name: &str) -> String {
    format!("{name}.json")
}

/// Writes `{train,val,test}.json` in ShareGPT layout plus the annotation
/// records and the manifest.
pub fn persist(dataset: &Dataset, dir: &Path) -> Result<()> {
    fsio::create_dir_all(dir)?;
    for name in ["train", "val", "test"] {
        let recs: Vec<ShareGptRecord> = dataset.examples(name).iter().map(|e| e.to_record()).collect();
        fsio::write_json_atomic(&dir.join(split_file(name)), &recs)?;
    }
    fsio::write_json_atomic(&dir.join(ANNOTATIONS_FILE), &dataset.splits)?;
    fsio::write_json_atomic(&dir.join(MANIFEST_FILE), &dataset.manifest)
}

fn schema(path: &Path, locus: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { path: path.to_path_buf(), locus: locus.into(), message: message.into() }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fsio::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| schema(path, format!("line {} column {}", e.line(), e.column()), e.to_string()))
}

pub fn load(dir: &Path) -> Result<Dataset> {
    let mut parts: BTreeMap<&str, Vec<ConversationExample>> = BTreeMap::new();
    for name in ["train", "val", "test"] {
        let path = dir.join(split_file(name));
        let raw: Vec<ShareGptRecord> = read_json(&path)?;
        let examples = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| ConversationExample::from_record(r).map_err(|m| schema(&path, format!("record {i}"), m)))
            .collect::<Result<Vec<_>>>()?;
        parts.insert(name, examples);
    }
    let splits: Splits = read_json(&dir.join(ANNOTATIONS_FILE))?;
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mpath = dir.join(MANIFEST_FILE);
    for (name, recs) in splits.parts() {
        let stored = manifest.split_sizes.get(name).copied();
        if stored != Some(recs.len()) || parts[name].len() != recs.len() {
            return Err(schema(
                &mpath,
                format!("split_sizes.{name}"),
                format!("stored {stored:?}, annotations {}, conversations {}", recs.len(), parts[name].len()),
            ));
        }
        for (i, (r, ex)) in recs.iter().zip(&parts[name]).enumerate() {
            if ex.assistant_text != answer_text(r.species, r.count) || ex.images != [r.image_path.clone()] {
                return Err(schema(&dir.join(split_file(name)), format!("record {i}"), "conversation disagrees with annotation"));
            }
        }
    }
    if manifest.total != splits.len() {
        return Err(schema(&mpath, "total", format!("stored {}, records {}", manifest.total, splits.len())));
    }
    let mut parts = parts.into_iter().map(|(_, v)| v);
    // BTreeMap order: test, train, val.
    let (test, train, val) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
    Ok(Dataset { splits, train, val, test, manifest })
}
