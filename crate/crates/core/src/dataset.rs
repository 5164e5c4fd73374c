//! Benchmark dataset loading: JSON-lines manifests of MCQ questions with
//! on-disk image paths, validated against the benchmark's choice layout and
//! resolved into content-addressed [`QuestionInstance`]s.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::QuestionInstance;
use crate::error::{Error, Result};
use crate::store::ImageStore;

/// MCQ layout of a benchmark: fixed choice count per question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McqLayout {
    /// Two-choice (yes/no style) questions.
    SatReal,
    /// Four-choice questions.
    Mmsi,
}

impl McqLayout {
    pub fn expected_choices(&self) -> usize {
        match self {
            McqLayout::SatReal => 2,
            McqLayout::Mmsi => 4,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            McqLayout::SatReal => "sat-real",
            McqLayout::Mmsi => "mmsi",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sat-real" | "sat" => Ok(McqLayout::SatReal),
            "mmsi" => Ok(McqLayout::Mmsi),
            other => Err(Error::Config(format!(
                "unknown dataset layout {other:?} (expected sat-real or mmsi)"
            ))),
        }
    }
}

/// One manifest line: a question plus the path of its initial image,
/// relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: String,
    pub question: String,
    pub choices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_index: Option<usize>,
    #[serde(default = "default_category")]
    pub category: String,
}

fn default_category() -> String {
    crate::analytics::UNCATEGORIZED.to_string()
}

/// A manifest question resolved into the content store.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedQuestion {
    pub id: String,
    pub instance: QuestionInstance,
}

/// Reads a JSON-lines manifest. Blank lines are skipped; a malformed line
/// or a duplicate question id is a config error naming the line.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read dataset manifest {path:?}: {e}")))?;
    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| {
            Error::Config(format!(
                "manifest {path:?} line {}: {e}",
                lineno + 1
            ))
        })?;
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Config(format!(
                "manifest {path:?} line {}: duplicate question id {:?}",
                lineno + 1,
                entry.id
            )));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Checks every entry against the benchmark's fixed choice count and the
/// gold-index range.
pub fn validate_layout(entries: &[ManifestEntry], layout: McqLayout) -> Result<()> {
    let expected = layout.expected_choices();
    for entry in entries {
        if entry.choices.len() != expected {
            return Err(Error::Config(format!(
                "question {:?}: {} layout requires {expected} choices, got {}",
                entry.id,
                layout.label(),
                entry.choices.len()
            )));
        }
        if let Some(g) = entry.gold_index {
            if g >= expected {
                return Err(Error::Config(format!(
                    "question {:?}: gold_index {g} out of range for {expected} choices",
                    entry.id
                )));
            }
        }
    }
    Ok(())
}

/// Loads each entry's image into the store (paths resolve relative to
/// `root`, normally the manifest's directory) and builds validated
/// question instances in manifest order.
pub fn load_questions(
    entries: &[ManifestEntry],
    root: &Path,
    store: &ImageStore,
) -> Result<Vec<LoadedQuestion>> {
    let mut loaded = Vec::with_capacity(entries.len());
    for entry in entries {
        let raw = PathBuf::from(&entry.image_path);
        let path = if raw.is_absolute() {
            raw
        } else {
            root.join(raw)
        };
        let bytes = std::fs::read(&path).map_err(|e| {
            Error::Config(format!(
                "question {:?}: cannot read image {path:?}: {e}",
                entry.id
            ))
        })?;
        let image_ref = store.put(bytes)?;
        let instance = QuestionInstance {
            image_ref,
            question: entry.question.clone(),
            choices: entry.choices.clone(),
            gold_index: entry.gold_index,
            category: entry.category.clone(),
        };
        instance.validate()?;
        loaded.push(LoadedQuestion {
            id: entry.id.clone(),
            instance,
        });
    }
    Ok(loaded)
}

/// Reads, layout-checks, and resolves a manifest in one call.
pub fn load_dataset(
    path: &Path,
    layout: McqLayout,
    store: &ImageStore,
) -> Result<Vec<LoadedQuestion>> {
    let entries = read_manifest(path)?;
    validate_layout(&entries, layout)?;
    let root = path.parent().unwrap_or(Path::new("."));
    load_questions(&entries, root, store)
}

/// Question-id → category map for the accuracy table.
pub fn category_map(entries: &[ManifestEntry]) -> HashMap<String, String> {
    entries
        .iter()
        .map(|e| (e.id.clone(), e.category.clone()))
        .collect()
}
