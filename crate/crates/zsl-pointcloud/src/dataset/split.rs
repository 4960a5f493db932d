//! Seen/unseen split protocols and the manifest that records them.
//!
//! Three named protocols are supported:
//!
//! * `modelnet` — the 30 ModelNet40 classes outside ModelNet10 are seen;
//!   the 10 ModelNet10 classes are unseen, with only their test files
//!   entering the manifest (as `test-unseen`). Seen-class train/test files
//!   become `train-seen` / `test-seen`. Train files of unseen classes are
//!   excluded entirely.
//! * `mcgill` — evaluation-only. Unseen categories are the frozen 14-class
//!   list in `data/mcgill_unseen.txt`; the last third of each class's
//!   instances (lexicographic path order) becomes `test-unseen`.
//! * `shrec2015` — evaluation-only. Unseen categories are the frozen
//!   30-class list in `data/shrec2015_unseen.txt`; a random quarter of each
//!   class's instances (drawn from the split seed) becomes `test-unseen`.
//!
//! The seen list is always the canonical 30-class training vocabulary, so
//! embedding tables and checkpoints line up across protocols.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layout::{DatasetLayout, LayoutSplit};
use crate::derive_seed;

const MODELNET40: &str = include_str!("../../data/modelnet40_classes.txt");
const MODELNET10: &str = include_str!("../../data/modelnet10_classes.txt");
const MCGILL_UNSEEN: &str = include_str!("../../data/mcgill_unseen.txt");
const SHREC_UNSEEN: &str = include_str!("../../data/shrec2015_unseen.txt");

fn data_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().next().unwrap().to_string())
        .collect()
}

/// The 40 ModelNet40 class names in canonical order.
pub fn modelnet40_classes() -> Vec<String> {
    data_list(MODELNET40)
}

/// The 10 ModelNet10 class names in canonical order.
pub fn modelnet10_classes() -> Vec<String> {
    data_list(MODELNET10)
}

/// The canonical 30-class seen vocabulary (ModelNet40 minus ModelNet10).
pub fn seen_classes() -> Vec<String> {
    let unseen = modelnet10_classes();
    modelnet40_classes()
        .into_iter()
        .filter(|c| !unseen.contains(c))
        .collect()
}

/// Frozen unseen categories of the mcgill protocol.
pub fn mcgill_unseen_classes() -> Vec<String> {
    data_list(MCGILL_UNSEEN)
}

/// Frozen unseen categories of the shrec2015 protocol.
pub fn shrec2015_unseen_classes() -> Vec<String> {
    data_list(SHREC_UNSEEN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "modelnet")]
    ModelNet,
    #[serde(rename = "mcgill")]
    McGill,
    #[serde(rename = "shrec2015")]
    Shrec2015,
}

impl Protocol {
    pub fn parse(name: &str) -> Result<Protocol, SplitError> {
        match name {
            "modelnet" => Ok(Protocol::ModelNet),
            "mcgill" => Ok(Protocol::McGill),
            "shrec2015" => Ok(Protocol::Shrec2015),
            other => Err(SplitError::UnknownProtocol { name: other.to_string() }),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Protocol::ModelNet => "modelnet",
            Protocol::McGill => "mcgill",
            Protocol::Shrec2015 => "shrec2015",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "train-seen")]
    TrainSeen,
    #[serde(rename = "test-seen")]
    TestSeen,
    #[serde(rename = "test-unseen")]
    TestUnseen,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Role::TrainSeen => "train-seen",
            Role::TestSeen => "test-seen",
            Role::TestUnseen => "test-unseen",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub path: String,
    pub class: String,
    pub role: Role,
}

/// Dataset/sample/role/class assignments with seen-unseen disjointness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset: String,
    pub seed: u64,
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub records: Vec<SampleRecord>,
    /// Effective run configuration echoed by the tool that wrote the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("class {class:?} appears in both the seen and unseen lists")]
    Overlap { class: String },
    #[error("class {class:?} has no samples in the layout")]
    EmptyClass { class: String },
    #[error("record class {class:?} is in neither the seen nor the unseen list")]
    UnlistedClass { class: String },
    #[error("unknown split protocol {name:?} (expected modelnet, mcgill or shrec2015)")]
    UnknownProtocol { name: String },
    #[error("layout under {root:?} contains no mesh files")]
    EmptyLayout { root: String },
    #[error("layout classes {found:?} do not cover the protocol classes; missing {missing:?}")]
    MissingClasses { found: usize, missing: Vec<String> },
    #[error("io error under {path:?}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl SplitManifest {
    /// Builds a manifest from explicit parts, validating disjointness and
    /// record membership.
    pub fn from_parts(
        dataset: impl Into<String>,
        seed: u64,
        seen_classes: Vec<String>,
        unseen_classes: Vec<String>,
        records: Vec<SampleRecord>,
    ) -> Result<Self, SplitError> {
        let manifest = SplitManifest {
            dataset: dataset.into(),
            seed,
            seen_classes,
            unseen_classes,
            records,
            config: None,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Disjointness and membership checks; every constructor path runs this.
    pub fn validate(&self) -> Result<(), SplitError> {
        for class in &self.seen_classes {
            if self.unseen_classes.contains(class) {
                return Err(SplitError::Overlap { class: class.clone() });
            }
        }
        for record in &self.records {
            let in_seen = self.seen_classes.contains(&record.class);
            let in_unseen = self.unseen_classes.contains(&record.class);
            if !in_seen && !in_unseen {
                return Err(SplitError::UnlistedClass { class: record.class.clone() });
            }
            match record.role {
                Role::TrainSeen | Role::TestSeen if !in_seen => {
                    return Err(SplitError::UnlistedClass { class: record.class.clone() })
                }
                Role::TestUnseen if !in_unseen => {
                    return Err(SplitError::UnlistedClass { class: record.class.clone() })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.records.iter().filter(|r| r.role == role).count()
    }

    /// Combined class table: seen classes first, then unseen, both in their
    /// canonical order. Cache class indices refer to this table.
    pub fn class_table(&self) -> Vec<String> {
        let mut all = self.seen_classes.clone();
        all.extend(self.unseen_classes.iter().cloned());
        all
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let manifest: SplitManifest = serde_json::from_str(text)?;
        Ok(manifest)
    }
}

/// Applies a named protocol to a dataset layout.
pub fn build_split_manifest(
    layout: &DatasetLayout,
    protocol: Protocol,
    seed: u64,
) -> Result<SplitManifest, SplitError> {
    match protocol {
        Protocol::ModelNet => build_modelnet(layout, seed),
        Protocol::McGill => build_eval_only(layout, seed, "mcgill", mcgill_unseen_classes(), false),
        Protocol::Shrec2015 => build_eval_only(layout, seed, "shrec2015", shrec2015_unseen_classes(), true),
    }
}

fn class_counts(layout: &DatasetLayout) -> Result<(), SplitError> {
    for class in layout.classes() {
        let any = layout.entries().iter().any(|e| e.class == class);
        if !any {
            return Err(SplitError::EmptyClass { class });
        }
    }
    Ok(())
}

fn build_modelnet(layout: &DatasetLayout, seed: u64) -> Result<SplitManifest, SplitError> {
    class_counts(layout)?;
    let unseen = modelnet10_classes();
    let found = layout.classes();
    let seen: Vec<String> = found.iter().filter(|c| !unseen.contains(c)).cloned().collect();
    let missing: Vec<String> = unseen.iter().filter(|c| !found.contains(c)).cloned().collect();
    if !missing.is_empty() {
        return Err(SplitError::MissingClasses { found: found.len(), missing });
    }

    let mut records = Vec::new();
    for entry in layout.entries() {
        let is_unseen = unseen.contains(&entry.class);
        let role = match (is_unseen, entry.split) {
            (false, LayoutSplit::Train) => Some(Role::TrainSeen),
            (false, LayoutSplit::Test) => Some(Role::TestSeen),
            // Unseen classes contribute their test files only.
            (true, LayoutSplit::Test) => Some(Role::TestUnseen),
            (true, LayoutSplit::Train) => None,
            // Flat layouts cannot express the modelnet protocol.
            (_, LayoutSplit::Unmarked) => None,
        };
        if let Some(role) = role {
            records.push(SampleRecord { path: entry.path.clone(), class: entry.class.clone(), role });
        }
    }
    SplitManifest::from_parts("modelnet", seed, seen, unseen, records)
}

/// McGill and SHREC2015 manifests carry only `test-unseen` records; training
/// always happens on the modelnet seen split.
fn build_eval_only(
    layout: &DatasetLayout,
    seed: u64,
    dataset: &str,
    unseen: Vec<String>,
    random_quarter: bool,
) -> Result<SplitManifest, SplitError> {
    class_counts(layout)?;
    let found = layout.classes();
    let missing: Vec<String> = unseen.iter().filter(|c| !found.contains(c)).cloned().collect();
    if !missing.is_empty() {
        return Err(SplitError::MissingClasses { found: found.len(), missing });
    }

    let mut records = Vec::new();
    for class in &unseen {
        // Layout entries are path-sorted, which fixes the instance order.
        let instances: Vec<&super::layout::LayoutEntry> =
            layout.entries().iter().filter(|e| &e.class == class).collect();
        if instances.is_empty() {
            return Err(SplitError::EmptyClass { class: class.clone() });
        }
        let n = instances.len();
        let picked: Vec<usize> = if random_quarter {
            let take = (n / 4).max(1);
            let mut idx: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, class));
            idx.shuffle(&mut rng);
            let mut chosen = idx[..take].to_vec();
            chosen.sort_unstable();
            chosen
        } else {
            let test = n / 3;
            ((n - test)..n).collect()
        };
        for i in picked {
            records.push(SampleRecord {
                path: instances[i].path.clone(),
                class: class.clone(),
                role: Role::TestUnseen,
            });
        }
    }
    records.sort_by(|a, b| a.path.cmp(&b.path));
    SplitManifest::from_parts(dataset, seed, seen_classes(), unseen, records)
}
