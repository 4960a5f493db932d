//! Description of an on-disk dataset: one entry per mesh file with its class
//! and, when the directory structure provides one, a train/test marker.

use std::path::Path;

use super::mesh::MeshFormat;
use super::split::SplitError;

/// Train/test marker carried by the directory layout itself (ModelNet-style
/// `class/train/*.off`, `class/test/*.off`). Flat layouts have no marker and
/// the split protocol derives membership on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutSplit {
    Train,
    Test,
    Unmarked,
}

#[derive(Debug, Clone)]
pub struct LayoutEntry {
    /// Path relative to the dataset root, with `/` separators.
    pub path: String,
    pub class: String,
    pub split: LayoutSplit,
}

/// Flat list of every sample file in a dataset, sorted by path.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    entries: Vec<LayoutEntry>,
}

impl DatasetLayout {
    pub fn from_entries(mut entries: Vec<LayoutEntry>) -> Self {
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        DatasetLayout { entries }
    }

    /// Walks `root/<class>[/train|/test]/*.{off,ply}`.
    pub fn scan(root: &Path) -> Result<Self, SplitError> {
        let mut entries = Vec::new();
        let classes = read_sorted_dirs(root)?;
        for class in classes {
            let class_dir = root.join(&class);
            let subdirs = read_sorted_dirs(&class_dir)?;
            let marked: Vec<(&str, LayoutSplit)> = vec![("train", LayoutSplit::Train), ("test", LayoutSplit::Test)];
            let mut found_marked = false;
            for (name, split) in &marked {
                if subdirs.iter().any(|d| d == name) {
                    found_marked = true;
                    push_files(&class_dir.join(name), &format!("{class}/{name}"), &class, *split, &mut entries)?;
                }
            }
            if !found_marked {
                push_files(&class_dir, &class, &class, LayoutSplit::Unmarked, &mut entries)?;
            }
        }
        if entries.is_empty() {
            return Err(SplitError::EmptyLayout { root: root.display().to_string() });
        }
        Ok(DatasetLayout::from_entries(entries))
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct class names in sorted order.
    pub fn classes(&self) -> Vec<String> {
        let mut names: Vec<String> = self.entries.iter().map(|e| e.class.clone()).collect();
        names.sort();
        names.dedup();
        names
    }
}

fn read_sorted_dirs(path: &Path) -> Result<Vec<String>, SplitError> {
    let mut out = Vec::new();
    let iter = std::fs::read_dir(path).map_err(|e| SplitError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    for entry in iter {
        let entry = entry.map_err(|e| SplitError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        if entry.path().is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

fn push_files(
    dir: &Path,
    rel_prefix: &str,
    class: &str,
    split: LayoutSplit,
    entries: &mut Vec<LayoutEntry>,
) -> Result<(), SplitError> {
    let iter = std::fs::read_dir(dir).map_err(|e| SplitError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    for entry in iter {
        let entry = entry.map_err(|e| SplitError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_file() && MeshFormat::from_extension(&name).is_some() {
            entries.push(LayoutEntry {
                path: format!("{rel_prefix}/{name}"),
                class: class.to_string(),
                split,
            });
        }
    }
    Ok(())
}
