//! Dataset manifests: CSV with header `path,label,split`.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::volume::Volume;
use crate::error::{bail, Error, Result};
use crate::tensor::RngState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => bail!(Format, "unknown split {other:?}; expected train, val or test"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct Row {
    path: String,
    label: usize,
    split: String,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(&e.path) {
                bail!(Format, "manifest lists {} twice", e.path.display());
            }
        }
        Ok(Self { entries })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| Error::Format(format!("manifest header: {e}")))?;
        if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
            bail!(Format, "manifest header must be `path,label,split`, got `{}`", headers.iter().collect::<Vec<_>>().join(","));
        }
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Format(format!("manifest row {}: {e}", i + 2)))?;
            if row.path.is_empty() {
                bail!(Format, "manifest row {}: empty path", i + 2);
            }
            entries.push(ManifestEntry {
                path: PathBuf::from(row.path),
                label: row.label,
                split: row.split.parse()?,
            });
        }
        Self::new(entries)
    }

    pub fn render(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let to_format = |e: csv::Error| Error::Format(format!("manifest: {e}"));
        writer.write_record(["path", "label", "split"]).map_err(to_format)?;
        for e in &self.entries {
            let path = e.path.to_string_lossy();
            writer
                .write_record([path.as_ref(), &e.label.to_string(), e.split.as_str()])
                .map_err(to_format)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Format(format!("manifest: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    /// Reads a manifest; relative entry paths are resolved against the
    /// manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in &mut manifest.entries {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Loads every volume of `split` with its manifest label attached.
    pub fn load_split(&self, split: Split) -> Result<Vec<Volume>> {
        self.split(split)
            .map(|e| {
                let mut v = Volume::load(&e.path)?;
                v.label = Some(e.label);
                Ok(v)
            })
            .collect()
    }
}

/// Assigns each `(path, label)` item to train/val/test so that every class
/// is partitioned at `fractions` (largest-remainder rounding, ties to the
/// earlier split) after a seeded per-class shuffle. Entries keep the input
/// order.
pub fn stratified_split(items: &[(PathBuf, usize)], fractions: [f64; 3], seed: u64) -> Result<Manifest> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        bail!(Parameter, "split fractions must lie in [0, 1], got {fractions:?}");
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        bail!(Parameter, "split fractions must sum to 1, got {total}");
    }
    let used_splits = fractions.iter().filter(|&&f| f > 0.0).count();
    let mut classes: Vec<usize> = items.iter().map(|(_, l)| *l).collect();
    classes.sort_unstable();
    classes.dedup();

    let root = RngState::new(seed);
    let mut assignment = vec![Split::Train; items.len()];
    for class in classes {
        let mut members: Vec<usize> = (0..items.len()).filter(|&i| items[i].1 == class).collect();
        if members.len() < used_splits {
            bail!(
                Contract,
                "class {class} has {} items, fewer than the {used_splits} requested splits",
                members.len()
            );
        }
        root.derive(&[class as u64]).shuffle(&mut members);
        let mut start = 0;
        for (split, count) in Split::ALL.into_iter().zip(split_counts(members.len(), fractions)) {
            for &i in &members[start..start + count] {
                assignment[i] = split;
            }
            start += count;
        }
    }
    let entries = items
        .iter()
        .zip(assignment)
        .map(|((path, label), split)| ManifestEntry {
            path: path.clone(),
            label: *label,
            split,
        })
        .collect();
    Manifest::new(entries)
}

/// Largest-remainder apportionment of `n` items.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}
