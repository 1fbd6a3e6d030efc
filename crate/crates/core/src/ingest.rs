//! Rating and label ingestion.
//!
//! Parses rating streams (MovieLens `ratings.dat` or generic CSV) into a
//! validated [`RatingDataset`] with dense item/user indices, applies the
//! minimum-ratings-per-item filter, and loads per-item label assignments
//! into a [`LabelSet`] restricted to labels above a frequency cutoff.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::snapshot::{self, SnapshotError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: rating {value} outside scale [{min}, {max}]")]
    OutOfScale {
        line: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("line {line}: duplicate rating for item {item:?} by user {user:?}")]
    DuplicatePair {
        line: usize,
        item: String,
        user: String,
    },
    #[error("line {line}: unknown item id {id:?}")]
    UnknownItem { line: usize, id: String },
    #[error("no labels meet the frequency cutoff {cutoff}")]
    EmptyLabelUniverse { cutoff: f64 },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// Inclusive rating bounds declared by the data source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    /// The MovieLens 10M half-star scale.
    pub const MOVIELENS: RatingScale = RatingScale { min: 0.5, max: 5.0 };

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

/// One observed rating, with dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub item: u32,
    pub user: u32,
    pub value: f64,
}

/// A validated sparse set of (item, user, rating) observations.
///
/// Item and user indices are dense in `[0, item_count)` and
/// `[0, user_count)`; the original external identifiers are kept in side
/// maps. The dataset is immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    ratings: Vec<Rating>,
    item_ids: Vec<String>,
    user_ids: Vec<String>,
    scale: RatingScale,
}

impl RatingDataset {
    /// Validates invariants: index density, scale bounds, pair uniqueness.
    pub fn new(
        ratings: Vec<Rating>,
        item_ids: Vec<String>,
        user_ids: Vec<String>,
        scale: RatingScale,
    ) -> Result<Self, IngestError> {
        if !(scale.min <= scale.max) {
            return Err(IngestError::InvalidDataset(format!(
                "scale min {} exceeds max {}",
                scale.min, scale.max
            )));
        }
        let (items, users) = (item_ids.len() as u32, user_ids.len() as u32);
        let mut seen = HashMap::with_capacity(ratings.len());
        for r in &ratings {
            if r.item >= items || r.user >= users {
                return Err(IngestError::InvalidDataset(format!(
                    "index ({}, {}) outside ({items}, {users})",
                    r.item, r.user
                )));
            }
            if !r.value.is_finite() || !scale.contains(r.value) {
                return Err(IngestError::InvalidDataset(format!(
                    "rating {} outside scale [{}, {}]",
                    r.value, scale.min, scale.max
                )));
            }
            if seen.insert((r.item, r.user), ()).is_some() {
                return Err(IngestError::InvalidDataset(format!(
                    "duplicate pair ({}, {})",
                    r.item, r.user
                )));
            }
        }
        Ok(Self {
            ratings,
            item_ids,
            user_ids,
            scale,
        })
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    /// Number of observed ratings.
    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    /// Mean of all observed ratings; 0 for an empty dataset.
    pub fn mean_rating(&self) -> f64 {
        if self.ratings.is_empty() {
            return 0.0;
        }
        self.ratings.iter().map(|r| r.value).sum::<f64>() / self.ratings.len() as f64
    }

    pub fn ratings_per_item(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.item_count()];
        for r in &self.ratings {
            counts[r.item as usize] += 1;
        }
        counts
    }

    pub fn ratings_per_user(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.user_count()];
        for r in &self.ratings {
            counts[r.user as usize] += 1;
        }
        counts
    }

    /// Per-item adjacency `(user, value)`, sorted by user index.
    pub fn by_item(&self) -> Vec<Vec<(u32, f64)>> {
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.item_count()];
        for r in &self.ratings {
            rows[r.item as usize].push((r.user, r.value));
        }
        for row in &mut rows {
            row.sort_unstable_by_key(|&(u, _)| u);
        }
        rows
    }

    /// Per-user adjacency `(item, value)`, sorted by item index.
    pub fn by_user(&self) -> Vec<Vec<(u32, f64)>> {
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); self.user_count()];
        for r in &self.ratings {
            cols[r.user as usize].push((r.item, r.value));
        }
        for col in &mut cols {
            col.sort_unstable_by_key(|&(i, _)| i);
        }
        cols
    }

    const MAGIC: &'static [u8; 4] = b"FSDS";
    const VERSION: u32 = 1;

    /// Canonical binary snapshot (triplets, scale, id maps).
    pub fn write_snapshot<W: Write>(&self, w: &mut W, provenance: &str) -> Result<(), IngestError> {
        snapshot::write_header(w, Self::MAGIC, Self::VERSION, provenance)?;
        snapshot::write_f64(w, self.scale.min)?;
        snapshot::write_f64(w, self.scale.max)?;
        snapshot::write_u32(w, self.item_ids.len() as u32)?;
        snapshot::write_u32(w, self.user_ids.len() as u32)?;
        for id in self.item_ids.iter().chain(self.user_ids.iter()) {
            snapshot::write_str(w, id)?;
        }
        snapshot::write_u64(w, self.ratings.len() as u64)?;
        for r in &self.ratings {
            snapshot::write_u32(w, r.item)?;
            snapshot::write_u32(w, r.user)?;
            snapshot::write_f64(w, r.value)?;
        }
        Ok(())
    }

    /// Reads a snapshot; returns the dataset and its provenance string.
    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(Self, String), IngestError> {
        let provenance = snapshot::read_header(r, Self::MAGIC, Self::VERSION)?;
        let min = snapshot::read_f64(r)?;
        let max = snapshot::read_f64(r)?;
        let items = snapshot::read_u32(r)? as usize;
        let users = snapshot::read_u32(r)? as usize;
        let mut item_ids = Vec::with_capacity(items);
        for _ in 0..items {
            item_ids.push(snapshot::read_str(r)?);
        }
        let mut user_ids = Vec::with_capacity(users);
        for _ in 0..users {
            user_ids.push(snapshot::read_str(r)?);
        }
        let n = snapshot::read_u64(r)? as usize;
        let mut ratings = Vec::with_capacity(n);
        for _ in 0..n {
            ratings.push(Rating {
                item: snapshot::read_u32(r)?,
                user: snapshot::read_u32(r)?,
                value: snapshot::read_f64(r)?,
            });
        }
        let ds = Self::new(ratings, item_ids, user_ids, RatingScale { min, max })?;
        Ok((ds, provenance))
    }

    /// CSV snapshot with dense indices (`item,user,rating`).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<(), IngestError> {
        writeln!(w, "item,user,rating")?;
        for r in &self.ratings {
            writeln!(w, "{},{},{}", r.item, r.user, r.value)?;
        }
        Ok(())
    }

    /// Sidecar mapping dense indices back to external ids.
    pub fn write_id_map<W: Write>(&self, w: &mut W) -> Result<(), IngestError> {
        writeln!(w, "kind,index,external_id")?;
        for (i, id) in self.item_ids.iter().enumerate() {
            writeln!(w, "item,{i},{id}")?;
        }
        for (u, id) in self.user_ids.iter().enumerate() {
            writeln!(w, "user,{u},{id}")?;
        }
        Ok(())
    }
}

/// Rating wire formats. Auto-detection is deliberately not offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatingFormat {
    /// `UserID::MovieID::Rating::Timestamp` (timestamp ignored).
    MovieLensDat,
    /// Headered `item,user,rating`.
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DedupePolicy {
    /// Duplicate (item, user) pairs are an error.
    #[default]
    Error,
    /// Later records replace earlier ones.
    KeepLast,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub format: RatingFormat,
    pub scale: RatingScale,
    pub dedupe: DedupePolicy,
}

impl ParseOptions {
    pub fn new(format: RatingFormat, scale: RatingScale) -> Self {
        Self {
            format,
            scale,
            dedupe: DedupePolicy::Error,
        }
    }
}

struct Indexer {
    map: HashMap<String, u32>,
    ids: Vec<String>,
}

impl Indexer {
    fn new() -> Self {
        Self {
            map: HashMap::new(),
            ids: Vec::new(),
        }
    }

    fn dense(&mut self, external: &str) -> u32 {
        if let Some(&i) = self.map.get(external) {
            return i;
        }
        let i = self.ids.len() as u32;
        self.map.insert(external.to_owned(), i);
        self.ids.push(external.to_owned());
        i
    }
}

/// Parses a rating stream into a dense-indexed dataset.
///
/// Item and user indices are assigned in order of first appearance, so the
/// result is deterministic for a given stream.
pub fn parse_ratings<R: BufRead>(
    reader: R,
    opts: &ParseOptions,
) -> Result<RatingDataset, IngestError> {
    let mut items = Indexer::new();
    let mut users = Indexer::new();
    let mut ratings: Vec<Rating> = Vec::new();
    let mut pair_index: HashMap<(u32, u32), usize> = HashMap::new();
    let mut header_seen = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let (item_id, user_id, value_str) = match opts.format {
            RatingFormat::MovieLensDat => {
                let f: Vec<&str> = line.split("::").collect();
                if f.len() != 4 {
                    return Err(IngestError::Malformed {
                        line: line_no,
                        reason: "expected UserID::MovieID::Rating::Timestamp".into(),
                    });
                }
                (f[1], f[0], f[2])
            }
            RatingFormat::Csv => {
                if !header_seen {
                    header_seen = true;
                    let header: Vec<&str> = line.split(',').map(str::trim).collect();
                    if header != ["item", "user", "rating"] {
                        return Err(IngestError::Malformed {
                            line: line_no,
                            reason: format!("expected header 'item,user,rating', got {line:?}"),
                        });
                    }
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(IngestError::Malformed {
                        line: line_no,
                        reason: format!("expected 3 comma-separated fields, got {}", f.len()),
                    });
                }
                (f[0].trim(), f[1].trim(), f[2].trim())
            }
        };

        let value: f64 = value_str.parse().map_err(|_| IngestError::Malformed {
            line: line_no,
            reason: format!("unparseable rating {value_str:?}"),
        })?;
        if !value.is_finite() || !opts.scale.contains(value) {
            return Err(IngestError::OutOfScale {
                line: line_no,
                value,
                min: opts.scale.min,
                max: opts.scale.max,
            });
        }

        let item = items.dense(item_id);
        let user = users.dense(user_id);
        match pair_index.get(&(item, user)) {
            None => {
                pair_index.insert((item, user), ratings.len());
                ratings.push(Rating { item, user, value });
            }
            Some(&at) => match opts.dedupe {
                DedupePolicy::Error => {
                    return Err(IngestError::DuplicatePair {
                        line: line_no,
                        item: item_id.to_owned(),
                        user: user_id.to_owned(),
                    })
                }
                DedupePolicy::KeepLast => ratings[at].value = value,
            },
        }
    }

    RatingDataset::new(ratings, items.ids, users.ids, opts.scale)
}

/// Drops items with fewer than `min_per_item` ratings, re-densifies indices,
/// and drops users left with zero ratings. Idempotent for a fixed threshold.
pub fn filter_min_ratings(ds: &RatingDataset, min_per_item: usize) -> RatingDataset {
    let counts = ds.ratings_per_item();
    let keep_item: Vec<bool> = counts.iter().map(|&c| c >= min_per_item).collect();
    retain(ds, &keep_item)
}

/// Optional companion filter over users; the item filter is the primary one.
pub fn filter_min_user_ratings(ds: &RatingDataset, min_per_user: usize) -> RatingDataset {
    let counts = ds.ratings_per_user();
    let keep_user: Vec<bool> = counts.iter().map(|&c| c >= min_per_user).collect();

    let mut user_index = vec![u32::MAX; ds.user_count()];
    let mut user_ids = Vec::new();
    for (u, id) in ds.user_ids().iter().enumerate() {
        if keep_user[u] {
            user_index[u] = user_ids.len() as u32;
            user_ids.push(id.clone());
        }
    }
    let kept: Vec<Rating> = ds
        .ratings()
        .iter()
        .filter(|r| keep_user[r.user as usize])
        .map(|r| Rating {
            item: r.item,
            user: user_index[r.user as usize],
            value: r.value,
        })
        .collect();

    // Items may now be empty; keep only items that still have ratings.
    let mut item_has = vec![false; ds.item_count()];
    for r in &kept {
        item_has[r.item as usize] = true;
    }
    let mut item_index = vec![u32::MAX; ds.item_count()];
    let mut item_ids = Vec::new();
    for (i, id) in ds.item_ids().iter().enumerate() {
        if item_has[i] {
            item_index[i] = item_ids.len() as u32;
            item_ids.push(id.clone());
        }
    }
    let ratings = kept
        .into_iter()
        .map(|r| Rating {
            item: item_index[r.item as usize],
            user: r.user,
            value: r.value,
        })
        .collect();
    RatingDataset::new(ratings, item_ids, user_ids, ds.scale())
        .expect("filtering preserves dataset invariants")
}

fn retain(ds: &RatingDataset, keep_item: &[bool]) -> RatingDataset {
    let mut item_index = vec![u32::MAX; ds.item_count()];
    let mut item_ids = Vec::new();
    for (i, id) in ds.item_ids().iter().enumerate() {
        if keep_item[i] {
            item_index[i] = item_ids.len() as u32;
            item_ids.push(id.clone());
        }
    }

    let kept: Vec<&Rating> = ds
        .ratings()
        .iter()
        .filter(|r| keep_item[r.item as usize])
        .collect();

    let mut user_has = vec![false; ds.user_count()];
    for r in &kept {
        user_has[r.user as usize] = true;
    }
    let mut user_index = vec![u32::MAX; ds.user_count()];
    let mut user_ids = Vec::new();
    for (u, id) in ds.user_ids().iter().enumerate() {
        if user_has[u] {
            user_index[u] = user_ids.len() as u32;
            user_ids.push(id.clone());
        }
    }

    let ratings = kept
        .into_iter()
        .map(|r| Rating {
            item: item_index[r.item as usize],
            user: user_index[r.user as usize],
            value: r.value,
        })
        .collect();
    RatingDataset::new(ratings, item_ids, user_ids, ds.scale())
        .expect("filtering preserves dataset invariants")
}

/// What to do with label rows whose item id is not in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownItemPolicy {
    /// Skip the row and log a warning (items filtered from the dataset
    /// routinely still appear in label files).
    #[default]
    Skip,
    Fail,
}

/// Per-item multi-label assignments over a fixed label universe.
///
/// Only labels whose relative frequency reaches the cutoff are retained;
/// items may hold zero labels, which makes them negatives for every label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    labels: Vec<String>,
    assignments: Vec<Vec<u16>>,
    counts: Vec<usize>,
    cutoff: f64,
}

impl LabelSet {
    pub fn new(
        labels: Vec<String>,
        assignments: Vec<Vec<u16>>,
        cutoff: f64,
    ) -> Result<Self, IngestError> {
        let mut counts = vec![0usize; labels.len()];
        for row in &assignments {
            let mut prev: Option<u16> = None;
            for &g in row {
                if g as usize >= labels.len() {
                    return Err(IngestError::InvalidDataset(format!(
                        "label index {g} outside universe of {}",
                        labels.len()
                    )));
                }
                if prev.is_some_and(|p| p >= g) {
                    return Err(IngestError::InvalidDataset(
                        "assignments must be strictly increasing per item".into(),
                    ));
                }
                prev = Some(g);
                counts[g as usize] += 1;
            }
        }
        Ok(Self {
            labels,
            assignments,
            counts,
            cutoff,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn item_count(&self) -> usize {
        self.assignments.len()
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Sorted label indices held by `item`.
    pub fn assignments(&self, item: usize) -> &[u16] {
        &self.assignments[item]
    }

    pub fn has_label(&self, item: usize, label: u16) -> bool {
        self.assignments[item].binary_search(&label).is_ok()
    }

    /// Items holding each label.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Relative frequency of each label over all items.
    pub fn frequencies(&self) -> Vec<f64> {
        let items = self.item_count() as f64;
        self.counts.iter().map(|&c| c as f64 / items).collect()
    }

    /// Membership mask for one label over all items.
    pub fn mask(&self, label: u16) -> Vec<bool> {
        (0..self.item_count())
            .map(|i| self.has_label(i, label))
            .collect()
    }

    pub fn total_assignments(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    const MAGIC: &'static [u8; 4] = b"FSLS";
    const VERSION: u32 = 1;

    pub fn write_snapshot<W: Write>(&self, w: &mut W, provenance: &str) -> Result<(), IngestError> {
        snapshot::write_header(w, Self::MAGIC, Self::VERSION, provenance)?;
        snapshot::write_f64(w, self.cutoff)?;
        snapshot::write_u32(w, self.labels.len() as u32)?;
        for l in &self.labels {
            snapshot::write_str(w, l)?;
        }
        snapshot::write_u32(w, self.assignments.len() as u32)?;
        for row in &self.assignments {
            snapshot::write_u32(w, row.len() as u32)?;
            for &g in row {
                snapshot::write_u32(w, u32::from(g))?;
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(Self, String), IngestError> {
        let provenance = snapshot::read_header(r, Self::MAGIC, Self::VERSION)?;
        let cutoff = snapshot::read_f64(r)?;
        let n_labels = snapshot::read_u32(r)? as usize;
        let mut labels = Vec::with_capacity(n_labels);
        for _ in 0..n_labels {
            labels.push(snapshot::read_str(r)?);
        }
        let n_items = snapshot::read_u32(r)? as usize;
        let mut assignments = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            let k = snapshot::read_u32(r)? as usize;
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                row.push(snapshot::read_u32(r)? as u16);
            }
            assignments.push(row);
        }
        let set = Self::new(labels, assignments, cutoff)?;
        Ok((set, provenance))
    }
}

/// Parses a headered `item_id,label` CSV into a [`LabelSet`] over the
/// dataset's retained items, dropping labels below the frequency cutoff.
pub fn parse_labels<R: BufRead>(
    reader: R,
    ds: &RatingDataset,
    cutoff: f64,
    unknown: UnknownItemPolicy,
) -> Result<LabelSet, IngestError> {
    let item_index: HashMap<&str, u32> = ds
        .item_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i as u32))
        .collect();

    let mut label_names: Vec<String> = Vec::new();
    let mut label_index: HashMap<String, u16> = HashMap::new();
    // Raw assignment sets over the full universe, set semantics per item.
    let mut raw: Vec<Vec<u16>> = vec![Vec::new(); ds.item_count()];
    let mut header_seen = false;
    let mut skipped = 0usize;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            let header: Vec<&str> = line.split(',').map(str::trim).collect();
            if header != ["item_id", "label"] {
                return Err(IngestError::Malformed {
                    line: line_no,
                    reason: format!("expected header 'item_id,label', got {line:?}"),
                });
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 2 {
            return Err(IngestError::Malformed {
                line: line_no,
                reason: format!("expected 2 comma-separated fields, got {}", f.len()),
            });
        }
        let (item_id, label) = (f[0].trim(), f[1].trim());
        let Some(&item) = item_index.get(item_id) else {
            match unknown {
                UnknownItemPolicy::Skip => {
                    skipped += 1;
                    continue;
                }
                UnknownItemPolicy::Fail => {
                    return Err(IngestError::UnknownItem {
                        line: line_no,
                        id: item_id.to_owned(),
                    })
                }
            }
        };
        let g = match label_index.get(label) {
            Some(&g) => g,
            None => {
                let g = label_names.len() as u16;
                label_index.insert(label.to_owned(), g);
                label_names.push(label.to_owned());
                g
            }
        };
        let row = &mut raw[item as usize];
        if let Err(at) = row.binary_search(&g) {
            row.insert(at, g);
        }
    }
    if skipped > 0 {
        log::warn!("parse_labels: skipped {skipped} rows with unknown item ids");
    }

    // Frequencies over retained items; drop labels below the cutoff and
    // re-index the survivors in alphabetical order.
    let items = ds.item_count();
    let mut counts = vec![0usize; label_names.len()];
    for row in &raw {
        for &g in row {
            counts[g as usize] += 1;
        }
    }
    let mut retained: Vec<u16> = (0..label_names.len() as u16)
        .filter(|&g| items > 0 && counts[g as usize] as f64 / items as f64 >= cutoff)
        .collect();
    retained.sort_by(|&a, &b| label_names[a as usize].cmp(&label_names[b as usize]));
    if retained.is_empty() {
        return Err(IngestError::EmptyLabelUniverse { cutoff });
    }

    let mut remap = vec![u16::MAX; label_names.len()];
    let mut labels = Vec::with_capacity(retained.len());
    for (new, &old) in retained.iter().enumerate() {
        remap[old as usize] = new as u16;
        labels.push(label_names[old as usize].clone());
    }
    let assignments: Vec<Vec<u16>> = raw
        .into_iter()
        .map(|row| {
            let mut mapped: Vec<u16> = row
                .into_iter()
                .filter_map(|g| {
                    let m = remap[g as usize];
                    (m != u16::MAX).then_some(m)
                })
                .collect();
            mapped.sort_unstable();
            mapped
        })
        .collect();

    LabelSet::new(labels, assignments, cutoff)
}
