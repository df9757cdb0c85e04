//! Interaction-log ingestion: parse, filter, index, split, windowize, plus a
//! planted-bubble synthetic generator for desk-scale experiments.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::fnv1a64;

/// Reserved padding index; never maps to a real item.
pub const PADDING: u32 = 0;

/// Default cap on history length fed to the sequence model.
pub const DEFAULT_LOOKBACK: usize = 50;

/// One user-item interaction row. The item is the streamer being watched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub stream_session_id: String,
    pub time_start: i64,
    pub time_stop: i64,
}

/// Chronological per-user split membership.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Split {
    Train = 0,
    Validation = 1,
    Test = 2,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Split::Train),
            1 => Ok(Split::Validation),
            2 => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split tag {v}"))),
        }
    }
}

/// Bijection between retained item ids and dense indices `1..=len`.
/// Index 0 is the padding token and never maps to an item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemCatalog {
    ids: Vec<String>,
    index_of: HashMap<String, u32>,
}

impl ItemCatalog {
    /// Catalog over the distinct items of `records`, indexed in
    /// lexicographic id order so the mapping is independent of row order.
    pub fn build(records: &[InteractionRecord]) -> Self {
        let mut ids: Vec<String> = records.iter().map(|r| r.item_id.clone()).collect();
        ids.sort_unstable();
        ids.dedup();
        let index_of = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), (i + 1) as u32))
            .collect();
        ItemCatalog { ids, index_of }
    }

    /// Number of real items (indices run `1..=len`).
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self, item_id: &str) -> Option<u32> {
        self.index_of.get(item_id).copied()
    }

    pub fn id(&self, index: u32) -> Option<&str> {
        if index == PADDING {
            return None;
        }
        self.ids.get(index as usize - 1).map(String::as_str)
    }
}

/// Dense user indices `0..len`, lexicographic over user ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserCatalog {
    ids: Vec<String>,
    index_of: HashMap<String, u32>,
}

impl UserCatalog {
    pub fn build(records: &[InteractionRecord]) -> Self {
        let mut ids: Vec<String> = records.iter().map(|r| r.user_id.clone()).collect();
        ids.sort_unstable();
        ids.dedup();
        let index_of = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        UserCatalog { ids, index_of }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index(&self, user_id: &str) -> Option<u32> {
        self.index_of.get(user_id).copied()
    }

    pub fn id(&self, index: u32) -> Option<&str> {
        self.ids.get(index as usize).map(String::as_str)
    }
}

/// Interaction after catalog indexing and split labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRecord {
    pub user: u32,
    pub item: u32,
    pub time_start: i64,
    pub time_stop: i64,
    pub split: Split,
}

/// One (history, next item) training or evaluation point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceExample {
    pub user: u32,
    /// Up to `lookback` item indices immediately preceding the target,
    /// oldest first. Never empty, never contains the padding index.
    pub history: Vec<u32>,
    pub target: u32,
    pub split: Split,
}

impl SequenceExample {
    pub fn history_len(&self) -> usize {
        self.history.len()
    }
}

/// Parse CSV interaction rows: user, session, streamer, time start, time stop.
///
/// Rows must have exactly five non-empty fields; times must parse as
/// integers with `stop >= start`. Errors name the offending 1-based line.
pub fn parse_interactions<R: BufRead>(reader: R, has_header: bool) -> Result<Vec<InteractionRecord>> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 && has_header {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: lineno,
                msg: "empty field".into(),
            });
        }
        let time_start: i64 = fields[3].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("non-integer time start {:?}", fields[3]),
        })?;
        let time_stop: i64 = fields[4].parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("non-integer time stop {:?}", fields[4]),
        })?;
        if time_stop < time_start {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("time stop {time_stop} precedes time start {time_start}"),
            });
        }
        records.push(InteractionRecord {
            user_id: fields[0].to_string(),
            item_id: fields[2].to_string(),
            stream_session_id: fields[1].to_string(),
            time_start,
            time_stop,
        });
    }
    Ok(records)
}

/// Drop rare items, then users left with too few records.
///
/// Two single passes in that order, no fixpoint iteration: first every
/// record of an item with fewer than `min_item_interactions` total records
/// goes, then every record of a user with fewer than
/// `min_user_interactions` remaining records.
pub fn filter_dataset(
    records: Vec<InteractionRecord>,
    min_item_interactions: usize,
    min_user_interactions: usize,
) -> Vec<InteractionRecord> {
    let mut item_counts: HashMap<&str, usize> = HashMap::new();
    for r in &records {
        *item_counts.entry(r.item_id.as_str()).or_default() += 1;
    }
    let keep_item: Vec<bool> = records
        .iter()
        .map(|r| item_counts[r.item_id.as_str()] >= min_item_interactions)
        .collect();

    let mut user_counts: HashMap<&str, usize> = HashMap::new();
    for (r, keep) in records.iter().zip(&keep_item) {
        if *keep {
            *user_counts.entry(r.user_id.as_str()).or_default() += 1;
        }
    }

    records
        .iter()
        .zip(&keep_item)
        .filter(|(r, keep)| {
            **keep && user_counts.get(r.user_id.as_str()).copied().unwrap_or(0) >= min_user_interactions
        })
        .map(|(r, _)| r.clone())
        .collect()
}

/// Keep all records of `n_users` distinct users sampled uniformly without
/// replacement. Record order is preserved.
pub fn sample_users<R: Rng>(
    records: &[InteractionRecord],
    n_users: usize,
    rng: &mut R,
) -> Result<Vec<InteractionRecord>> {
    let mut users: Vec<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    users.sort_unstable();
    users.dedup();
    if n_users > users.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n_users} users from a population of {}",
            users.len()
        )));
    }
    let chosen: Vec<&str> = users
        .choose_multiple(rng, n_users)
        .copied()
        .collect();
    let chosen: std::collections::HashSet<&str> = chosen.into_iter().collect();
    Ok(records
        .iter()
        .filter(|r| chosen.contains(r.user_id.as_str()))
        .cloned()
        .collect())
}

/// Sizes of the per-user chronological 80/10/10 split.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

/// Index records against fresh catalogs and label each one with its
/// per-user temporal split.
///
/// Output records are grouped by user index ascending and, within a user,
/// sorted by `time_start` with ties kept in input order. Per user the first
/// `floor(0.8 n)` records are train, the next `floor(0.1 n)` validation,
/// and the remainder test.
pub fn index_and_split(
    records: &[InteractionRecord],
) -> (ItemCatalog, UserCatalog, Vec<SplitRecord>) {
    let items = ItemCatalog::build(records);
    let users = UserCatalog::build(records);

    let mut per_user: Vec<Vec<SplitRecord>> = vec![Vec::new(); users.len()];
    for r in records {
        let user = users.index(&r.user_id).expect("user in catalog");
        let item = items.index(&r.item_id).expect("item in catalog");
        per_user[user as usize].push(SplitRecord {
            user,
            item,
            time_start: r.time_start,
            time_stop: r.time_stop,
            split: Split::Train,
        });
    }

    let mut out = Vec::with_capacity(records.len());
    for user_records in &mut per_user {
        user_records.sort_by_key(|r| r.time_start);
        let (n_train, n_val, _) = split_counts(user_records.len());
        for (i, r) in user_records.iter_mut().enumerate() {
            r.split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
        }
        out.extend(user_records.iter().copied());
    }
    (items, users, out)
}

/// Expand split records into next-item examples.
///
/// One example per position >= 2 of each user's full chronological
/// sequence; the history holds up to `lookback` immediately preceding items
/// and may reach backward across split boundaries, never forward. The
/// example's split is the target record's split. Expects records in the
/// order produced by [`index_and_split`].
pub fn windowize(records: &[SplitRecord], lookback: usize) -> Vec<SequenceExample> {
    assert!(lookback >= 1, "lookback must be at least 1");
    let mut examples = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let user = records[i].user;
        let mut j = i;
        while j < records.len() && records[j].user == user {
            j += 1;
        }
        let seq = &records[i..j];
        for pos in 1..seq.len() {
            let lo = pos.saturating_sub(lookback);
            examples.push(SequenceExample {
                user,
                history: seq[lo..pos].iter().map(|r| r.item).collect(),
                target: seq[pos].item,
                split: seq[pos].split,
            });
        }
        i = j;
    }
    examples
}

/// Configuration for the planted-bubble synthetic generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_communities: usize,
    /// Probability that an interaction stays inside the user's home community.
    pub bubble_strength: f64,
    pub records_per_user: usize,
}

/// Generate interaction logs with planted community structure.
///
/// Items split into `n_communities` equal blocks; every user gets a home
/// block and each interaction picks from it with probability
/// `bubble_strength`, otherwise uniformly from all items. Timestamps
/// strictly increase per user.
pub fn generate_synthetic<R: Rng>(
    cfg: &SyntheticConfig,
    rng: &mut R,
) -> Result<Vec<InteractionRecord>> {
    if !(0.0..=1.0).contains(&cfg.bubble_strength) {
        return Err(Error::InvalidArgument(format!(
            "bubble_strength {} outside [0, 1]",
            cfg.bubble_strength
        )));
    }
    if cfg.n_communities == 0 || cfg.n_items % cfg.n_communities != 0 {
        return Err(Error::InvalidArgument(format!(
            "n_items {} not divisible by n_communities {}",
            cfg.n_items, cfg.n_communities
        )));
    }
    let block = cfg.n_items / cfg.n_communities;
    let mut records = Vec::with_capacity(cfg.n_users * cfg.records_per_user);
    for u in 0..cfg.n_users {
        let home = rng.gen_range(0..cfg.n_communities);
        for t in 0..cfg.records_per_user {
            let item = if rng.gen::<f64>() < cfg.bubble_strength {
                home * block + rng.gen_range(0..block)
            } else {
                rng.gen_range(0..cfg.n_items)
            };
            records.push(InteractionRecord {
                user_id: format!("user{u:05}"),
                item_id: format!("item{item:05}"),
                stream_session_id: format!("s{u:05}_{t:04}"),
                time_start: t as i64,
                time_stop: t as i64 + 1,
            });
        }
    }
    Ok(records)
}

/// Aggregate interaction statistics for a before/after report.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct InteractionStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_records: usize,
    pub mean_interactions_per_user: f64,
    pub mean_unique_items_per_user: f64,
}

pub fn interaction_stats(records: &[InteractionRecord]) -> InteractionStats {
    let mut per_user: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut items: std::collections::HashSet<&str> = std::collections::HashSet::new();
    for r in records {
        per_user.entry(r.user_id.as_str()).or_default().push(r.item_id.as_str());
        items.insert(r.item_id.as_str());
    }
    let n_users = per_user.len();
    let mean_interactions = if n_users == 0 {
        0.0
    } else {
        records.len() as f64 / n_users as f64
    };
    let mean_unique = if n_users == 0 {
        0.0
    } else {
        per_user
            .values()
            .map(|v| {
                let mut v: Vec<&str> = v.clone();
                v.sort_unstable();
                v.dedup();
                v.len() as f64
            })
            .sum::<f64>()
            / n_users as f64
    };
    InteractionStats {
        n_users,
        n_items: items.len(),
        n_records: records.len(),
        mean_interactions_per_user: mean_interactions,
        mean_unique_items_per_user: mean_unique,
    }
}

/// The persisted, indexed, split-labeled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: ItemCatalog,
    pub users: UserCatalog,
    pub records: Vec<SplitRecord>,
    pub examples: Vec<SequenceExample>,
    pub lookback: u32,
}

const DATASET_MAGIC: &[u8; 8] = b"RDIVDSET";
const DATASET_VERSION: u32 = 1;

impl Dataset {
    /// Run the indexing, splitting, and windowizing pipeline over filtered
    /// (and optionally sampled) records.
    pub fn build(records: &[InteractionRecord], lookback: usize) -> Self {
        let (items, users, split_records) = index_and_split(records);
        let examples = windowize(&split_records, lookback);
        Dataset {
            items,
            users,
            records: split_records,
            examples,
            lookback: lookback as u32,
        }
    }

    pub fn examples_in(&self, split: Split) -> Vec<SequenceExample> {
        self.examples.iter().filter(|e| e.split == split).cloned().collect()
    }

    /// Number of real items (vocabulary size excluding padding).
    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.lookback.to_le_bytes());

        buf.extend_from_slice(&(self.items.len() as u32).to_le_bytes());
        for i in 1..=self.items.len() as u32 {
            write_str(&mut buf, self.items.id(i).unwrap());
        }
        buf.extend_from_slice(&(self.users.len() as u32).to_le_bytes());
        for u in 0..self.users.len() as u32 {
            write_str(&mut buf, self.users.id(u).unwrap());
        }

        buf.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            buf.extend_from_slice(&r.user.to_le_bytes());
            buf.extend_from_slice(&r.item.to_le_bytes());
            buf.extend_from_slice(&r.time_start.to_le_bytes());
            buf.extend_from_slice(&r.time_stop.to_le_bytes());
            buf.push(r.split as u8);
        }

        buf.extend_from_slice(&(self.examples.len() as u64).to_le_bytes());
        for e in &self.examples {
            buf.extend_from_slice(&e.user.to_le_bytes());
            buf.push(e.split as u8);
            buf.extend_from_slice(&e.target.to_le_bytes());
            buf.extend_from_slice(&(e.history.len() as u16).to_le_bytes());
            for &it in &e.history {
                buf.extend_from_slice(&it.to_le_bytes());
            }
        }

        let checksum = fnv1a64(&buf);
        buf.extend_from_slice(&checksum.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DATASET_MAGIC.len() + 12 {
            return Err(Error::Format("dataset file truncated".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().unwrap());
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Cursor { buf: body, pos: 0 };
        if r.take(8)? != DATASET_MAGIC.as_slice() {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset schema version {version}"
            )));
        }
        let lookback = r.u32()?;

        let n_items = r.u32()? as usize;
        let mut item_ids = Vec::with_capacity(n_items);
        for _ in 0..n_items {
            item_ids.push(r.string()?);
        }
        let n_users = r.u32()? as usize;
        let mut user_ids = Vec::with_capacity(n_users);
        for _ in 0..n_users {
            user_ids.push(r.string()?);
        }

        let n_records = r.u64()? as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            records.push(SplitRecord {
                user: r.u32()?,
                item: r.u32()?,
                time_start: r.i64()?,
                time_stop: r.i64()?,
                split: Split::from_u8(r.u8()?)?,
            });
        }

        let n_examples = r.u64()? as usize;
        let mut examples = Vec::with_capacity(n_examples);
        for _ in 0..n_examples {
            let user = r.u32()?;
            let split = Split::from_u8(r.u8()?)?;
            let target = r.u32()?;
            let hist_len = r.u16()? as usize;
            let mut history = Vec::with_capacity(hist_len);
            for _ in 0..hist_len {
                history.push(r.u32()?);
            }
            examples.push(SequenceExample {
                user,
                history,
                target,
                split,
            });
        }
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in dataset file".into()));
        }

        let index_of_items = item_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), (i + 1) as u32))
            .collect();
        let index_of_users = user_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        Ok(Dataset {
            items: ItemCatalog {
                ids: item_ids,
                index_of: index_of_items,
            },
            users: UserCatalog {
                ids: user_ids,
                index_of: index_of_users,
            },
            records,
            examples,
            lookback,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("dataset file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format("invalid utf-8 in catalog".into()))
    }
}
