//! Item catalog, user behavior sequences, and the chronological train/target
//! split consumed by every other module.
//!
//! Ingestion reads two delimiter-separated files (items: `item_id,title`,
//! interactions: `user_id,item_id,timestamp`), drops items without titles,
//! orders each user's interactions chronologically, and assigns dense ids by
//! sorting external keys lexicographically so repeated runs over the same
//! files produce identical ids.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Dense index of an item in the catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

/// Dense index of a user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl UserId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Immutable item universe: one description and one external key per item.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    descriptions: Vec<String>,
    external_keys: Vec<String>,
    key_index: HashMap<String, ItemId>,
}

impl Catalog {
    /// Builds a catalog from parallel key/description lists. Keys must be
    /// unique and descriptions non-empty; callers are expected to have
    /// filtered and sorted already (see [`ingest`]).
    pub fn new(external_keys: Vec<String>, descriptions: Vec<String>) -> Self {
        assert_eq!(external_keys.len(), descriptions.len());
        let key_index = external_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), ItemId(i as u32)))
            .collect();
        Catalog {
            descriptions,
            external_keys,
            key_index,
        }
    }

    pub fn len(&self) -> usize {
        self.descriptions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn contains(&self, id: ItemId) -> bool {
        id.index() < self.len()
    }

    pub fn description(&self, id: ItemId) -> &str {
        &self.descriptions[id.index()]
    }

    pub fn external_key(&self, id: ItemId) -> &str {
        &self.external_keys[id.index()]
    }

    /// Dense id for an external item key, if the key is in the catalog.
    pub fn resolve_key(&self, key: &str) -> Option<ItemId> {
        self.key_index.get(key).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.len() as u32).map(ItemId)
    }

    /// Descriptions for a list of items, one per line, in list order.
    pub fn join_descriptions(&self, items: &[ItemId]) -> String {
        items
            .iter()
            .map(|&i| self.description(i))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Dense user id assignment mirroring [`Catalog`] for users.
#[derive(Clone, Debug, PartialEq)]
pub struct UserTable {
    external_keys: Vec<String>,
    key_index: HashMap<String, UserId>,
}

impl UserTable {
    pub fn new(external_keys: Vec<String>) -> Self {
        let key_index = external_keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), UserId(i as u32)))
            .collect();
        UserTable {
            external_keys,
            key_index,
        }
    }

    pub fn len(&self) -> usize {
        self.external_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external_keys.is_empty()
    }

    pub fn external_key(&self, id: UserId) -> &str {
        &self.external_keys[id.index()]
    }

    pub fn resolve_key(&self, key: &str) -> Option<UserId> {
        self.key_index.get(key).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = UserId> + '_ {
        (0..self.len() as u32).map(UserId)
    }
}

/// Chronologically ordered interaction list for one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
    pub timestamps: Vec<i64>,
}

impl BehaviorSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Split geometry: `k` held-out targets, `c`-item recency window,
/// `k_prime` rerank candidates, `k_cpr` items shown per tool in comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_c")]
    pub c: usize,
    #[serde(default = "default_k_prime")]
    pub k_prime: usize,
    #[serde(default = "default_k_cpr")]
    pub k_cpr: usize,
}

fn default_k() -> usize {
    1
}
fn default_c() -> usize {
    10
}
fn default_k_prime() -> usize {
    20
}
fn default_k_cpr() -> usize {
    10
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            k: 1,
            c: 10,
            k_prime: 20,
            k_cpr: 10,
        }
    }
}

impl SplitConfig {
    /// Minimum sequence length that keeps every downstream window well-defined.
    pub fn min_len(&self) -> usize {
        self.k + self.c
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 || self.c == 0 || self.k_prime == 0 || self.k_cpr == 0 {
            return Err("split parameters must be positive".into());
        }
        if self.k_cpr > self.k_prime {
            return Err(format!(
                "k_cpr ({}) must not exceed k_prime ({})",
                self.k_cpr, self.k_prime
            ));
        }
        Ok(())
    }
}

/// Borrowed views over one sequence: training prefix, recency window
/// (the last `c` items of the prefix), and held-out targets.
#[derive(Clone, Copy, Debug)]
pub struct SplitViews<'a> {
    pub train: &'a [ItemId],
    pub window: &'a [ItemId],
    pub target: &'a [ItemId],
}

/// Splits a sequence into train prefix, recency window, and target suffix.
///
/// Requires `seq.len() >= k + c`; ingestion enforces this, so a shorter
/// sequence here is a caller bug.
pub fn split_views<'a>(seq: &'a BehaviorSequence, split: &SplitConfig) -> SplitViews<'a> {
    let n = seq.len();
    assert!(
        n >= split.min_len(),
        "sequence of length {} shorter than k+c = {}",
        n,
        split.min_len()
    );
    let train = &seq.items[..n - split.k];
    let window_start = train.len().saturating_sub(split.c);
    SplitViews {
        train,
        window: &train[window_start..],
        target: &seq.items[n - split.k..],
    }
}

/// Ingestion outcome: the immutable catalog, user table, per-user sequences
/// (indexed by dense `UserId`), and counters for everything that was dropped.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub catalog: Catalog,
    pub users: UserTable,
    pub sequences: Vec<BehaviorSequence>,
    pub stats: IngestStats,
}

impl Dataset {
    pub fn sequence(&self, user: UserId) -> &BehaviorSequence {
        &self.sequences[user.index()]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    /// Items dropped because their title was empty after trimming.
    pub items_dropped_empty_title: usize,
    /// Exact (user, item, timestamp) replays removed.
    pub duplicates_removed: usize,
    /// Interactions referencing an item absent from the items file.
    pub unknown_item_interactions_dropped: usize,
    /// Interactions pointing at empty-title items.
    pub empty_title_interactions_dropped: usize,
    /// Users removed for having fewer than the minimum interactions.
    pub users_dropped_short: usize,
    pub users_kept: usize,
    pub interactions_kept: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: expected header {expected:?}, found {found:?}")]
    BadHeader {
        path: PathBuf,
        expected: Vec<String>,
        found: Vec<String>,
    },
}

/// Knobs that are properties of the input files rather than the experiment.
#[derive(Clone, Copy, Debug)]
pub struct IngestOptions {
    /// Field delimiter; comma by default, tab accepted.
    pub delimiter: u8,
    /// Extra interactions required beyond the structural `k + c` minimum.
    pub min_extra_interactions: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            delimiter: b',',
            min_extra_interactions: 0,
        }
    }
}

struct RawInteraction {
    user_key: String,
    item: ItemId,
    timestamp: i64,
}

/// Reads the items and interactions files and builds a [`Dataset`].
///
/// Dense ids are assigned by sorting external keys lexicographically, exact
/// duplicate interactions are removed (counted in the stats), and users left
/// with fewer than `k + c` interactions are dropped.
pub fn ingest(
    interactions_path: &Path,
    items_path: &Path,
    split: &SplitConfig,
    opts: &IngestOptions,
) -> Result<Dataset, IngestError> {
    let mut stats = IngestStats::default();

    let (catalog, empty_title_keys) = read_items(items_path, opts.delimiter, &mut stats)?;
    let interactions = read_interactions(
        interactions_path,
        opts.delimiter,
        &catalog,
        &empty_title_keys,
        &mut stats,
    )?;

    // Group by user, chronologically sort (stable: file order breaks ties),
    // and drop exact replays keeping the first occurrence.
    let mut per_user: HashMap<String, Vec<(i64, ItemId)>> = HashMap::new();
    for row in interactions {
        per_user
            .entry(row.user_key)
            .or_default()
            .push((row.timestamp, row.item));
    }

    let min_len = split.min_len() + opts.min_extra_interactions;
    let mut kept: Vec<(String, Vec<(i64, ItemId)>)> = Vec::new();
    for (user_key, mut events) in per_user {
        events.sort_by_key(|&(ts, _)| ts);
        let mut seen: HashSet<(ItemId, i64)> = HashSet::with_capacity(events.len());
        events.retain(|&(ts, item)| {
            let fresh = seen.insert((item, ts));
            if !fresh {
                stats.duplicates_removed += 1;
            }
            fresh
        });
        if events.len() < min_len {
            stats.users_dropped_short += 1;
        } else {
            kept.push((user_key, events));
        }
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0));

    let users = UserTable::new(kept.iter().map(|(k, _)| k.clone()).collect());
    let sequences: Vec<BehaviorSequence> = kept
        .into_iter()
        .enumerate()
        .map(|(i, (_, events))| {
            stats.interactions_kept += events.len();
            BehaviorSequence {
                user: UserId(i as u32),
                items: events.iter().map(|&(_, item)| item).collect(),
                timestamps: events.iter().map(|&(ts, _)| ts).collect(),
            }
        })
        .collect();
    stats.users_kept = sequences.len();

    Ok(Dataset {
        catalog,
        users,
        sequences,
        stats,
    })
}

fn open_reader(path: &Path, delimiter: u8) -> Result<csv::Reader<fs::File>, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .from_reader(file))
}

fn check_header(
    path: &Path,
    reader: &mut csv::Reader<fs::File>,
    expected: &[&str],
) -> Result<(), IngestError> {
    let found = reader
        .headers()
        .map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect::<Vec<_>>();
    if found != expected {
        return Err(IngestError::BadHeader {
            path: path.to_path_buf(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        });
    }
    Ok(())
}

fn read_items(
    path: &Path,
    delimiter: u8,
    stats: &mut IngestStats,
) -> Result<(Catalog, HashSet<String>), IngestError> {
    let mut reader = open_reader(path, delimiter)?;
    check_header(path, &mut reader, &["item_id", "title"])?;

    let mut rows: Vec<(String, String)> = Vec::new();
    let mut seen_keys: HashSet<String> = HashSet::new();
    let mut empty_title_keys: HashSet<String> = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let record = record.map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        let key = record[0].trim().to_string();
        // Titles enter prompts one per line: collapse internal whitespace so
        // a quoted multi-line title cannot break the line structure.
        let title = record[1].split_whitespace().collect::<Vec<_>>().join(" ");
        if key.is_empty() {
            return Err(IngestError::Malformed {
                path: path.to_path_buf(),
                line,
                msg: "empty item_id".into(),
            });
        }
        if !seen_keys.insert(key.clone()) {
            return Err(IngestError::Malformed {
                path: path.to_path_buf(),
                line,
                msg: format!("duplicate item_id {key:?}"),
            });
        }
        if title.is_empty() {
            stats.items_dropped_empty_title += 1;
            empty_title_keys.insert(key);
        } else {
            rows.push((key, title));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let (keys, titles): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok((Catalog::new(keys, titles), empty_title_keys))
}

fn read_interactions(
    path: &Path,
    delimiter: u8,
    catalog: &Catalog,
    empty_title_keys: &HashSet<String>,
    stats: &mut IngestStats,
) -> Result<Vec<RawInteraction>, IngestError> {
    let mut reader = open_reader(path, delimiter)?;
    check_header(path, &mut reader, &["user_id", "item_id", "timestamp"])?;

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| IngestError::Malformed {
            path: path.to_path_buf(),
            line,
            msg: e.to_string(),
        })?;
        let user_key = record[0].trim().to_string();
        let item_key = record[1].trim();
        let timestamp: i64 =
            record[2]
                .trim()
                .parse()
                .map_err(|_| IngestError::Malformed {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("bad timestamp {:?}", &record[2]),
                })?;
        if user_key.is_empty() {
            return Err(IngestError::Malformed {
                path: path.to_path_buf(),
                line,
                msg: "empty user_id".into(),
            });
        }
        match catalog.resolve_key(item_key) {
            Some(item) => rows.push(RawInteraction {
                user_key,
                item,
                timestamp,
            }),
            None if empty_title_keys.contains(item_key) => {
                stats.empty_title_interactions_dropped += 1;
            }
            None => {
                stats.unknown_item_interactions_dropped += 1;
            }
        }
    }
    Ok(rows)
}

/// Writes a dataset back out in the canonical ingestion format: `items.csv`
/// and `interactions.csv` under `dir`. Re-ingesting the emitted files yields
/// an identical dataset.
pub fn write_dataset(dataset: &Dataset, dir: &Path, delimiter: u8) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(|source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let items_path = dir.join("items.csv");
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(&items_path)
        .map_err(|e| io_from_csv(&items_path, e))?;
    w.write_record(["item_id", "title"])
        .map_err(|e| io_from_csv(&items_path, e))?;
    for id in dataset.catalog.ids() {
        w.write_record([dataset.catalog.external_key(id), dataset.catalog.description(id)])
            .map_err(|e| io_from_csv(&items_path, e))?;
    }
    w.flush().map_err(|source| IngestError::Io {
        path: items_path.clone(),
        source,
    })?;

    let inter_path = dir.join("interactions.csv");
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(&inter_path)
        .map_err(|e| io_from_csv(&inter_path, e))?;
    w.write_record(["user_id", "item_id", "timestamp"])
        .map_err(|e| io_from_csv(&inter_path, e))?;
    for seq in &dataset.sequences {
        let user_key = dataset.users.external_key(seq.user);
        for (item, ts) in seq.items.iter().zip(&seq.timestamps) {
            w.write_record([
                user_key,
                dataset.catalog.external_key(*item),
                &ts.to_string(),
            ])
            .map_err(|e| io_from_csv(&inter_path, e))?;
        }
    }
    w.flush().map_err(|source| IngestError::Io {
        path: inter_path,
        source,
    })?;
    Ok(())
}

fn io_from_csv(path: &Path, e: csv::Error) -> IngestError {
    IngestError::Malformed {
        path: path.to_path_buf(),
        line: 0,
        msg: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn seq(items: &[u32]) -> BehaviorSequence {
        BehaviorSequence {
            user: UserId(0),
            items: items.iter().map(|&i| ItemId(i)).collect(),
            timestamps: (0..items.len() as i64).collect(),
        }
    }

    #[test]
    fn split_twelve_items() {
        let s = seq(&(1..=12).collect::<Vec<_>>());
        let split = SplitConfig::default();
        let v = split_views(&s, &split);
        assert_eq!(v.train, &(1..=11).map(ItemId).collect::<Vec<_>>()[..]);
        assert_eq!(v.window, &(2..=11).map(ItemId).collect::<Vec<_>>()[..]);
        assert_eq!(v.target, &[ItemId(12)]);
    }

    #[test]
    fn split_minimal_length() {
        let s = seq(&(1..=11).collect::<Vec<_>>());
        let v = split_views(&s, &SplitConfig::default());
        assert_eq!(v.train, &(1..=10).map(ItemId).collect::<Vec<_>>()[..]);
        assert_eq!(v.window, &(1..=10).map(ItemId).collect::<Vec<_>>()[..]);
        assert_eq!(v.target, &[ItemId(11)]);
    }

    #[test]
    fn split_two_targets() {
        let s = seq(&(1..=12).collect::<Vec<_>>());
        let split = SplitConfig {
            k: 2,
            ..SplitConfig::default()
        };
        let v = split_views(&s, &split);
        assert_eq!(v.train, &(1..=10).map(ItemId).collect::<Vec<_>>()[..]);
        assert_eq!(v.window, &(1..=10).map(ItemId).collect::<Vec<_>>()[..]);
        assert_eq!(v.target, &[ItemId(11), ItemId(12)]);
    }

    #[test]
    fn split_partition_property() {
        for n in 11..40 {
            let s = seq(&(0..n).collect::<Vec<_>>());
            let v = split_views(&s, &SplitConfig::default());
            assert_eq!(v.train.len() + v.target.len(), s.len());
            assert!(v.window.iter().all(|i| v.train.contains(i)));
        }
    }

    fn items_csv(rows: &[(&str, &str)]) -> String {
        let mut s = String::from("item_id,title\n");
        for (k, t) in rows {
            s.push_str(&format!("{k},{t}\n"));
        }
        s
    }

    fn interactions_csv(rows: &[(&str, &str, i64)]) -> String {
        let mut s = String::from("user_id,item_id,timestamp\n");
        for (u, i, ts) in rows {
            s.push_str(&format!("{u},{i},{ts}\n"));
        }
        s
    }

    /// 12 interactions for `user` over items i0..i11 at increasing timestamps.
    fn full_user(user: &str, start_ts: i64) -> Vec<(String, String, i64)> {
        (0..12)
            .map(|j| (user.to_string(), format!("i{j:02}"), start_ts + j as i64))
            .collect()
    }

    fn twelve_items() -> Vec<(String, String)> {
        (0..12)
            .map(|j| (format!("i{j:02}"), format!("Item number {j}")))
            .collect()
    }

    #[test]
    fn ingest_drops_short_user() {
        let dir = tempfile::tempdir().unwrap();
        let items = twelve_items();
        let item_rows: Vec<(&str, &str)> = items
            .iter()
            .map(|(k, t)| (k.as_str(), t.as_str()))
            .collect();
        let mut inter: Vec<(String, String, i64)> = full_user("alice", 0);
        inter.extend(full_user("carol", 100));
        // bob has only 5 interactions: below k + c = 11.
        for j in 0..5 {
            inter.push(("bob".into(), format!("i{j:02}"), 50 + j as i64));
        }
        let inter_rows: Vec<(&str, &str, i64)> = inter
            .iter()
            .map(|(u, i, ts)| (u.as_str(), i.as_str(), *ts))
            .collect();
        let items_path = write_file(dir.path(), "items.csv", &items_csv(&item_rows));
        let inter_path = write_file(
            dir.path(),
            "interactions.csv",
            &interactions_csv(&inter_rows),
        );
        let ds = ingest(
            &inter_path,
            &items_path,
            &SplitConfig::default(),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.users.len(), 2);
        assert!(ds.users.resolve_key("bob").is_none());
        assert_eq!(ds.stats.users_dropped_short, 1);
    }

    #[test]
    fn ingest_drops_empty_title_items_and_their_interactions() {
        let dir = tempfile::tempdir().unwrap();
        let mut items = twelve_items();
        items.push(("junk".into(), "".into()));
        let item_rows: Vec<(&str, &str)> = items
            .iter()
            .map(|(k, t)| (k.as_str(), t.as_str()))
            .collect();
        let mut inter = full_user("alice", 0);
        inter.push(("alice".into(), "junk".into(), 99));
        let inter_rows: Vec<(&str, &str, i64)> = inter
            .iter()
            .map(|(u, i, ts)| (u.as_str(), i.as_str(), *ts))
            .collect();
        let items_path = write_file(dir.path(), "items.csv", &items_csv(&item_rows));
        let inter_path = write_file(
            dir.path(),
            "interactions.csv",
            &interactions_csv(&inter_rows),
        );
        let ds = ingest(
            &inter_path,
            &items_path,
            &SplitConfig::default(),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.catalog.len(), 12);
        assert!(ds.catalog.resolve_key("junk").is_none());
        assert_eq!(ds.stats.items_dropped_empty_title, 1);
        assert_eq!(ds.stats.empty_title_interactions_dropped, 1);
        assert_eq!(ds.sequences[0].len(), 12);
    }

    #[test]
    fn ingest_sorts_chronologically() {
        let dir = tempfile::tempdir().unwrap();
        let items = twelve_items();
        let item_rows: Vec<(&str, &str)> = items
            .iter()
            .map(|(k, t)| (k.as_str(), t.as_str()))
            .collect();
        // Out-of-order timestamps: i01 at ts=100 listed before i00 at ts=50.
        let mut inter = vec![
            ("u".to_string(), "i01".to_string(), 100i64),
            ("u".to_string(), "i00".to_string(), 50i64),
        ];
        for j in 2..12 {
            inter.push(("u".into(), format!("i{j:02}"), 100 + j as i64));
        }
        let inter_rows: Vec<(&str, &str, i64)> = inter
            .iter()
            .map(|(u, i, ts)| (u.as_str(), i.as_str(), *ts))
            .collect();
        let items_path = write_file(dir.path(), "items.csv", &items_csv(&item_rows));
        let inter_path = write_file(
            dir.path(),
            "interactions.csv",
            &interactions_csv(&inter_rows),
        );
        let ds = ingest(
            &inter_path,
            &items_path,
            &SplitConfig::default(),
            &IngestOptions::default(),
        )
        .unwrap();
        let seq = &ds.sequences[0];
        assert_eq!(seq.items[0], ds.catalog.resolve_key("i00").unwrap());
        assert_eq!(seq.items[1], ds.catalog.resolve_key("i01").unwrap());
        assert!(seq.timestamps.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn ingest_dedups_exact_replays() {
        let dir = tempfile::tempdir().unwrap();
        let items = twelve_items();
        let item_rows: Vec<(&str, &str)> = items
            .iter()
            .map(|(k, t)| (k.as_str(), t.as_str()))
            .collect();
        let mut inter = full_user("u", 0);
        inter.push(("u".into(), "i03".into(), 3)); // exact replay of an existing row
        let inter_rows: Vec<(&str, &str, i64)> = inter
            .iter()
            .map(|(u, i, ts)| (u.as_str(), i.as_str(), *ts))
            .collect();
        let items_path = write_file(dir.path(), "items.csv", &items_csv(&item_rows));
        let inter_path = write_file(
            dir.path(),
            "interactions.csv",
            &interactions_csv(&inter_rows),
        );
        let ds = ingest(
            &inter_path,
            &items_path,
            &SplitConfig::default(),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.stats.duplicates_removed, 1);
        assert_eq!(ds.sequences[0].len(), 12);
    }

    #[test]
    fn ingest_reports_malformed_row_location() {
        let dir = tempfile::tempdir().unwrap();
        let items_path = write_file(dir.path(), "items.csv", "item_id,title\na,Apple\n");
        let inter_path = write_file(
            dir.path(),
            "interactions.csv",
            "user_id,item_id,timestamp\nu,a,notanumber\n",
        );
        let err = ingest(
            &inter_path,
            &items_path,
            &SplitConfig::default(),
            &IngestOptions::default(),
        )
        .unwrap_err();
        match err {
            IngestError::Malformed { line, ref path, .. } => {
                assert_eq!(line, 2);
                assert!(path.ends_with("interactions.csv"));
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn roundtrip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let items = twelve_items();
        let item_rows: Vec<(&str, &str)> = items
            .iter()
            .map(|(k, t)| (k.as_str(), t.as_str()))
            .collect();
        let mut inter = full_user("zoe", 0);
        inter.extend(full_user("ann", 1000));
        let inter_rows: Vec<(&str, &str, i64)> = inter
            .iter()
            .map(|(u, i, ts)| (u.as_str(), i.as_str(), *ts))
            .collect();
        let items_path = write_file(dir.path(), "items.csv", &items_csv(&item_rows));
        let inter_path = write_file(
            dir.path(),
            "interactions.csv",
            &interactions_csv(&inter_rows),
        );
        let split = SplitConfig::default();
        let opts = IngestOptions::default();
        let ds = ingest(&inter_path, &items_path, &split, &opts).unwrap();

        let out = dir.path().join("echo");
        write_dataset(&ds, &out, b',').unwrap();
        let ds2 = ingest(
            &out.join("interactions.csv"),
            &out.join("items.csv"),
            &split,
            &opts,
        )
        .unwrap();
        assert_eq!(ds.catalog, ds2.catalog);
        assert_eq!(ds.users, ds2.users);
        assert_eq!(ds.sequences, ds2.sequences);
    }

    #[test]
    fn multiline_titles_are_flattened() {
        let dir = tempfile::tempdir().unwrap();
        let items_path = write_file(
            dir.path(),
            "items.csv",
            "item_id,title\na,\"Two\nline  title\"\n",
        );
        let mut s = String::from("user_id,item_id,timestamp\n");
        for ts in 0..11 {
            s.push_str(&format!("u,a,{ts}\n"));
        }
        let inter_path = write_file(dir.path(), "interactions.csv", &s);
        let ds = ingest(
            &inter_path,
            &items_path,
            &SplitConfig::default(),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.catalog.description(ItemId(0)), "Two line title");
    }

    #[test]
    fn id_assignment_sorted_by_external_key() {
        let dir = tempfile::tempdir().unwrap();
        // Deliberately unsorted item file.
        let items_path = write_file(
            dir.path(),
            "items.csv",
            "item_id,title\nzz,Last\naa,First\nmm,Middle\n",
        );
        let mut s = String::from("user_id,item_id,timestamp\n");
        for (ts, key) in ["zz", "aa", "mm"].iter().cycle().take(11).enumerate() {
            s.push_str(&format!("u,{key},{ts}\n"));
        }
        let inter_path = write_file(dir.path(), "interactions.csv", &s);
        let ds = ingest(
            &inter_path,
            &items_path,
            &SplitConfig::default(),
            &IngestOptions::default(),
        )
        .unwrap();
        assert_eq!(ds.catalog.external_key(ItemId(0)), "aa");
        assert_eq!(ds.catalog.external_key(ItemId(1)), "mm");
        assert_eq!(ds.catalog.external_key(ItemId(2)), "zz");
    }
}
