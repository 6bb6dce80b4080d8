//! Importer for precomputed score matrices, so externally trained rankers
//! can participate as tools.
//!
//! Two on-disk layouts are accepted:
//!
//! - DSV with header `user_id,item_id,score` where ids are external keys;
//!   pairs not present default to score 0.
//! - Binary, little-endian: magic `MDLYSCRS`, u32 version (1), u32 n_items,
//!   u64 record count, then (u32 user, u32 item, f64 score) records using
//!   dense ids.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::ToolError;
use crate::catalog::{Catalog, UserId, UserTable};

const MAGIC: &[u8; 8] = b"MDLYSCRS";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImportedScores {
    n_items: usize,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl ImportedScores {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn from_rows(n_items: usize, rows: Vec<(u32, Vec<f64>)>) -> Self {
        let rows = rows
            .into_iter()
            .inspect(|(_, v)| assert_eq!(v.len(), n_items))
            .collect();
        ImportedScores { n_items, rows }
    }

    /// Scores for a user; users without a row get all-zero scores.
    pub fn scores(&self, user: UserId) -> Vec<f64> {
        self.rows
            .get(&user.0)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.n_items])
    }

    /// Loads the DSV layout, resolving external keys through the catalog and
    /// user table. Returns the model and the number of skipped rows
    /// (unknown user or item keys).
    pub fn load_dsv(
        path: &Path,
        delimiter: u8,
        catalog: &Catalog,
        users: &UserTable,
    ) -> Result<(Self, usize), ToolError> {
        let file = fs::File::open(path).map_err(|source| ToolError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .from_reader(file);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| ToolError::BadScoresFile {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })?
            .iter()
            .map(|s| s.trim().to_string())
            .collect();
        if header != ["user_id", "item_id", "score"] {
            return Err(ToolError::BadScoresFile {
                path: path.to_path_buf(),
                msg: format!("expected header user_id,item_id,score, found {header:?}"),
            });
        }
        let mut rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let mut skipped = 0usize;
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ToolError::BadScoresFile {
                path: path.to_path_buf(),
                msg: format!("line {}: {e}", i + 2),
            })?;
            let score: f64 = record[2]
                .trim()
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| ToolError::BadScoresFile {
                    path: path.to_path_buf(),
                    msg: format!("line {}: bad score {:?}", i + 2, &record[2]),
                })?;
            match (
                users.resolve_key(record[0].trim()),
                catalog.resolve_key(record[1].trim()),
            ) {
                (Some(user), Some(item)) => {
                    rows.entry(user.0)
                        .or_insert_with(|| vec![0.0; catalog.len()])[item.index()] = score;
                }
                _ => skipped += 1,
            }
        }
        Ok((
            ImportedScores {
                n_items: catalog.len(),
                rows,
            },
            skipped,
        ))
    }
}

pub fn write_scores_binary(path: &Path, model: &ImportedScores) -> Result<(), ToolError> {
    let io_err = |source| ToolError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(MAGIC).map_err(io_err)?;
    f.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    f.write_all(&(model.n_items as u32).to_le_bytes())
        .map_err(io_err)?;
    let count: u64 = model.rows.values().map(|v| v.len() as u64).sum();
    f.write_all(&count.to_le_bytes()).map_err(io_err)?;
    for (&user, scores) in &model.rows {
        for (item, &score) in scores.iter().enumerate() {
            f.write_all(&user.to_le_bytes()).map_err(io_err)?;
            f.write_all(&(item as u32).to_le_bytes()).map_err(io_err)?;
            f.write_all(&score.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_scores_binary(path: &Path) -> Result<ImportedScores, ToolError> {
    let io_err = |source| ToolError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bad = |msg: String| ToolError::BadScoresFile {
        path: path.to_path_buf(),
        msg,
    };
    let mut f = fs::File::open(path).map_err(io_err)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut buf4 = [0u8; 4];
    f.read_exact(&mut buf4).map_err(io_err)?;
    let version = u32::from_le_bytes(buf4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    f.read_exact(&mut buf4).map_err(io_err)?;
    let n_items = u32::from_le_bytes(buf4) as usize;
    let mut buf8 = [0u8; 8];
    f.read_exact(&mut buf8).map_err(io_err)?;
    let count = u64::from_le_bytes(buf8);

    let mut rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for _ in 0..count {
        f.read_exact(&mut buf4).map_err(io_err)?;
        let user = u32::from_le_bytes(buf4);
        f.read_exact(&mut buf4).map_err(io_err)?;
        let item = u32::from_le_bytes(buf4) as usize;
        f.read_exact(&mut buf8).map_err(io_err)?;
        let score = f64::from_le_bytes(buf8);
        if item >= n_items {
            return Err(bad(format!("item {item} out of range {n_items}")));
        }
        if !score.is_finite() {
            return Err(bad(format!("non-finite score for item {item}")));
        }
        rows.entry(user).or_insert_with(|| vec![0.0; n_items])[item] = score;
    }
    Ok(ImportedScores { n_items, rows })
}
