//! Versioned binary run file holding the final rankings, consumed by the
//! evaluation stage. Layout (little-endian): magic `MEDLYRUN`, u32 version,
//! 32-byte config hash, u64 seed, u32 user count, then per user a u32 id,
//! u32 length, and (u32 item, f64 score) records.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"MEDLYRUN";
pub const RUN_FILE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct UserRanking {
    pub user: u32,
    /// Items in final order with their fused scores (lower ranks earlier).
    pub items: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunFile {
    /// Hex SHA-256 of the run configuration.
    pub config_hash: String,
    pub seed: u64,
    pub rankings: Vec<UserRanking>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run file {path}: {msg}")]
    Bad { path: PathBuf, msg: String },
}

pub fn write_run_file(path: &Path, run: &RunFile) -> Result<(), RunFileError> {
    let io_err = |source| RunFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let hash = decode_hash(&run.config_hash).ok_or_else(|| RunFileError::Bad {
        path: path.to_path_buf(),
        msg: "config hash is not 64 hex chars".into(),
    })?;
    let mut f = fs::File::create(path).map_err(io_err)?;
    f.write_all(MAGIC).map_err(io_err)?;
    f.write_all(&RUN_FILE_VERSION.to_le_bytes()).map_err(io_err)?;
    f.write_all(&hash).map_err(io_err)?;
    f.write_all(&run.seed.to_le_bytes()).map_err(io_err)?;
    f.write_all(&(run.rankings.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    for ranking in &run.rankings {
        f.write_all(&ranking.user.to_le_bytes()).map_err(io_err)?;
        f.write_all(&(ranking.items.len() as u32).to_le_bytes())
            .map_err(io_err)?;
        for &(item, score) in &ranking.items {
            f.write_all(&item.to_le_bytes()).map_err(io_err)?;
            f.write_all(&score.to_le_bytes()).map_err(io_err)?;
        }
    }
    Ok(())
}

pub fn read_run_file(path: &Path) -> Result<RunFile, RunFileError> {
    let io_err = |source| RunFileError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bad = |msg: String| RunFileError::Bad {
        path: path.to_path_buf(),
        msg,
    };
    let mut f = fs::File::open(path).map_err(io_err)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    f.read_exact(&mut b4).map_err(io_err)?;
    let version = u32::from_le_bytes(b4);
    if version != RUN_FILE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut hash = [0u8; 32];
    f.read_exact(&mut hash).map_err(io_err)?;
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b8).map_err(io_err)?;
    let seed = u64::from_le_bytes(b8);
    f.read_exact(&mut b4).map_err(io_err)?;
    let n_users = u32::from_le_bytes(b4);

    let mut rankings = Vec::with_capacity(n_users as usize);
    for _ in 0..n_users {
        f.read_exact(&mut b4).map_err(io_err)?;
        let user = u32::from_le_bytes(b4);
        f.read_exact(&mut b4).map_err(io_err)?;
        let len = u32::from_le_bytes(b4);
        let mut items = Vec::with_capacity(len as usize);
        for _ in 0..len {
            f.read_exact(&mut b4).map_err(io_err)?;
            let item = u32::from_le_bytes(b4);
            f.read_exact(&mut b8).map_err(io_err)?;
            items.push((item, f64::from_le_bytes(b8)));
        }
        rankings.push(UserRanking { user, items });
    }
    Ok(RunFile {
        config_hash: encode_hash(&hash),
        seed,
        rankings,
    })
}

fn decode_hash(hex: &str) -> Option<[u8; 32]> {
    if hex.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, byte) in out.iter_mut().enumerate() {
        *byte = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

fn encode_hash(bytes: &[u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rankings.bin");
        let run = RunFile {
            config_hash: "ab".repeat(32),
            seed: 99,
            rankings: vec![
                UserRanking {
                    user: 3,
                    items: vec![(7, 1.0), (2, 2.5)],
                },
                UserRanking {
                    user: 5,
                    items: vec![(0, 1.0)],
                },
            ],
        };
        write_run_file(&path, &run).unwrap();
        assert_eq!(read_run_file(&path).unwrap(), run);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        fs::write(&path, b"NOTARUNFILExxxx").unwrap();
        assert!(matches!(
            read_run_file(&path),
            Err(RunFileError::Bad { .. })
        ));
    }
}
