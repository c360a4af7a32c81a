//! Snapshot format.
//!
//! Little-endian layout: magic `MIMNUIC\0`, format version `u32`, snapshot
//! id `u64`, creation time (unix seconds) `u64`, parameter version `u64`,
//! slots / dim / hidden as `u32`, user count `u64`, then per user sorted by
//! id: length-prefixed UTF-8 user id, events `u64`, state version `u64`,
//! `M` (m·d), `S` (m·h) and `g` (m) as row-major `f64` bit patterns. A
//! CRC-64/XZ of all preceding bytes closes the file.

use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::codec::{crc64, ByteReader, ByteWriter, CodecError};
use crate::grad::Tensor;
use crate::model::{HyperParams, ModelError, UserInterestState};

const MAGIC: &[u8; 8] = b"MIMNUIC\0";
const FORMAT: u32 = 1;

/// Snapshots kept in a store's catalog by default (one per day for a week).
pub const SNAPSHOT_RETENTION: usize = 7;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("not a snapshot file")]
    BadMagic,
    #[error("unsupported snapshot format {0}")]
    Format(u32),
    #[error("corrupt snapshot: {0}")]
    Codec(#[from] CodecError),
    #[error("state of user {user:?} does not match snapshot dimensions: {source}")]
    Shape { user: String, source: ModelError },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapshotMeta {
    pub id: u64,
    pub created_unix: u64,
    pub param_version: u64,
    pub users: u64,
    pub slots: u32,
    pub dim: u32,
    pub hidden: u32,
    pub checksum: u64,
    pub bytes: usize,
}

/// An encoded snapshot; the blob is shared, not copied, between clones.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub meta: SnapshotMeta,
    blob: Arc<Vec<u8>>,
}

pub(crate) struct Decoded {
    pub states: Vec<(String, UserInterestState)>,
}

pub(crate) fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl Snapshot {
    pub fn encode(
        id: u64,
        created_unix: u64,
        param_version: u64,
        hyper: &HyperParams,
        states: &[(String, UserInterestState)],
    ) -> Result<Self, SnapshotError> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(FORMAT);
        w.u64(id);
        w.u64(created_unix);
        w.u64(param_version);
        w.u32(hyper.slots as u32);
        w.u32(hyper.dim as u32);
        w.u32(hyper.miu_hidden as u32);
        w.u64(states.len() as u64);
        for (user, st) in states {
            st.check_shape(hyper)
                .map_err(|source| SnapshotError::Shape {
                    user: user.clone(),
                    source,
                })?;
            w.str(user);
            w.u64(st.events);
            w.u64(st.version);
            for t in [&st.memory, &st.induction, &st.usage] {
                for &v in t.data() {
                    w.f64(v);
                }
            }
        }
        let blob = w.seal();
        let checksum = u64::from_le_bytes(blob[blob.len() - 8..].try_into().expect("8 bytes"));
        Ok(Snapshot {
            meta: SnapshotMeta {
                id,
                created_unix,
                param_version,
                users: states.len() as u64,
                slots: hyper.slots as u32,
                dim: hyper.dim as u32,
                hidden: hyper.miu_hidden as u32,
                checksum,
                bytes: blob.len(),
            },
            blob: Arc::new(blob),
        })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.blob
    }

    /// Parses and verifies a serialized snapshot.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, SnapshotError> {
        let meta = Self::read_header(&bytes)?;
        let snap = Snapshot {
            meta,
            blob: Arc::new(bytes),
        };
        snap.decode()?;
        Ok(snap)
    }

    fn read_header(bytes: &[u8]) -> Result<SnapshotMeta, SnapshotError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let mut r = ByteReader::unseal(bytes)?;
        r.take(MAGIC.len())?;
        let format = r.u32()?;
        if format != FORMAT {
            return Err(SnapshotError::Format(format));
        }
        Ok(SnapshotMeta {
            id: r.u64()?,
            created_unix: r.u64()?,
            param_version: r.u64()?,
            slots: r.u32()?,
            dim: r.u32()?,
            hidden: r.u32()?,
            users: r.u64()?,
            checksum: crc64(&bytes[..bytes.len() - 8]),
            bytes: bytes.len(),
        })
    }

    pub(crate) fn decode(&self) -> Result<Decoded, SnapshotError> {
        let meta = Self::read_header(&self.blob)?;
        let mut r = ByteReader::unseal(&self.blob)?;
        // Skip the fixed header: magic, format, three u64, three u32, count.
        r.take(MAGIC.len() + 4 + 24 + 12 + 8)?;
        let (m, d, h) = (meta.slots as usize, meta.dim as usize, meta.hidden as usize);
        let mut states = Vec::with_capacity((meta.users as usize).min(1 << 20));
        for _ in 0..meta.users {
            let user = r.str()?;
            let events = r.u64()?;
            let version = r.u64()?;
            let mut read =
                |n: usize| -> Result<Vec<f64>, CodecError> { (0..n).map(|_| r.f64()).collect() };
            let memory = Tensor::matrix(m, d, read(m * d)?).map_err(|_| CodecError::Tensor(0))?;
            let induction =
                Tensor::matrix(m, h, read(m * h)?).map_err(|_| CodecError::Tensor(0))?;
            let usage = Tensor::vector(read(m)?);
            states.push((
                user,
                UserInterestState {
                    memory,
                    induction,
                    usage,
                    events,
                    version,
                },
            ));
        }
        r.finish()?;
        Ok(Decoded { states })
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SnapshotError> {
        std::fs::write(path, self.bytes()).map_err(|source| SnapshotError::Io {
            path: path.into(),
            source,
        })
    }

    pub fn read_file(path: &Path) -> Result<Self, SnapshotError> {
        let bytes = std::fs::read(path).map_err(|source| SnapshotError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_bytes(bytes)
    }

    /// Decoded states, sorted by user id.
    pub fn states(&self) -> Result<Vec<(String, UserInterestState)>, SnapshotError> {
        Ok(self.decode()?.states)
    }
}
