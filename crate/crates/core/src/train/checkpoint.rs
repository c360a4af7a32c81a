//! Parameter checkpoints.
//!
//! Layout (little-endian): magic `MIMNCKPT`, format version `u32`, a
//! length-prefixed JSON header (model kind, hyperparameters, parameter
//! version), the named tensors (name, rank, dims, raw `f64` bits), the
//! vocabulary tables, and a trailing CRC-64/XZ over everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnyModel, EmbeddingMlp, ModelKind};
use crate::codec::{ByteReader, ByteWriter, CodecError};
use crate::data::Vocabulary;
use crate::grad::ParamStore;
use crate::model::{CtrModel, HyperParams, MimnParams, ModelError};

const MAGIC: &[u8; 8] = b"MIMNCKPT";
const FORMAT: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: AnyModel,
    pub vocab: Vocabulary,
    /// Parameter version used when deploying to the state store.
    pub version: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint format {0}")]
    Format(u32),
    #[error("corrupt checkpoint: {0}")]
    Codec(#[from] CodecError),
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("inconsistent vocabulary tables")]
    Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    hyper: HyperParams,
    version: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(FORMAT);
        let header = Header {
            kind: self.model.kind(),
            hyper: self.model.hyper().clone(),
            version: self.version,
        };
        w.str(&serde_json::to_string(&header).expect("header serializes"));
        let store = self.model.store();
        w.u32(store.len() as u32);
        for (_, name, t) in store.iter() {
            w.str(name);
            w.tensor(t);
        }
        let cats: Vec<&str> = self.vocab.categories().collect();
        w.u32(cats.len() as u32);
        for c in cats {
            w.str(c);
        }
        let items: Vec<(&str, u32)> = self.vocab.items().collect();
        w.u32(items.len() as u32);
        for (name, cat) in items {
            w.str(name);
            w.u32(cat);
        }
        w.seal()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut r = ByteReader::unseal(bytes)?;
        r.take(MAGIC.len())?;
        let format = r.u32()?;
        if format != FORMAT {
            return Err(CheckpointError::Format(format));
        }
        let header: Header = serde_json::from_str(&r.str()?)?;
        let n = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..n {
            let name = r.str()?;
            let t = r.tensor()?;
            if store.id(&name).is_some() {
                return Err(CheckpointError::Codec(CodecError::Tensor(0)));
            }
            store.add(name, t);
        }
        let n_cats = r.u32()? as usize;
        let cats = (0..n_cats)
            .map(|_| r.str())
            .collect::<Result<Vec<_>, _>>()?;
        let n_items = r.u32()? as usize;
        let mut items = Vec::with_capacity(n_items.min(1 << 20));
        for _ in 0..n_items {
            items.push((r.str()?, r.u32()?));
        }
        r.finish()?;
        let vocab = Vocabulary::from_tables(cats, items).ok_or(CheckpointError::Vocabulary)?;
        let model = match header.kind {
            ModelKind::Mimn => AnyModel::Mimn(MimnParams::from_store(header.hyper, store)?),
            ModelKind::EmbeddingMlp => {
                AnyModel::EmbeddingMlp(EmbeddingMlp::from_store(header.hyper, store)?)
            }
        };
        Ok(Checkpoint {
            model,
            vocab,
            version: header.version,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.into(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
