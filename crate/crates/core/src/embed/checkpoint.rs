//! Binary checkpoint: 8-byte magic, little-endian `u32` header length, a
//! JSON header, then the entity and relation parameters as little-endian
//! floats of the header's scalar width.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{entity_width, EmbedError, EmbeddingModel, ModelFamily, NormOrder};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KGAUGEMB";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub family: ModelFamily,
    pub dim: usize,
    pub norm: NormOrder,
    /// `f32` or `f64`.
    pub scalar: String,
    pub num_entities: usize,
    pub num_relations: usize,
    pub seed: Option<u64>,
    /// Dataset keys in id order, used to check a checkpoint against a graph.
    #[serde(default)]
    pub entity_keys: Vec<String>,
    #[serde(default)]
    pub relation_keys: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F: Scalar> {
    pub header: CheckpointHeader,
    pub model: EmbeddingModel<F>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn new(
        model: EmbeddingModel<F>,
        seed: Option<u64>,
        entity_keys: Vec<String>,
        relation_keys: Vec<String>,
    ) -> Self {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            family: model.family(),
            dim: model.dim(),
            norm: model.norm(),
            scalar: F::NAME.to_string(),
            num_entities: model.num_entities(),
            num_relations: model.num_relations(),
            seed,
            entity_keys,
            relation_keys,
        };
        Checkpoint { header, model }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), EmbedError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| EmbedError::Checkpoint(e.to_string()))?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity((self.model.entities.len() + self.model.relations.len()) * 8);
        for &x in self.model.entities.iter().chain(&self.model.relations) {
            match F::NAME {
                "f32" => buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
                _ => buf.extend_from_slice(&x.as_f64().to_le_bytes()),
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbedError> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint, converting parameters to `F` when the stored
    /// scalar width differs.
    pub fn read_from(mut r: impl Read) -> Result<Self, EmbedError> {
        let header = read_header(&mut r)?;
        let width = match header.scalar.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(EmbedError::Checkpoint(format!("unknown scalar type `{other}`"))),
        };
        let n_ent = header.num_entities * entity_width(header.family, header.dim);
        let n_rel = header.num_relations * header.dim;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != (n_ent + n_rel) * width {
            return Err(EmbedError::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                (n_ent + n_rel) * width,
                bytes.len()
            )));
        }
        let values: Vec<F> = bytes
            .chunks_exact(width)
            .map(|c| {
                F::from_f64(match width {
                    4 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                    _ => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                })
            })
            .collect();
        let relations = values[n_ent..].to_vec();
        let mut entities = values;
        entities.truncate(n_ent);
        let model = EmbeddingModel::from_parameters(header.family, header.dim, header.norm, entities, relations)?;
        if model.num_entities() != header.num_entities || model.num_relations() != header.num_relations {
            return Err(EmbedError::Checkpoint("parameter counts disagree with header".into()));
        }
        if !model.is_finite() {
            return Err(EmbedError::Checkpoint("non-finite parameters".into()));
        }
        Ok(Checkpoint { header, model })
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Reads only the header.
pub fn read_header(mut r: impl Read) -> Result<CheckpointHeader, EmbedError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(EmbedError::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header).map_err(|e| EmbedError::Checkpoint(format!("header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(EmbedError::Checkpoint(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.dim == 0 {
        return Err(EmbedError::Checkpoint("dimension is zero".into()));
    }
    Ok(header)
}

impl CheckpointHeader {
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        read_header(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
