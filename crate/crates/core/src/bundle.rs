//! Single-file model bundle: a JSON header (schema, grid, dictionaries,
//! column layout, build configuration) followed by the raw model weights as
//! little-endian f64. Saving is deterministic: the same build produces
//! byte-identical bundles, and a loaded bundle answers queries bit-identically
//! to the in-memory engine it came from.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::armodel::{ArLayout, MadeMasks, MaskedARModel, ModelError};
use crate::data::{Dictionary, Schema};
use crate::estimator::{CardGrid, EngineConfig};
use crate::grid::Grid;

const MAGIC: &[u8; 4] = b"CGRD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model bundle (bad magic)")]
    BadMagic,
    #[error("bundle format version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("bundle header corrupt: {0}")]
    Header(String),
    #[error("bundle masks do not match the stored seed derivation")]
    MaskMismatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleHeader {
    format_version: u32,
    schema: Schema,
    n_rows: usize,
    config: EngineConfig,
    grid: Grid,
    dictionaries: Vec<Dictionary>,
    layout: ArLayout,
    hidden_sizes: Vec<usize>,
    masks: MadeMasks,
    model_seed: u64,
    weight_count: usize,
}

pub fn save_bundle<P: AsRef<Path>>(path: P, engine: &CardGrid) -> Result<(), BundleError> {
    let weights = engine.model.dump_weights();
    let header = BundleHeader {
        format_version: FORMAT_VERSION,
        schema: engine.schema.clone(),
        n_rows: engine.n_rows,
        config: engine.config.clone(),
        grid: engine.grid.clone(),
        dictionaries: engine.dictionaries.clone(),
        layout: engine.model.layout.clone(),
        hidden_sizes: engine.model.hidden_sizes.clone(),
        masks: engine.model.masks.clone(),
        model_seed: engine.model.seed,
        weight_count: weights.len(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| BundleError::Header(e.to_string()))?;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(header_json.len() as u64).to_le_bytes())?;
    out.write_all(&header_json)?;
    for w in &weights {
        out.write_all(&w.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_bundle<P: AsRef<Path>>(path: P) -> Result<CardGrid, BundleError> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(BundleError::BadMagic);
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(BundleError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let mut len_bytes = [0u8; 8];
    input.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    input.read_exact(&mut header_json)?;
    let header: BundleHeader =
        serde_json::from_slice(&header_json).map_err(|e| BundleError::Header(e.to_string()))?;

    let mut weight_bytes = Vec::new();
    input.read_to_end(&mut weight_bytes)?;
    if weight_bytes.len() != header.weight_count * 8 {
        return Err(BundleError::Header(format!(
            "weight blob is {} bytes, expected {}",
            weight_bytes.len(),
            header.weight_count * 8
        )));
    }
    let weights: Vec<f64> = weight_bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut grid = header.grid;
    grid.rebuild_index();
    let mut dictionaries = header.dictionaries;
    for d in dictionaries.iter_mut() {
        d.rebuild_index();
    }

    let mut model = MaskedARModel::new(header.layout, header.hidden_sizes, header.model_seed)?;
    if model.masks != header.masks {
        return Err(BundleError::MaskMismatch);
    }
    model.load_weights(&weights)?;

    Ok(CardGrid {
        schema: header.schema,
        n_rows: header.n_rows,
        grid,
        dictionaries,
        config: header.config,
        model,
    })
}
