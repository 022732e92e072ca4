//! Tile compression, dummy-data injection, keyed noise and fixed-size bins.

mod bins;
pub mod codec;
mod noise;

pub use bins::{pack_bins, unpack_bins, Bin, BinConfig, BinPackReport, EntryKind, TableEntry};
pub use noise::{sample_noise, NoiseSampler, NoiseSpec};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BinError {
    #[error("codec: {0}")]
    Codec(String),
    #[error("empty tile")]
    EmptyTile,
    #[error("bin config: {0}")]
    Config(String),
    #[error("bin integrity: {0}")]
    Integrity(String),
    #[error("tile {0} was packed with a sampled size and cannot be decoded")]
    NotDecodable(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CompressMode {
    /// Zero-RLE then canonical Huffman.
    Real,
    /// Payload stays raw; the reported size is `max(1, round(beta·raw))`.
    Sampled { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressedTile {
    pub id: u32,
    pub raw_size: usize,
    pub comp_size: usize,
    pub payload: Vec<u8>,
    /// Payload holds the raw bytes rather than a coded body.
    pub stored: bool,
    /// `(offset, len)` of injected bytes in the raw tile.
    pub dummy_spans: Vec<(usize, usize)>,
    pub decodable: bool,
}

pub fn compress_tile(id: u32, raw: &[u8], mode: CompressMode) -> Result<CompressedTile, BinError> {
    if raw.is_empty() {
        return Err(BinError::EmptyTile);
    }
    Ok(match mode {
        CompressMode::Real => {
            let (stored, payload) = codec::encode(raw);
            CompressedTile {
                id,
                raw_size: raw.len(),
                comp_size: payload.len(),
                payload,
                stored,
                dummy_spans: Vec::new(),
                decodable: true,
            }
        }
        CompressMode::Sampled { beta } => CompressedTile {
            id,
            raw_size: raw.len(),
            comp_size: ((beta * raw.len() as f64).round() as usize).max(1),
            payload: raw.to_vec(),
            stored: true,
            dummy_spans: Vec::new(),
            decodable: false,
        },
    })
}

/// Compresses a tile that already carries injected dummy bytes.
pub fn compress_with_dummies(
    id: u32,
    tile: &DummyTile,
    mode: CompressMode,
) -> Result<CompressedTile, BinError> {
    let mut t = compress_tile(id, &tile.bytes, mode)?;
    t.dummy_spans = tile.spans.clone();
    Ok(t)
}

impl CompressedTile {
    /// Bytes this tile occupies inside bins.
    pub fn packed(&self) -> &[u8] {
        &self.payload[..self.comp_size.min(self.payload.len())]
    }

    pub fn packed_len(&self) -> usize {
        self.comp_size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DummyTile {
    pub bytes: Vec<u8>,
    pub spans: Vec<(usize, usize)>,
}

/// Splices `n_bytes` random bytes into `raw` in up to four spans at random offsets.
pub fn inject_dummy<R: Rng>(raw: &[u8], n_bytes: usize, rng: &mut R) -> DummyTile {
    if n_bytes == 0 {
        return DummyTile {
            bytes: raw.to_vec(),
            spans: Vec::new(),
        };
    }
    let pieces = rng.gen_range(1..=n_bytes.min(4));
    // split n_bytes into `pieces` positive lengths
    let mut cuts: Vec<usize> = rand::seq::index::sample(rng, n_bytes.max(2) - 1, pieces - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    cuts.push(n_bytes);
    let mut lens = Vec::with_capacity(pieces);
    let mut prev = 0;
    for c in cuts {
        lens.push(c - prev);
        prev = c;
    }
    let mut at: Vec<usize> = (0..pieces).map(|_| rng.gen_range(0..=raw.len())).collect();
    at.sort_unstable();

    let mut bytes = Vec::with_capacity(raw.len() + n_bytes);
    let mut spans = Vec::with_capacity(pieces);
    let mut src = 0;
    for (pos, len) in at.into_iter().zip(lens) {
        bytes.extend_from_slice(&raw[src..pos]);
        src = pos;
        spans.push((bytes.len(), len));
        bytes.extend((0..len).map(|_| rng.gen::<u8>()));
    }
    bytes.extend_from_slice(&raw[src..]);
    DummyTile { bytes, spans }
}

/// Removes the recorded spans, recovering the original tile.
pub fn strip_dummy(bytes: &[u8], spans: &[(usize, usize)]) -> Vec<u8> {
    let mut out = Vec::with_capacity(bytes.len());
    let mut src = 0;
    for &(off, len) in spans {
        out.extend_from_slice(&bytes[src..off]);
        src = off + len;
    }
    out.extend_from_slice(&bytes[src..]);
    out
}
