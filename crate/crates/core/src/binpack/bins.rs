use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::{codec, strip_dummy, BinError, CompressedTile, NoiseSampler};

const FLAG_START: u16 = 1;
const FLAG_CONT: u16 = 2;
const FLAG_DUMMY: u16 = 4;
const FLAG_PAD: u16 = 8;
const FLAG_SAMPLED: u16 = 0x10;
const FLAG_STORED: u16 = 0x20;
const HEADER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinConfig {
    pub bin_size: usize,
    pub kappa: usize,
    pub table_entry_size: usize,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            bin_size: 60_000,
            kappa: 8,
            table_entry_size: 8,
        }
    }
}

impl BinConfig {
    pub fn table_len(&self, entries: usize) -> usize {
        HEADER + self.table_entry_size * entries
    }

    pub fn validate(&self) -> Result<(), BinError> {
        if self.table_entry_size != 8 {
            return Err(BinError::Config(
                "table entries are 8 bytes on the wire".into(),
            ));
        }
        if self.kappa == 0 {
            return Err(BinError::Config("kappa must be >= 1".into()));
        }
        if self.bin_size > u16::MAX as usize {
            return Err(BinError::Config(format!(
                "bin_size {} exceeds 16-bit offsets",
                self.bin_size
            )));
        }
        // κ starts, one continuation, one pad, and a payload byte
        if self.bin_size <= self.table_len(self.kappa + 2) {
            return Err(BinError::Config(format!(
                "bin_size {} cannot hold a table of {} entries",
                self.bin_size,
                self.kappa + 2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryKind {
    Start,
    Cont,
    Dummy,
    Pad,
}

/// One 8-byte Bin Table record.
///
/// `Start`/`Cont`: `id` is the tile, `offset` the segment start in the bin.
/// `Dummy`: `id` is the span offset in the raw tile, `offset` its length.
/// `Pad`: `id` is the pad length, `offset` where it begins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub id: u32,
    pub offset: u16,
    pub flags: u16,
}

impl TableEntry {
    pub fn kind(&self) -> Option<EntryKind> {
        match self.flags & !(FLAG_SAMPLED | FLAG_STORED) {
            FLAG_START => Some(EntryKind::Start),
            FLAG_CONT => Some(EntryKind::Cont),
            FLAG_DUMMY => Some(EntryKind::Dummy),
            FLAG_PAD => Some(EntryKind::Pad),
            _ => None,
        }
    }

    fn sampled(&self) -> bool {
        self.flags & FLAG_SAMPLED != 0
    }

    fn stored(&self) -> bool {
        self.flags & FLAG_STORED != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub index: usize,
    pub bin_size: usize,
    pub table: Vec<TableEntry>,
    /// Segments back to back, starting right after the table.
    pub payload: Vec<u8>,
}

impl Bin {
    pub fn table_bytes(&self) -> usize {
        HEADER + 8 * self.table.len()
    }

    pub fn empty_pad(&self) -> usize {
        self.bin_size - self.table_bytes() - self.payload.len()
    }

    pub fn tile_starts(&self) -> usize {
        self.table
            .iter()
            .filter(|e| e.kind() == Some(EntryKind::Start))
            .count()
    }

    /// Little-endian wire image, exactly `bin_size` bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.bin_size);
        out.extend_from_slice(&(self.table.len() as u16).to_le_bytes());
        for e in &self.table {
            out.extend_from_slice(&e.id.to_le_bytes());
            out.extend_from_slice(&e.offset.to_le_bytes());
            out.extend_from_slice(&e.flags.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out.resize(self.bin_size, 0);
        out
    }

    pub fn from_bytes(index: usize, bytes: &[u8], cfg: &BinConfig) -> Result<Self, BinError> {
        if bytes.len() != cfg.bin_size {
            return Err(BinError::Integrity(format!(
                "bin image is {} bytes, expected {}",
                bytes.len(),
                cfg.bin_size
            )));
        }
        let n = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
        if cfg.table_len(n) > bytes.len() {
            return Err(BinError::Integrity(format!(
                "table of {n} entries overruns bin"
            )));
        }
        let table: Vec<TableEntry> = bytes[HEADER..HEADER + 8 * n]
            .chunks_exact(8)
            .map(|c| TableEntry {
                id: u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                offset: u16::from_le_bytes([c[4], c[5]]),
                flags: u16::from_le_bytes([c[6], c[7]]),
            })
            .collect();
        let pad = table
            .last()
            .filter(|e| e.kind() == Some(EntryKind::Pad))
            .ok_or_else(|| BinError::Integrity("missing pad entry".into()))?;
        let pad_at = pad.offset as usize;
        if pad_at < HEADER + 8 * n || pad_at > bytes.len() {
            return Err(BinError::Integrity(format!(
                "pad offset {pad_at} out of range"
            )));
        }
        let bin = Bin {
            index,
            bin_size: cfg.bin_size,
            payload: bytes[HEADER + 8 * n..pad_at].to_vec(),
            table,
        };
        bin.validate(cfg)?;
        Ok(bin)
    }

    /// Structural checks on the table against the payload.
    pub fn validate(&self, cfg: &BinConfig) -> Result<(), BinError> {
        let bad = |m: String| Err(BinError::Integrity(format!("bin {}: {m}", self.index)));
        if self.bin_size != cfg.bin_size || self.table_bytes() + self.payload.len() > self.bin_size
        {
            return bad("size mismatch".into());
        }
        let table_end = self.table_bytes();
        let pad_at = table_end + self.payload.len();
        let mut prev: Option<usize> = None;
        let mut last_kind = None;
        for (i, e) in self.table.iter().enumerate() {
            let kind = match e.kind() {
                Some(k) => k,
                None => return bad(format!("entry {i} has flags {:#x}", e.flags)),
            };
            match kind {
                EntryKind::Start | EntryKind::Cont => {
                    let off = e.offset as usize;
                    let expect_first = prev.is_none();
                    if (expect_first && off != table_end)
                        || prev.is_some_and(|p| off <= p)
                        || off >= pad_at
                    {
                        return bad(format!("segment offset {off} out of order"));
                    }
                    if kind == EntryKind::Cont && !expect_first {
                        return bad("continuation not at bin start".into());
                    }
                    prev = Some(off);
                }
                EntryKind::Dummy => {
                    if !matches!(last_kind, Some(EntryKind::Start | EntryKind::Dummy)) {
                        return bad("dummy entry without a tile start".into());
                    }
                }
                EntryKind::Pad => {
                    if i + 1 != self.table.len() {
                        return bad("pad entry not last".into());
                    }
                    if e.offset as usize != pad_at || e.id as usize != self.bin_size - pad_at {
                        return bad("pad entry disagrees with payload".into());
                    }
                }
            }
            last_kind = Some(kind);
        }
        if last_kind != Some(EntryKind::Pad) {
            return bad("missing pad entry".into());
        }
        if self.tile_starts() > cfg.kappa {
            return bad(format!("{} tile starts exceed kappa", self.tile_starts()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinPackReport {
    pub layer: usize,
    pub tiles_in: usize,
    pub bins_out: usize,
    pub raw_bytes: usize,
    pub comp_bytes: usize,
    pub beta: f64,
    pub noise_total: usize,
}

fn packed_bytes(t: &CompressedTile) -> Cow<'_, [u8]> {
    let p = t.packed();
    if p.len() == t.comp_size {
        Cow::Borrowed(p)
    } else {
        let mut v = p.to_vec();
        v.resize(t.comp_size, 0);
        Cow::Owned(v)
    }
}

/// First-fit sequential packing in the given order; one noise draw per bin
/// is reserved as tail padding before the bin is filled.
pub fn pack_bins(
    layer: usize,
    tiles: &[CompressedTile],
    cfg: &BinConfig,
    noise: &mut NoiseSampler,
) -> Result<(Vec<Bin>, BinPackReport), BinError> {
    cfg.validate()?;
    // room for any single tile start with its dummy entries, a pad and one byte
    let spans = tiles.iter().map(|t| t.dummy_spans.len()).max().unwrap_or(0);
    let min_table = cfg.table_len(2 + spans);
    let mut bins = Vec::new();
    let mut i = 0;
    let mut done = 0;
    while i < tiles.len() {
        let reserve = (noise.draw() as usize).min(cfg.bin_size.saturating_sub(min_table + 1));
        let avail = cfg.bin_size - reserve;
        // entries hold relative payload offsets until the table size is final
        let mut table: Vec<TableEntry> = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut starts = 0;
        while i < tiles.len() {
            let t = &tiles[i];
            let fresh = done == 0;
            if fresh && starts == cfg.kappa {
                break;
            }
            let need = if fresh { 1 + t.dummy_spans.len() } else { 1 };
            let used = cfg.table_len(table.len() + need + 1) + payload.len();
            if used >= avail {
                if table.is_empty() {
                    return Err(BinError::Config(format!(
                        "tile {} needs {need} table entries, more than a bin holds",
                        t.id
                    )));
                }
                break;
            }
            let bytes = packed_bytes(t);
            let take = (avail - used).min(bytes.len() - done);
            let sampled = if t.decodable { 0 } else { FLAG_SAMPLED };
            let stored = if t.stored { FLAG_STORED } else { 0 };
            table.push(TableEntry {
                id: t.id,
                offset: payload.len() as u16,
                flags: if fresh { FLAG_START } else { FLAG_CONT } | sampled | stored,
            });
            if fresh {
                starts += 1;
                for &(off, len) in &t.dummy_spans {
                    if len > u16::MAX as usize {
                        return Err(BinError::Config(format!("dummy span of {len} B too long")));
                    }
                    table.push(TableEntry {
                        id: off as u32,
                        offset: len as u16,
                        flags: FLAG_DUMMY,
                    });
                }
            }
            payload.extend_from_slice(&bytes[done..done + take]);
            done += take;
            if done == bytes.len() {
                i += 1;
                done = 0;
            }
        }
        let table_end = cfg.table_len(table.len() + 1);
        for e in table.iter_mut() {
            if e.flags & (FLAG_START | FLAG_CONT) != 0 {
                e.offset += table_end as u16;
            }
        }
        let pad_at = table_end + payload.len();
        table.push(TableEntry {
            id: (cfg.bin_size - pad_at) as u32,
            offset: pad_at as u16,
            flags: FLAG_PAD,
        });
        bins.push(Bin {
            index: bins.len(),
            bin_size: cfg.bin_size,
            table,
            payload,
        });
    }
    let raw_bytes: usize = tiles.iter().map(|t| t.raw_size).sum();
    let comp_bytes: usize = tiles.iter().map(|t| t.comp_size).sum();
    let report = BinPackReport {
        layer,
        tiles_in: tiles.len(),
        bins_out: bins.len(),
        raw_bytes,
        comp_bytes,
        beta: if raw_bytes == 0 {
            0.0
        } else {
            comp_bytes as f64 / raw_bytes as f64
        },
        noise_total: bins.iter().map(Bin::empty_pad).sum(),
    };
    Ok((bins, report))
}

struct Partial {
    id: u32,
    bytes: Vec<u8>,
    spans: Vec<(usize, usize)>,
    sampled: bool,
    stored: bool,
}

fn finish(p: Partial) -> Result<(u32, Vec<u8>), BinError> {
    if p.sampled {
        return Err(BinError::NotDecodable(p.id));
    }
    let raw = codec::decode(p.stored, &p.bytes)?;
    if let Some(&(off, len)) = p.spans.iter().find(|(o, l)| o + l > raw.len()) {
        return Err(BinError::Integrity(format!(
            "dummy span {off}+{len} beyond tile {} of {} bytes",
            p.id,
            raw.len()
        )));
    }
    Ok((p.id, strip_dummy(&raw, &p.spans)))
}

/// Decodes a bin sequence back to `(tile id, raw bytes)` with dummies removed.
pub fn unpack_bins(bins: &[Bin], cfg: &BinConfig) -> Result<Vec<(u32, Vec<u8>)>, BinError> {
    let mut out = Vec::new();
    let mut cur: Option<Partial> = None;
    for bin in bins {
        bin.validate(cfg)?;
        let table_end = bin.table_bytes();
        let pad_at = table_end + bin.payload.len();
        let seg_offsets: Vec<usize> = bin
            .table
            .iter()
            .filter(|e| matches!(e.kind(), Some(EntryKind::Start | EntryKind::Cont)))
            .map(|e| e.offset as usize)
            .collect();
        let mut seg = 0;
        for e in &bin.table {
            match e.kind() {
                Some(EntryKind::Start | EntryKind::Cont) => {
                    let lo = seg_offsets[seg] - table_end;
                    let hi = seg_offsets.get(seg + 1).copied().unwrap_or(pad_at) - table_end;
                    seg += 1;
                    let data = &bin.payload[lo..hi];
                    if e.kind() == Some(EntryKind::Start) {
                        if let Some(p) = cur.take() {
                            out.push(finish(p)?);
                        }
                        cur = Some(Partial {
                            id: e.id,
                            bytes: data.to_vec(),
                            spans: Vec::new(),
                            sampled: e.sampled(),
                            stored: e.stored(),
                        });
                    } else {
                        match cur.as_mut() {
                            Some(p) if p.id == e.id => p.bytes.extend_from_slice(data),
                            _ => {
                                return Err(BinError::Integrity(format!(
                                    "bin {}: continuation of tile {} without its start",
                                    bin.index, e.id
                                )))
                            }
                        }
                    }
                }
                Some(EntryKind::Dummy) => {
                    if let Some(p) = cur.as_mut() {
                        p.spans.push((e.id as usize, e.offset as usize));
                    }
                }
                _ => {}
            }
        }
    }
    if let Some(p) = cur.take() {
        out.push(finish(p)?);
    }
    Ok(out)
}
