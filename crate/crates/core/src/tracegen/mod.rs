//! Attacker-visible memory transaction streams and CDTV extraction.

mod additive;
mod baseline;
mod io;
mod neuroplug;
mod workload;

pub use additive::{additive_cm_trace, AdditiveModel};
pub use baseline::{baseline_trace, baseline_trace_with_plans, TraceConfig};
pub use io::{read_binary, read_csv, write_binary, write_csv, RECORD_BYTES};
pub use neuroplug::{neuroplug_trace, NpKey, NpRun, NpSimulator};
pub use workload::{AddressMap, Region, Workload};

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("events out of time order at index {0}")]
    Ordering(usize),
    #[error("trace config: {0}")]
    Config(String),
    #[error("trace format: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Plan(#[from] crate::sfc::SfcError),
    #[error(transparent)]
    Bin(#[from] crate::binpack::BinError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub op: Op,
    pub addr: u64,
    pub size: u32,
    pub t: u64,
    pub digest: Option<u32>,
}

/// Ground truth for one event; never shown to attacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Ifmap,
    Weight,
    Ofmap,
    Skip,
    DummyWrite,
    Jitter,
    DividerRead,
    DividerWrite,
    HostRead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLabel {
    pub layer: usize,
    pub kind: EventKind,
}

impl EventLabel {
    /// Traffic the unprotected accelerator would also have produced.
    pub fn is_true(&self) -> bool {
        matches!(
            self.kind,
            EventKind::Ifmap
                | EventKind::Weight
                | EventKind::Ofmap
                | EventKind::Skip
                | EventKind::HostRead
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub labels: Vec<EventLabel>,
}

impl Trace {
    pub fn push(&mut self, e: TraceEvent, label: EventLabel) {
        self.events.push(e);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Copy with the observability grants applied.
    pub fn observed(&self, obs: Observability) -> Vec<TraceEvent> {
        self.events
            .iter()
            .map(|e| TraceEvent {
                addr: if obs.addresses { e.addr } else { 0 },
                t: if obs.timing { e.t } else { 0 },
                digest: if obs.values { e.digest } else { None },
                ..*e
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observability {
    pub addresses: bool,
    pub values: bool,
    pub timing: bool,
}

impl Default for Observability {
    fn default() -> Self {
        Self {
            addresses: true,
            values: false,
            timing: true,
        }
    }
}

/// 32-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u32 {
    bytes.iter().fold(0x811c_9dc5u32, |h, &b| {
        (h ^ b as u32).wrapping_mul(0x0100_0193)
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CdtvSummary {
    /// reads-per-address → number of addresses
    pub count: BTreeMap<u64, u64>,
    /// bytes moved between each write and the next read of its address
    pub distance: Vec<u64>,
    pub time: Vec<u64>,
    pub read_volume: u64,
    pub write_volume: u64,
}

impl CdtvSummary {
    pub fn count_mode(&self) -> Option<u64> {
        self.count
            .iter()
            .max_by_key(|(c, n)| (**n, std::cmp::Reverse(**c)))
            .map(|(c, _)| *c)
    }
}

pub fn cdtv(trace: &[TraceEvent]) -> Result<CdtvSummary, TraceError> {
    if let Some(i) = trace.windows(2).position(|w| w[1].t < w[0].t) {
        return Err(TraceError::Ordering(i + 1));
    }
    let mut reads: HashMap<u64, u64> = HashMap::new();
    // address → cumulative bytes just after its pending write
    let mut pending: HashMap<u64, u64> = HashMap::new();
    let mut s = CdtvSummary::default();
    let mut moved = 0u64;
    for e in trace {
        match e.op {
            Op::Read => {
                *reads.entry(e.addr).or_default() += 1;
                if let Some(after_write) = pending.remove(&e.addr) {
                    s.distance.push(moved - after_write);
                }
                s.read_volume += e.size as u64;
            }
            Op::Write => {
                s.write_volume += e.size as u64;
            }
        }
        moved += e.size as u64;
        if e.op == Op::Write {
            pending.insert(e.addr, moved);
        }
    }
    for n in reads.values() {
        *s.count.entry(*n).or_default() += 1;
    }
    s.time = trace.windows(2).map(|w| w[1].t - w[0].t).collect();
    Ok(s)
}
