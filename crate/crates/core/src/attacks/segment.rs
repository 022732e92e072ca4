use std::collections::{HashMap, HashSet};
use std::ops::Range;

use crate::tracegen::{AddressMap, Op, Region, TraceEvent};

/// A run of events attributed to one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub range: Range<usize>,
}

/// Splits at every read of an address written earlier in the same segment;
/// a trailing segment without writes is dropped.
pub fn segment(events: &[TraceEvent]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut written: HashSet<u64> = HashSet::new();
    for (i, e) in events.iter().enumerate() {
        match e.op {
            Op::Read if written.contains(&e.addr) => {
                out.push(Segment { range: start..i });
                start = i;
                written.clear();
            }
            Op::Write => {
                written.insert(e.addr);
            }
            Op::Read => {}
        }
    }
    if !written.is_empty() {
        out.push(Segment {
            range: start..events.len(),
        });
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentStats {
    /// Bytes read from feature-map regions.
    pub fmap_read_volume: u64,
    /// Bytes read from weight regions.
    pub weight_read_volume: u64,
    /// Distinct-address read volumes, immune to re-reads.
    pub fmap_unique_volume: u64,
    pub weight_unique_volume: u64,
    pub writes: usize,
    pub write_volume: u64,
    /// Mode of reads per weight address.
    pub weight_count_mode: u64,
}

/// Volumes of one segment; `keep` masks events already filtered out.
pub fn segment_stats(events: &[TraceEvent], seg: &Segment, keep: Option<&[bool]>) -> SegmentStats {
    let mut s = SegmentStats::default();
    let mut seen: HashSet<u64> = HashSet::new();
    let mut weight_reads: HashMap<u64, u64> = HashMap::new();
    for i in seg.range.clone() {
        if keep.is_some_and(|k| !k[i]) {
            continue;
        }
        let e = &events[i];
        match e.op {
            Op::Write => {
                s.writes += 1;
                s.write_volume += e.size as u64;
            }
            Op::Read => {
                let first = seen.insert(e.addr);
                match AddressMap::classify(e.addr) {
                    Region::Fmap(_) => {
                        s.fmap_read_volume += e.size as u64;
                        if first {
                            s.fmap_unique_volume += e.size as u64;
                        }
                    }
                    Region::Weights(_) => {
                        s.weight_read_volume += e.size as u64;
                        if first {
                            s.weight_unique_volume += e.size as u64;
                        }
                        *weight_reads.entry(e.addr).or_default() += 1;
                    }
                    Region::Other => {}
                }
            }
        }
    }
    let mut hist: HashMap<u64, usize> = HashMap::new();
    for c in weight_reads.values() {
        *hist.entry(*c).or_default() += 1;
    }
    s.weight_count_mode = hist
        .into_iter()
        .max_by_key(|&(c, n)| (n, std::cmp::Reverse(c)))
        .map(|(c, _)| c)
        .unwrap_or(0);
    s
}
