use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::segment::segment;
use super::ss::SsAccumulator;
use super::{AttackKind, AttackReport};
use crate::model::nsqf_in_range;
use crate::tracegen::{Op, TraceEvent};

/// Range the attacker believes a layer volume lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NsqfPrior {
    pub lo: u64,
    pub hi: u64,
}

/// Keep-mask that drops rewrites carrying the previous value at the same
/// address, then every event of a segment left with no writes.
pub fn si_filter(events: &[TraceEvent]) -> Vec<bool> {
    let mut keep = vec![true; events.len()];
    let mut last: HashMap<u64, u32> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        if e.op != Op::Write {
            continue;
        }
        let Some(d) = e.digest else { continue };
        if last.insert(e.addr, d) == Some(d) {
            keep[i] = false;
        }
    }
    for seg in segment(events) {
        let writes: Vec<usize> = seg
            .range
            .clone()
            .filter(|&i| events[i].op == Op::Write)
            .collect();
        if !writes.is_empty() && writes.iter().all(|&i| !keep[i]) {
            keep[seg.range].iter_mut().for_each(|k| *k = false);
        }
    }
    keep
}

/// Value-check filtering followed by multi-run volume estimation and NSQF
/// candidate pruning.
pub fn si_attack<T: AsRef<[TraceEvent]>>(
    traces: &[T],
    values_observable: bool,
    prior: Option<NsqfPrior>,
) -> AttackReport {
    let mut acc = SsAccumulator::default();
    let mut removed = 0usize;
    for t in traces {
        let events = t.as_ref();
        if values_observable {
            let keep = si_filter(events);
            removed += keep
                .iter()
                .zip(events)
                .filter(|(k, e)| !**k && e.op == Op::Write)
                .count();
            let kept: Vec<TraceEvent> = events
                .iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(e, _)| *e)
                .collect();
            acc.observe(&kept);
        } else {
            acc.observe(events);
        }
    }
    let mut r = acc.report(AttackKind::Si);
    r.evidence.insert("writes_removed".into(), removed as f64);
    if !values_observable {
        r.notes
            .push("values not observable; no value checks".into());
    }
    if let Some(p) = prior {
        let cands = nsqf_in_range(p.lo, p.hi);
        r.evidence
            .insert("nsqf_candidates".into(), cands.len() as f64);
        for l in &mut r.layers {
            l.candidates = Some(cands.clone());
        }
    }
    r
}
