use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::segment::{segment, segment_stats};
use super::{AttackError, AttackKind, AttackReport, LayerEstimate};
use crate::tracegen::{Op, TraceEvent};

/// Running per-layer statistics; `merge` is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SsAccumulator {
    runs: usize,
    layers: BTreeMap<usize, LayerAcc>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerAcc {
    runs: usize,
    min: u64,
    sum: f64,
    writes_min: usize,
    write_volume_min: u64,
}

impl LayerAcc {
    fn merge(self, o: Self) -> Self {
        Self {
            runs: self.runs + o.runs,
            min: self.min.min(o.min),
            sum: self.sum + o.sum,
            writes_min: self.writes_min.min(o.writes_min),
            write_volume_min: self.write_volume_min.min(o.write_volume_min),
        }
    }
}

impl SsAccumulator {
    /// Filters one run and folds its per-layer volumes in.
    pub fn observe(&mut self, events: &[TraceEvent]) {
        let keep = unread_write_mask(events);
        let segs = segment(events);
        self.runs += 1;
        for (l, seg) in segs.iter().enumerate() {
            let st = segment_stats(events, seg, Some(&keep));
            let acc = LayerAcc {
                runs: 1,
                min: st.fmap_read_volume,
                sum: st.fmap_read_volume as f64,
                writes_min: st.writes,
                write_volume_min: st.write_volume,
            };
            self.layers
                .entry(l)
                .and_modify(|a| *a = a.merge(acc))
                .or_insert(acc);
        }
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.runs += other.runs;
        for (l, acc) in other.layers {
            self.layers
                .entry(l)
                .and_modify(|a| *a = a.merge(acc))
                .or_insert(acc);
        }
        self
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn report(&self, kind: AttackKind) -> AttackReport {
        let mut r = AttackReport::new(kind, self.runs);
        for (&l, a) in &self.layers {
            let mean = a.sum / a.runs as f64;
            r.layers.push(LayerEstimate {
                volume: a.min as f64,
                volume_min: a.min as f64,
                volume_mean: mean,
                writes: a.writes_min,
                write_volume: a.write_volume_min as f64,
                runs: a.runs,
                ..LayerEstimate::new(l)
            });
        }
        if self.layers.values().any(|a| a.runs != self.runs) {
            r.notes.push("runs disagree on the number of layers".into());
        }
        r.evidence
            .insert("segments".into(), self.layers.len() as f64);
        r
    }
}

/// False for writes never read afterwards, except in the final segment whose
/// outputs leave the accelerator.
pub(crate) fn unread_write_mask(events: &[TraceEvent]) -> Vec<bool> {
    let last_start = segment(events).last().map_or(0, |s| s.range.start);
    let mut read_later: HashSet<u64> = HashSet::new();
    let mut keep = vec![true; events.len()];
    for (i, e) in events.iter().enumerate().rev() {
        match e.op {
            Op::Read => {
                read_later.insert(e.addr);
            }
            Op::Write => {
                if i < last_start && !read_later.contains(&e.addr) {
                    keep[i] = false;
                }
            }
        }
    }
    keep
}

/// Statistical filtering over repeated runs.
pub fn ss_attack<T: AsRef<[TraceEvent]>>(traces: &[T]) -> Result<AttackReport, AttackError> {
    if traces.is_empty() {
        return Err(AttackError::Domain("no traces".into()));
    }
    let mut acc = SsAccumulator::default();
    for t in traces {
        acc.observe(t.as_ref());
    }
    Ok(acc.report(AttackKind::Ss))
}

/// Hardwired values an insider can leak.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeakedConstants {
    pub noise_mean: Option<f64>,
    pub noise_min: Option<f64>,
    /// Other constants (bin size, κ, ...) that do not enter the volume.
    #[serde(default)]
    pub others: BTreeMap<String, f64>,
}

/// Subtracts leaked noise constants from the filtered estimates.
pub fn kk_attack(report: &AttackReport, leaked: &LeakedConstants) -> AttackReport {
    let mut r = report.clone();
    r.kind = AttackKind::Kk;
    for l in &mut r.layers {
        if let Some(m) = leaked.noise_min {
            l.volume = l.volume_min - m;
        } else if let Some(m) = leaked.noise_mean {
            l.volume = l.volume_mean - m;
        } else {
            l.key_resident = true;
        }
    }
    if leaked.noise_min.is_none() && leaked.noise_mean.is_none() {
        r.notes
            .push("no leaked noise constant; estimates are key-resident".into());
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::segment::Segment;
    use crate::model::{generate_weights, toy_sparse, vgg16, vgg16_32, Tensor3D};
    use crate::tracegen::{
        additive_cm_trace, baseline_trace, AdditiveModel, TraceConfig, Workload,
    };

    fn workload(net: crate::model::NetworkSpec, seed: u64) -> Workload {
        let l0 = net.layers[0].shape;
        let data = (0..l0.c * l0.h * l0.w)
            .map(|i| ((i * 37 + seed as usize) % 251) as i8)
            .collect();
        let input = Tensor3D::from_vec(l0.c, l0.h, l0.w, data).unwrap();
        Workload::new(net.clone(), generate_weights(&net, seed), &input).unwrap()
    }

    fn true_fmap_reads(t: &crate::tracegen::Trace, layer: usize) -> u64 {
        t.events
            .iter()
            .zip(&t.labels)
            .filter(|(e, l)| {
                l.layer == layer
                    && e.op == Op::Read
                    && matches!(
                        l.kind,
                        crate::tracegen::EventKind::Ifmap | crate::tracegen::EventKind::Skip
                    )
            })
            .map(|(e, _)| e.size as u64)
            .sum()
    }

    #[test]
    fn empty_input_is_domain_error() {
        let none: Vec<Vec<TraceEvent>> = vec![];
        assert!(matches!(ss_attack(&none), Err(AttackError::Domain(_))));
    }

    #[test]
    fn baseline_estimates_are_ground_truth() {
        let w = workload(toy_sparse(3), 1);
        let t = baseline_trace(&w, &TraceConfig::default()).unwrap();
        let r = ss_attack(&[t.events.clone()]).unwrap();
        assert_eq!(r.layers.len(), w.layers());
        for (l, est) in r.layers.iter().enumerate() {
            assert_eq!(est.volume as u64, true_fmap_reads(&t, l));
            let writes = t
                .labels
                .iter()
                .filter(|x| x.layer == l && x.kind == crate::tracegen::EventKind::Ofmap)
                .count();
            assert_eq!(est.writes, writes);
        }
    }

    #[test]
    fn dummy_writes_are_filtered() {
        let w = workload(vgg16_32().truncated(3), 2);
        let t = additive_cm_trace(
            &w,
            &TraceConfig::default(),
            &AdditiveModel::dummy_writes(),
            5,
        )
        .unwrap();
        let r = ss_attack(&[t.events]).unwrap();
        assert_eq!(r.layers[0].writes, 1568);
    }

    #[test]
    fn kk_after_ss_recovers_const_mean_volume() {
        let w = workload(vgg16().truncated(1), 3);
        let m = AdditiveModel::const_mean();
        let traces: Vec<Vec<TraceEvent>> = (0..200)
            .map(|s| {
                additive_cm_trace(&w, &TraceConfig::default(), &m, s)
                    .unwrap()
                    .events
            })
            .collect();
        let ss = ss_attack(&traces).unwrap();
        let leaked = LeakedConstants {
            noise_mean: m.noise_mean().map(|v| v as f64),
            noise_min: m.noise_min().map(|v| v as f64),
            ..Default::default()
        };
        let kk = kk_attack(&ss, &leaked);
        assert_eq!(kk.layers[0].volume, 150_528.0);
        assert!(!kk.layers[0].key_resident);
    }

    #[test]
    fn kk_with_empty_table_is_identity_but_flagged() {
        let w = workload(toy_sparse(1).truncated(2), 4);
        let t = baseline_trace(&w, &TraceConfig::default()).unwrap();
        let ss = ss_attack(&[t.events]).unwrap();
        let kk = kk_attack(&ss, &LeakedConstants::default());
        for (a, b) in ss.layers.iter().zip(&kk.layers) {
            assert_eq!(a.volume, b.volume);
            assert!(b.key_resident);
        }
    }

    #[test]
    fn accumulator_merge_is_order_free() {
        let w = workload(vgg16().truncated(1), 5);
        let m = AdditiveModel::const_mean();
        let runs: Vec<Vec<TraceEvent>> = (0..12)
            .map(|s| {
                additive_cm_trace(&w, &TraceConfig::default(), &m, s)
                    .unwrap()
                    .events
            })
            .collect();
        let fold = |ix: &[usize]| {
            let mut a = SsAccumulator::default();
            for &i in ix {
                a.observe(&runs[i]);
            }
            a
        };
        let whole = fold(&(0..12).collect::<Vec<_>>());
        let split = fold(&[7, 3, 11, 0]).merge(fold(&[1, 2, 4, 5, 6, 8, 9, 10]));
        let r1 = whole.report(AttackKind::Ss);
        let r2 = split.report(AttackKind::Ss);
        assert_eq!(r1.layers[0].volume_min, r2.layers[0].volume_min);
        assert!((r1.layers[0].volume_mean - r2.layers[0].volume_mean).abs() < 1e-6);
    }

    #[test]
    fn unread_writes_in_last_segment_survive() {
        let ev = |op, addr| TraceEvent {
            op,
            addr,
            size: 1,
            t: 0,
            digest: None,
        };
        let t = [
            ev(Op::Write, 1),
            ev(Op::Write, 2),
            ev(Op::Read, 1),
            ev(Op::Write, 3),
        ];
        assert_eq!(
            segment(&t),
            vec![Segment { range: 0..2 }, Segment { range: 2..4 }]
        );
        assert_eq!(unread_write_mask(&t), vec![true, false, true, true]);
    }
}
