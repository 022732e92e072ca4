use serde::{Deserialize, Serialize};

use super::segment::{segment, segment_stats, Segment};
use super::{AttackError, AttackKind, AttackReport, LayerEstimate};
use crate::tracegen::{Op, TraceEvent};

/// One layer geometry consistent with the observed volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerCandidate {
    pub c: u64,
    pub h: u64,
    pub w: u64,
    pub k: u64,
    pub r: u64,
    pub s: u64,
    pub pool: u64,
}

/// Observed volume `Y` only bounds the true `X` to
/// `[(Y − noise_max)/beta_max, Y/beta_min]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeSlack {
    pub beta_min: f64,
    pub beta_max: f64,
    pub noise_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverseConfig {
    /// Upper bound on every enumerated dimension.
    pub box_max: u64,
    pub bytes_per_elem: u64,
    /// `None` solves the volume equations exactly.
    pub slack: Option<VolumeSlack>,
    /// Candidates listed per layer; all are counted.
    pub keep: usize,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        Self {
            box_max: 512,
            bytes_per_elem: 1,
            slack: None,
            keep: 1000,
        }
    }
}

const FILTERS: [u64; 4] = [1, 3, 5, 7];
const POOLS: [u64; 2] = [1, 2];

/// Integer interval `[lo, hi]` of `x` with `x · unit` inside the volume bounds.
fn quotient_range(bounds: (f64, f64), unit: u64, max: u64) -> Option<(u64, u64)> {
    let u = unit as f64;
    let lo = ((bounds.0 / u).ceil().max(1.0)) as u64;
    let hi = ((bounds.1 / u).floor().min(max as f64)) as u64;
    (lo <= hi).then_some((lo, hi))
}

fn bounds(y: u64, cfg: &ReverseConfig) -> (f64, f64) {
    let y = y as f64;
    match cfg.slack {
        None => (y, y),
        Some(s) => (((y - s.noise_max).max(0.0)) / s.beta_max, y / s.beta_min),
    }
}

/// Enumerates `(C, H=W, K, R=S, pool)` against input, output and weight volumes.
pub(crate) fn enumerate(
    v_in: u64,
    v_out: u64,
    v_w: u64,
    cfg: &ReverseConfig,
) -> (u64, Vec<LayerCandidate>) {
    let b = cfg.bytes_per_elem;
    let (bi, bo, bw) = (bounds(v_in, cfg), bounds(v_out, cfg), bounds(v_w, cfg));
    let mut count = 0u64;
    let mut kept = Vec::new();
    for h in 1..=cfg.box_max {
        let Some((c_lo, c_hi)) = quotient_range(bi, h * h * b, cfg.box_max) else {
            continue;
        };
        for pool in POOLS {
            if h % pool != 0 {
                continue;
            }
            let o = h / pool;
            let Some((k_lo, k_hi)) = quotient_range(bo, o * o * b, cfg.box_max) else {
                continue;
            };
            for r in FILTERS {
                for c in c_lo..=c_hi {
                    let Some((lo, hi)) = quotient_range(bw, c * r * r * b, cfg.box_max) else {
                        continue;
                    };
                    let (lo, hi) = (lo.max(k_lo), hi.min(k_hi));
                    if lo > hi {
                        continue;
                    }
                    count += hi - lo + 1;
                    for k in lo..=hi {
                        if kept.len() >= cfg.keep {
                            break;
                        }
                        kept.push(LayerCandidate {
                            c,
                            h,
                            w: h,
                            k,
                            r,
                            s: r,
                            pool,
                        });
                    }
                }
            }
        }
    }
    (count, kept)
}

/// Distinct-address write volume of a segment.
fn unique_write_volume(events: &[TraceEvent], seg: &Segment) -> u64 {
    let mut seen = std::collections::HashSet::new();
    events[seg.range.clone()]
        .iter()
        .filter(|e| e.op == Op::Write && seen.insert(e.addr))
        .map(|e| e.size as u64)
        .sum()
}

/// Volume-equation architecture recovery from one trace.
pub fn reverse_engg_attack(
    trace: &[TraceEvent],
    cfg: &ReverseConfig,
) -> Result<AttackReport, AttackError> {
    if cfg.box_max == 0 || cfg.bytes_per_elem == 0 {
        return Err(AttackError::Domain("empty enumeration box".into()));
    }
    let mut r = AttackReport::new(AttackKind::ReverseEngg, 1);
    let mut segs = segment(trace);
    if segs.is_empty() {
        r.notes
            .push("no read-after-write boundary; enumerating over the whole trace".into());
        segs.push(Segment {
            range: 0..trace.len(),
        });
    }
    r.evidence.insert("segments".into(), segs.len() as f64);
    for (l, seg) in segs.iter().enumerate() {
        let st = segment_stats(trace, seg, None);
        let v_out = unique_write_volume(trace, seg);
        let (count, shapes) = enumerate(st.fmap_unique_volume, v_out, st.weight_unique_volume, cfg);
        r.evidence
            .insert(format!("layer{l}.candidates"), count as f64);
        r.evidence.insert(
            format!("layer{l}.weight_count_mode"),
            st.weight_count_mode as f64,
        );
        r.layers.push(LayerEstimate {
            volume: st.fmap_unique_volume as f64,
            volume_min: st.fmap_unique_volume as f64,
            volume_mean: st.fmap_unique_volume as f64,
            writes: st.writes,
            write_volume: v_out as f64,
            runs: 1,
            shape_count: Some(count),
            shapes,
            ..LayerEstimate::new(l)
        });
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        generate_weights, LayerShape, LayerSpec, NetworkSpec, Tensor3D, TilingSpec,
    };
    use crate::tracegen::{baseline_trace, TraceConfig, Workload};

    fn net(layers: &[LayerShape]) -> NetworkSpec {
        NetworkSpec {
            name: "t".into(),
            layers: layers
                .iter()
                .map(|&shape| LayerSpec {
                    shape,
                    tiling: TilingSpec::default_for(&shape),
                    sparsity: 0.0,
                })
                .collect(),
            skips: vec![],
        }
    }

    fn trace(n: &NetworkSpec) -> Vec<TraceEvent> {
        let s = n.layers[0].shape;
        let input = Tensor3D::from_vec(
            s.c,
            s.h,
            s.w,
            (0..s.c * s.h * s.w).map(|i| (i % 13) as i8 + 1).collect(),
        )
        .unwrap();
        let w = Workload::new(n.clone(), generate_weights(n, 3), &input).unwrap();
        baseline_trace(&w, &TraceConfig::default()).unwrap().events
    }

    /// Every geometry with H=W, odd R=S and pool in {1,2}, each dim at most 16.
    fn brute(v_in: u64, v_out: u64, v_w: u64) -> Vec<LayerCandidate> {
        let mut out = Vec::new();
        for c in 1..=16u64 {
            for h in 1..=16u64 {
                for k in 1..=16u64 {
                    for r in (1..=16u64).filter(|r| r % 2 == 1 && *r <= 7 && *r <= h) {
                        for pool in [1u64, 2] {
                            if h % pool == 0
                                && c * h * h == v_in
                                && k * (h / pool) * (h / pool) == v_out
                                && k * c * r * r == v_w
                            {
                                out.push(LayerCandidate {
                                    c,
                                    h,
                                    w: h,
                                    k,
                                    r,
                                    s: r,
                                    pool,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn toy_layer_is_unique() {
        let n = net(&[LayerShape::same(4, 3, 8, 8, 3, 3)]);
        let r = reverse_engg_attack(&trace(&n), &ReverseConfig::default()).unwrap();
        let l = &r.layers[0];
        let truth = LayerCandidate {
            c: 3,
            h: 8,
            w: 8,
            k: 4,
            r: 3,
            s: 3,
            pool: 1,
        };
        assert_eq!(l.shapes, vec![truth]);
        assert_eq!(l.shape_count, Some(1));
        let cfg16 = ReverseConfig {
            box_max: 16,
            ..ReverseConfig::default()
        };
        let (_, small) = enumerate(192, 256, 108, &cfg16);
        let mut oracle = brute(192, 256, 108);
        oracle.sort();
        let mut small = small;
        small.sort();
        assert_eq!(small, oracle);
    }

    #[test]
    fn two_layers_two_segments() {
        let a = LayerShape::same(4, 3, 8, 8, 3, 3);
        let b = LayerShape::same(6, 4, 8, 8, 1, 1);
        let r = reverse_engg_attack(&trace(&net(&[a, b])), &ReverseConfig::default()).unwrap();
        assert_eq!(r.layers.len(), 2);
        assert!(r.layers[1].shapes.contains(&LayerCandidate {
            c: 4,
            h: 8,
            w: 8,
            k: 6,
            r: 1,
            s: 1,
            pool: 1
        }));
    }

    #[test]
    fn slack_widens_the_set() {
        let exact = enumerate(192, 256, 108, &ReverseConfig::default()).0;
        let slack = ReverseConfig {
            slack: Some(VolumeSlack {
                beta_min: 0.5,
                beta_max: 1.0,
                noise_max: 0.0,
            }),
            ..ReverseConfig::default()
        };
        assert!(enumerate(192, 256, 108, &slack).0 >= 10 * exact);
    }

    #[test]
    fn read_only_trace_falls_back_with_warning() {
        let t = [TraceEvent {
            op: Op::Read,
            addr: crate::tracegen::AddressMap::fmap(0),
            size: 12,
            t: 0,
            digest: None,
        }];
        let r = reverse_engg_attack(&t, &ReverseConfig::default()).unwrap();
        assert_eq!(r.layers.len(), 1);
        assert!(!r.notes.is_empty());
    }
}
