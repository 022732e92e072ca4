use std::ops::Range;

use rand::{seq::index::sample, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SfcError;
use crate::model::{LayerShape, TilingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanCase {
    AllFit,
    I,
    II,
    III,
}

/// Knobs for keyed planning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    /// Upper end of the uniform that draws the variance of the extra-partition count.
    pub partition_sigma2_max: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            partition_sigma2_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub case: PlanCase,
    /// Ofmaps per weight partition, in order; sums to `K`.
    pub partition: Vec<usize>,
    /// Deep-tile positions per ifmap group, in SFC order.
    pub ifmap_groups: Vec<usize>,
    pub tau: usize,
    pub eta: usize,
    pub partition_seed: Option<u64>,
}

impl ExecutionPlan {
    pub fn partition_ranges(&self) -> Vec<Range<usize>> {
        ranges(&self.partition)
    }

    pub fn group_ranges(&self) -> Vec<Range<usize>> {
        ranges(&self.ifmap_groups)
    }

    /// `(copy, partition)` pairs in read order.
    pub fn weight_stream(&self) -> Vec<(usize, usize)> {
        unrolled_weight_stream(self.partition.len(), self.tau, self.eta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

fn ranges(counts: &[usize]) -> Vec<Range<usize>> {
    let mut lo = 0;
    counts
        .iter()
        .map(|&n| {
            let r = lo..lo + n;
            lo += n;
            r
        })
        .collect()
}

/// Weight reads for `tau` passes over `parts` partitions with `eta` stored
/// copies: pass `j` reads every partition of copy `j mod eta`.
pub fn unrolled_weight_stream(parts: usize, tau: usize, eta: usize) -> Vec<(usize, usize)> {
    let eta = eta.max(1);
    (0..tau)
        .flat_map(|pass| (0..parts).map(move |p| (pass % eta, p)))
        .collect()
}

fn even_split(total: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|i| total / n + usize::from(i < total % n))
        .collect()
}

/// Uniform composition of `total` into `n` parts, each in `1..=max_part`.
fn random_composition(total: usize, n: usize, max_part: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= 1 || n >= total {
        return even_split(total, n.clamp(1, total));
    }
    for _ in 0..1000 {
        let mut cuts = sample(rng, total - 1, n - 1).into_vec();
        cuts.sort_unstable();
        let mut parts = Vec::with_capacity(n);
        let mut prev = 0;
        for c in cuts {
            parts.push(c + 1 - prev);
            prev = c + 1;
        }
        parts.push(total - prev);
        if parts.iter().all(|&p| p <= max_part) {
            return parts;
        }
    }
    even_split(total, n)
}

/// Heteroskedastic integer draw: variance uniform, magnitude half-normal.
fn extra_count(cfg: &PlanConfig, rng: &mut ChaCha8Rng) -> usize {
    let var = rng.gen_range(0.0..=cfg.partition_sigma2_max.max(0.0));
    if var <= 0.0 {
        return 0;
    }
    let z: f64 = Normal::new(0.0, var.sqrt())
        .expect("finite sigma")
        .sample(rng);
    z.abs().round() as usize
}

fn partition_ofmaps(
    k: usize,
    max_part: usize,
    cfg: &PlanConfig,
    rng: Option<&mut ChaCha8Rng>,
) -> (Vec<usize>, Option<u64>) {
    let n_min = k.div_ceil(max_part);
    match rng {
        None => (even_split(k, n_min), None),
        Some(rng) => {
            let seed: u64 = rng.gen();
            let mut sub = ChaCha8Rng::seed_from_u64(seed);
            let n = (n_min + extra_count(cfg, &mut sub)).min(k);
            (random_composition(k, n, max_part, &mut sub), Some(seed))
        }
    }
}

/// Chooses how a layer is staged through `capacity` bytes of on-chip memory.
///
/// Without an rng the plan is the deterministic minimum (even partitions, `η = 1`).
pub fn plan_execution(
    layer: &LayerShape,
    tiling: &TilingSpec,
    capacity: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ExecutionPlan, SfcError> {
    plan_execution_with(layer, tiling, capacity, &PlanConfig::default(), rng)
}

pub fn plan_execution_with(
    layer: &LayerShape,
    tiling: &TilingSpec,
    capacity: usize,
    cfg: &PlanConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ExecutionPlan, SfcError> {
    let ifmap = layer.ifmap_bytes();
    let weights = layer.weight_bytes();
    let per_ofmap = layer.filter_bytes_per_ofmap();
    let deep_tile =
        tiling.th.min(layer.h) * tiling.tw.min(layer.w) * layer.c * layer.bytes_per_elem;
    let positions = tiling.tile_rows(layer) * tiling.tile_cols(layer);
    if capacity < deep_tile {
        return Err(SfcError::Planning(format!(
            "capacity {capacity} B below one deep tile ({deep_tile} B)"
        )));
    }

    let groups_of = |budget: usize| -> Vec<usize> {
        let per = (budget / deep_tile).clamp(1, positions);
        let mut g = vec![per; positions / per];
        if positions % per != 0 {
            g.push(positions % per);
        }
        g
    };

    if ifmap + weights <= capacity {
        return Ok(ExecutionPlan {
            case: PlanCase::AllFit,
            partition: vec![layer.k],
            ifmap_groups: vec![positions],
            tau: 1,
            eta: 1,
            partition_seed: None,
        });
    }
    if ifmap + per_ofmap <= capacity {
        let max_part = (capacity - ifmap) / per_ofmap;
        let (partition, seed) = partition_ofmaps(layer.k, max_part, cfg, rng);
        return Ok(ExecutionPlan {
            case: PlanCase::I,
            partition,
            ifmap_groups: vec![positions],
            tau: 1,
            eta: 1,
            partition_seed: seed,
        });
    }
    if weights + deep_tile <= capacity {
        return Ok(ExecutionPlan {
            case: PlanCase::II,
            partition: vec![layer.k],
            ifmap_groups: groups_of(capacity - weights),
            tau: 1,
            eta: 1,
            partition_seed: None,
        });
    }
    let half = capacity / 2;
    if half < deep_tile || half < per_ofmap {
        return Err(SfcError::Planning(format!(
            "half capacity {half} B cannot hold a deep tile ({deep_tile} B) and a filter ({per_ofmap} B)"
        )));
    }
    let ifmap_groups = groups_of(half);
    let tau = ifmap_groups.len();
    let (partition, seed) = partition_ofmaps(layer.k, half / per_ofmap, cfg, rng.as_deref_mut());
    let eta = match rng {
        Some(r) => r.gen_range(1..=tau),
        None => 1,
    };
    Ok(ExecutionPlan {
        case: PlanCase::III,
        partition,
        ifmap_groups,
        tau,
        eta,
        partition_seed: seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer() -> (LayerShape, TilingSpec) {
        // ifmap 16*16*16 = 4096 B, weights 32*16*9 = 4608 B, deep tile 4*4*16 = 256 B
        let l = LayerShape::same(32, 16, 16, 16, 3, 3);
        (l, TilingSpec::new(8, 8, 4, 4))
    }

    #[test]
    fn huge_capacity_all_fit() {
        let (l, t) = layer();
        let p = plan_execution(&l, &t, 1 << 20, None).unwrap();
        assert_eq!(p.case, PlanCase::AllFit);
        assert_eq!((p.tau, p.eta), (1, 1));
    }

    #[test]
    fn weight_overflow_gives_case_one() {
        let (l, t) = layer();
        // weights = 2x the room left after the ifmap
        let cap = l.ifmap_bytes() + l.weight_bytes() / 2;
        let p = plan_execution(&l, &t, cap, None).unwrap();
        assert_eq!(p.case, PlanCase::I);
        assert!(p.partition.len() >= 2);
        assert_eq!(p.partition.iter().sum::<usize>(), 32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let max = (cap - l.ifmap_bytes()) / l.filter_bytes_per_ofmap();
        for _ in 0..50 {
            let p = plan_execution(&l, &t, cap, Some(&mut rng)).unwrap();
            assert_eq!(p.partition.iter().sum::<usize>(), 32);
            assert!(p.partition.iter().all(|&k| (1..=max).contains(&k)));
        }
    }

    #[test]
    fn ifmap_overflow_gives_case_two() {
        let l = LayerShape::same(4, 16, 16, 16, 3, 3);
        let t = TilingSpec::new(4, 8, 4, 4);
        let cap = l.weight_bytes() + 1024;
        let p = plan_execution(&l, &t, cap, None).unwrap();
        assert_eq!(p.case, PlanCase::II);
        assert_eq!(p.ifmap_groups.iter().sum::<usize>(), 16);
        assert!(p.ifmap_groups.iter().all(|&g| g * 256 <= 1024));
    }

    #[test]
    fn both_overflow_gives_case_three() {
        let (l, t) = layer();
        let p = plan_execution(&l, &t, 2048, None).unwrap();
        assert_eq!(p.case, PlanCase::III);
        assert_eq!(p.tau, p.ifmap_groups.len());
        assert!(p.tau > 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = plan_execution(&l, &t, 2048, Some(&mut rng)).unwrap();
            assert!((1..=p.tau).contains(&p.eta));
            // de-unrolled stream is tau copies of the partition order
            let parts: Vec<usize> = p.weight_stream().iter().map(|w| w.1).collect();
            let one: Vec<usize> = (0..p.partition.len()).collect();
            assert_eq!(parts, one.repeat(p.tau));
        }
    }

    #[test]
    fn unrolled_stream_alternates_copies() {
        let s = unrolled_weight_stream(2, 4, 2);
        assert_eq!(
            s,
            vec![
                (0, 0),
                (0, 1),
                (1, 0),
                (1, 1),
                (0, 0),
                (0, 1),
                (1, 0),
                (1, 1)
            ]
        );
    }

    #[test]
    fn tiny_capacity_errors() {
        let (l, t) = layer();
        assert!(plan_execution(&l, &t, 100, None).is_err());
    }

    #[test]
    fn keyed_plan_is_reproducible_and_serializes() {
        let (l, t) = layer();
        let a = plan_execution(&l, &t, 2048, Some(&mut ChaCha8Rng::seed_from_u64(9))).unwrap();
        let b = plan_execution(&l, &t, 2048, Some(&mut ChaCha8Rng::seed_from_u64(9))).unwrap();
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        for key in ["case", "partition", "tau", "eta"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
