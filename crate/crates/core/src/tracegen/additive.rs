use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baseline::{baseline_trace, TraceConfig};
use super::{AddressMap, EventKind, EventLabel, Op, Trace, TraceError, TraceEvent, Workload};

/// Abstract additive-noise countermeasures layered over the baseline stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum AdditiveModel {
    /// `round(ratio · true writes)` extra writes per layer that are never read.
    DummyWrites { ratio: f64 },
    /// Extra reads totalling `mean + step·(j − half_steps)` bytes per layer,
    /// `j` uniform in `0..=2·half_steps`.
    ConstMean {
        mean: u64,
        step: u64,
        half_steps: u64,
    },
    /// Every ofmap tile is read back and rewritten unchanged after its layer.
    LayerDivider,
}

impl AdditiveModel {
    pub fn dummy_writes() -> Self {
        Self::DummyWrites { ratio: 0.5 }
    }

    pub fn const_mean() -> Self {
        Self::ConstMean {
            mean: 22_400,
            step: 64,
            half_steps: 10,
        }
    }

    /// Hardwired mean of the per-layer noise, if the model has one.
    pub fn noise_mean(&self) -> Option<u64> {
        match *self {
            Self::ConstMean { mean, .. } => Some(mean),
            _ => None,
        }
    }

    /// Hardwired minimum of the per-layer noise, if the model has one.
    pub fn noise_min(&self) -> Option<u64> {
        match *self {
            Self::ConstMean {
                mean,
                step,
                half_steps,
            } => Some(mean.saturating_sub(step * half_steps)),
            _ => None,
        }
    }
}

impl FromStr for AdditiveModel {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dummy-writes" => Ok(Self::dummy_writes()),
            "const-mean" => Ok(Self::const_mean()),
            "layer-divider" => Ok(Self::LayerDivider),
            other => Err(TraceError::Config(format!(
                "unknown additive model {other:?}"
            ))),
        }
    }
}

/// Baseline stream with the model's extra traffic spliced in and timestamps rebuilt.
pub fn additive_cm_trace(
    w: &Workload,
    cfg: &TraceConfig,
    model: &AdditiveModel,
    seed: u64,
) -> Result<Trace, TraceError> {
    let base = baseline_trace(w, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = w.layers();
    // per-layer slices of the baseline; host reads form a trailing group
    let mut groups: Vec<Vec<(TraceEvent, EventLabel)>> = vec![Vec::new(); layers + 1];
    for (e, l) in base.events.iter().zip(&base.labels) {
        groups[l.layer.min(layers)].push((*e, *l));
    }
    for (layer, g) in groups.iter_mut().take(layers).enumerate() {
        match *model {
            AdditiveModel::DummyWrites { ratio } => add_dummy_writes(w, layer, g, ratio, &mut rng)?,
            AdditiveModel::ConstMean {
                mean,
                step,
                half_steps,
            } => {
                let j = rng.gen_range(0..=2 * half_steps);
                let n = (mean + step * j).saturating_sub(step * half_steps);
                add_jitter_reads(w, cfg, layer, g, n);
            }
            AdditiveModel::LayerDivider => add_divider(g, layer),
        }
    }
    Ok(retime(groups.into_iter().flatten(), cfg))
}

fn add_dummy_writes(
    w: &Workload,
    layer: usize,
    g: &mut Vec<(TraceEvent, EventLabel)>,
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(), TraceError> {
    if !(0.0..=16.0).contains(&ratio) {
        return Err(TraceError::Config(format!(
            "dummy ratio {ratio} out of range"
        )));
    }
    let writes: Vec<TraceEvent> = g
        .iter()
        .filter(|(e, _)| e.op == Op::Write)
        .map(|(e, _)| *e)
        .collect();
    if writes.is_empty() {
        return Ok(());
    }
    let n = (ratio * writes.len() as f64).round() as usize;
    let mut addr = AddressMap::fmap(layer + 1) + w.fmap_dense_total(layer + 1);
    for _ in 0..n {
        let like = writes[rng.gen_range(0..writes.len())];
        let e = TraceEvent {
            addr,
            digest: like.digest.map(|_| rng.gen()),
            ..like
        };
        addr += like.size as u64;
        let at = rng.gen_range(1..=g.len());
        g.insert(
            at,
            (
                e,
                EventLabel {
                    layer,
                    kind: EventKind::DummyWrite,
                },
            ),
        );
    }
    Ok(())
}

fn add_jitter_reads(
    w: &Workload,
    cfg: &TraceConfig,
    layer: usize,
    g: &mut Vec<(TraceEvent, EventLabel)>,
    mut n: u64,
) {
    let tiles = w.tiles(layer).len();
    let mut i = 0;
    while n > 0 {
        let full = if cfg.sparse {
            w.tile_sparse_size(layer, i)
        } else {
            w.tile_dense_size(layer, i)
        } as u64;
        let size = full.min(n).max(1);
        n -= size;
        g.push((
            TraceEvent {
                op: Op::Read,
                addr: w.tile_addr(layer, i),
                size: size as u32,
                t: 0,
                digest: Some(super::fnv1a(&w.tile_bytes(layer, i))),
            },
            EventLabel {
                layer,
                kind: EventKind::Jitter,
            },
        ));
        i = (i + 1) % tiles;
    }
}

fn add_divider(g: &mut Vec<(TraceEvent, EventLabel)>, layer: usize) {
    let writes: Vec<TraceEvent> = g
        .iter()
        .filter(|(_, l)| l.kind == EventKind::Ofmap)
        .map(|(e, _)| *e)
        .collect();
    for e in writes {
        g.push((
            TraceEvent { op: Op::Read, ..e },
            EventLabel {
                layer,
                kind: EventKind::DividerRead,
            },
        ));
        g.push((
            e,
            EventLabel {
                layer,
                kind: EventKind::DividerWrite,
            },
        ));
    }
}

/// Rebuilds timestamps: transfers cost burst cycles, and compute gaps between
/// consecutive baseline events are kept.
fn retime(events: impl Iterator<Item = (TraceEvent, EventLabel)>, cfg: &TraceConfig) -> Trace {
    let mut out = Trace::default();
    let mut t = 0u64;
    let mut prev_true: Option<TraceEvent> = None;
    for (mut e, l) in events {
        let original = l.is_true();
        if original {
            if let Some(p) = prev_true {
                t += e.t.saturating_sub(p.t + cfg.transfer_cycles(p.size));
            }
            prev_true = Some(e);
        }
        e.t = t;
        t += cfg.transfer_cycles(e.size);
        out.push(e, l);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_weights, vgg16, vgg16_32, Tensor3D};
    use crate::tracegen::cdtv;
    use std::collections::HashMap;

    fn workload(net: crate::model::NetworkSpec, seed: u64) -> Workload {
        let s = net.layers[0].shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..s.c * s.h * s.w)
            .map(|_| rng.gen_range(0..=60))
            .collect();
        let x = Tensor3D::from_vec(s.c, s.h, s.w, data).unwrap();
        let wts = generate_weights(&net, seed);
        Workload::new(net, wts, &x).unwrap()
    }

    fn count(t: &Trace, layer: usize, kind: EventKind) -> usize {
        t.labels
            .iter()
            .filter(|l| l.layer == layer && l.kind == kind)
            .count()
    }

    #[test]
    fn parse_models() {
        assert_eq!(
            "dummy-writes".parse::<AdditiveModel>().unwrap(),
            AdditiveModel::dummy_writes()
        );
        assert!(matches!(
            "nope".parse::<AdditiveModel>(),
            Err(TraceError::Config(_))
        ));
    }

    #[test]
    fn dummy_writes_first_layer_counts() {
        let w = workload(vgg16_32().truncated(2), 1);
        let t = additive_cm_trace(
            &w,
            &TraceConfig::default(),
            &AdditiveModel::dummy_writes(),
            9,
        )
        .unwrap();
        assert_eq!(count(&t, 0, EventKind::Ofmap), 1568);
        assert_eq!(count(&t, 0, EventKind::DummyWrite), 784);
        let dummies: Vec<u64> = t
            .events
            .iter()
            .zip(&t.labels)
            .filter(|(_, l)| l.kind == EventKind::DummyWrite)
            .map(|(e, _)| e.addr)
            .collect();
        assert!(t
            .events
            .iter()
            .filter(|e| e.op == Op::Read)
            .all(|e| !dummies.contains(&e.addr)));
        assert!(t.events.windows(2).all(|p| p[0].t <= p[1].t));
    }

    #[test]
    fn const_mean_noise_averages_to_constant() {
        let w = workload(vgg16().truncated(1), 2);
        let model = AdditiveModel::const_mean();
        let runs = 1000;
        let mut total = 0u64;
        let mut min = u64::MAX;
        for seed in 0..runs {
            let t = additive_cm_trace(&w, &TraceConfig::default(), &model, seed).unwrap();
            let added: u64 = t
                .events
                .iter()
                .zip(&t.labels)
                .filter(|(_, l)| l.kind == EventKind::Jitter)
                .map(|(e, _)| e.size as u64)
                .sum();
            total += added;
            min = min.min(added);
        }
        let mean = total as f64 / runs as f64;
        assert!((mean - 22_400.0).abs() <= 224.0, "mean {mean}");
        assert_eq!(min, model.noise_min().unwrap());
    }

    #[test]
    fn divider_repeats_digests() {
        let w = workload(vgg16_32().truncated(2), 3);
        let t = additive_cm_trace(&w, &TraceConfig::default(), &AdditiveModel::LayerDivider, 0)
            .unwrap();
        let mut last: HashMap<u64, Option<u32>> = HashMap::new();
        let mut repeats = 0;
        for e in t.events.iter().filter(|e| e.op == Op::Write) {
            if last.insert(e.addr, e.digest) == Some(e.digest) {
                repeats += 1;
            }
        }
        assert_eq!(
            repeats,
            count(&t, 0, EventKind::Ofmap) + count(&t, 1, EventKind::Ofmap)
        );
        cdtv(&t.events).unwrap();
    }
}
