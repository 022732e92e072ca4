use serde::{Deserialize, Serialize};

use super::{fnv1a, EventKind, EventLabel, Op, Trace, TraceError, TraceEvent, Workload};
use crate::sfc::{plan_execution, ExecutionPlan, PlanCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Event sizes are bitmap + nonzeros instead of dense tiles.
    pub sparse: bool,
    /// Host reads the final output after the last layer.
    pub host_readback: bool,
    pub capacity: usize,
    pub t_tile: u64,
    pub burst_cycles: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            sparse: false,
            host_readback: false,
            capacity: 182_000,
            t_tile: 512,
            burst_cycles: 4,
        }
    }
}

impl TraceConfig {
    pub(crate) fn transfer_cycles(&self, size: u32) -> u64 {
        self.burst_cycles * (size as u64).div_ceil(64)
    }
}

pub(crate) struct Emitter<'a> {
    pub cfg: &'a TraceConfig,
    pub trace: Trace,
    pub t: u64,
}

impl<'a> Emitter<'a> {
    pub fn new(cfg: &'a TraceConfig) -> Self {
        Self {
            cfg,
            trace: Trace::default(),
            t: 0,
        }
    }

    pub fn emit(
        &mut self,
        op: Op,
        addr: u64,
        size: u32,
        digest: u32,
        layer: usize,
        kind: EventKind,
    ) {
        self.trace.push(
            TraceEvent {
                op,
                addr,
                size,
                t: self.t,
                digest: Some(digest),
            },
            EventLabel { layer, kind },
        );
        self.t += self.cfg.transfer_cycles(size);
    }

    pub fn compute(&mut self, tiles: usize) {
        self.t += self.cfg.t_tile * tiles as u64;
    }
}

fn fmap_event_size(w: &Workload, cfg: &TraceConfig, f: usize, i: usize) -> u32 {
    if cfg.sparse {
        w.tile_sparse_size(f, i) as u32
    } else {
        w.tile_dense_size(f, i) as u32
    }
}

pub(crate) fn emit_fmap_tile(
    e: &mut Emitter,
    w: &Workload,
    op: Op,
    f: usize,
    i: usize,
    layer: usize,
    kind: EventKind,
) {
    let size = fmap_event_size(w, e.cfg, f, i);
    let digest = fnv1a(&w.tile_bytes(f, i));
    e.emit(op, w.tile_addr(f, i), size, digest, layer, kind);
}

/// Unprotected accelerator following the tiled loop nest.
pub fn baseline_trace(w: &Workload, cfg: &TraceConfig) -> Result<Trace, TraceError> {
    let plans = (0..w.layers())
        .map(|i| {
            let l = &w.net.layers[i];
            plan_execution(&l.shape, &l.tiling, cfg.capacity, None)
        })
        .collect::<Result<Vec<_>, _>>()?;
    baseline_trace_with_plans(w, cfg, &plans)
}

pub fn baseline_trace_with_plans(
    w: &Workload,
    cfg: &TraceConfig,
    plans: &[ExecutionPlan],
) -> Result<Trace, TraceError> {
    if plans.len() != w.layers() {
        return Err(TraceError::Config(format!(
            "{} plans for {} layers",
            plans.len(),
            w.layers()
        )));
    }
    let mut e = Emitter::new(cfg);
    for (layer, plan) in plans.iter().enumerate() {
        emit_layer(&mut e, w, layer, plan)?;
    }
    if cfg.host_readback {
        let f = w.layers();
        for i in 0..w.tiles(f).len() {
            emit_fmap_tile(&mut e, w, Op::Read, f, i, f, EventKind::HostRead);
        }
    }
    Ok(e.trace)
}

/// `(group, partition)` step after which each ofmap tile is complete.
pub(crate) fn ofmap_ready_steps(
    w: &Workload,
    layer: usize,
    plan: &ExecutionPlan,
) -> Vec<(usize, usize)> {
    let groups = plan.group_ranges();
    let parts = plan.partition_ranges();
    w.tiles(layer + 1)
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let pos = w.last_needed_position(layer, i);
            let g = groups
                .iter()
                .position(|r| r.contains(&pos))
                .expect("position in a group");
            let p = parts
                .iter()
                .position(|r| r.contains(&(t.chan_hi - 1)))
                .expect("channel in a partition");
            (g, p)
        })
        .collect()
}

fn emit_layer(
    e: &mut Emitter,
    w: &Workload,
    layer: usize,
    plan: &ExecutionPlan,
) -> Result<(), TraceError> {
    let sh = &w.net.layers[layer].shape;
    let cg = w.net.layers[layer].tiling.channel_groups(sh);
    if plan.partition.iter().sum::<usize>() != sh.k {
        return Err(TraceError::Config(format!(
            "layer {layer}: partition does not sum to K"
        )));
    }
    for &(src, dst) in &w.net.skips {
        if dst == layer {
            for i in 0..w.tiles(src + 1).len() {
                emit_fmap_tile(e, w, Op::Read, src + 1, i, layer, EventKind::Skip);
            }
        }
    }
    let ready = ofmap_ready_steps(w, layer, plan);
    let parts = plan.partition_ranges();
    let stream = plan.weight_stream();
    for (g, positions) in plan.group_ranges().into_iter().enumerate() {
        let n_tiles = positions.len() * cg;
        for i in positions.start * cg..positions.end * cg {
            emit_fmap_tile(e, w, Op::Read, layer, i, layer, EventKind::Ifmap);
        }
        let reads_weights = plan.case == PlanCase::III || g == 0;
        for (p, ks) in parts.iter().enumerate() {
            if reads_weights {
                let pass = if plan.case == PlanCase::III { g } else { 0 };
                let copy = stream[pass * parts.len() + p].0;
                for wt in w.weight_tiles(layer, ks.clone()) {
                    let bytes = w.weight_bytes(layer, &wt);
                    let size = if e.cfg.sparse {
                        w.weight_sparse_size(layer, &wt)
                    } else {
                        bytes.len()
                    };
                    e.emit(
                        Op::Read,
                        w.weight_addr(layer, copy, &wt),
                        size as u32,
                        fnv1a(&bytes),
                        layer,
                        EventKind::Weight,
                    );
                }
            }
            e.compute(n_tiles);
            for (i, _) in ready.iter().enumerate().filter(|(_, &s)| s == (g, p)) {
                emit_fmap_tile(e, w, Op::Write, layer + 1, i, layer, EventKind::Ofmap);
            }
        }
    }
    Ok(())
}
