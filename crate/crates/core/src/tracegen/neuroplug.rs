use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::baseline::ofmap_ready_steps;
use super::{AddressMap, EventKind, EventLabel, Op, Trace, TraceError, TraceEvent, Workload};
use crate::binpack::{
    compress_tile, compress_with_dummies, inject_dummy, pack_bins, Bin, BinConfig, BinPackReport,
    CompressMode, CompressedTile, EntryKind, NoiseSampler, NoiseSpec,
};
use crate::sfc::{plan_execution_with, ExecutionPlan, PlanCase, PlanConfig};

/// Everything the defender keeps secret or hardwires.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NpKey {
    pub bins: BinConfig,
    /// `noise.seed` is the key.
    pub noise: NoiseSpec,
    pub capacity: usize,
    pub t_tile: u64,
    pub plan: PlanConfig,
    /// Off stores tiles uncompressed (`β = 1`).
    pub compression: bool,
    pub host_readback: bool,
}

impl Default for NpKey {
    fn default() -> Self {
        Self {
            bins: BinConfig::default(),
            noise: NoiseSpec::default(),
            capacity: 182_000,
            t_tile: 512,
            plan: PlanConfig::default(),
            compression: true,
            host_readback: false,
        }
    }
}

impl NpKey {
    /// Bins and noise shrunk for 32×32 inputs, where deep tiles are tens of bytes.
    pub fn desk_scaled() -> Self {
        Self {
            bins: BinConfig {
                bin_size: 4096,
                kappa: 64,
                ..BinConfig::default()
            },
            noise: NoiseSpec {
                alpha: 512,
                support_r: 1024,
                sigma2_max: 512.0 * 512.0,
                dummy_bytes_first_layer: 16,
                ..NoiseSpec::default()
            },
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise.seed = seed;
        self
    }

    fn mode(&self) -> CompressMode {
        if self.compression {
            CompressMode::Real
        } else {
            CompressMode::Sampled { beta: 1.0 }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NpRun {
    pub trace: Trace,
    /// One report per fmap, index = fmap.
    pub reports: Vec<BinPackReport>,
    pub plans: Vec<ExecutionPlan>,
}

/// Bins of one packed stream plus, per tile, the bins it touches.
struct Packed {
    bins: Vec<Bin>,
    tile_bins: Vec<Vec<usize>>,
    report: BinPackReport,
}

fn pack(
    layer: usize,
    tiles: &[CompressedTile],
    cfg: &BinConfig,
    noise: &mut NoiseSampler,
) -> Result<Packed, TraceError> {
    let (bins, report) = pack_bins(layer, tiles, cfg, noise)?;
    let mut tile_bins = vec![Vec::new(); tiles.len()];
    for (b, bin) in bins.iter().enumerate() {
        for e in &bin.table {
            if matches!(e.kind(), Some(EntryKind::Start | EntryKind::Cont)) {
                let v = &mut tile_bins[e.id as usize];
                if v.last() != Some(&b) {
                    v.push(b);
                }
            }
        }
    }
    Ok(Packed {
        bins,
        tile_bins,
        report,
    })
}

/// Per-key state: keyed plans, compressed fmap tiles and weight bins.
pub struct NpSimulator<'a> {
    w: &'a Workload,
    key: NpKey,
    plans: Vec<ExecutionPlan>,
    fmap_tiles: Vec<Vec<CompressedTile>>,
    /// `[layer][copy][partition]`
    weight_bins: Vec<Vec<Vec<Packed>>>,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl<'a> NpSimulator<'a> {
    pub fn new(w: &'a Workload, key: NpKey) -> Result<Self, TraceError> {
        key.bins.validate()?;
        let mode = key.mode();
        let mut plans = Vec::with_capacity(w.layers());
        for (i, l) in w.net.layers.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(key.noise.seed);
            rng.set_stream(i as u64 + 1);
            plans.push(plan_execution_with(
                &l.shape,
                &l.tiling,
                key.capacity,
                &key.plan,
                Some(&mut rng),
            )?);
        }
        let fmap_tiles = (0..=w.layers())
            .map(|f| {
                (0..w.tiles(f).len())
                    .map(|i| compress_tile(i as u32, &w.tile_bytes(f, i), mode))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let wspec = key.noise.with_seed(mix(key.noise.seed, u64::MAX));
        let mut sampler = NoiseSampler::new(wspec);
        let mut weight_bins = Vec::with_capacity(w.layers());
        for (layer, plan) in plans.iter().enumerate() {
            let parts = plan.partition_ranges();
            let mut copies = Vec::with_capacity(plan.eta);
            for _ in 0..plan.eta.max(1) {
                let mut per_part = Vec::with_capacity(parts.len());
                for ks in &parts {
                    let tiles = w
                        .weight_tiles(layer, ks.clone())
                        .iter()
                        .enumerate()
                        .map(|(i, wt)| compress_tile(i as u32, &w.weight_bytes(layer, wt), mode))
                        .collect::<Result<Vec<_>, _>>()?;
                    per_part.push(pack(layer, &tiles, &key.bins, &mut sampler)?);
                }
                copies.push(per_part);
            }
            weight_bins.push(copies);
        }
        Ok(Self {
            w,
            key,
            plans,
            fmap_tiles,
            weight_bins,
        })
    }

    pub fn plans(&self) -> &[ExecutionPlan] {
        &self.plans
    }

    /// One inference with per-run noise and dummy data.
    pub fn run(&self, run_seed: u64) -> Result<NpRun, TraceError> {
        let w = self.w;
        let cfg = &self.key.bins;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.key.noise.seed, run_seed));
        let mut packed = Vec::with_capacity(w.layers() + 1);
        for f in 0..=w.layers() {
            let spec = self
                .key
                .noise
                .with_seed(mix(mix(self.key.noise.seed, run_seed), f as u64));
            let mut sampler = NoiseSampler::new(spec);
            let p = if f == 0 && self.key.noise.dummy_bytes_first_layer > 0 {
                let tiles = (0..w.tiles(0).len())
                    .map(|i| {
                        let d = inject_dummy(
                            &w.tile_bytes(0, i),
                            self.key.noise.dummy_bytes_first_layer,
                            &mut rng,
                        );
                        compress_with_dummies(i as u32, &d, self.key.mode())
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                pack(0, &tiles, cfg, &mut sampler)?
            } else {
                pack(f, &self.fmap_tiles[f], cfg, &mut sampler)?
            };
            packed.push(p);
        }

        let mut em = BinEmitter {
            bin_size: cfg.bin_size as u32,
            gap: cfg.kappa as u64 * self.key.t_tile,
            stored: HashMap::new(),
            rng: &mut rng,
            trace: Trace::default(),
        };
        for (layer, plan) in self.plans.iter().enumerate() {
            for &(src, dst) in &w.net.skips {
                if dst == layer {
                    for b in 0..packed[src + 1].bins.len() {
                        em.emit(
                            Op::Read,
                            fmap_bin_addr(src + 1, b, cfg),
                            layer,
                            EventKind::Skip,
                        );
                    }
                }
            }
            self.emit_layer(&mut em, layer, plan, &packed[layer], &packed[layer + 1]);
        }
        if self.key.host_readback {
            let f = w.layers();
            for b in 0..packed[f].bins.len() {
                em.emit(Op::Read, fmap_bin_addr(f, b, cfg), f, EventKind::HostRead);
            }
        }
        Ok(NpRun {
            trace: em.trace,
            reports: packed.into_iter().map(|p| p.report).collect(),
            plans: self.plans.clone(),
        })
    }

    fn emit_layer(
        &self,
        em: &mut BinEmitter,
        layer: usize,
        plan: &ExecutionPlan,
        ifm: &Packed,
        ofm: &Packed,
    ) {
        let w = self.w;
        let cfg = &self.key.bins;
        let sh = &w.net.layers[layer].shape;
        let cg = w.net.layers[layer].tiling.channel_groups(sh);
        let parts = plan.partition_ranges();
        let stream = plan.weight_stream();
        let ready = ofmap_ready_steps(w, layer, plan);
        // a bin is written once every tile touching it is complete; cummax keeps bin order
        let mut bin_ready = vec![0usize; ofm.bins.len()];
        for (i, &(g, p)) in ready.iter().enumerate() {
            for &b in &ofm.tile_bins[i] {
                bin_ready[b] = bin_ready[b].max(g * parts.len() + p);
            }
        }
        for b in 1..bin_ready.len() {
            bin_ready[b] = bin_ready[b].max(bin_ready[b - 1]);
        }
        let mut next_out = 0;
        for (g, positions) in plan.group_ranges().into_iter().enumerate() {
            let mut bins: Vec<usize> = (positions.start * cg..positions.end * cg)
                .flat_map(|i| ifm.tile_bins[i].iter().copied())
                .collect();
            bins.dedup();
            for b in bins {
                em.emit(
                    Op::Read,
                    fmap_bin_addr(layer, b, cfg),
                    layer,
                    EventKind::Ifmap,
                );
            }
            let reads_weights = plan.case == PlanCase::III || g == 0;
            for p in 0..parts.len() {
                if reads_weights {
                    let pass = if plan.case == PlanCase::III { g } else { 0 };
                    let copy = stream[pass * parts.len() + p].0;
                    for b in 0..self.weight_bins[layer][copy][p].bins.len() {
                        em.emit(
                            Op::Read,
                            self.weight_bin_addr(layer, copy, p, b),
                            layer,
                            EventKind::Weight,
                        );
                    }
                }
                let step = g * parts.len() + p;
                while next_out < bin_ready.len() && bin_ready[next_out] <= step {
                    em.emit(
                        Op::Write,
                        fmap_bin_addr(layer + 1, next_out, cfg),
                        layer,
                        EventKind::Ofmap,
                    );
                    next_out += 1;
                }
            }
        }
    }

    fn weight_bin_addr(&self, layer: usize, copy: usize, part: usize, b: usize) -> u64 {
        let before: usize = self.weight_bins[layer]
            .iter()
            .take(copy)
            .flatten()
            .chain(self.weight_bins[layer][copy].iter().take(part))
            .map(|p| p.bins.len())
            .sum();
        AddressMap::weights(layer) + ((before + b) * self.key.bins.bin_size) as u64
    }
}

fn fmap_bin_addr(f: usize, b: usize, cfg: &BinConfig) -> u64 {
    AddressMap::fmap(f) + (b * cfg.bin_size) as u64
}

struct BinEmitter<'r> {
    bin_size: u32,
    gap: u64,
    /// ciphertext digest currently stored at each address
    stored: HashMap<u64, u32>,
    rng: &'r mut ChaCha8Rng,
    trace: Trace,
}

impl BinEmitter<'_> {
    fn emit(&mut self, op: Op, addr: u64, layer: usize, kind: EventKind) {
        let digest = match op {
            Op::Write => {
                let d = self.rng.gen();
                self.stored.insert(addr, d);
                d
            }
            Op::Read => *self.stored.entry(addr).or_insert_with(|| self.rng.gen()),
        };
        let t = self.trace.len() as u64 * self.gap;
        self.trace.push(
            TraceEvent {
                op,
                addr,
                size: self.bin_size,
                t,
                digest: Some(digest),
            },
            EventLabel { layer, kind },
        );
    }
}

/// Single NeuroPlug inference under `key` with noise seed `seed`.
pub fn neuroplug_trace(w: &Workload, key: &NpKey, seed: u64) -> Result<Trace, TraceError> {
    Ok(NpSimulator::new(w, *key)?.run(seed)?.trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_weights, vgg16_32, Tensor3D};
    use crate::tracegen::cdtv;
    use std::collections::HashSet;

    fn workload(seed: u64) -> Workload {
        let net = vgg16_32().truncated(4);
        let s = net.layers[0].shape;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..s.c * s.h * s.w)
            .map(|_| rng.gen_range(0..=100))
            .collect();
        let x = Tensor3D::from_vec(s.c, s.h, s.w, data).unwrap();
        let wts = generate_weights(&net, seed);
        Workload::new(net, wts, &x).unwrap()
    }

    #[test]
    fn events_are_uniform_bins() {
        let w = workload(1);
        let t = neuroplug_trace(&w, &NpKey::default().with_seed(7), 0).unwrap();
        assert!(!t.is_empty());
        assert!(t.events.iter().all(|e| e.size == 60_000));
        let s = cdtv(&t.events).unwrap();
        let gaps: HashSet<u64> = s.time.iter().copied().collect();
        assert_eq!(gaps.len(), 1);
        assert_eq!(*gaps.iter().next().unwrap(), 8 * 512);
    }

    #[test]
    fn bin_counts_vary_with_noise_seed() {
        let w = workload(2);
        let sim = NpSimulator::new(&w, NpKey::desk_scaled().with_seed(3)).unwrap();
        let counts: Vec<usize> = (0..100)
            .map(|s| sim.run(s).unwrap().reports[1].bins_out)
            .collect();
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        let var = counts
            .iter()
            .map(|&c| (c as f64 - mean).powi(2))
            .sum::<f64>();
        assert!(var > 0.0);
    }

    #[test]
    fn every_written_bin_is_read_by_next_layer() {
        let w = workload(3);
        let run = NpSimulator::new(&w, NpKey::default().with_seed(5))
            .unwrap()
            .run(1)
            .unwrap();
        let t = &run.trace;
        for f in 1..w.layers() {
            let written: HashSet<u64> = t
                .events
                .iter()
                .zip(&t.labels)
                .filter(|(e, l)| e.op == Op::Write && l.layer == f - 1)
                .map(|(e, _)| e.addr)
                .collect();
            assert_eq!(written.len(), run.reports[f].bins_out);
            let read: HashSet<u64> = t
                .events
                .iter()
                .zip(&t.labels)
                .filter(|(e, l)| e.op == Op::Read && l.layer == f && l.kind == EventKind::Ifmap)
                .map(|(e, _)| e.addr)
                .collect();
            assert_eq!(written, read);
        }
    }

    #[test]
    fn digests_never_repeat_on_rewrite_across_runs() {
        let w = workload(4);
        let sim = NpSimulator::new(&w, NpKey::default().with_seed(1)).unwrap();
        let a = sim.run(1).unwrap().trace;
        let b = sim.run(2).unwrap().trace;
        let da: Vec<_> = a
            .events
            .iter()
            .filter(|e| e.op == Op::Write)
            .map(|e| e.digest)
            .collect();
        let db: Vec<_> = b
            .events
            .iter()
            .filter(|e| e.op == Op::Write)
            .map(|e| e.digest)
            .collect();
        assert!(da.iter().zip(&db).all(|(x, y)| x != y));
    }
}
