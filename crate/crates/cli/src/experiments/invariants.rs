//! Pipeline invariants checked end to end.

use std::collections::BTreeSet;

use accel_leak::binpack::{
    compress_tile, compress_with_dummies, inject_dummy, pack_bins, unpack_bins, BinConfig,
    CompressMode, NoiseSampler, NoiseSpec,
};
use accel_leak::model::vgg16_32;
use accel_leak::stats::{heteroskedasticity_tests, ols_residuals, HeteroResult};
use accel_leak::tracegen::{baseline_trace, cdtv, EventKind, NpKey, NpSimulator, Op, TraceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{input_shape, ramp_input, workload};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roundtrip {
    pub sets: usize,
    pub tiles: usize,
    pub mismatches: usize,
}

/// Random tile sets through compress, dummy injection, pack and unpack.
pub fn bin_roundtrip(sets: usize, seed: u64) -> Result<Roundtrip, CliError> {
    let per_set = (0..sets as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x2545_F491).wrapping_add(i));
            let cfg = BinConfig {
                bin_size: *[1024usize, 4096, 60_000]
                    .get(rng.gen_range(0..3))
                    .expect("in range"),
                kappa: rng.gen_range(1..=8),
                ..BinConfig::default()
            };
            let noise = NoiseSpec {
                alpha: rng.gen_range(0..cfg.bin_size as u64 / 4),
                support_r: rng.gen_range(0..cfg.bin_size as u64 / 4),
                sigma2_max: (cfg.bin_size as f64 / 8.0).powi(2),
                ..NoiseSpec::default()
            }
            .with_seed(i);
            let n = rng.gen_range(1..=24);
            let mut raws = Vec::with_capacity(n);
            let mut tiles = Vec::with_capacity(n);
            for id in 0..n as u32 {
                let len = rng.gen_range(1..3000);
                let density = rng.gen_range(0.0..1.0);
                let raw: Vec<u8> = (0..len)
                    .map(|_| if rng.gen_bool(density) { rng.gen() } else { 0 })
                    .collect();
                let t = if rng.gen_bool(0.25) {
                    let d = inject_dummy(&raw, rng.gen_range(0..32), &mut rng);
                    compress_with_dummies(id, &d, CompressMode::Real)
                } else {
                    compress_tile(id, &raw, CompressMode::Real)
                }?;
                raws.push((id, raw));
                tiles.push(t);
            }
            let (bins, _) = pack_bins(0, &tiles, &cfg, &mut NoiseSampler::new(noise))?;
            let back = unpack_bins(&bins, &cfg)?;
            Ok((n, usize::from(back != raws)))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Roundtrip {
        sets,
        tiles: per_set.iter().map(|p| p.0).sum(),
        mismatches: per_set.iter().map(|p| p.1).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformEvents {
    pub bin_size: usize,
    pub events: usize,
    pub off_size: usize,
    pub distinct_gaps: BTreeSet<u64>,
}

/// Sizes and inter-arrival gaps of every event of one protected vgg16-32 run.
pub fn np_uniform_events(key: NpKey, run_seed: u64) -> Result<UniformEvents, CliError> {
    let net = vgg16_32();
    let w = workload(&net, 1, &ramp_input(input_shape(&net), 37, 0, 251))?;
    let run = NpSimulator::new(&w, key)?.run(run_seed)?;
    let ev = &run.trace.events;
    Ok(UniformEvents {
        bin_size: key.bins.bin_size,
        events: ev.len(),
        off_size: ev
            .iter()
            .filter(|e| e.size as usize != key.bins.bin_size)
            .count(),
        distinct_gaps: cdtv(ev)?.time.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    /// `(ofmap bytes written by layer l, ifmap bytes read by layer l+1)`.
    pub pairs: Vec<(u64, u64)>,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.pairs.iter().all(|(a, b)| a == b)
    }
}

pub fn baseline_conservation(sparse: bool) -> Result<Conservation, CliError> {
    let net = vgg16_32();
    let w = workload(&net, 3, &ramp_input(input_shape(&net), 37, 3, 251))?;
    let t = baseline_trace(
        &w,
        &TraceConfig {
            sparse,
            ..TraceConfig::default()
        },
    )?;
    let vol = |kind: EventKind, op: Op, l: usize| -> u64 {
        t.events
            .iter()
            .zip(&t.labels)
            .filter(|(e, lb)| lb.kind == kind && lb.layer == l && e.op == op)
            .map(|(e, _)| e.size as u64)
            .sum()
    };
    Ok(Conservation {
        pairs: (0..w.layers() - 1)
            .map(|l| {
                (
                    vol(EventKind::Ofmap, Op::Write, l),
                    vol(EventKind::Ifmap, Op::Read, l + 1),
                )
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseHetero {
    pub noise: HeteroResult,
    pub control: HeteroResult,
}

/// White and Breusch–Pagan on `N'_i` regressed on `N'_{i−1}`: the keyed
/// stream's variance persists over a block, so the previous draw predicts
/// the spread of the next. The control is a half-normal stream of fixed
/// variance, capped the same way.
pub fn noise_heteroskedasticity(
    spec: NoiseSpec,
    n: usize,
    control_seed: u64,
) -> Result<NoiseHetero, CliError> {
    let excess: Vec<f64> = (0..n as u64)
        .map(|i| (accel_leak::binpack::sample_noise(&spec, i) - spec.alpha) as f64)
        .collect();
    let sigma = (spec.sigma2_max / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| CliError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(control_seed);
    let control: Vec<f64> = (0..n)
        .map(|_| {
            normal
                .sample(&mut rng)
                .abs()
                .round()
                .min(spec.support_r as f64)
        })
        .collect();
    let lagged = |s: &[f64]| -> Result<HeteroResult, CliError> {
        let (x, y) = (&s[..s.len() - 1], &s[1..]);
        let e = ols_residuals(x, y)?;
        Ok(heteroskedasticity_tests(x, &e)?)
    };
    Ok(NoiseHetero {
        noise: lagged(&excess)?,
        control: lagged(&control)?,
    })
}
