//! Filter-size recovery from boundary effects, and how much of that
//! boundary signal survives bin-based obfuscation.

use accel_leak::attacks::{
    craft_inputs, huffduff_attack, write_series, BaselineVictim, HuffDuffConfig, InputPolicy,
    NpVictim,
};
use accel_leak::binpack::{BinConfig, NoiseSpec};
use accel_leak::model::{generate_weights, toy_sparse};
use accel_leak::stats::{fisher_information, LabeledSamples};
use accel_leak::tracegen::{NpKey, TraceConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::permutation_floor;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecovery {
    pub s: usize,
    pub inferred_s: Option<usize>,
    pub inferred_r: Option<usize>,
}

/// Row and column impulse sweeps against the sparse unprotected accelerator.
pub fn filter_recovery(filters: &[usize]) -> Result<Vec<FilterRecovery>, CliError> {
    filters
        .par_iter()
        .map(|&s| {
            let net = toy_sparse(s);
            let victim = BaselineVictim {
                weights: generate_weights(&net, 1),
                net,
                cfg: TraceConfig {
                    sparse: true,
                    ..TraceConfig::default()
                },
            };
            let r = huffduff_attack(&victim, &HuffDuffConfig::default())?;
            Ok(FilterRecovery {
                s,
                inferred_s: r.layers[0].filter_s,
                inferred_r: r.layers[0].filter_r,
            })
        })
        .collect()
}

/// Bins small enough that a 64×64 first layer spans several of them, so the
/// bin count can move with the impulse position at all.
pub fn fine_bin_key() -> NpKey {
    NpKey {
        bins: BinConfig {
            bin_size: 512,
            kappa: 8,
            ..BinConfig::default()
        },
        noise: NoiseSpec {
            alpha: 32,
            support_r: 448,
            sigma2_max: 448.0 * 448.0,
            dummy_bytes_first_layer: 16,
            ..NoiseSpec::default()
        },
        ..NpKey::desk_scaled()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFi {
    pub replicates: usize,
    pub runs_per_input: usize,
    pub positions: usize,
    /// FI of the protected write-volume series about the impulse position.
    pub fi: f64,
    /// FI of the same observations under shuffled positions.
    pub fi_reference: f64,
    /// Distinct write volumes seen; one means the series is constant.
    pub distinct_values: usize,
}

impl BoundaryFi {
    pub fn relative_gap(&self) -> f64 {
        (self.fi - self.fi_reference).abs() / self.fi_reference
    }
}

/// FI of the first-layer write volume about the row position of an impulse
/// on toy-sparse S=3, averaged over `replicates` independent sweeps; the
/// reference averages `perms` label shufflings of each sweep.
pub fn boundary_fi(
    key: NpKey,
    replicates: usize,
    runs_per_input: usize,
    perms: usize,
) -> Result<BoundaryFi, CliError> {
    let net = toy_sparse(3).truncated(1);
    let victim = NpVictim {
        weights: generate_weights(&net, 1),
        net,
        key,
    };
    let s = victim.net.layers[0].shape;
    let inputs = craft_inputs(InputPolicy::ImpulseRow, (s.c, s.h, s.w), s.w, 0)?;
    let per_rep = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = HuffDuffConfig {
                runs_per_input,
                column_sweep: false,
                seed: r,
            };
            let series = write_series(&victim, &inputs, &cfg)?;
            let mut secret = Vec::new();
            let mut leaked = Vec::new();
            for (k, runs) in series.iter().enumerate() {
                secret.extend(std::iter::repeat_n(k as i64, runs.len()));
                leaked.extend(runs);
            }
            let fi_of = |labels: &[i64]| -> Result<[f64; 1], CliError> {
                let ls = LabeledSamples::new(labels.to_vec(), leaked.clone())?;
                Ok([fisher_information(&ls)?.value])
            };
            let fi = fi_of(&secret)?[0];
            let reference = permutation_floor(&secret, perms, 1000 + r, fi_of)?[0];
            let mut distinct = leaked.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            Ok((fi, reference, distinct))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let n = per_rep.len() as f64;
    let mut all: Vec<f64> = per_rep.iter().flat_map(|p| p.2.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    Ok(BoundaryFi {
        replicates,
        runs_per_input,
        positions: inputs.tensors.len(),
        fi: per_rep.iter().map(|p| p.0).sum::<f64>() / n,
        fi_reference: per_rep.iter().map(|p| p.1).sum::<f64>() / n,
        distinct_values: all.len(),
    })
}
