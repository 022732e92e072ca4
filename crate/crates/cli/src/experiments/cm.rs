//! Attacks against the additive countermeasures, and the full pipeline
//! against bin-based obfuscation.

use std::collections::BTreeMap;

use accel_leak::attacks::{kk_attack, si_attack, si_filter, ss_attack, LeakedConstants};
use accel_leak::mellin::{
    predict_x, smart_search_space, BetaPrior, GridPdf, ProductMethod, RankResult,
};
use accel_leak::model::{vgg16, vgg16_32};
use accel_leak::tracegen::{
    additive_cm_trace, baseline_trace, AdditiveModel, EventKind, NpKey, NpSimulator, Observability,
    Op, TraceConfig, TraceEvent,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{input_shape, ramp_input, searchspace, workload};
use crate::error::CliError;

const ALL_VISIBLE: Observability = Observability {
    addresses: true,
    values: true,
    timing: true,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreaksCm {
    /// Layer-0 writes left after filtering the dummy-writes trace.
    pub ss_writes: usize,
    pub true_writes: usize,
    pub dummy_writes: usize,
    /// Layer-0 volume after ss and kk on the const-mean traces.
    pub kk_volume: f64,
    pub true_volume: f64,
    pub leaked: LeakedConstants,
    pub fake_writes: usize,
    pub fake_writes_removed: usize,
    /// Genuine writes the value check dropped.
    pub true_writes_removed: usize,
}

/// Dummy writes on vgg16-32, const-mean noise over `cm_runs` runs on
/// vgg16's first layer, and a layer divider on vgg16-32.
pub fn attack_breaks_cm(cm_runs: usize) -> Result<BreaksCm, CliError> {
    let cfg = TraceConfig::default();

    let net = vgg16_32().truncated(3);
    let w = workload(&net, 2, &ramp_input(input_shape(&net), 37, 2, 251))?;
    let t = additive_cm_trace(&w, &cfg, &AdditiveModel::dummy_writes(), 5)?;
    let count = |kind: EventKind| {
        t.labels
            .iter()
            .filter(|l| l.layer == 0 && l.kind == kind)
            .count()
    };
    let (true_writes, dummy_writes) = (count(EventKind::Ofmap), count(EventKind::DummyWrite));
    let ss_writes = ss_attack(&[t.events])?.layers[0].writes;

    let net = vgg16().truncated(1);
    let w = workload(&net, 3, &ramp_input(input_shape(&net), 37, 3, 251))?;
    let m = AdditiveModel::const_mean();
    let traces = (0..cm_runs as u64)
        .into_par_iter()
        .map(|s| Ok(additive_cm_trace(&w, &cfg, &m, s)?.events))
        .collect::<Result<Vec<_>, CliError>>()?;
    let leaked = LeakedConstants {
        noise_mean: m.noise_mean().map(|v| v as f64),
        noise_min: m.noise_min().map(|v| v as f64),
        ..Default::default()
    };
    let kk = kk_attack(&ss_attack(&traces)?, &leaked);
    let true_volume = w.fmap_dense_total(0) as f64;

    let net = vgg16_32().truncated(3);
    let w = workload(&net, 4, &ramp_input(input_shape(&net), 37, 4, 251))?;
    let t = additive_cm_trace(&w, &cfg, &AdditiveModel::LayerDivider, 1)?;
    let ev = t.observed(ALL_VISIBLE);
    let keep = si_filter(&ev);
    let (mut fake_writes, mut fake_writes_removed, mut true_writes_removed) = (0, 0, 0);
    for ((e, l), k) in ev.iter().zip(&t.labels).zip(&keep) {
        if e.op != Op::Write {
            continue;
        }
        if l.is_true() {
            true_writes_removed += usize::from(!k);
        } else {
            fake_writes += 1;
            fake_writes_removed += usize::from(!k);
        }
    }

    Ok(BreaksCm {
        ss_writes,
        true_writes,
        dummy_writes,
        kk_volume: kk.layers[0].volume,
        true_volume,
        leaked,
        fake_writes,
        fake_writes_removed,
        true_writes_removed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldsLayer {
    pub layer: usize,
    pub truth: u64,
    /// Filtered volume the adversary feeds to the estimator.
    pub y: f64,
    pub estimate: f64,
    pub rel_error: f64,
    pub rank: Option<usize>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmHolds {
    pub runs: usize,
    pub segments: usize,
    pub true_layers: usize,
    pub key_resident: bool,
    pub layers: Vec<HoldsLayer>,
}

/// ss + si + kk on `runs` protected vgg16-32 traces, then the estimator the
/// search-space analysis uses turns each filtered volume into a point
/// estimate and a rank for the true volume.
pub fn cm_holds(runs: usize, key: NpKey) -> Result<CmHolds, CliError> {
    let net = vgg16_32();
    let w = workload(&net, 1, &ramp_input(input_shape(&net), 37, 0, 251))?;
    let sim = NpSimulator::new(&w, key)?;
    let traces: Vec<Vec<TraceEvent>> = (0..runs as u64)
        .into_par_iter()
        .map(|r| Ok(sim.run(r)?.trace.observed(ALL_VISIBLE)))
        .collect::<Result<_, CliError>>()?;
    let si = si_attack(&traces, true, None);
    // the key stays inside the accelerator; only public constants leak
    let leaked = LeakedConstants {
        others: BTreeMap::from([
            ("bin_size".to_string(), key.bins.bin_size as f64),
            ("kappa".to_string(), key.bins.kappa as f64),
        ]),
        ..Default::default()
    };
    let kk = kk_attack(&si, &leaked);
    let truth = ss_attack(&[baseline_trace(&w, &TraceConfig::default())?.events])?;

    let center = searchspace::cognate_center(&net, &[2, 3, 4, 5], key)?;
    let prior = BetaPrior::Normal.pdf_centered(1.0 / 40.0, 1.0, Some(center), 512)?;
    let layers = kk
        .layers
        .par_iter()
        .zip(&truth.layers)
        .map(|(est, tru)| {
            let y = est.volume;
            let x_r = tru.volume as u64;
            let alpha = GridPdf::uniform(100f64.min(y / 4.0), y / 2.0, 512)?;
            let h = predict_x(y, &alpha, &prior, &ProductMethod::default())?;
            let (lo, hi) = h.support();
            let smart = smart_search_space(&h, lo.floor().max(1.0) as u64, hi.ceil() as u64)?;
            let estimate = h.mode();
            let r = RankResult::new(est.layer, None, smart, x_r);
            Ok(HoldsLayer {
                layer: est.layer,
                truth: x_r,
                y,
                estimate,
                rel_error: (estimate - x_r as f64).abs() / x_r as f64,
                rank: r.rank,
                support: r.h_smart.as_ref().map_or(0, |s| s.len()),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(CmHolds {
        runs,
        segments: kk.layers.len(),
        true_layers: truth.layers.len(),
        key_resident: kk.layers.iter().all(|l| l.key_resident),
        layers,
    })
}
