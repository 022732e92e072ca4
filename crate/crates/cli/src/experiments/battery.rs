//! Leakage metrics of each configuration about a model secret, against the
//! floor a secret-independent observable would score, plus the runs test.

use accel_leak::attacks::{craft_inputs, InputPolicy};
use accel_leak::model::{generate_weights, toy_sparse, vgg16_32};
use accel_leak::stats::{
    cvm_k_sample, fisher_information, lsb_bits, mutual_information, pearson_cc, runs_test,
    LabeledSamples, MetricReport, MetricRow, StatsError,
};
use accel_leak::tracegen::{
    additive_cm_trace, baseline_trace, cdtv, neuroplug_trace, AdditiveModel, NpKey, NpSimulator,
    Op, TraceConfig, TraceEvent, Workload,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{input_shape, permutation_floor, ramp_input, workload};
use crate::config::MetricsSpec;
use crate::error::CliError;

pub const TRAFFIC: &str = "memory-traffic";
pub const RW_DISTANCE: &str = "rw-distance";
pub const OBSERVABLES: [&str; 2] = [TRAFFIC, RW_DISTANCE];
pub const BASELINE: &str = "baseline";
pub const ADDITIVE: &str = "additive-cm";
pub const RANDOM: &str = "random";

/// Name of the floor row for `config`.
pub fn floor_name(config: &str) -> String {
    format!("{RANDOM}/{config}")
}

#[derive(Debug, Clone, Copy)]
pub enum BatteryCm {
    None,
    Additive(AdditiveModel),
    Neuroplug(NpKey),
}

/// Total bytes moved and mean write-to-read distance of one trace.
pub fn observables(events: &[TraceEvent]) -> Result<[f64; 2], CliError> {
    let c = cdtv(events)?;
    let d = if c.distance.is_empty() {
        0.0
    } else {
        c.distance.iter().sum::<u64>() as f64 / c.distance.len() as f64
    };
    Ok([(c.read_volume + c.write_volume) as f64, d])
}

/// `[MI, |CC|, FI, CvM]`; a constant observable scores zero on every column.
pub fn metrics(secret: &[i64], x: &[f64]) -> Result<[f64; 4], CliError> {
    let s = LabeledSamples::new(secret.to_vec(), x.to_vec())?;
    let mi = mutual_information(&s)?.value;
    let sf: Vec<f64> = secret.iter().map(|&v| v as f64).collect();
    let cc = match pearson_cc(&sf, x) {
        Ok(v) => v.abs(),
        Err(StatsError::Undefined(_)) => 0.0,
        Err(e) => return Err(e.into()),
    };
    let fi = fisher_information(&s)?.value;
    let cvm = cvm_k_sample(&s)?;
    Ok([mi, cc, fi, cvm])
}

/// Labels and both observables for every (level, input) of one configuration.
pub fn sweep(spec: &MetricsSpec, cm: BatteryCm) -> Result<(Vec<i64>, Vec<[f64; 2]>), CliError> {
    let cfg = TraceConfig {
        sparse: true,
        host_readback: true,
        ..TraceConfig::default()
    };
    let per_level = spec
        .levels
        .par_iter()
        .map(|&s| {
            let net = toy_sparse(s).truncated(spec.layers);
            let weights = generate_weights(&net, 1);
            let inputs = craft_inputs(
                InputPolicy::Natural,
                input_shape(&net),
                spec.samples_per_level,
                spec.seed + 100 + s as u64,
            )?;
            inputs
                .tensors
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let w = Workload::new(net.clone(), weights.clone(), x)?;
                    let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                    let t = match cm {
                        BatteryCm::None => baseline_trace(&w, &cfg)?,
                        BatteryCm::Additive(m) => additive_cm_trace(&w, &cfg, &m, seed)?,
                        BatteryCm::Neuroplug(key) => neuroplug_trace(&w, &key, seed)?,
                    };
                    observables(&t.events)
                })
                .collect::<Result<Vec<_>, CliError>>()
                .map(|o| (s as i64, o))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut secret = Vec::new();
    let mut obs = Vec::new();
    for (s, o) in per_level {
        secret.extend(std::iter::repeat_n(s, o.len()));
        obs.extend(o);
    }
    Ok((secret, obs))
}

/// Metric rows for one configuration and its floor rows.
pub fn rows(
    name: &str,
    secret: &[i64],
    obs: &[[f64; 2]],
    perms: usize,
    seed: u64,
) -> Result<Vec<MetricRow>, CliError> {
    let mut out = Vec::new();
    for (k, observable) in OBSERVABLES.iter().enumerate() {
        let x: Vec<f64> = obs.iter().map(|o| o[k]).collect();
        let m = metrics(secret, &x)?;
        let f = permutation_floor(secret, perms, seed + k as u64, |p| metrics(p, &x))?;
        for (config, v) in [(name.to_string(), m), (floor_name(name), f)] {
            out.push(MetricRow {
                config,
                observable: observable.to_string(),
                mi: v[0],
                cc: v[1],
                fi: v[2],
                cvm: v[3],
                runs_p: None,
            });
        }
    }
    Ok(out)
}

/// Baseline, additive countermeasure and every configured key.
pub fn battery(spec: &MetricsSpec) -> Result<MetricReport, CliError> {
    let mut configs: Vec<(String, BatteryCm)> = vec![
        (BASELINE.into(), BatteryCm::None),
        (ADDITIVE.into(), BatteryCm::Additive(spec.additive)),
    ];
    for (name, key) in &spec.keys {
        let mut k = key.resolve()?;
        k.host_readback = true;
        configs.push((name.clone(), BatteryCm::Neuroplug(k)));
    }
    let mut report = MetricReport {
        rows: Vec::new(),
        reference: RANDOM.into(),
    };
    for (i, (name, cm)) in configs.iter().enumerate() {
        let (secret, obs) = sweep(spec, *cm)?;
        report.rows.extend(rows(
            name,
            &secret,
            &obs,
            spec.permutations,
            spec.seed + 17 * i as u64,
        )?);
    }
    Ok(report)
}

pub fn to_csv(r: &MetricReport) -> String {
    let mut s = String::from("config,observable,mi,cc,fi,cvm,runs_p\n");
    for row in &r.rows {
        s.push_str(&format!(
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{}\n",
            row.config,
            row.observable,
            row.mi,
            row.cc,
            row.fi,
            row.cvm,
            row.runs_p.map_or(String::new(), |p| format!("{p:.6}"))
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsResult {
    /// p per key for the ciphertext-LSB stream.
    pub p: Vec<f64>,
    pub mean_p: f64,
    /// Keys whose stream failed the frequency pre-test.
    pub pretest_failures: usize,
    /// Mean p of the inter-arrival gap and bin-count LSB stream.
    pub gap_count_mean_p: f64,
    pub gap_count_pretest_failures: usize,
}

/// Runs test on protected vgg16-32 traces, one bitstream per key over
/// `runs` inferences: the LSBs of the written ciphertext digests, and
/// separately the LSBs of inter-arrival gaps followed by per-fmap bin counts.
pub fn runs_battery(key: NpKey, keys: u64, runs: u64) -> Result<RunsResult, CliError> {
    let net = vgg16_32();
    let w = workload(&net, 1, &ramp_input(input_shape(&net), 37, 0, 251))?;
    let per_key = (0..keys)
        .into_par_iter()
        .map(|k| {
            let sim = NpSimulator::new(&w, key.with_seed(k))?;
            let (mut digests, mut gaps, mut counts) = (Vec::new(), Vec::new(), Vec::new());
            for r in 0..runs {
                let run = sim.run(r)?;
                let ev = &run.trace.events;
                digests.extend(
                    ev.iter()
                        .filter(|e| e.op == Op::Write)
                        .filter_map(|e| e.digest)
                        .map(u64::from),
                );
                gaps.extend(ev.windows(2).map(|p| p[1].t - p[0].t));
                counts.extend(run.reports.iter().map(|r| r.bins_out as u64));
            }
            gaps.extend(counts);
            let a = runs_test(&lsb_bits(&digests))?;
            let b = runs_test(&lsb_bits(&gaps))?;
            Ok((a, b))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let n = per_key.len() as f64;
    let p: Vec<f64> = per_key.iter().map(|(a, _)| a.value).collect();
    Ok(RunsResult {
        mean_p: p.iter().sum::<f64>() / n,
        p,
        pretest_failures: per_key.iter().filter(|(a, _)| a.flag.is_some()).count(),
        gap_count_mean_p: per_key.iter().map(|(_, b)| b.value).sum::<f64>() / n,
        gap_count_pretest_failures: per_key.iter().filter(|(_, b)| b.flag.is_some()).count(),
    })
}
