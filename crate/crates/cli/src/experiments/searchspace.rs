//! Search-space size of the volume estimate against the noise level, the
//! adversary's compression prior, and compression on or off.

use accel_leak::mellin::{
    predict_x, product_pdf, reciprocal_pdf, search_space_size, smart_search_space, BetaPrior,
    GridPdf, ProductMethod, RankResult,
};
use accel_leak::model::NetworkSpec;
use accel_leak::tracegen::{NpKey, NpSimulator, Workload};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{input_shape, ramp_input, workload};
use crate::config::SearchSpaceSpec;
use crate::error::CliError;

/// What the defender's accelerator actually did on the target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    /// True per-layer input volume `X_l` (raw fmap bytes).
    pub xs: Vec<u64>,
    /// Realized compression ratio `β_l`.
    pub betas: Vec<f64>,
    /// Mean compression factor of similar models, the normal prior's centre.
    pub center: f64,
}

/// Prior label used for the no-compression curve.
pub const NO_COMPRESSION: &str = "no-compression";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub prior: String,
    pub log10_size: f64,
    /// Layers whose true volume fell outside the candidate support.
    pub outside: usize,
}

/// Realized `(X_l, β_l)` of every fmap but the last, from one protected run.
pub fn measure(w: &Workload, key: NpKey, run_seed: u64) -> Result<(Vec<u64>, Vec<f64>), CliError> {
    let run = NpSimulator::new(w, key)?.run(run_seed)?;
    let n = w.layers();
    let xs = (0..n).map(|f| run.reports[f].raw_bytes as u64).collect();
    let betas = (0..n)
        .map(|f| run.reports[f].comp_bytes as f64 / run.reports[f].raw_bytes as f64)
        .collect();
    Ok((xs, betas))
}

/// Mean raw/compressed factor over the layers of similar models: weight seed
/// `s` with input ramp `31·i + 7·s mod 241`.
pub fn cognate_center(net: &NetworkSpec, seeds: &[u64], key: NpKey) -> Result<f64, CliError> {
    let factors = seeds
        .par_iter()
        .map(|&s| {
            let w = workload(
                net,
                s,
                &ramp_input(input_shape(net), 31, 7 * s as usize, 241),
            )?;
            let (_, betas) = measure(&w, key, 1)?;
            Ok(betas.iter().map(|b| 1.0 / b).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, CliError>>()?
        .concat();
    if factors.is_empty() {
        return Err(CliError::Config(
            "no cognate models to centre the prior on".into(),
        ));
    }
    Ok(factors.iter().sum::<f64>() / factors.len() as f64)
}

pub fn target(w: &Workload, key: NpKey, spec: &SearchSpaceSpec) -> Result<Target, CliError> {
    let (xs, betas) = measure(w, key, spec.run_seed)?;
    let center = cognate_center(&w.net, &spec.cognate_seeds, key)?;
    Ok(Target { xs, betas, center })
}

/// Rank of `x_r` under the estimate from one observed volume `y`. The
/// adversary's noise prior is uniform on `[min(floor, cap/2), cap]`; a zero
/// cap means the observation carries no noise.
pub fn layer_rank(
    layer: usize,
    y: f64,
    x_r: u64,
    alpha_cap: f64,
    floor: f64,
    beta: &GridPdf,
) -> Result<RankResult, CliError> {
    let h = if alpha_cap > 0.0 {
        let hi = alpha_cap.min(y - 1.0);
        let alpha = GridPdf::uniform(floor.min(hi / 2.0), hi, 512)?;
        predict_x(y, &alpha, beta, &ProductMethod::default())?
    } else {
        product_pdf(
            &GridPdf::point_mass(y)?,
            &reciprocal_pdf(beta)?,
            &ProductMethod::default(),
        )?
    };
    let (lo, hi) = h.support();
    let smart = smart_search_space(&h, lo.floor().max(1.0) as u64, hi.ceil() as u64)?;
    Ok(RankResult::new(layer, None, smart, x_r))
}

/// Per-layer ranks with the noise realized at its largest value `α`.
pub fn ranks(
    t: &Target,
    alpha: f64,
    prior: Option<BetaPrior>,
    spec: &SearchSpaceSpec,
) -> Result<Vec<RankResult>, CliError> {
    let (lo, hi) = spec.factor_range;
    let beta = match prior {
        Some(p) => p.pdf_centered(1.0 / hi, 1.0 / lo, Some(t.center), spec.grid)?,
        None => GridPdf::point_mass(1.0)?,
    };
    t.xs.par_iter()
        .zip(&t.betas)
        .enumerate()
        .map(|(l, (&x, &b))| {
            let b = if prior.is_some() { b } else { 1.0 };
            layer_rank(l, b * x as f64 + alpha, x, alpha, spec.alpha_floor, &beta)
        })
        .collect()
}

/// Every prior plus the no-compression curve at every `α`.
pub fn sweep(t: &Target, spec: &SearchSpaceSpec) -> Result<Vec<SweepPoint>, CliError> {
    let mut out = Vec::new();
    for &alpha in &spec.alphas {
        let priors = spec.priors.iter().map(|&p| Some(p)).chain([None]);
        for prior in priors {
            let r = ranks(t, alpha, prior, spec)?;
            out.push(SweepPoint {
                alpha,
                prior: prior.map_or(NO_COMPRESSION.to_string(), |p| prior_name(p).to_string()),
                log10_size: search_space_size(&r),
                outside: r.iter().filter(|x| x.rank.is_none()).count(),
            });
        }
    }
    Ok(out)
}

pub fn prior_name(p: BetaPrior) -> &'static str {
    match p {
        BetaPrior::Uniform => "uniform",
        BetaPrior::Geometric => "geometric",
        BetaPrior::Normal => "normal",
    }
}

/// Log10 sizes of one prior's curve in `α` order.
pub fn curve(points: &[SweepPoint], prior: &str) -> Vec<(f64, f64)> {
    points
        .iter()
        .filter(|p| p.prior == prior)
        .map(|p| (p.alpha, p.log10_size))
        .collect()
}

pub fn to_csv(points: &[SweepPoint]) -> String {
    let mut s = String::from("alpha,prior,log10_size,outside\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{:.6},{}\n",
            p.alpha, p.prior, p.log10_size, p.outside
        ));
    }
    s
}
