use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::interp::CubicSpline;
use super::{Complex, GridPdf, MellinConfig, MellinError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ProductMethod {
    /// Multiply transforms on `Re(s) = c` and invert, i.e. convolve in `ln x`.
    Mellin(MellinConfig),
    /// Histogram of `draws` sampled products.
    MonteCarlo {
        draws: usize,
        bins: usize,
        seed: u64,
    },
}

impl Default for ProductMethod {
    fn default() -> Self {
        Self::Mellin(MellinConfig::default())
    }
}

/// Density of `1/β` for `β` supported in `(0, 1]`.
pub fn reciprocal_pdf(beta: &GridPdf) -> Result<GridPdf, MellinError> {
    let (lo, hi) = beta.support();
    if hi > 1.0 + 1e-12 {
        return Err(MellinError::Domain(format!(
            "ratio support reaches {hi} > 1"
        )));
    }
    if lo < f64::EPSILON {
        return Err(MellinError::Domain("ratio support touches 0".into()));
    }
    let grid: Vec<f64> = beta.grid().iter().rev().map(|x| 1.0 / x).collect();
    let density: Vec<f64> = beta
        .grid()
        .iter()
        .zip(beta.density())
        .rev()
        .map(|(x, d)| d * x * x)
        .collect();
    GridPdf::new(grid, density)
}

fn scaled(p: &GridPdf, k: f64) -> Result<GridPdf, MellinError> {
    GridPdf::new(
        p.grid().iter().map(|x| x * k).collect(),
        p.density().iter().map(|d| d / k).collect(),
    )
}

/// Density of `U·V` for independent `U`, `V`.
pub fn product_pdf(
    u: &GridPdf,
    v: &GridPdf,
    method: &ProductMethod,
) -> Result<GridPdf, MellinError> {
    if v.is_point_mass() {
        return scaled(u, v.grid()[0]);
    }
    if u.is_point_mass() {
        return scaled(v, u.grid()[0]);
    }
    match *method {
        ProductMethod::Mellin(cfg) => log_convolution(u, v, &cfg),
        ProductMethod::MonteCarlo { draws, bins, seed } => monte_carlo(u, v, draws, bins, seed),
    }
}

fn log_convolution(u: &GridPdf, v: &GridPdf, cfg: &MellinConfig) -> Result<GridPdf, MellinError> {
    if cfg.n < 16 || !cfg.n.is_power_of_two() {
        return Err(MellinError::Resolution(format!(
            "FFT length {} must be a power of two ≥ 16",
            cfg.n
        )));
    }
    let span = |p: &GridPdf| {
        let (lo, hi) = p.support();
        (lo.ln(), hi.ln())
    };
    let (a0, a1) = span(u);
    let (b0, b1) = span(v);
    let delta = ((a1 - a0) + (b1 - b0)) / (cfg.n - 4) as f64;
    let sample = |p: &GridPdf, u0: f64, u1: f64| -> Vec<Complex> {
        let s = CubicSpline::new(p.grid(), p.density());
        let (lo, hi) = p.support();
        let m = ((u1 - u0) / delta).floor() as usize + 1;
        (0..m)
            .map(|k| {
                let t = u0 + delta * k as f64;
                let w = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
                let f = s.eval(t.exp().clamp(lo, hi)).max(0.0);
                Complex::new(w * f * (cfg.c * t).exp(), 0.0)
            })
            .collect()
    };
    let mut gu = sample(u, a0, a1);
    let mut gv = sample(v, b0, b1);
    let out_len = gu.len() + gv.len() - 1;
    gu.resize(cfg.n, Complex::new(0.0, 0.0));
    gv.resize(cfg.n, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(cfg.n);
    fwd.process(&mut gu);
    fwd.process(&mut gv);
    let mut prod: Vec<Complex> = gu.iter().zip(&gv).map(|(a, b)| a * b).collect();
    planner.plan_fft_inverse(cfg.n).process(&mut prod);
    let norm = delta / cfg.n as f64;
    let mut grid = Vec::with_capacity(out_len);
    let mut density = Vec::with_capacity(out_len);
    for (k, g) in prod.iter().take(out_len).enumerate() {
        let t = a0 + b0 + delta * k as f64;
        grid.push(t.exp());
        density.push((g.re * norm * (-cfg.c * t).exp()).max(0.0));
    }
    GridPdf::new(grid, density)
}

fn monte_carlo(
    u: &GridPdf,
    v: &GridPdf,
    draws: usize,
    bins: usize,
    seed: u64,
) -> Result<GridPdf, MellinError> {
    if draws == 0 || bins < 2 {
        return Err(MellinError::Resolution(
            "need draws ≥ 1 and bins ≥ 2".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (su, sv) = (u.sampler(), v.sampler());
    let xs: Vec<f64> = (0..draws)
        .map(|_| su(rng.gen(), rng.gen()) * sv(rng.gen(), rng.gen()))
        .collect();
    histogram_pdf(&xs, bins)
}

/// Equal-width histogram density placed at bin centres.
pub(crate) fn histogram_pdf(xs: &[f64], bins: usize) -> Result<GridPdf, MellinError> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return GridPdf::point_mass(lo);
    }
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &x in xs {
        counts[(((x - lo) / w) as usize).min(bins - 1)] += 1;
    }
    GridPdf::new(
        (0..bins).map(|i| lo + w * (i as f64 + 0.5)).collect(),
        counts.iter().map(|&c| c as f64).collect(),
    )
}

/// `½ Σ |P_a(bin) − P_b(bin)|` over `bins` equal-width bins spanning both supports.
pub fn tv_distance(a: &GridPdf, b: &GridPdf, bins: usize) -> f64 {
    let lo = a.support().0.min(b.support().0);
    let hi = a.support().1.max(b.support().1);
    if !(hi > lo) {
        return 0.0;
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    let probs = |p: &GridPdf| -> Vec<f64> {
        let c: Vec<f64> = edges
            .iter()
            .enumerate()
            .map(|(i, &e)| if i == bins { 1.0 } else { p.cdf(e) })
            .collect();
        c.windows(2).map(|w| w[1] - w[0]).collect()
    };
    // mass sitting exactly on the lowest edge
    let pa = probs(a);
    let pb = probs(b);
    let below = |p: &GridPdf| if p.cdf(lo) > 0.0 { p.cdf(lo) } else { 0.0 };
    let (ea, eb) = (below(a), below(b));
    0.5 * ((ea - eb).abs() + pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>())
}

/// Adversary's density of `X = (Y − α)/β`.
pub fn predict_x(
    y_obs: f64,
    alpha_prior: &GridPdf,
    beta_prior: &GridPdf,
    method: &ProductMethod,
) -> Result<GridPdf, MellinError> {
    let alpha_max = alpha_prior.support().1;
    if y_obs <= alpha_max {
        return Err(MellinError::EmptyEvidence {
            y: y_obs,
            alpha_max,
        });
    }
    let u = GridPdf::new(
        alpha_prior.grid().iter().rev().map(|a| y_obs - a).collect(),
        alpha_prior.density().iter().rev().copied().collect(),
    )?;
    let v = reciprocal_pdf(beta_prior)?;
    product_pdf(&u, &v, method)
}
