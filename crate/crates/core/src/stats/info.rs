use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Estimate, LabeledSamples, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherConfig {
    pub var_floor: f64,
    pub min_per_level: usize,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            var_floor: 1e-9,
            min_per_level: 30,
        }
    }
}

pub fn fisher_information(s: &LabeledSamples) -> Result<Estimate, StatsError> {
    fisher_information_with(s, &FisherConfig::default())
}

/// Mean over secret levels of `(dμ/dθ)² / σ²`, slopes by central differences
/// (one-sided at the ends), per-level Gaussian fits.
pub fn fisher_information_with(
    s: &LabeledSamples,
    cfg: &FisherConfig,
) -> Result<Estimate, StatsError> {
    let levels = s.levels();
    if levels.len() < 2 {
        return Err(StatsError::Domain("need at least two secret levels".into()));
    }
    if let Some((_, v)) = levels.iter().find(|(_, v)| v.len() < cfg.min_per_level) {
        return Err(StatsError::TooFew {
            need: cfg.min_per_level,
            got: v.len(),
        });
    }
    let theta: Vec<f64> = levels.iter().map(|(t, _)| *t as f64).collect();
    let (mu, var): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .map(|(_, v)| {
            let n = v.len() as f64;
            let m = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
            (m, var)
        })
        .unzip();
    let l = theta.len();
    let mut floored = false;
    let mut total = 0.0;
    for i in 0..l {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(l - 1));
        let slope = (mu[b] - mu[a]) / (theta[b] - theta[a]);
        let v = if var[i] < cfg.var_floor {
            floored = true;
            cfg.var_floor
        } else {
            var[i]
        };
        total += slope * slope / v;
    }
    let fi = total / l as f64;
    Ok(if floored {
        Estimate::flagged(fi, "variance floor applied")
    } else {
        Estimate::clean(fi)
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Freedman–Diaconis bin index per value; Sturges when the IQR is zero.
fn bin_indices(x: &[f64]) -> Option<Vec<usize>> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return None;
    }
    let n = x.len() as f64;
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let bins = if iqr > 0.0 {
        ((hi - lo) / (2.0 * iqr * n.powf(-1.0 / 3.0))).ceil() as usize
    } else {
        n.log2().ceil() as usize + 1
    }
    .clamp(1, x.len());
    let w = (hi - lo) / bins as f64;
    Some(
        x.iter()
            .map(|v| (((v - lo) / w) as usize).min(bins - 1))
            .collect(),
    )
}

/// Miller–Madow corrected plug-in entropy in bits.
fn entropy_mm<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>, n: usize) -> f64 {
    let mut counts: HashMap<K, usize> = HashMap::new();
    for k in keys {
        *counts.entry(k).or_default() += 1;
    }
    let nf = n as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.log2()
        })
        .sum();
    h + (counts.len() as f64 - 1.0) / (2.0 * nf * std::f64::consts::LN_2)
}

/// Histogram mutual information between secret and observable, in bits.
pub fn mutual_information(s: &LabeledSamples) -> Result<Estimate, StatsError> {
    if s.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: s.len(),
        });
    }
    if s.levels().len() < 2 {
        return Err(StatsError::Domain("need at least two secret levels".into()));
    }
    let Some(bins) = bin_indices(&s.leaked) else {
        return Ok(Estimate::flagged(0.0, "observable is constant"));
    };
    let n = s.len();
    let hx = entropy_mm(s.secret.iter().copied(), n);
    let hy = entropy_mm(bins.iter().copied(), n);
    let hxy = entropy_mm(s.secret.iter().copied().zip(bins.iter().copied()), n);
    Ok(Estimate::clean((hx + hy - hxy).max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    #[test]
    fn fi_of_exact_leak_is_inverse_floor() {
        let secret: Vec<i64> = (0..4).flat_map(|l| std::iter::repeat(l).take(40)).collect();
        let leaked = secret.iter().map(|&s| s as f64).collect();
        let s = LabeledSamples::new(secret, leaked).unwrap();
        let cfg = FisherConfig {
            var_floor: 1e-4,
            ..FisherConfig::default()
        };
        let e = fisher_information_with(&s, &cfg).unwrap();
        assert!((e.value - 1e4).abs() < 1e-6);
        assert!(e.flag.is_some());
    }

    #[test]
    fn fi_of_independent_leak_is_small() {
        let mut r = rng();
        let secret: Vec<i64> = (0..4000).map(|i| (i % 4) as i64).collect();
        let leaked = (0..4000)
            .map(|_| r.sample::<f64, _>(StandardNormal))
            .collect();
        let e = fisher_information(&LabeledSamples::new(secret, leaked).unwrap()).unwrap();
        // slope noise is ~σ/√n per level, so FI ~ 1/n
        assert!(e.value < 0.01, "{}", e.value);
    }

    #[test]
    fn fi_matches_gaussian_shift_model() {
        // μ(θ) = 2θ, σ = 1 → FI = 4
        let mut r = rng();
        let secret: Vec<i64> = (0..20_000).map(|i| (i % 5) as i64).collect();
        let leaked = secret
            .iter()
            .map(|&t| 2.0 * t as f64 + r.sample::<f64, _>(StandardNormal))
            .collect();
        let e = fisher_information(&LabeledSamples::new(secret, leaked).unwrap()).unwrap();
        assert!((e.value - 4.0).abs() < 0.2, "{}", e.value);
    }

    #[test]
    fn fi_preconditions() {
        let s = LabeledSamples::new(vec![1; 40], vec![0.0; 40]).unwrap();
        assert!(fisher_information(&s).is_err());
        let s = LabeledSamples::new(vec![1, 2, 1, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            fisher_information(&s),
            Err(StatsError::TooFew { .. })
        ));
    }

    #[test]
    fn mi_of_identity_is_entropy() {
        let secret: Vec<i64> = (0..10_000).map(|i| (i % 4) as i64).collect();
        let leaked = secret.iter().map(|&s| s as f64).collect();
        let e = mutual_information(&LabeledSamples::new(secret, leaked).unwrap()).unwrap();
        assert!((e.value - 2.0).abs() < 0.01, "{}", e.value);
    }

    #[test]
    fn mi_of_independent_pairs_is_near_zero() {
        let mut r = rng();
        let secret: Vec<i64> = (0..10_000).map(|_| r.gen_range(0..4)).collect();
        let leaked = (0..10_000)
            .map(|_| r.sample::<f64, _>(StandardNormal))
            .collect();
        let e = mutual_information(&LabeledSamples::new(secret, leaked).unwrap()).unwrap();
        assert!(e.value <= 0.05, "{}", e.value);
    }

    #[test]
    fn mi_constant_observable_flagged() {
        let s = LabeledSamples::new(vec![0, 1, 0, 1], vec![5.0; 4]).unwrap();
        let e = mutual_information(&s).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.flag.is_some());
    }
}
