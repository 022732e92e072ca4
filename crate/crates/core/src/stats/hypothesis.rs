use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use super::{Estimate, LabeledSamples, StatsError};

pub fn runs_test(bits: &[u8]) -> Result<Estimate, StatsError> {
    runs_test_with(bits, 100)
}

/// NIST SP 800-22 runs test; `min_len` relaxes the length precondition for
/// worked examples.
pub fn runs_test_with(bits: &[u8], min_len: usize) -> Result<Estimate, StatsError> {
    let n = bits.len();
    if n < min_len.max(2) {
        return Err(StatsError::TooFew {
            need: min_len.max(2),
            got: n,
        });
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(StatsError::Domain("bits must be 0 or 1".into()));
    }
    let nf = n as f64;
    let pi = bits.iter().map(|&b| b as f64).sum::<f64>() / nf;
    if (pi - 0.5).abs() >= 2.0 / nf.sqrt() {
        return Ok(Estimate::flagged(0.0, "frequency pre-test failed"));
    }
    let v = 1 + bits.windows(2).filter(|w| w[0] != w[1]).count();
    let q = pi * (1.0 - pi);
    let p = erfc((v as f64 - 2.0 * nf * q).abs() / (2.0 * (2.0 * nf).sqrt() * q));
    Ok(Estimate {
        value: p.clamp(0.0, 1.0),
        flag: None,
    })
}

/// Least-significant bit of each value.
pub fn lsb_bits(values: &[u64]) -> Vec<u8> {
    values.iter().map(|v| (v & 1) as u8).collect()
}

/// Cramér–von Mises `T = 1/(12n) + Σ (F(x_(i)) − (2i−1)/(2n))²`.
pub fn cvm_test(sample: &[f64], reference_cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    if sample.len() < 20 {
        return Err(StatsError::TooFew {
            need: 20,
            got: sample.len(),
        });
    }
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    Ok(1.0 / (12.0 * n)
        + x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = reference_cdf(v) - (2.0 * i as f64 + 1.0) / (2.0 * n);
                d * d
            })
            .sum::<f64>())
}

/// k-sample Cramér–von Mises distance between the secret levels:
/// `n_l Σ_j ΔH(x_j) (F_l(x_j) − H(x_j))²` over the distinct pooled points,
/// averaged over levels, with `H` the pooled CDF. Ties are allowed; two
/// levels give half the two-sample statistic.
pub fn cvm_k_sample(s: &LabeledSamples) -> Result<f64, StatsError> {
    let levels = s.levels();
    if levels.len() < 2 {
        return Err(StatsError::Domain("need at least two secret levels".into()));
    }
    if let Some((_, v)) = levels.iter().find(|(_, v)| v.len() < 20) {
        return Err(StatsError::TooFew {
            need: 20,
            got: v.len(),
        });
    }
    let mut pooled = s.leaked.clone();
    pooled.sort_by(f64::total_cmp);
    pooled.dedup();
    let h = empirical_cdf(&s.leaked);
    let mut prev = 0.0;
    let dh: Vec<(f64, f64)> = pooled
        .iter()
        .map(|&x| {
            let hx = h(x);
            let d = hx - prev;
            prev = hx;
            (d, hx)
        })
        .collect();
    let total: f64 = levels
        .iter()
        .map(|(_, v)| {
            let f = empirical_cdf(v);
            v.len() as f64
                * pooled
                    .iter()
                    .zip(&dh)
                    .map(|(&x, &(d, hx))| d * (f(x) - hx).powi(2))
                    .sum::<f64>()
        })
        .sum();
    Ok(total / levels.len() as f64)
}

/// Right-continuous empirical CDF of `reference`.
pub fn empirical_cdf(reference: &[f64]) -> impl Fn(f64) -> f64 {
    let mut r = reference.to_vec();
    r.sort_by(f64::total_cmp);
    move |x| r.partition_point(|&v| v <= x) as f64 / r.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroResult {
    pub white_stat: f64,
    pub white_p: f64,
    pub bp_stat: f64,
    pub bp_p: f64,
    pub flag: Option<String>,
}

/// Solves the normal equations of `y` on `cols`; `None` when singular.
fn ols(cols: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let k = cols.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = cols[i].iter().zip(&cols[j]).map(|(p, q)| p * q).sum();
        }
        a[i][k] = cols[i].iter().zip(y).map(|(p, q)| p * q).sum();
    }
    let scale = (0..k).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    for c in 0..k {
        let piv = (c..k).max_by(|&p, &q| a[p][c].abs().total_cmp(&a[q][c].abs()))?;
        if a[piv][c].abs() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        a.swap(c, piv);
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    Some((0..k).map(|i| a[i][k] / a[i][i]).collect())
}

fn r_squared(cols: &[Vec<f64>], y: &[f64]) -> Option<f64> {
    let b = ols(cols, y)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let sst: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sst == 0.0 {
        return Some(0.0);
    }
    let ssr: f64 = (0..y.len())
        .map(|i| {
            let fit: f64 = cols.iter().zip(&b).map(|(c, bj)| c[i] * bj).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    Some((1.0 - ssr / sst).clamp(0.0, 1.0))
}

/// Residuals of `y` regressed on `[1, x]`.
pub fn ols_residuals(x: &[f64], y: &[f64]) -> Result<Vec<f64>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Domain("length mismatch".into()));
    }
    let cols = vec![vec![1.0; x.len()], x.to_vec()];
    let b = ols(&cols, y).ok_or_else(|| StatsError::Undefined("collinear regressors".into()))?;
    Ok(x.iter()
        .zip(y)
        .map(|(xi, yi)| yi - b[0] - b[1] * xi)
        .collect())
}

/// White (`e²` on `1, x, x²`, 2 df) and Koenker's studentized Breusch–Pagan
/// (`e²` on `1, x`, 1 df), both `n·R²`.
pub fn heteroskedasticity_tests(x: &[f64], residuals: &[f64]) -> Result<HeteroResult, StatsError> {
    if x.len() != residuals.len() {
        return Err(StatsError::Domain("length mismatch".into()));
    }
    if x.len() < 50 {
        return Err(StatsError::TooFew {
            need: 50,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    // centring and scaling keeps x² well conditioned
    let mx = x.iter().sum::<f64>() / n;
    let sx = (x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = x
        .iter()
        .map(|v| if sx > 0.0 { (v - mx) / sx } else { 0.0 })
        .collect();
    let e2: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    let ones = vec![1.0; x.len()];
    let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
    let mut flag = None;
    let white_r2 = r_squared(&[ones.clone(), z.clone(), z2], &e2).unwrap_or_else(|| {
        flag = Some("collinear regressors".to_string());
        0.0
    });
    let bp_r2 = r_squared(&[ones, z], &e2).unwrap_or_else(|| {
        flag = Some("collinear regressors".to_string());
        0.0
    });
    let p = |stat: f64, df: f64| 1.0 - ChiSquared::new(df).expect("positive df").cdf(stat);
    let (ws, bs) = (n * white_r2, n * bp_r2);
    Ok(HeteroResult {
        white_stat: ws,
        white_p: p(ws, 2.0),
        bp_stat: bs,
        bp_p: p(bs, 1.0),
        flag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn nist_reference_vector() {
        let bits = [1, 0, 0, 1, 1, 0, 1, 0, 1, 1];
        let p = runs_test_with(&bits, 10).unwrap().value;
        // erfc(2.2 / (2·√20·0.24)) evaluated independently
        assert!((p - 0.147232).abs() < 1e-6, "{p}");
        assert!(runs_test(&bits).is_err());
    }

    #[test]
    fn alternating_bits_fail() {
        let bits: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
        assert!(runs_test(&bits).unwrap().value < 1e-6);
        let ones = vec![1u8; 200];
        let e = runs_test(&ones).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.flag.is_some());
    }

    /// Asymptotic Kolmogorov–Smirnov p-value against Uniform(0,1).
    fn ks_uniform_p(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max);
        let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        let s: f64 = (1..100)
            .map(|k| {
                let k = k as f64;
                2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lam * lam).exp()
            })
            .sum();
        s.clamp(0.0, 1.0)
    }

    #[test]
    fn runs_p_uniform_under_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // a p-value is discrete for finite n; long streams make it near-continuous
        let ps: Vec<f64> = (0..1000)
            .map(|_| {
                let bits: Vec<u8> = (0..20_000).map(|_| rng.gen_range(0..=1)).collect();
                runs_test(&bits).unwrap().value
            })
            .collect();
        assert!(ks_uniform_p(ps) > 0.01);
    }

    #[test]
    fn cvm_critical_value_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let uni = |x: f64| x.clamp(0.0, 1.0);
        let mut stats: Vec<f64> = (0..10_000)
            .map(|_| {
                let s: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
                cvm_test(&s, uni).unwrap()
            })
            .collect();
        stats.sort_by(f64::total_cmp);
        let q95 = stats[9500];
        assert!((q95 - 0.461).abs() < 0.03, "{q95}");
        let shifted: Vec<f64> = (0..50)
            .map(|_| (rng.gen::<f64>() * 0.6 + 0.4).min(1.0))
            .collect();
        assert!(cvm_test(&shifted, uni).unwrap() > 0.461);
        assert!(cvm_test(&[0.5; 10], uni).is_err());
    }

    /// Two-sample statistic from ranks: `U/(nm(n+m)) − (4nm−1)/(6(n+m))`.
    fn anderson_two_sample(a: &[f64], b: &[f64]) -> f64 {
        let mut all: Vec<(f64, bool)> = a
            .iter()
            .map(|&x| (x, true))
            .chain(b.iter().map(|&x| (x, false)))
            .collect();
        all.sort_by(|p, q| p.0.total_cmp(&q.0));
        let (n, m) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j, mut u) = (0.0, 0.0, 0.0);
        for (r, &(_, first)) in all.iter().enumerate() {
            let rank = r as f64 + 1.0;
            if first {
                i += 1.0;
                u += n * (rank - i).powi(2);
            } else {
                j += 1.0;
                u += m * (rank - j).powi(2);
            }
        }
        u / (n * m * (n + m)) - (4.0 * n * m - 1.0) / (6.0 * (n + m))
    }

    #[test]
    fn k_sample_cvm_matches_rank_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for shift in [0.0, 0.3, 1.0] {
            let a: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
            let b: Vec<f64> = (0..55).map(|_| rng.gen::<f64>() + shift).collect();
            let s = LabeledSamples::new(
                [vec![0; 40], vec![1; 55]].concat(),
                a.iter().chain(&b).copied().collect(),
            )
            .unwrap();
            let got = cvm_k_sample(&s).unwrap();
            let want = anderson_two_sample(&a, &b) / 2.0;
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn k_sample_cvm_ties_and_degenerate_inputs() {
        let same = LabeledSamples::new([vec![0; 30], vec![1; 30]].concat(), vec![4.0; 60]).unwrap();
        assert_eq!(cvm_k_sample(&same).unwrap(), 0.0);
        // two point masses, fully separated: n_l·(1/2)·(1/2)² per level
        let apart = LabeledSamples::new(
            [vec![0; 30], vec![1; 30]].concat(),
            [vec![0.0; 30], vec![1.0; 30]].concat(),
        )
        .unwrap();
        assert!((cvm_k_sample(&apart).unwrap() - 30.0 * 0.125).abs() < 1e-12);
        let one = LabeledSamples::new(vec![0; 30], vec![1.0; 30]).unwrap();
        assert!(cvm_k_sample(&one).is_err());
        let few = LabeledSamples::new([vec![0; 30], vec![1; 5]].concat(), vec![1.0; 35]).unwrap();
        assert!(matches!(cvm_k_sample(&few), Err(StatsError::TooFew { .. })));
    }

    #[test]
    fn empirical_cdf_steps() {
        let f = empirical_cdf(&[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(
            (f(0.0), f(1.0), f(2.0), f(3.0), f(9.0)),
            (0.0, 0.25, 0.75, 0.75, 1.0)
        );
    }

    fn trial(rng: &mut ChaCha8Rng, n: usize, hetero: bool) -> HeteroResult {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..10.0)).collect();
        let e: Vec<f64> = x
            .iter()
            .map(|&xi| {
                let z: f64 = rng.sample(StandardNormal);
                if hetero {
                    z * xi
                } else {
                    z
                }
            })
            .collect();
        heteroskedasticity_tests(&x, &e).unwrap()
    }

    #[test]
    fn hetero_calibration_and_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reps = 1000;
        let (mut wr, mut br) = (0, 0);
        for _ in 0..reps {
            let r = trial(&mut rng, 200, false);
            wr += (r.white_p < 0.05) as usize;
            br += (r.bp_p < 0.05) as usize;
        }
        for rate in [wr, br] {
            let f = rate as f64 / reps as f64;
            assert!((0.025..=0.08).contains(&f), "null rejection rate {f}");
        }
        let (mut wp, mut bp) = (0, 0);
        for _ in 0..200 {
            let r = trial(&mut rng, 500, true);
            wp += (r.white_p < 0.05) as usize;
            bp += (r.bp_p < 0.05) as usize;
        }
        assert!(
            wp as f64 / 200.0 > 0.9 && bp as f64 / 200.0 > 0.9,
            "{wp} {bp}"
        );
    }

    #[test]
    fn hetero_flags_constant_regressor() {
        let x = vec![2.0; 60];
        let e: Vec<f64> = (0..60).map(|i| (i % 7) as f64 - 3.0).collect();
        let r = heteroskedasticity_tests(&x, &e).unwrap();
        assert!(r.flag.is_some());
        assert!(heteroskedasticity_tests(&x[..10], &e[..10]).is_err());
    }

    #[test]
    fn residuals_are_orthogonal() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 0.5 * v + (v * 1.7).sin()).collect();
        let r = ols_residuals(&x, &y).unwrap();
        assert!(r.iter().sum::<f64>().abs() < 1e-8);
        assert!(r.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-6);
    }
}
