use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::interp::Pchip;
use super::{GridPdf, MellinError};
use crate::model::nsqf_in_range;

/// Probability mass over NSQF integers, ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmartPmf {
    pub support: Vec<u64>,
    pub prob: Vec<f64>,
}

impl SmartPmf {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn prob_of(&self, x: u64) -> Option<f64> {
        self.support.binary_search(&x).ok().map(|i| self.prob[i])
    }

    /// Most probable value, smallest on ties.
    pub fn mode(&self) -> Option<u64> {
        let mut best: Option<(u64, f64)> = None;
        for (&x, &p) in self.support.iter().zip(&self.prob) {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((x, p));
            }
        }
        best.map(|(x, _)| x)
    }
}

/// Interpolates `h` onto every integer of `[lo, hi]` with PCHIP, moves each
/// non-NSQF integer's mass to its nearest NSQF integer (lower on ties) and
/// renormalizes.
pub fn smart_search_space(h: &GridPdf, lo: u64, hi: u64) -> Result<SmartPmf, MellinError> {
    if lo == 0 || lo > hi {
        return Err(MellinError::Domain(format!("bad range [{lo}, {hi}]")));
    }
    let support = nsqf_in_range(lo, hi);
    if support.is_empty() {
        return Err(MellinError::Domain(format!(
            "no NSQF integer in [{lo}, {hi}]"
        )));
    }
    let mass_at: Box<dyn Fn(u64) -> f64> = if h.is_point_mass() {
        let x = h.grid()[0].round() as u64;
        Box::new(move |n| if n == x { 1.0 } else { 0.0 })
    } else {
        let p = Pchip::new(h.grid(), h.density());
        Box::new(move |n| p.eval(n as f64).max(0.0))
    };
    let mut prob = vec![0.0; support.len()];
    let mut j = 0;
    for n in lo..=hi {
        while j + 1 < support.len() && support[j + 1] <= n {
            j += 1;
        }
        // support[j] is the largest NSQF ≤ n when one exists
        let target = if support[j] > n {
            j
        } else if j + 1 < support.len() && support[j + 1] - n < n - support[j] {
            j + 1
        } else {
            j
        };
        prob[target] += mass_at(n);
    }
    let total: f64 = prob.iter().sum();
    if !(total > 0.0) {
        return Err(MellinError::Domain(format!(
            "no predicted mass in [{lo}, {hi}]"
        )));
    }
    prob.iter_mut().for_each(|p| *p /= total);
    Ok(SmartPmf { support, prob })
}

/// 1 + #{strictly more probable} + #{equally probable and smaller}.
pub fn rank(h: &SmartPmf, x_r: u64) -> Result<usize, MellinError> {
    let p = h.prob_of(x_r).ok_or(MellinError::NotInSupport(x_r))?;
    Ok(1 + h
        .support
        .iter()
        .zip(&h.prob)
        .filter(|&(&x, &q)| q > p || (q == p && x < x_r))
        .count())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub layer: usize,
    pub x_r: u64,
    /// `None` when `x_r` is outside the candidate support.
    pub rank: Option<usize>,
    /// Candidates tried: the rank, or the whole support when `x_r` is absent.
    pub n_i: usize,
    pub log10_space: f64,
    pub mode: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h: Option<GridPdf>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub h_smart: Option<SmartPmf>,
}

impl RankResult {
    pub fn new(layer: usize, h: Option<GridPdf>, h_smart: SmartPmf, x_r: u64) -> Self {
        let r = rank(&h_smart, x_r).ok();
        let n_i = r.unwrap_or(h_smart.len()).max(1);
        Self {
            layer,
            x_r,
            rank: r,
            n_i,
            log10_space: (n_i as f64).log10(),
            mode: h_smart.mode(),
            h,
            h_smart: Some(h_smart),
        }
    }
}

/// `Σ log10 N_i`.
pub fn search_space_size(per_layer: &[RankResult]) -> f64 {
    per_layer.iter().map(|r| (r.n_i as f64).log10()).sum()
}

/// Adversary's prior over the compression ratio, shaped on the compression
/// factor `v = 1/β` (e.g. 1.5× to 40×).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaPrior {
    Uniform,
    /// Mean at the centre of the factor range, σ = range/6, truncated.
    Normal,
    /// Halves every eighth of the factor range, starting from the low end.
    Geometric,
}

impl BetaPrior {
    pub const ALL: [BetaPrior; 3] = [BetaPrior::Uniform, BetaPrior::Geometric, BetaPrior::Normal];

    /// Density of `β` on `n` log-spaced points of `[lo, hi]`.
    pub fn pdf(&self, lo: f64, hi: f64, n: usize) -> Result<GridPdf, MellinError> {
        self.pdf_centered(lo, hi, None, n)
    }

    /// As [`BetaPrior::pdf`], with the normal prior's mean moved to the
    /// compression factor `center` (e.g. one observed on similar models).
    pub fn pdf_centered(
        &self,
        lo: f64,
        hi: f64,
        center: Option<f64>,
        n: usize,
    ) -> Result<GridPdf, MellinError> {
        if n < 2 || !(lo > 0.0 && hi > lo) {
            return Err(MellinError::Domain(format!(
                "bad prior range [{lo}, {hi}] with {n} points"
            )));
        }
        let (vlo, vhi) = (1.0 / hi, 1.0 / lo);
        let mid = center.unwrap_or(0.5 * (vlo + vhi));
        let sd = (vhi - vlo) / 6.0;
        let step = (vhi - vlo) / 8.0;
        let shape = |v: f64| match self {
            Self::Uniform => 1.0,
            Self::Normal => (-0.5 * ((v - mid) / sd).powi(2)).exp(),
            Self::Geometric => 0.5f64.powf((v - vlo) / step),
        };
        let ratio = hi / lo;
        let grid: Vec<f64> = (0..n)
            .map(|i| lo * ratio.powf(i as f64 / (n - 1) as f64))
            .collect();
        let density = grid.iter().map(|&b| shape(1.0 / b) / (b * b)).collect();
        GridPdf::new(grid, density)
    }
}

impl FromStr for BetaPrior {
    type Err = MellinError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "normal" => Ok(Self::Normal),
            "geometric" => Ok(Self::Geometric),
            other => Err(MellinError::Domain(format!("unknown prior {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::is_nsqf;
    use proptest::prelude::*;

    fn pmf(support: Vec<u64>, prob: Vec<f64>) -> SmartPmf {
        SmartPmf { support, prob }
    }

    #[test]
    fn uniform_eight_to_twelve() {
        let h = GridPdf::uniform(8.0, 12.0, 5).unwrap();
        let s = smart_search_space(&h, 8, 12).unwrap();
        assert_eq!(s.support, vec![8, 9, 12]);
        for (p, e) in s.prob.iter().zip([0.2, 0.4, 0.4]) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn nsqf_only_input_is_renormalized() {
        let h = GridPdf::new(vec![8.0, 9.0], vec![1.0, 3.0]).unwrap();
        let s = smart_search_space(&h, 8, 9).unwrap();
        assert!((s.prob[1] / s.prob[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let h = GridPdf::uniform(2.0, 3.0, 5).unwrap();
        assert!(smart_search_space(&h, 1, 3).is_err());
        assert!(smart_search_space(&h, 0, 10).is_err());
        let far = GridPdf::uniform(100.0, 200.0, 5).unwrap();
        assert!(smart_search_space(&far, 8, 12).is_err());
    }

    #[test]
    fn rank_tie_break() {
        let s = pmf(vec![8, 9, 12], vec![0.2, 0.4, 0.4]);
        assert_eq!(rank(&s, 8).unwrap(), 3);
        assert_eq!(rank(&s, 9).unwrap(), 1);
        assert_eq!(rank(&s, 12).unwrap(), 2);
        assert_eq!(rank(&s, 10), Err(MellinError::NotInSupport(10)));
        assert_eq!(rank(&pmf(vec![16], vec![1.0]), 16).unwrap(), 1);
        assert_eq!(s.mode(), Some(9));
    }

    #[test]
    fn space_size_sums_logs() {
        let mk = |n| {
            RankResult::new(
                0,
                None,
                pmf((0..n as u64).collect(), vec![1.0 / n as f64; n]),
                n as u64 - 1,
            )
        };
        assert!((search_space_size(&[mk(10), mk(100)]) - 3.0).abs() < 1e-12);
        assert_eq!(search_space_size(&[mk(1), mk(1)]), 0.0);
    }

    #[test]
    fn priors_are_shaped_on_the_factor() {
        let v =
            |p: BetaPrior| crate::mellin::reciprocal_pdf(&p.pdf(0.1, 0.5, 201).unwrap()).unwrap();
        let (u, g, n) = (
            v(BetaPrior::Uniform),
            v(BetaPrior::Geometric),
            v(BetaPrior::Normal),
        );
        assert!((u.support().0 - 2.0).abs() < 1e-9 && (u.support().1 - 10.0).abs() < 1e-9);
        let d = u.density();
        assert!(d.iter().all(|x| (x / d[0] - 1.0).abs() < 1e-9));
        assert!((g.density()[0] / g.density()[200] - 256.0).abs() < 1e-6);
        assert!((n.mode() - 6.0).abs() < 0.1, "{}", n.mode());
        assert_eq!("normal".parse::<BetaPrior>().unwrap(), BetaPrior::Normal);
    }

    proptest! {
        #[test]
        fn mass_conserved_and_support_is_nsqf(lo in 2u64..500, len in 0u64..200, seed in 0u64..1000) {
            let hi = lo + len + 10;
            let grid: Vec<f64> = (lo..=hi).map(|x| x as f64).collect();
            let density: Vec<f64> = (0..grid.len()).map(|i| ((i as u64 * 7919 + seed) % 13) as f64 + 0.5).collect();
            let h = GridPdf::new(grid, density).unwrap();
            if let Ok(s) = smart_search_space(&h, lo, hi) {
                prop_assert!((s.prob.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(s.support.iter().all(|&x| is_nsqf(x).unwrap()));
            }
        }

        #[test]
        fn rank_invariant_to_scaling(k in 0.01f64..100.0) {
            let s = pmf(vec![4, 8, 9, 12, 16], vec![0.1, 0.3, 0.3, 0.2, 0.1]);
            let t = pmf(s.support.clone(), s.prob.iter().map(|p| p * k).collect());
            for &x in &s.support {
                prop_assert_eq!(rank(&s, x).unwrap(), rank(&t, x).unwrap());
            }
        }
    }
}
