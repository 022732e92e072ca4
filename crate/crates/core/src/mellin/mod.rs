//! Distribution algebra for `X = (Y − α)/β` via Mellin transforms, and the
//! NSQF-restricted search space an adversary ranks candidates in.

mod algebra;
mod interp;
mod search;
mod transform;

pub use algebra::{predict_x, product_pdf, reciprocal_pdf, tv_distance, ProductMethod};
pub use interp::{CubicSpline, Pchip};
pub use search::{rank, search_space_size, smart_search_space, BetaPrior, RankResult, SmartPmf};
pub use transform::{mellin_fft, mellin_riemann, MellinConfig, MellinFn};

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MellinError {
    #[error("domain: {0}")]
    Domain(String),
    #[error("resolution: {0}")]
    Resolution(String),
    #[error("observation {y} does not exceed the noise support maximum {alpha_max}")]
    EmptyEvidence { y: f64, alpha_max: f64 },
    #[error("{0} is not in the candidate support")]
    NotInSupport(u64),
    #[error("pdf csv: {0}")]
    Format(String),
}

pub type Complex = Complex64;

/// Density sampled on a strictly increasing positive grid.
///
/// Each point owns the cell between the midpoints to its neighbours (half
/// cells at the ends); a single point is a point mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPdf {
    grid: Vec<f64>,
    density: Vec<f64>,
}

impl GridPdf {
    /// Validates and rescales so the cell masses sum to one.
    pub fn new(grid: Vec<f64>, density: Vec<f64>) -> Result<Self, MellinError> {
        if grid.is_empty() || grid.len() != density.len() {
            return Err(MellinError::Domain(format!(
                "{} grid points for {} densities",
                grid.len(),
                density.len()
            )));
        }
        if !(grid[0] > 0.0) || grid.iter().any(|x| !x.is_finite()) {
            return Err(MellinError::Domain(
                "grid must be finite and positive".into(),
            ));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MellinError::Domain(
                "grid must be strictly increasing".into(),
            ));
        }
        if density.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(MellinError::Domain(
                "densities must be finite and nonnegative".into(),
            ));
        }
        let mut p = Self { grid, density };
        let mass: f64 = p.masses().iter().sum();
        if !(mass > 0.0) {
            return Err(MellinError::Domain("zero total mass".into()));
        }
        p.density.iter_mut().for_each(|d| *d /= mass);
        Ok(p)
    }

    pub fn point_mass(x: f64) -> Result<Self, MellinError> {
        Self::new(vec![x], vec![1.0])
    }

    /// `n` evenly spaced samples of `f` on `[lo, hi]`.
    pub fn from_fn(
        lo: f64,
        hi: f64,
        n: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self, MellinError> {
        if n < 2 || !(hi > lo) {
            return Err(MellinError::Domain(format!(
                "bad grid [{lo}, {hi}] with {n} points"
            )));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
        let density = grid.iter().map(|&x| f(x)).collect();
        Self::new(grid, density)
    }

    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self, MellinError> {
        Self::from_fn(lo, hi, n, |_| 1.0)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn is_point_mass(&self) -> bool {
        self.grid.len() == 1
    }

    pub fn support(&self) -> (f64, f64) {
        (self.grid[0], self.grid[self.grid.len() - 1])
    }

    /// Cell boundaries; `n + 1` values.
    pub fn edges(&self) -> Vec<f64> {
        let g = &self.grid;
        let mut e = Vec::with_capacity(g.len() + 1);
        e.push(g[0]);
        e.extend(g.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        e.push(g[g.len() - 1]);
        e
    }

    pub fn widths(&self) -> Vec<f64> {
        if self.is_point_mass() {
            return vec![1.0];
        }
        self.edges().windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn masses(&self) -> Vec<f64> {
        self.widths()
            .iter()
            .zip(&self.density)
            .map(|(w, d)| w * d)
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.grid
            .iter()
            .zip(self.masses())
            .map(|(x, m)| x * m)
            .sum()
    }

    /// Grid point of highest density.
    pub fn mode(&self) -> f64 {
        let i = self
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self.grid[i]
    }

    /// Piecewise-linear CDF implied by the constant-density cells.
    pub fn cdf(&self, x: f64) -> f64 {
        if self.is_point_mass() {
            return if x >= self.grid[0] { 1.0 } else { 0.0 };
        }
        let edges = self.edges();
        let masses = self.masses();
        let mut acc = 0.0;
        for (i, m) in masses.iter().enumerate() {
            if x >= edges[i + 1] {
                acc += m;
            } else {
                if x > edges[i] {
                    acc += m * (x - edges[i]) / (edges[i + 1] - edges[i]);
                }
                break;
            }
        }
        acc.min(1.0)
    }

    /// Inverse-CDF draw: pick a cell by mass, then a uniform point inside it.
    pub fn sampler(&self) -> impl Fn(f64, f64) -> f64 + '_ {
        let masses = self.masses();
        let mut cum = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            cum.push(acc);
        }
        let edges = self.edges();
        let point = self.is_point_mass();
        move |u1: f64, u2: f64| {
            if point {
                return self.grid[0];
            }
            let target = u1 * acc;
            let i = cum.partition_point(|&c| c < target).min(cum.len() - 1);
            edges[i] + u2 * (edges[i + 1] - edges[i])
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,density\n");
        for (x, d) in self.grid.iter().zip(&self.density) {
            s.push_str(&format!("{x:e},{d:e}\n"));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, MellinError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("x,density") {
            return Err(MellinError::Format("missing header x,density".into()));
        }
        let mut grid = Vec::new();
        let mut density = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || MellinError::Format(format!("line {}", n + 2));
            let (a, b) = line.split_once(',').ok_or_else(bad)?;
            grid.push(a.trim().parse().map_err(|_| bad())?);
            density.push(b.trim().parse().map_err(|_| bad())?);
        }
        Self::new(grid, density)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_and_validates() {
        let p = GridPdf::new(vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]).unwrap();
        assert!((p.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p.density()[0] - 0.5).abs() < 1e-12);
        assert!(GridPdf::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GridPdf::new(vec![2.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GridPdf::new(vec![1.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(GridPdf::new(vec![1.0, 2.0], vec![-1.0, 2.0]).is_err());
    }

    #[test]
    fn cdf_of_uniform_is_linear() {
        let p = GridPdf::uniform(2.0, 4.0, 101).unwrap();
        for x in [2.0, 2.5, 3.0, 3.77, 4.0] {
            assert!((p.cdf(x) - (x - 2.0) / 2.0).abs() < 1e-9);
        }
        let d = GridPdf::point_mass(3.0).unwrap();
        assert_eq!((d.cdf(2.99), d.cdf(3.0)), (0.0, 1.0));
    }

    #[test]
    fn csv_roundtrip() {
        let p = GridPdf::from_fn(0.5, 3.0, 17, |x| (-x).exp()).unwrap();
        let q = GridPdf::from_csv(&p.to_csv()).unwrap();
        for (a, b) in p.density().iter().zip(q.density()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        assert!(GridPdf::from_csv("a,b\n1,1\n").is_err());
    }
}
