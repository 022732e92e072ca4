use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::interp::CubicSpline;
use super::{Complex, GridPdf, MellinError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MellinConfig {
    /// Real part of the evaluation line.
    pub c: f64,
    /// FFT length; half of it samples the support, the rest is zero padding.
    pub n: usize,
    /// Keep only `|Im s| ≤ omega_max`; `None` keeps every FFT bin.
    pub omega_max: Option<f64>,
}

impl Default for MellinConfig {
    fn default() -> Self {
        Self {
            c: 1.5,
            n: 1 << 14,
            omega_max: Some(16.0),
        }
    }
}

/// Transform values on the line `Re(s) = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct MellinFn {
    pub c: f64,
    pub s: Vec<Complex>,
    pub values: Vec<Complex>,
}

impl MellinFn {
    pub fn max_abs_diff(&self, other: &MellinFn) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// `M(s) = Σ x^(s−1) f(x) Δx` over the pdf's cells.
pub fn mellin_riemann(pdf: &GridPdf, s_points: &[Complex]) -> Result<MellinFn, MellinError> {
    let c = s_points.first().map(|s| s.re).unwrap_or(0.0);
    if s_points.iter().any(|s| s.re != c) {
        return Err(MellinError::Domain(
            "evaluation points must share Re(s)".into(),
        ));
    }
    let masses = pdf.masses();
    let logs: Vec<f64> = pdf.grid().iter().map(|x| x.ln()).collect();
    let values: Vec<Complex> = s_points
        .iter()
        .map(|&s| {
            logs.iter()
                .zip(&masses)
                .map(|(&l, &m)| ((s - 1.0) * l).exp() * m)
                .sum()
        })
        .collect();
    if values
        .iter()
        .any(|v| !v.re.is_finite() || !v.im.is_finite())
    {
        return Err(MellinError::Domain(format!(
            "transform diverges on Re(s) = {c}"
        )));
    }
    Ok(MellinFn {
        c,
        s: s_points.to_vec(),
        values,
    })
}

/// Spline the density, resample on `x = e^u`, weight by `e^{cu}` and FFT.
pub fn mellin_fft(pdf: &GridPdf, cfg: &MellinConfig) -> Result<MellinFn, MellinError> {
    if pdf.len() < 8 {
        return Err(MellinError::Resolution(format!(
            "{} grid points, need at least 8",
            pdf.len()
        )));
    }
    if cfg.n < 16 || !cfg.n.is_power_of_two() {
        return Err(MellinError::Resolution(format!(
            "FFT length {} must be a power of two ≥ 16",
            cfg.n
        )));
    }
    let spline = CubicSpline::new(pdf.grid(), pdf.density());
    let (lo, hi) = pdf.support();
    let (u0, u1) = (lo.ln(), hi.ln());
    let m = cfg.n / 2;
    let delta = (u1 - u0) / (m - 1) as f64;
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n];
    for (k, b) in buf.iter_mut().take(m).enumerate() {
        let u = if k == m - 1 {
            u1
        } else {
            u0 + delta * k as f64
        };
        let w = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
        *b = Complex::new(
            w * spline.eval(u.exp().clamp(lo, hi)) * (cfg.c * u).exp(),
            0.0,
        );
    }
    FftPlanner::new().plan_fft_inverse(cfg.n).process(&mut buf);
    let n = cfg.n as i64;
    let mut pts: Vec<(f64, Complex)> = buf
        .iter()
        .enumerate()
        .map(|(j, &g)| {
            let j = j as i64;
            let jj = if j < n / 2 { j } else { j - n };
            let omega = 2.0 * std::f64::consts::PI * jj as f64 / (n as f64 * delta);
            (omega, g * Complex::new(0.0, omega * u0).exp() * delta)
        })
        .filter(|(w, _)| cfg.omega_max.is_none_or(|mx| w.abs() <= mx))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(MellinFn {
        c: cfg.c,
        s: pts.iter().map(|(w, _)| Complex::new(cfg.c, *w)).collect(),
        values: pts.into_iter().map(|(_, v)| v).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_pdf() -> GridPdf {
        GridPdf::from_fn(1e-4, 40.0, 40_001, |x| (-x).exp()).unwrap()
    }

    #[test]
    fn riemann_gamma_two() {
        let m = mellin_riemann(&exp_pdf(), &[Complex::new(2.0, 0.0)]).unwrap();
        assert!((m.values[0].re - 1.0).abs() < 1e-3);
        assert!(m.values[0].im.abs() < 1e-12);
    }

    #[test]
    fn riemann_uniform_is_reciprocal() {
        let p = GridPdf::uniform(1e-6, 1.0, 20_001).unwrap();
        let m = mellin_riemann(&p, &[Complex::new(2.0, 0.0), Complex::new(2.0, 3.0)]).unwrap();
        for (s, v) in m.s.iter().zip(&m.values) {
            assert!((v - 1.0 / s).norm() < 1e-3);
        }
    }

    #[test]
    fn unit_mass_at_s_one() {
        for p in [
            exp_pdf(),
            GridPdf::uniform(0.3, 0.9, 11).unwrap(),
            GridPdf::point_mass(4.0).unwrap(),
        ] {
            let m = mellin_riemann(&p, &[Complex::new(1.0, 0.0)]).unwrap();
            assert!((m.values[0].re - 1.0).abs() < 1e-12);
        }
        let f = mellin_fft(
            &exp_pdf(),
            &MellinConfig {
                c: 1.0,
                ..MellinConfig::default()
            },
        )
        .unwrap();
        let zero = f.s.iter().position(|s| s.im == 0.0).unwrap();
        assert!((f.values[zero].re - 1.0).abs() < 1e-3);
    }

    #[test]
    fn fft_matches_gamma_at_two() {
        let cfg = MellinConfig {
            c: 2.0,
            ..MellinConfig::default()
        };
        let f = mellin_fft(&exp_pdf(), &cfg).unwrap();
        let zero = f.s.iter().position(|s| s.im == 0.0).unwrap();
        assert!((f.values[zero].re - 1.0).abs() < 1e-3, "{}", f.values[zero]);
    }

    #[test]
    fn fft_agrees_with_riemann() {
        let cfg = MellinConfig::default();
        for p in [exp_pdf(), GridPdf::uniform(1e-4, 1.0, 20_001).unwrap()] {
            let f = mellin_fft(&p, &cfg).unwrap();
            let r = mellin_riemann(&p, &f.s).unwrap();
            assert!(f.max_abs_diff(&r) < 1e-2, "{}", f.max_abs_diff(&r));
        }
    }

    #[test]
    fn rejects_coarse_grids_and_mixed_lines() {
        let p = GridPdf::uniform(1.0, 2.0, 5).unwrap();
        assert!(matches!(
            mellin_fft(&p, &MellinConfig::default()),
            Err(MellinError::Resolution(_))
        ));
        assert!(mellin_riemann(&p, &[Complex::new(1.0, 0.0), Complex::new(2.0, 0.0)]).is_err());
    }
}
