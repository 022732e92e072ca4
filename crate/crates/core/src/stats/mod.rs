//! Leakage metrics and the hypothesis tests used to certify the noise source.

mod hypothesis;
mod info;

pub use hypothesis::{
    cvm_k_sample, cvm_test, empirical_cdf, heteroskedasticity_tests, lsb_bits, ols_residuals,
    runs_test, runs_test_with, HeteroResult,
};
pub use info::{fisher_information, fisher_information_with, mutual_information, FisherConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("domain: {0}")]
    Domain(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
}

/// A value plus a note when it was regularized or hit a degenerate case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub flag: Option<String>,
}

impl Estimate {
    fn clean(value: f64) -> Self {
        Self { value, flag: None }
    }

    fn flagged(value: f64, why: impl Into<String>) -> Self {
        Self {
            value,
            flag: Some(why.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSamples {
    pub secret: Vec<i64>,
    pub leaked: Vec<f64>,
}

impl LabeledSamples {
    pub fn new(secret: Vec<i64>, leaked: Vec<f64>) -> Result<Self, StatsError> {
        if secret.len() != leaked.len() {
            return Err(StatsError::Domain(format!(
                "{} secrets for {} observations",
                secret.len(),
                leaked.len()
            )));
        }
        if leaked.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::Domain("non-finite observation".into()));
        }
        Ok(Self { secret, leaked })
    }

    pub fn len(&self) -> usize {
        self.secret.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secret.is_empty()
    }

    /// Distinct secrets ascending, each with its observations.
    pub fn levels(&self) -> Vec<(i64, Vec<f64>)> {
        let mut m: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
        for (s, v) in self.secret.iter().zip(&self.leaked) {
            m.entry(*s).or_default().push(*v);
        }
        m.into_iter().collect()
    }
}

/// Product-moment correlation coefficient.
pub fn pearson_cc(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Domain("length mismatch".into()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew {
            need: 3,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One configuration's leakage numbers on one observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub config: String,
    pub observable: String,
    pub mi: f64,
    pub cc: f64,
    pub fi: f64,
    pub cvm: f64,
    pub runs_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// `config` of the random-floor rows.
    pub reference: String,
}

impl MetricReport {
    pub fn row(&self, config: &str, observable: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.config == config && r.observable == observable)
    }
}
