//! Builds the workload a config describes and generates its traces.

use accel_leak::attacks::{craft_inputs, BaselineVictim, NpVictim, Victim};
use accel_leak::binpack::BinPackReport;
use accel_leak::model::{generate_weights, LayerWeights, NetworkSpec, Tensor3D};
use accel_leak::tracegen::{
    additive_cm_trace, baseline_trace, NpKey, NpSimulator, Trace, TraceConfig, TraceEvent, Workload,
};
use rayon::prelude::*;

use crate::config::{CmSpec, InputSpec, RunConfig, ScenarioSpec};
use crate::error::CliError;
use crate::experiments::ramp_input;

/// Countermeasure with its key resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum Cm {
    None,
    Additive(accel_leak::tracegen::AdditiveModel),
    Neuroplug(NpKey),
}

pub struct Scenario {
    pub net: NetworkSpec,
    pub weights: Vec<LayerWeights>,
    pub input: Tensor3D<i8>,
    pub workload: Workload,
    pub trace_cfg: TraceConfig,
    pub cm: Cm,
    pub spec: ScenarioSpec,
}

/// One generated run.
pub struct RunOutput {
    pub run: usize,
    pub trace: Trace,
    pub binpack: Vec<BinPackReport>,
}

impl Scenario {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, CliError> {
        let net = cfg.network_spec()?;
        let s = &cfg.scenario;
        let weights = generate_weights(&net, s.weight_seed);
        let l0 = net.layers[0].shape;
        let shape = (l0.c, l0.h, l0.w);
        let input = match s.inputs {
            InputSpec::Ramp {
                ramp: (mul, add, modulus),
            } => ramp_input(shape, mul, add, modulus),
            InputSpec::Crafted(p) => craft_inputs(p, shape, 1, s.seed)?.tensors.remove(0),
        };
        let workload = Workload::new(net.clone(), weights.clone(), &input)?;
        let cm = match &s.cm {
            CmSpec::None => Cm::None,
            CmSpec::Additive { model } => Cm::Additive(*model),
            CmSpec::Neuroplug { key } => Cm::Neuroplug(key.resolve()?),
        };
        Ok(Self {
            net,
            weights,
            input,
            workload,
            trace_cfg: TraceConfig {
                sparse: s.sparse,
                ..TraceConfig::default()
            },
            cm,
            spec: s.clone(),
        })
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.spec.seed.wrapping_add(run as u64)
    }

    /// Every run, generated on the current rayon pool and returned in run order.
    pub fn generate(&self) -> Result<Vec<RunOutput>, CliError> {
        let sim = match self.cm {
            Cm::Neuroplug(key) => Some(NpSimulator::new(&self.workload, key)?),
            _ => None,
        };
        (0..self.spec.runs)
            .into_par_iter()
            .map(|run| {
                let seed = self.run_seed(run);
                let (trace, binpack) = match (&self.cm, &sim) {
                    (Cm::None, _) => (baseline_trace(&self.workload, &self.trace_cfg)?, Vec::new()),
                    (Cm::Additive(m), _) => (
                        additive_cm_trace(&self.workload, &self.trace_cfg, m, seed)?,
                        Vec::new(),
                    ),
                    (Cm::Neuroplug(_), Some(sim)) => {
                        let r = sim.run(seed)?;
                        (r.trace, r.reports)
                    }
                    (Cm::Neuroplug(_), None) => unreachable!("simulator built above"),
                };
                Ok(RunOutput {
                    run,
                    trace,
                    binpack,
                })
            })
            .collect()
    }

    /// Traces as the attacker sees them.
    pub fn observed(&self, runs: &[RunOutput]) -> Vec<Vec<TraceEvent>> {
        runs.iter()
            .map(|r| r.trace.observed(self.spec.observability))
            .collect()
    }

    /// The unprotected trace of the same workload.
    pub fn ground_truth(&self) -> Result<Trace, CliError> {
        Ok(baseline_trace(&self.workload, &self.trace_cfg)?)
    }

    /// Query interface for attacks that pick their own inputs.
    pub fn victim(&self) -> Box<dyn Victim + Sync> {
        match self.cm {
            Cm::Neuroplug(key) => Box::new(NpVictim {
                net: self.net.clone(),
                weights: self.weights.clone(),
                key,
            }),
            _ => Box::new(BaselineVictim {
                net: self.net.clone(),
                weights: self.weights.clone(),
                cfg: self.trace_cfg,
            }),
        }
    }
}
