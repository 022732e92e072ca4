use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::segment::{segment, segment_stats};
use super::{AttackError, AttackKind, AttackReport, LayerEstimate};
use crate::model::{LayerWeights, NetworkSpec, Tensor3D};
use crate::tracegen::{baseline_trace, NpKey, NpSimulator, TraceConfig, TraceEvent, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum InputPolicy {
    /// Input `k` holds a single 1 at row 0, column `k`.
    ImpulseRow,
    /// Input `k` holds a single 1 at row `k`, column 0.
    ImpulseCol,
    /// A natural input with every nonzero pixel moved by at most `amplitude`,
    /// never to zero and never across zero.
    Speckle {
        amplitude: u8,
    },
    Natural,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CraftedInputSet {
    pub policy: InputPolicy,
    pub tensors: Vec<Tensor3D<i8>>,
}

fn natural(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Tensor3D<i8> {
    let (c, h, w) = shape;
    let data = (0..c * h * w).map(|_| rng.gen_range(-64..=64)).collect();
    Tensor3D::from_vec(c, h, w, data).expect("sized to shape")
}

pub fn craft_inputs(
    policy: InputPolicy,
    shape: (usize, usize, usize),
    count: usize,
    seed: u64,
) -> Result<CraftedInputSet, AttackError> {
    let (c, h, w) = shape;
    if count == 0 || c == 0 || h == 0 || w == 0 {
        return Err(AttackError::Domain("empty input set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let impulse = |r: usize, q: usize| {
        let mut t = Tensor3D::<i8>::zeros(c, h, w);
        t.set(0, r, q, 1);
        t
    };
    let tensors = match policy {
        InputPolicy::ImpulseRow | InputPolicy::ImpulseCol => {
            let positions = if policy == InputPolicy::ImpulseRow {
                w
            } else {
                h
            };
            if count > positions {
                return Err(AttackError::Domain(format!(
                    "{count} impulses but {positions} positions"
                )));
            }
            (0..count)
                .map(|k| {
                    if policy == InputPolicy::ImpulseRow {
                        impulse(0, k)
                    } else {
                        impulse(k, 0)
                    }
                })
                .collect()
        }
        InputPolicy::Natural => (0..count).map(|_| natural(shape, &mut rng)).collect(),
        InputPolicy::Speckle { amplitude } => {
            let base = natural(shape, &mut rng);
            let a = amplitude as i16;
            (0..count)
                .map(|_| {
                    let mut t = base.clone();
                    for v in t.data.iter_mut().filter(|v| **v != 0) {
                        let d = rng.gen_range(-a..=a);
                        let x = *v as i16 + d;
                        *v = if *v > 0 {
                            x.clamp(1, 127)
                        } else {
                            x.clamp(-128, -1)
                        } as i8;
                    }
                    t
                })
                .collect()
        }
    };
    Ok(CraftedInputSet { policy, tensors })
}

/// A deployed model the attacker can query and watch.
pub trait Victim {
    /// Input shape `(channels, rows, cols)`.
    fn input_shape(&self) -> (usize, usize, usize);
    /// Whether stored fmaps shrink with their zeros.
    fn sparse_storage(&self) -> bool;
    /// `runs` observed traces for one input.
    fn observe(
        &self,
        input: &Tensor3D<i8>,
        runs: usize,
        seed: u64,
    ) -> Result<Vec<Vec<TraceEvent>>, AttackError>;
}

fn shape_of(net: &NetworkSpec) -> (usize, usize, usize) {
    let l = &net.layers[0].shape;
    (l.c, l.h, l.w)
}

/// Unprotected accelerator; deterministic, so every run is identical.
pub struct BaselineVictim {
    pub net: NetworkSpec,
    pub weights: Vec<LayerWeights>,
    pub cfg: TraceConfig,
}

impl Victim for BaselineVictim {
    fn input_shape(&self) -> (usize, usize, usize) {
        shape_of(&self.net)
    }

    fn sparse_storage(&self) -> bool {
        self.cfg.sparse
    }

    fn observe(
        &self,
        input: &Tensor3D<i8>,
        runs: usize,
        _seed: u64,
    ) -> Result<Vec<Vec<TraceEvent>>, AttackError> {
        let w = Workload::new(self.net.clone(), self.weights.clone(), input)?;
        let t = baseline_trace(&w, &self.cfg)?;
        Ok(vec![t.events; runs])
    }
}

pub struct NpVictim {
    pub net: NetworkSpec,
    pub weights: Vec<LayerWeights>,
    pub key: NpKey,
}

impl Victim for NpVictim {
    fn input_shape(&self) -> (usize, usize, usize) {
        shape_of(&self.net)
    }

    fn sparse_storage(&self) -> bool {
        self.key.compression
    }

    fn observe(
        &self,
        input: &Tensor3D<i8>,
        runs: usize,
        seed: u64,
    ) -> Result<Vec<Vec<TraceEvent>>, AttackError> {
        let w = Workload::new(self.net.clone(), self.weights.clone(), input)?;
        let sim = NpSimulator::new(&w, self.key)?;
        (0..runs as u64)
            .map(|r| {
                Ok(sim
                    .run(seed.wrapping_mul(0x9E37_79B9).wrapping_add(r))?
                    .trace
                    .events)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HuffDuffConfig {
    pub runs_per_input: usize,
    /// Also sweep a column for the filter height.
    pub column_sweep: bool,
    pub seed: u64,
}

impl Default for HuffDuffConfig {
    fn default() -> Self {
        Self {
            runs_per_input: 1,
            column_sweep: true,
            seed: 0,
        }
    }
}

/// First-layer write volume for every run of every input.
pub fn write_series(
    victim: &dyn Victim,
    inputs: &CraftedInputSet,
    cfg: &HuffDuffConfig,
) -> Result<Vec<Vec<f64>>, AttackError> {
    inputs
        .tensors
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let runs = victim.observe(
                x,
                cfg.runs_per_input,
                cfg.seed.wrapping_add(k as u64 * 7919),
            )?;
            runs.iter()
                .map(|ev| {
                    let segs = segment(ev);
                    let first = segs
                        .first()
                        .ok_or_else(|| AttackError::Domain("trace has no layer".into()))?;
                    Ok(segment_stats(ev, first, None).write_volume as f64)
                })
                .collect()
        })
        .collect()
}

/// Filter extent from a position series: an exactly flat interior plateau
/// flanked by `a` lower values on each side gives `2a + 1`.
pub(crate) fn extent_from_series(series: &[f64]) -> Option<usize> {
    let n = series.len();
    if n < 3 {
        return None;
    }
    let plateau = series[n / 2];
    let a = series.iter().position(|&v| v == plateau)?;
    let b = n - 1 - series.iter().rposition(|&v| v == plateau)?;
    if a != b || 2 * a >= n || series[a..n - a].iter().any(|&v| v != plateau) {
        return None;
    }
    if series[..a]
        .iter()
        .chain(&series[n - a..])
        .any(|&v| v >= plateau)
    {
        return None;
    }
    Some(2 * a + 1)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Boundary-effect filter sizing from impulse sweeps.
pub fn huffduff_attack(
    victim: &dyn Victim,
    cfg: &HuffDuffConfig,
) -> Result<AttackReport, AttackError> {
    if !victim.sparse_storage() {
        return Err(AttackError::Inapplicable(
            "fmaps are stored densely; volume ignores zeros".into(),
        ));
    }
    if cfg.runs_per_input == 0 {
        return Err(AttackError::Domain("runs_per_input is 0".into()));
    }
    let shape = victim.input_shape();
    let mut r = AttackReport::new(AttackKind::HuffDuff, 0);
    let mut est = LayerEstimate::new(0);

    let row = craft_inputs(InputPolicy::ImpulseRow, shape, shape.2, cfg.seed)?;
    let obs = write_series(victim, &row, cfg)?;
    let series: Vec<f64> = obs.iter().map(|v| mean(v)).collect();
    let noise_var = mean(&obs.iter().map(|v| variance(v)).collect::<Vec<_>>());
    r.evidence
        .insert("series_variance".into(), variance(&series));
    r.evidence.insert("noise_variance".into(), noise_var);
    est.filter_s = extent_from_series(&series);
    est.write_volume = series[series.len() / 2];
    r.runs += obs.iter().map(Vec::len).sum::<usize>();
    r.series.insert("row".into(), series);

    if cfg.column_sweep {
        let col = craft_inputs(InputPolicy::ImpulseCol, shape, shape.1, cfg.seed)?;
        let obs = write_series(victim, &col, cfg)?;
        let series: Vec<f64> = obs.iter().map(|v| mean(v)).collect();
        est.filter_r = extent_from_series(&series);
        r.runs += obs.iter().map(Vec::len).sum::<usize>();
        r.series.insert("col".into(), series);
    }
    est.runs = r.runs;
    match est.filter_s {
        Some(s) => r.notes.push(format!("boundary plateau found; S = {s}")),
        None => r
            .notes
            .push("no flat plateau; filter width undetermined".into()),
    }
    r.layers.push(est);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{conv_forward, generate_weights, toy_sparse};

    #[test]
    fn impulse_row_has_one_nonzero_each_and_distinct() {
        let s = craft_inputs(InputPolicy::ImpulseRow, (1, 64, 64), 64, 0).unwrap();
        assert_eq!(s.tensors.len(), 64);
        for (k, t) in s.tensors.iter().enumerate() {
            assert_eq!(t.nnz(), 1);
            assert_eq!(t.get(0, 0, k), 1);
        }
        for i in 0..64 {
            for j in i + 1..64 {
                assert_ne!(s.tensors[i], s.tensors[j]);
            }
        }
        assert!(matches!(
            craft_inputs(InputPolicy::ImpulseRow, (1, 64, 64), 65, 0),
            Err(AttackError::Domain(_))
        ));
    }

    #[test]
    fn speckle_zero_amplitude_is_identity() {
        let a = craft_inputs(InputPolicy::Speckle { amplitude: 0 }, (3, 8, 8), 4, 9).unwrap();
        let n = craft_inputs(InputPolicy::Natural, (3, 8, 8), 1, 9).unwrap();
        assert!(a.tensors.iter().all(|t| *t == n.tensors[0]));
        let b = craft_inputs(InputPolicy::Speckle { amplitude: 20 }, (3, 8, 8), 4, 9).unwrap();
        for t in &b.tensors {
            for (x, y) in t.data.iter().zip(&n.tensors[0].data) {
                assert_eq!(x.signum(), y.signum());
                assert!((*x as i16 - *y as i16).abs() <= 20);
            }
        }
    }

    #[test]
    fn series_extent_rules() {
        assert_eq!(extent_from_series(&[5.0; 10]), Some(1));
        assert_eq!(extent_from_series(&[3.0, 5.0, 5.0, 5.0, 3.0]), Some(3));
        assert_eq!(
            extent_from_series(&[1.0, 3.0, 5.0, 5.0, 5.0, 3.0, 1.0]),
            Some(5)
        );
        assert_eq!(
            extent_from_series(&[3.0, 5.0, 5.0, 5.1, 5.0, 5.0, 5.0, 3.0]),
            None
        );
        assert_eq!(extent_from_series(&[3.0, 5.0, 5.0, 5.0, 5.0]), None);
    }

    /// Nonzero outputs of layer 1 for every impulse position, straight from the convolution.
    fn nnz_oracle(net: &NetworkSpec, weights: &[LayerWeights], row: bool) -> Vec<f64> {
        let shape = shape_of(net);
        let n = if row { shape.2 } else { shape.1 };
        (0..n)
            .map(|k| {
                let mut x = Tensor3D::<i8>::zeros(shape.0, shape.1, shape.2);
                if row {
                    x.set(0, 0, k, 1);
                } else {
                    x.set(0, k, 0, 1);
                }
                conv_forward(&net.layers[0].shape, &x, &weights[0])
                    .unwrap()
                    .nnz() as f64
            })
            .collect()
    }

    #[test]
    fn toy_baseline_width_matches_conv_oracle() {
        let net = toy_sparse(3).truncated(2);
        let weights = generate_weights(&net, 1);
        let oracle = nnz_oracle(&net, &weights, true);
        let victim = BaselineVictim {
            net,
            weights,
            cfg: TraceConfig {
                sparse: true,
                ..TraceConfig::default()
            },
        };
        let r = huffduff_attack(&victim, &HuffDuffConfig::default()).unwrap();
        let series = &r.series["row"];
        let d0 = series[0] - oracle[0];
        for (s, o) in series.iter().zip(&oracle) {
            assert_eq!(s - o, d0, "volume tracks NNZ up to a bitmap constant");
        }
        assert_eq!(extent_from_series(&oracle), Some(3));
        assert_eq!(r.layers[0].filter_s, Some(3));
        assert_eq!(r.layers[0].filter_r, Some(3));
    }

    #[test]
    fn pointwise_filters_give_a_flat_series() {
        let net = toy_sparse(1).truncated(1);
        let victim = BaselineVictim {
            weights: generate_weights(&net, 2),
            net,
            cfg: TraceConfig {
                sparse: true,
                ..TraceConfig::default()
            },
        };
        let r = huffduff_attack(&victim, &HuffDuffConfig::default()).unwrap();
        assert_eq!(r.evidence["series_variance"], 0.0);
        assert_eq!(r.layers[0].filter_s, Some(1));
    }

    #[test]
    fn dense_baseline_is_inapplicable() {
        let net = toy_sparse(3).truncated(1);
        let victim = BaselineVictim {
            weights: generate_weights(&net, 2),
            net,
            cfg: TraceConfig::default(),
        };
        assert!(matches!(
            huffduff_attack(&victim, &HuffDuffConfig::default()),
            Err(AttackError::Inapplicable(_))
        ));
    }
}
