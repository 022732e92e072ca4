use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NetworkSpec, Tensor3D};

/// The `K` filters of one layer, each `C × R × S`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub filters: Vec<Tensor3D<i8>>,
}

impl LayerWeights {
    pub fn len(&self) -> usize {
        self.filters.iter().map(|f| f.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(&self) -> usize {
        self.filters
            .iter()
            .map(|f| f.data.iter().filter(|&&v| v == 0).count())
            .sum()
    }

    /// Weights in filter order: all kernels of ofmap 0, then ofmap 1, ...
    pub fn to_bytes(&self) -> Vec<u8> {
        self.filters.iter().flat_map(|f| f.to_bytes()).collect()
    }
}

/// Seeded synthetic weights, magnitude-pruned per layer.
///
/// Nonzero draws are uniform over `±[1,127]`; the `round(sparsity·n)` smallest
/// magnitudes (ties broken by position) are then forced to zero.
pub fn generate_weights(spec: &NetworkSpec, seed: u64) -> Vec<LayerWeights> {
    spec.layers
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let sh = &layer.shape;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(li as u64);
            let n = sh.k * sh.c * sh.r * sh.s;
            let mut vals: Vec<i8> = (0..n)
                .map(|_| {
                    let m = rng.gen_range(1i8..=127);
                    if rng.gen::<bool>() {
                        m
                    } else {
                        -m
                    }
                })
                .collect();
            let n_zero = ((layer.sparsity * n as f64).round() as usize).min(n);
            if n_zero > 0 {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by_key(|&i| (vals[i].unsigned_abs(), i));
                for &i in &order[..n_zero] {
                    vals[i] = 0;
                }
            }
            let per = sh.c * sh.r * sh.s;
            LayerWeights {
                filters: vals
                    .chunks(per)
                    .map(|ch| Tensor3D::from_vec(sh.c, sh.r, sh.s, ch.to_vec()).expect("sized"))
                    .collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerShape, LayerSpec, TilingSpec};

    fn net(k: usize, c: usize, sparsity: f64) -> NetworkSpec {
        let shape = LayerShape::same(k, c, 8, 8, 5, 5);
        NetworkSpec {
            name: "w".into(),
            layers: vec![LayerSpec {
                shape,
                tiling: TilingSpec::default_for(&shape),
                sparsity,
            }],
            skips: vec![],
        }
    }

    #[test]
    fn zero_sparsity_has_no_zeros() {
        let w = generate_weights(&net(4, 4, 0.0), 1);
        assert_eq!(w[0].zeros(), 0);
    }

    #[test]
    fn sparsity_hits_target() {
        // 16 * 25 * 25 = 10000 weights
        let w = generate_weights(&net(16, 25, 0.9), 5);
        assert_eq!(w[0].len(), 10_000);
        let z = w[0].zeros();
        assert!((8_900..=9_100).contains(&z), "{z}");
    }

    #[test]
    fn deterministic_per_seed() {
        let n = net(4, 3, 0.5);
        assert_eq!(generate_weights(&n, 9), generate_weights(&n, 9));
        assert_ne!(generate_weights(&n, 9), generate_weights(&n, 10));
    }

    #[test]
    fn pruned_weights_are_the_smallest() {
        let flat = |w: &LayerWeights| -> Vec<i8> {
            w.filters.iter().flat_map(|f| f.data.clone()).collect()
        };
        let dense = flat(&generate_weights(&net(8, 8, 0.0), 2)[0]);
        let pruned = flat(&generate_weights(&net(8, 8, 0.5), 2)[0]);
        let max_cut = dense
            .iter()
            .zip(&pruned)
            .filter(|(_, &p)| p == 0)
            .map(|(d, _)| d.unsigned_abs())
            .max()
            .unwrap();
        let min_kept = pruned
            .iter()
            .filter(|&&p| p != 0)
            .map(|p| p.unsigned_abs())
            .min()
            .unwrap();
        assert!(max_cut <= min_kept);
        for (d, p) in dense.iter().zip(&pruned) {
            assert!(*p == 0 || p == d);
        }
    }
}
