//! End-to-end experiments behind the `searchspace` and `metrics` commands and
//! the acceptance suite.

pub mod battery;
pub mod cm;
pub mod huffduff;
pub mod invariants;
pub mod searchspace;

use accel_leak::model::{generate_weights, NetworkSpec, Tensor3D};
use accel_leak::tracegen::Workload;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;

/// `((i·mul + add) mod modulus) as i8` over the flattened input.
pub fn ramp_input(
    shape: (usize, usize, usize),
    mul: usize,
    add: usize,
    modulus: usize,
) -> Tensor3D<i8> {
    let (c, h, w) = shape;
    let data = (0..c * h * w)
        .map(|i| ((i * mul + add) % modulus.max(1)) as i8)
        .collect();
    Tensor3D::from_vec(c, h, w, data).expect("sized to shape")
}

pub fn input_shape(net: &NetworkSpec) -> (usize, usize, usize) {
    let s = net.layers[0].shape;
    (s.c, s.h, s.w)
}

pub fn workload(
    net: &NetworkSpec,
    weight_seed: u64,
    input: &Tensor3D<i8>,
) -> Result<Workload, CliError> {
    Ok(Workload::new(
        net.clone(),
        generate_weights(net, weight_seed),
        input,
    )?)
}

/// Mean of `metric` over `perms` shufflings of the labels: the value a
/// secret-independent observable with the same marginal would score.
pub fn permutation_floor<const N: usize>(
    secret: &[i64],
    perms: usize,
    seed: u64,
    mut metric: impl FnMut(&[i64]) -> Result<[f64; N], CliError>,
) -> Result<[f64; N], CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = secret.to_vec();
    let mut acc = [0.0; N];
    for _ in 0..perms {
        shuffled.shuffle(&mut rng);
        for (a, v) in acc.iter_mut().zip(metric(&shuffled)?) {
            *a += v / perms as f64;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_wraps_and_casts() {
        let t = ramp_input((1, 2, 3), 100, 1, 251);
        assert_eq!(
            t.data,
            vec![1, 101, (201u8) as i8, 50, (150u8) as i8, (250u8) as i8]
        );
    }

    #[test]
    fn floor_of_constant_metric_is_that_constant() {
        let s = vec![0, 0, 1, 1];
        let f = permutation_floor(&s, 5, 1, |_| Ok([2.0, 3.0])).unwrap();
        assert_eq!(f, [2.0, 3.0]);
        // label count statistics survive shuffling
        let g = permutation_floor(&s, 7, 2, |p| Ok([p.iter().sum::<i64>() as f64])).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-12);
    }
}
