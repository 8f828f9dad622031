//! False-data-injection attack generators: per-sensor bias along random
//! directions and stealthy range-space attacks targeting specific states.
//! All randomness flows through a seeded portable generator so trial
//! tables reproduce bit-exactly.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    SensorBias,
    StateTargeted,
}

/// Declarative attack description; `targets` are 0-based sensor indices
/// (SensorBias) or state indices (StateTargeted).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub targets: Vec<usize>,
    /// bias factor (SensorBias: multiple of |y_j|; StateTargeted: fraction
    /// of the true state value)
    pub magnitude: f64,
    pub seed: u64,
}

impl AttackSpec {
    pub fn validate(&self, limit: usize) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::Domain("attack targets must be nonempty".into()));
        }
        if let Some(&t) = self.targets.iter().find(|&&t| t >= limit) {
            return Err(Error::Domain(format!("attack target {t} out of range 0..{limit}")));
        }
        if !(self.magnitude > 0.0) {
            return Err(Error::Domain("attack magnitude must be positive".into()));
        }
        Ok(())
    }
}

/// Biases each targeted channel by `factor·|y_j|` along a random sign.
/// Signs are drawn in ascending target order from the seeded generator.
pub fn sensor_bias_attack(
    y_true: &DVector<f64>,
    targets: &[usize],
    factor: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    if targets.is_empty() {
        return Err(Error::Domain("sensor bias attack needs at least one target".into()));
    }
    let m = y_true.len();
    let mut sorted: Vec<usize> = targets.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != targets.len() {
        return Err(Error::Domain("duplicate attack targets".into()));
    }
    if *sorted.last().unwrap() >= m {
        return Err(Error::Domain(format!(
            "attack target {} out of range 0..{m}",
            sorted.last().unwrap()
        )));
    }
    if factor < 0.0 {
        return Err(Error::Domain("bias factor must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = y_true.clone();
    for &j in &sorted {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        y[j] += sign * factor * y_true[j].abs();
    }
    Ok(y)
}

/// Stealthy attack biasing selected states by a fraction of their true
/// value: y_a = H·c lies in range(H), invisible to any residual test.
pub fn state_targeted_attack(
    h: &DMatrix<f64>,
    state_targets: &[usize],
    bias_fraction: f64,
    x_true: &DVector<f64>,
) -> DVector<f64> {
    let n = h.ncols();
    let mut c = DVector::zeros(n);
    for &j in state_targets {
        c[j] = bias_fraction * x_true[j];
    }
    h * c
}

/// Uniformly random subset of `{0..m}` of the given size, returned sorted;
/// deterministic per seed.
pub fn random_support(m: usize, count_attacked: usize, seed: u64) -> Result<Vec<usize>> {
    if count_attacked > m {
        return Err(Error::Domain(format!(
            "cannot attack {count_attacked} of {m} channels"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, m, count_attacked).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::qr_split;
    use approx::assert_relative_eq;

    #[test]
    fn bias_attack_matches_hand_value() {
        let y = DVector::from_column_slice(&[2.0, 4.0]);
        // find a seed whose first drawn sign is positive
        let seed = (0..64)
            .find(|&s| ChaCha8Rng::seed_from_u64(s).gen::<bool>())
            .unwrap();
        let out = sensor_bias_attack(&y, &[1], 5.0, seed).unwrap();
        assert_relative_eq!(out[0], 2.0);
        assert_relative_eq!(out[1], 24.0);
        // and one whose first sign is negative
        let seed = (0..64)
            .find(|&s| !ChaCha8Rng::seed_from_u64(s).gen::<bool>())
            .unwrap();
        let out = sensor_bias_attack(&y, &[1], 5.0, seed).unwrap();
        assert_relative_eq!(out[1], -16.0);
    }

    #[test]
    fn bias_attack_zero_factor_keeps_y() {
        let y = DVector::from_column_slice(&[1.0, -2.0, 3.0]);
        let out = sensor_bias_attack(&y, &[0, 2], 0.0, 9).unwrap();
        assert_eq!(out, y);
    }

    #[test]
    fn bias_attack_deterministic_and_local() {
        let y = DVector::from_column_slice(&[1.0, -2.0, 3.0, 0.5]);
        let a = sensor_bias_attack(&y, &[1, 3], 5.0, 1234).unwrap();
        let b = sensor_bias_attack(&y, &[1, 3], 5.0, 1234).unwrap();
        assert_eq!(a, b);
        // untouched channels unchanged, touched channels changed
        assert_eq!(a[0], y[0]);
        assert_eq!(a[2], y[2]);
        assert_ne!(a[1], y[1]);
        assert_ne!(a[3], y[3]);
        assert!(sensor_bias_attack(&y, &[], 5.0, 1).is_err());
        assert!(sensor_bias_attack(&y, &[9], 5.0, 1).is_err());
    }

    #[test]
    fn state_attack_examples() {
        let h = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let x = DVector::from_column_slice(&[2.0]);
        let ya = state_targeted_attack(&h, &[0], 0.5, &x);
        assert_eq!(ya.as_slice(), &[1.0, 1.0, 1.0]);
        let zero = state_targeted_attack(&h, &[0], 0.0, &x);
        assert!(zero.amax() == 0.0);
    }

    #[test]
    fn state_attack_is_stealthy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = rng.gen_range(4..10);
            let n = rng.gen_range(1..4.min(m));
            let h = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0_f64));
            let f = match qr_split(&h) {
                Ok(f) => f,
                Err(_) => continue,
            };
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
            let targets: Vec<usize> = (0..n).filter(|_| rng.gen::<bool>()).collect();
            let ya = state_targeted_attack(&h, &targets, 0.5, &x);
            assert!((f.q2.transpose() * ya).norm() < 1e-10);
        }
    }

    #[test]
    fn random_support_endpoints() {
        assert_eq!(random_support(5, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(random_support(5, 0, 1).unwrap(), Vec::<usize>::new());
        assert!(random_support(5, 6, 1).is_err());
        assert_eq!(random_support(30, 7, 42).unwrap(), random_support(30, 7, 42).unwrap());
    }

    #[test]
    fn random_support_is_uniform() {
        let m = 10;
        let k = 3;
        let draws = 100_000;
        let mut counts = vec![0usize; m];
        for seed in 0..draws {
            for j in random_support(m, k, seed as u64).unwrap() {
                counts[j] += 1;
            }
        }
        let expected = draws as f64 * k as f64 / m as f64;
        for &c in &counts {
            let rel = (c as f64 - expected).abs() / (draws as f64);
            assert!(rel < 0.01, "index frequency off by {rel}");
        }
    }
}
