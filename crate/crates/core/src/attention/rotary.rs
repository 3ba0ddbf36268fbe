//! Rotary positional encoding over interleaved `(2i, 2i + 1)` pairs.

use super::tensor::{HeadTensor, Real};
use super::AttentionError;

/// Rotates every head vector of token `t` by `positions[t]`.
///
/// Angles are formed in `f64` and applied in `T`. Negative positions undo
/// the rotation at the matching positive position.
pub fn apply_rotation<T: Real>(
    x: &HeadTensor<T>,
    positions: &[i64],
    rotary_base: f64,
) -> Result<HeadTensor<T>, AttentionError> {
    let mut out = x.clone();
    rotate_in_place(&mut out, positions, rotary_base)?;
    Ok(out)
}

pub fn rotate_in_place<T: Real>(
    x: &mut HeadTensor<T>,
    positions: &[i64],
    rotary_base: f64,
) -> Result<(), AttentionError> {
    if positions.len() != x.tokens() {
        return Err(AttentionError::DimensionMismatch {
            what: "positions",
            expected: x.tokens(),
            actual: positions.len(),
        });
    }
    let d = x.head_dim();
    if !d.is_multiple_of(2) {
        return Err(AttentionError::OddHeadDim(d));
    }
    let freqs = frequencies(d, rotary_base);
    let mut cos = vec![T::zero(); d / 2];
    let mut sin = vec![T::zero(); d / 2];
    for (t, &pos) in positions.iter().enumerate() {
        for (i, f) in freqs.iter().enumerate() {
            let angle = pos as f64 * f;
            cos[i] = T::from_f64_lossy(angle.cos());
            sin[i] = T::from_f64_lossy(angle.sin());
        }
        for h in 0..x.heads() {
            let v = x.vector_mut(t, h);
            for i in 0..d / 2 {
                let (a, b) = (v[2 * i], v[2 * i + 1]);
                v[2 * i] = a * cos[i] - b * sin[i];
                v[2 * i + 1] = a * sin[i] + b * cos[i];
            }
        }
    }
    Ok(())
}

fn frequencies(head_dim: usize, base: f64) -> Vec<f64> {
    (0..head_dim / 2).map(|i| base.powf(-2.0 * i as f64 / head_dim as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(tokens: usize, heads: usize, d: usize, seed: u64) -> HeadTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..tokens * heads * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        HeadTensor::from_vec(tokens, heads, d, data).unwrap()
    }

    #[test]
    fn zero_position_is_identity() {
        let x = random(3, 2, 8, 1);
        let y = apply_rotation(&x, &[0, 0, 0], 10_000.0).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn inverse_rotation_restores_input() {
        let x = random(4, 2, 16, 2);
        let pos = [0, 7, 123, 4096];
        let neg: Vec<i64> = pos.iter().map(|p| -p).collect();
        let back = apply_rotation(&apply_rotation(&x, &pos, 10_000.0).unwrap(), &neg, 10_000.0).unwrap();
        assert!(x.max_abs_diff(&back) <= 1e-9);
    }

    #[test]
    fn norms_preserved() {
        let x = random(5, 3, 16, 3);
        let y = apply_rotation(&x, &[1, 2, 300, 5000, 77], 10_000.0).unwrap();
        for t in 0..5 {
            for h in 0..3 {
                let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
                assert!((n(x.vector(t, h)) - n(y.vector(t, h))).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn scores_depend_on_relative_offset_only() {
        let q = random(1, 1, 16, 4);
        let k = random(1, 1, 16, 5);
        let dot = |qp: i64, kp: i64| {
            let a = apply_rotation(&q, &[qp], 10_000.0).unwrap();
            let b = apply_rotation(&k, &[kp], 10_000.0).unwrap();
            a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum::<f64>()
        };
        for (p, delta) in [(0, 3), (5, 0), (17, 40)] {
            assert!((dot(p + delta, p) - dot(p + delta + 100, p + 100)).abs() <= 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let x = random(2, 1, 4, 6);
        assert!(matches!(apply_rotation(&x, &[0], 1e4), Err(AttentionError::DimensionMismatch { .. })));
        let odd = HeadTensor::<f64>::zeros(1, 1, 3);
        assert!(matches!(apply_rotation(&odd, &[0], 1e4), Err(AttentionError::OddHeadDim(3))));
    }
}
