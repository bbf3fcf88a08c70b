//! Closed-form predictions for representation contraction at initialization.
//!
//! * The ReLU arc-cosine recurrence `g(ρ)` that drives inter-sequence
//!   contraction through stacked MLP₀ blocks.
//! * The attention amplifier `T/(T + π − 1)` for Attn₀ after one MLP₀.
//! * Intra-sequence similarity after repeated prefix averaging.
//! * The `σ²/i` variance decay of causal averaging.

use std::f64::consts::PI;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceActivation {
    Relu,
}

/// Predicted mean cosine after each of `l` ReLU MLP₀ layers, starting from
/// uncorrelated inputs. `rho_by_layer[k]` is the value after `k + 1` layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceTrace {
    pub rho_by_layer: Vec<f64>,
    pub activation: TraceActivation,
}

impl RecurrenceTrace {
    pub fn last(&self) -> Option<f64> {
        self.rho_by_layer.last().copied()
    }
}

/// `g(ρ) = (√(1−ρ²) + (π − arccos ρ)·ρ) / π`.
pub fn relu_correlation_map(rho: f64) -> Result<f64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::invalid(format!("correlation {rho} outside [-1, 1]")));
    }
    Ok(((1.0 - rho * rho).sqrt() + (PI - rho.acos()) * rho) / PI)
}

pub fn relu_correlation_after(l: usize) -> RecurrenceTrace {
    let mut rho = 0.0;
    let rho_by_layer = (0..l)
        .map(|_| {
            rho = relu_correlation_map(rho).expect("g maps [0,1] into itself");
            rho
        })
        .collect();
    RecurrenceTrace {
        rho_by_layer,
        activation: TraceActivation::Relu,
    }
}

/// Odd activations keep the expected correlation of independent inputs at 0
/// through any depth.
pub fn odd_activation_similarity(_l: usize) -> f64 {
    0.0
}

/// Attn₀ after one ReLU MLP₀ layer: averaging `T` vectors that share the
/// correlation `ρ̄₁ = 1/π` gives `Tρ̄₁ / (Tρ̄₁ + 1 − ρ̄₁) = T / (T + π − 1)`.
pub fn attn_amplifier_similarity(t: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("sequence length must be at least 1"));
    }
    let rho1 = 1.0 / PI;
    let t = t as f64;
    Ok(t * rho1 / (t * rho1 + 1.0 - rho1))
}

/// Two stacked ReLU MLP₀ layers: `g(g(0)) = g(1/π)`.
pub fn mlp_mlp_similarity() -> f64 {
    relu_correlation_after(2).last().expect("two layers")
}

/// Large-depth approximation `1 − (1 − 1/T)/L²`.
pub fn intra_similarity_approx(t: usize, l: usize) -> Result<f64> {
    if t == 0 || l == 0 {
        return Err(Error::invalid("T and L must be at least 1"));
    }
    let (t, l) = (t as f64, l as f64);
    Ok(1.0 - (1.0 - 1.0 / t) / (l * l))
}

fn factorial(n: usize) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * k)
}

/// Exact value of
/// `ρ̄′(L) = ((L−2)!/(2L−4)!) · Σ_{k=0}^{L−2} ((L−2+k)!/k!) · (2/3)^{L−1−k}`.
///
/// `L` indexes the formula: `L = 2` is one prefix-averaging pass over
/// independent tokens (mean of `√(i/j)` over position pairs, `2/3` in the
/// continuum), and each increment adds one more pass.
pub fn intra_similarity_closed_form_exact(l: usize) -> Result<BigRational> {
    if l < 2 {
        return Err(Error::invalid(format!("closed form needs L >= 2, got {l}")));
    }
    let n = l - 2;
    let two_thirds = BigRational::new(2.into(), 3.into());
    let mut power = BigRational::one();
    for _ in 0..l - 1 - n {
        power *= &two_thirds;
    }
    // walk k from L−2 down to 0 so the power of 2/3 grows by one factor per step
    let mut sum = BigRational::zero();
    for k in (0..=n).rev() {
        let coeff = BigRational::from_integer((factorial(n + k) / factorial(k)).into());
        sum += coeff * &power;
        power *= &two_thirds;
    }
    let prefactor = BigRational::new(factorial(n).into(), factorial(2 * n).into());
    Ok(prefactor * sum)
}

pub fn intra_similarity_closed_form(l: usize) -> Result<f64> {
    let exact = intra_similarity_closed_form_exact(l)?;
    exact
        .to_f64()
        .ok_or_else(|| Error::invalid(format!("closed form at L={l} not representable")))
}

/// Closed form plus the `1/T` share of self-pairs: `ρ̄′(L) + (1 − ρ̄′(L))/T`.
pub fn intra_similarity_finite(t: usize, l: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::invalid("sequence length must be at least 1"));
    }
    let rho = intra_similarity_closed_form(l)?;
    Ok(rho + (1.0 - rho) / t as f64)
}

/// Variance of a causal average at 1-based position `i`: `σ²/i`.
pub fn variance_decay(i: usize, sigma2: f64) -> Result<f64> {
    if i == 0 {
        return Err(Error::invalid("positions are 1-based"));
    }
    Ok(sigma2 / i as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recurrence_examples() {
        assert!((relu_correlation_map(0.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert!((relu_correlation_map(1.0).unwrap() - 1.0).abs() < 1e-15);
        let g2 = relu_correlation_map(1.0 / PI).unwrap();
        assert!((g2 - 0.4934).abs() < 5e-4);
        assert!(relu_correlation_map(1.5).is_err());
        assert!(relu_correlation_map(f64::NAN).is_err());
    }

    #[test]
    fn recurrence_on_grid() {
        let mut prev = relu_correlation_map(0.0).unwrap();
        for k in 1..1000 {
            let rho = k as f64 / 1000.0;
            let g = relu_correlation_map(rho).unwrap();
            assert!(g > rho, "g({rho}) = {g}");
            assert!(g > prev);
            prev = g;
        }
    }

    #[test]
    fn trace_examples() {
        assert_eq!(relu_correlation_after(1).rho_by_layer, vec![1.0 / PI]);
        let t2 = relu_correlation_after(2);
        assert_eq!(t2.last().unwrap(), relu_correlation_map(1.0 / PI).unwrap());
        let t = relu_correlation_after(100);
        assert!(t.last().unwrap() > 0.99);
        assert!(t.rho_by_layer.windows(2).all(|w| w[1] > w[0] && w[1] <= 1.0));
    }

    #[test]
    fn amplifier_examples() {
        assert!((attn_amplifier_similarity(1).unwrap() - 1.0 / PI).abs() < 1e-15);
        let v = attn_amplifier_similarity(128).unwrap();
        assert!((v - 128.0 / (128.0 + PI - 1.0)).abs() < 1e-15);
        assert!((v - 0.9835).abs() < 1e-4);
        let mut prev = 0.0;
        for t in 1..2000 {
            let v = attn_amplifier_similarity(t).unwrap();
            assert!(v > prev && v < 1.0);
            // 2/(1 + π) ≈ 0.483 still trails g(1/π); from T = 3 on the
            // averaged branch wins
            if t >= 3 {
                assert!(v > mlp_mlp_similarity());
            } else if t == 2 {
                assert!(v < mlp_mlp_similarity());
            }
            prev = v;
        }
    }

    #[test]
    fn mlp_mlp_examples() {
        let v = mlp_mlp_similarity();
        assert!((0.49..0.50).contains(&v));
        assert!(v > relu_correlation_after(1).last().unwrap());
    }

    #[test]
    fn approx_examples() {
        for l in 1..20 {
            assert_eq!(intra_similarity_approx(1, l).unwrap(), 1.0);
        }
        let v = intra_similarity_approx(16, 12).unwrap();
        assert!((v - (1.0 - 15.0 / 16.0 / 144.0)).abs() < 1e-15);
        assert!((v - 0.99349).abs() < 1e-5);
        let far = intra_similarity_approx(1 << 40, 3).unwrap();
        assert!((far - 8.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_examples() {
        let two = intra_similarity_closed_form_exact(2).unwrap();
        assert_eq!(two, BigRational::new(2.into(), 3.into()));
        let three = intra_similarity_closed_form_exact(3).unwrap();
        assert_eq!(three, BigRational::new(8.into(), 9.into()));
        let ten = intra_similarity_closed_form(10).unwrap();
        assert!(ten > 0.98 && ten < 1.0);
        let mut prev = 0.0;
        for l in 2..40 {
            let v = intra_similarity_closed_form(l).unwrap();
            assert!(v > prev && v < 1.0, "L={l}: {v}");
            prev = v;
        }
        assert!(intra_similarity_closed_form(1).is_err());
    }

    #[test]
    fn closed_form_tracks_discrete_prefix_averaging() {
        // Exact correlations of `A^m x` for iid x, with A the T×T prefix-mean
        // operator; the formula index is m + 1.
        let t = 512;
        let mut m = vec![0.0; t * t];
        for i in 0..t {
            m[i * t + i] = 1.0;
        }
        for passes in 1..=6 {
            for c in 0..t {
                let mut acc = 0.0;
                for r in 0..t {
                    acc += m[r * t + c];
                    m[r * t + c] = acc / (r + 1) as f64;
                }
            }
            let cov = |i: usize, j: usize| (0..t).map(|k| m[i * t + k] * m[j * t + k]).sum::<f64>();
            let diag: Vec<f64> = (0..t).map(|i| cov(i, i).sqrt()).collect();
            let mut off = 0.0;
            for i in 0..t {
                for j in 0..i {
                    off += cov(i, j) / (diag[i] * diag[j]);
                }
            }
            off /= (t * (t - 1) / 2) as f64;
            let predicted = intra_similarity_closed_form(passes + 1).unwrap();
            assert!((off - predicted).abs() < 0.015, "passes={passes}: {off} vs {predicted}");
        }
    }

    #[test]
    fn closed_form_agrees_with_approx() {
        for l in 3..=12 {
            let c = intra_similarity_closed_form(l).unwrap();
            let a = intra_similarity_approx(1 << 40, l).unwrap();
            assert!((c - a).abs() < 0.02, "L={l}: {c} vs {a}");
        }
    }

    #[test]
    fn finite_examples() {
        for l in 2..12 {
            assert!((intra_similarity_finite(1, l).unwrap() - 1.0).abs() < 1e-15);
            let big = intra_similarity_finite(1 << 40, l).unwrap();
            assert!((big - intra_similarity_closed_form(l).unwrap()).abs() < 1e-12);
        }
        let v = intra_similarity_finite(16, 3).unwrap();
        assert!((v - (8.0 / 9.0 + 1.0 / 144.0)).abs() < 1e-15);
        assert!((v - 0.8958).abs() < 1e-4);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(variance_decay(1, 2.5).unwrap(), 2.5);
        assert_eq!(variance_decay(4, 1.0).unwrap(), 0.25);
        let ratio = (variance_decay(1, 1.0).unwrap() / variance_decay(32, 1.0).unwrap()).sqrt();
        assert!((ratio - 32f64.sqrt()).abs() < 1e-12);
        assert!(variance_decay(0, 1.0).is_err());
    }
}
