//! Explicit-constant generalization bounds. Natural logarithms throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Budget on `Σ_ℓ ‖W^ℓ − M^ℓ‖_ℓ`.
    pub beta: f64,
    /// Initialization slack: `‖M^ℓ‖_ℓ ≤ 1 + ν`.
    pub nu: f64,
    /// Cap on embedding norms.
    pub chi: f64,
    /// Per-layer `(2,1)` distance budgets (Frobenius at the last layer).
    pub a: Vec<f64>,
    /// Per-layer norm caps.
    pub s: Vec<f64>,
    pub delta: f64,
    /// Number of observed entries `N`.
    pub samples: f64,
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub d2: usize,
    pub depth: usize,
    /// Rating span `Δu`.
    pub delta_u: f64,
    /// Cap on score magnitudes.
    pub score_cap: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("χ", self.chi),
            ("N", self.samples),
            ("Δu", self.delta_u),
            ("B", self.score_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        for (name, v) in [("β", self.beta), ("ν", self.nu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "δ must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.m == 0 || self.n == 0 || self.r == 0 || self.d2 == 0 || self.depth == 0 {
            return Err(Error::invalid("m, n, r, D₂ and L must be positive"));
        }
        Ok(())
    }

    fn validate_norms(&self) -> Result<()> {
        self.validate()?;
        if self.a.len() != self.depth || self.s.len() != self.depth {
            return Err(Error::invalid(format!(
                "need {} values of a and s, got {} and {}",
                self.depth,
                self.a.len(),
                self.s.len()
            )));
        }
        if self.a.iter().any(|&a| !(a >= 0.0)) || self.s.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("a must be non-negative and s positive"));
        }
        Ok(())
    }
}

/// `3Δu²√(ln(2/δ)/2N) + 16Δu²/N`, shared by both bounds.
fn concentration_terms(x: &BoundInputs) -> f64 {
    let du2 = x.delta_u * x.delta_u;
    3.0 * du2 * ((2.0 / x.delta).ln() / (2.0 * x.samples)).sqrt() + 16.0 * du2 / x.samples
}

/// Parameter-counting bound.
pub fn bound_param_count(x: &BoundInputs) -> Result<f64> {
    x.validate()?;
    let du2 = x.delta_u * x.delta_u;
    let n = x.samples;
    let count = (x.m * x.r + x.d2) as f64;
    let drift = x.beta + x.nu * x.depth as f64;
    let cover = (72.0 * n * (x.chi + x.beta) * (x.chi + 1.0) + 1.0).ln();
    Ok(concentration_terms(x)
        + du2 * (48.0 * count * drift / n).sqrt()
        + du2 * (count * cover / n).sqrt())
}

/// Norm-based bound.
pub fn bound_norm_based(x: &BoundInputs) -> Result<f64> {
    x.validate_norms()?;
    let du2 = x.delta_u * x.delta_u;
    let n = x.samples;
    let prod_s: f64 = x.s.iter().product();
    // S = max_ℓ Π_{l ≥ ℓ} s_l
    let mut tail = 1.0;
    let mut big_s: f64 = 0.0;
    for &s in x.s.iter().rev() {
        tail *= s;
        big_s = big_s.max(tail);
    }
    let a_max = x.a.iter().copied().fold(0.0, f64::max);
    let ratio_sum: f64 =
        x.a.iter()
            .zip(&x.s)
            .map(|(a, s)| (a / s).powf(2.0 / 3.0))
            .sum();
    let inner = 600.0 * n * x.chi * prod_s + 1.0;
    let embed =
        48.0 * du2 * x.chi * x.chi * (x.m as f64 * x.r as f64 / n).sqrt() * inner.ln().sqrt();
    let weights = if ratio_sum == 0.0 {
        0.0
    } else {
        let log_arg = x.d2 as f64 * x.n as f64 * (17.0 * n * a_max * big_s + 7.0) * inner;
        1584.0
            * du2
            * x.chi
            * prod_s
            * ratio_sum.powf(1.5)
            * (x.r as f64 / n).sqrt()
            * log_arg.ln().sqrt()
    };
    Ok(concentration_terms(x) + embed + weights)
}

/// The KL-level quantity `𝒬` bounding excess population loss.
pub fn q_bound(x: &BoundInputs) -> Result<f64> {
    x.validate()?;
    let b = x.score_cap;
    let n = x.samples;
    let count = (x.m * x.r + x.d2) as f64;
    let drift = x.beta + x.nu * x.depth as f64;
    let cover = (6.0 * n * (x.chi + x.beta) * (x.chi + 1.0) * b + 1.0).ln();
    Ok(12.0 * b * ((2.0 / x.delta).ln() / (2.0 * n)).sqrt()
        + 32.0 * b / n
        + 96.0 * b / n.sqrt() * (count * (drift + cover)).sqrt())
}

/// Total-variation guarantees derived from `𝒬`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvBoundReport {
    pub q: f64,
    /// `√(𝒬/2)`, the form printed alongside the theorem.
    pub tv_as_stated: f64,
    /// `√(2𝒬)`: the valid Pinsker bound for the L1 distance.
    pub tv_l1: f64,
    /// Noiseless population MSE bound `2Δu²√(𝒬/2)`.
    pub mse_as_stated: f64,
}

pub fn tv_bound_report(x: &BoundInputs) -> Result<TvBoundReport> {
    let q = q_bound(x)?;
    Ok(TvBoundReport {
        q,
        tv_as_stated: (q / 2.0).sqrt(),
        tv_l1: (2.0 * q).sqrt(),
        mse_as_stated: 2.0 * x.delta_u * x.delta_u * (q / 2.0).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn instance() -> BoundInputs {
        BoundInputs {
            beta: 1.0,
            nu: 0.0,
            chi: 2.0,
            a: vec![0.5, 0.25, 0.1],
            s: vec![1.5, 1.2, 1.1],
            delta: 0.05,
            samples: 1e4,
            m: 100,
            n: 50,
            r: 8,
            d2: 500,
            depth: 3,
            delta_u: 4.0,
            score_cap: 10.0,
        }
    }

    #[test]
    fn vanish_as_samples_grow() {
        let mut x = instance();
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for n in [1e3, 1e6, 1e9, 1e12] {
            x.samples = n;
            let v = (
                bound_param_count(&x).unwrap(),
                bound_norm_based(&x).unwrap(),
            );
            assert!(v.0 < prev.0 && v.1 < prev.1);
            prev = v;
        }
        x.samples = 1e40;
        assert!(bound_param_count(&x).unwrap() < 1e-9);
        assert!(bound_norm_based(&x).unwrap() < 1e-9);
    }

    #[test]
    fn zero_distance_drops_weight_term() {
        let mut x = instance();
        x.a = vec![0.0; 3];
        let base = concentration_terms(&x);
        let embed = 48.0
            * 16.0
            * 4.0
            * (800.0f64 / 1e4).sqrt()
            * (600.0 * 1e4 * 2.0 * (1.5 * 1.2 * 1.1) + 1.0f64).ln().sqrt();
        let v = bound_norm_based(&x).unwrap();
        assert!((v - base - embed).abs() < 1e-9 * v);
    }

    #[test]
    fn monotone_in_budgets() {
        let x = instance();
        let base = bound_param_count(&x).unwrap();
        for f in [
            |x: &mut BoundInputs| x.beta *= 2.0,
            |x: &mut BoundInputs| x.nu += 0.5,
            |x: &mut BoundInputs| x.chi *= 2.0,
            |x: &mut BoundInputs| x.d2 *= 2,
        ] {
            let mut y = instance();
            f(&mut y);
            assert!(bound_param_count(&y).unwrap() > base);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut x = instance();
        x.delta = 1.0;
        assert!(bound_param_count(&x).is_err());
        let mut x = instance();
        x.s.pop();
        assert!(bound_norm_based(&x).is_err());
    }
}
