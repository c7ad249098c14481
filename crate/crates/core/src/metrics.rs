//! Similarity between original and adversarial states, and campaign rates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevec::StateVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Or,
    And,
}

/// Acceptance gate for a candidate: `F > min_fidelity` combined with
/// `D < max_trace_distance`. Use an infinite bound to disable a clause.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityThresholds {
    pub min_fidelity: f64,
    pub max_trace_distance: f64,
    pub combine: Combine,
}

impl Default for SimilarityThresholds {
    fn default() -> Self {
        Self {
            min_fidelity: 0.90,
            max_trace_distance: 0.45,
            combine: Combine::Or,
        }
    }
}

impl SimilarityThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.min_fidelity.is_nan() || self.max_trace_distance.is_nan() {
            return Err(Error::InvalidArgument("similarity bounds must not be NaN".into()));
        }
        if !self.min_fidelity.is_finite() && !self.max_trace_distance.is_finite() {
            return Err(Error::InvalidArgument("at least one similarity bound must be finite".into()));
        }
        Ok(())
    }

    pub fn accepts(&self, fidelity: f64, trace_distance: f64) -> bool {
        let f = fidelity > self.min_fidelity;
        let d = trace_distance < self.max_trace_distance;
        match self.combine {
            Combine::Or => f || d,
            Combine::And => f && d,
        }
    }
}

fn check_dims(a: &StateVector, b: &StateVector) -> Result<()> {
    if a.n_qubits() != b.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: a.n_qubits(),
            found: b.n_qubits(),
        });
    }
    Ok(())
}

/// `|<a|b>|²`, clamped to `[0, 1]`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.inner(b)?.norm_sqr().clamp(0.0, 1.0))
}

/// `½ tr|ρ − σ|`, which for pure states is `√(1 − F)`.
pub fn trace_distance(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok((1.0 - fidelity(a, b)?).sqrt())
}

fn pair_mean(pairs: &[(StateVector, StateVector)], f: fn(&StateVector, &StateVector) -> Result<f64>) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list"));
    }
    let mut sum = 0.0;
    for (a, b) in pairs {
        sum += f(a, b)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean fidelity over `(original, adversarial)` pairs.
pub fn afm(pairs: &[(StateVector, StateVector)]) -> Result<f64> {
    pair_mean(pairs, fidelity)
}

/// Mean trace distance over `(original, adversarial)` pairs.
pub fn atd(pairs: &[(StateVector, StateVector)]) -> Result<f64> {
    pair_mean(pairs, trace_distance)
}

pub fn gen_rate(n_generated: usize, n_inputs: usize) -> Result<f64> {
    if n_inputs == 0 {
        return Err(Error::Empty("input set"));
    }
    if n_generated > n_inputs {
        return Err(Error::InvalidArgument(format!(
            "{n_generated} generated out of {n_inputs} inputs"
        )));
    }
    Ok(n_generated as f64 / n_inputs as f64)
}

pub fn passes_quality(original: &StateVector, candidate: &StateVector, thresholds: &SimilarityThresholds) -> Result<bool> {
    let f = fidelity(original, candidate)?;
    Ok(thresholds.accepts(f, (1.0 - f).sqrt()))
}
