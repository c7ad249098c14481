//! Meyer-Wallach global entanglement and the entanglement adequacy criterion.
//!
//! Qubit labels here are 0-based and follow the statevector ordering (qubit 0
//! is the most significant index bit).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::QnnModel;
use crate::statevec::{l2_norm, StateVector};

/// Norm deviation tolerated by [`mw_measure`] before it refuses the input.
pub const MW_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QeaConfig {
    /// Weight on the output-state entanglement.
    pub k: f64,
    /// Use the `2k/(k+1)`, `2/(k+1)` coefficients instead of `k`, `1`.
    pub balanced: bool,
}

impl Default for QeaConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            balanced: false,
        }
    }
}

impl QeaConfig {
    pub fn new(k: f64, balanced: bool) -> Result<Self> {
        let cfg = Self { k, balanced };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidArgument(format!("QEA weight k must be > 0, got {}", self.k)));
        }
        Ok(())
    }

    /// `(output weight, input weight)` of the signed term.
    pub fn coefficients(&self) -> (f64, f64) {
        if self.balanced {
            (2.0 * self.k / (self.k + 1.0), 2.0 / (self.k + 1.0))
        } else {
            (self.k, 1.0)
        }
    }
}

/// `ι_j(b)`: keeps the amplitudes whose qubit `j` equals `b` and drops that
/// qubit from the index. The result is generally not normalized.
pub fn iota_map(state: &StateVector, j: usize, b: u8) -> Result<Vec<Complex64>> {
    let n = state.n_qubits();
    if j >= n {
        return Err(Error::QubitOutOfRange { qubit: j, n_qubits: n });
    }
    if b > 1 {
        return Err(Error::InvalidArgument(format!("{b} is not a bit")));
    }
    Ok(iota_raw(state.amplitudes(), n, j, b as usize))
}

fn iota_raw(amps: &[Complex64], n: usize, j: usize, b: usize) -> Vec<Complex64> {
    let st = 1usize << (n - 1 - j);
    let offset = b * st;
    let mut out = Vec::with_capacity(amps.len() / 2);
    for base in (0..amps.len()).step_by(2 * st) {
        out.extend_from_slice(&amps[base + offset..base + offset + st]);
    }
    out
}

/// `S(u, v) = Σ_{i<j} |u_i v_j − u_j v_i|²`, evaluated through the identity
/// `‖u‖²‖v‖² − |⟨u,v⟩|²`.
pub fn parallelogram_area(u: &[Complex64], v: &[Complex64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(area(u, v).max(0.0))
}

fn area(u: &[Complex64], v: &[Complex64]) -> f64 {
    let (mut uu, mut vv) = (0.0, 0.0);
    let mut uv = Complex64::new(0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uu += a.norm_sqr();
        vv += b.norm_sqr();
        uv += a.conj() * b;
    }
    uu * vv - uv.norm_sqr()
}

/// Pairs `(u_j, v_j) = (ι_j(0)x, ι_j(1)x)` visited in place: calls
/// `f(lo, hi)` with the flat indices of every amplitude pair differing in qubit `j`.
#[inline]
fn for_each_pair(len: usize, n: usize, j: usize, mut f: impl FnMut(usize, usize)) {
    let st = 1usize << (n - 1 - j);
    for base in (0..len).step_by(2 * st) {
        for i in base..base + st {
            f(i, i + st);
        }
    }
}

/// Unclamped `Q` on raw amplitudes; a polynomial, defined for any vector.
pub(crate) fn mw_raw(amps: &[Complex64], n: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..n {
        let (mut uu, mut vv) = (0.0, 0.0);
        let mut uv = Complex64::new(0.0, 0.0);
        for_each_pair(amps.len(), n, j, |lo, hi| {
            uu += amps[lo].norm_sqr();
            vv += amps[hi].norm_sqr();
            uv += amps[lo].conj() * amps[hi];
        });
        total += uu * vv - uv.norm_sqr();
    }
    4.0 / n as f64 * total
}

/// `∂Q/∂x*` of [`mw_raw`], using `∂S/∂u* = u‖v‖² − v⟨v,u⟩` and its mirror.
pub(crate) fn mw_cotangent(amps: &[Complex64], n: usize) -> Vec<Complex64> {
    let scale = 4.0 / n as f64;
    let mut out = vec![Complex64::new(0.0, 0.0); amps.len()];
    for j in 0..n {
        let (mut uu, mut vv) = (0.0, 0.0);
        let mut vu = Complex64::new(0.0, 0.0);
        for_each_pair(amps.len(), n, j, |lo, hi| {
            uu += amps[lo].norm_sqr();
            vv += amps[hi].norm_sqr();
            vu += amps[hi].conj() * amps[lo];
        });
        let uv = vu.conj();
        for_each_pair(amps.len(), n, j, |lo, hi| {
            out[lo] += scale * (amps[lo] * vv - amps[hi] * vu);
            out[hi] += scale * (amps[hi] * uu - amps[lo] * uv);
        });
    }
    out
}

fn check_norm(state: &StateVector) -> Result<()> {
    let norm = l2_norm(state.amplitudes());
    if (norm - 1.0).abs() > MW_NORM_TOLERANCE {
        return Err(Error::NotNormalized { norm });
    }
    Ok(())
}

/// Meyer-Wallach measure `Q(x) = (4/n) Σ_j S(ι_j(0)x, ι_j(1)x)`, clamped to `[0, 1]`.
pub fn mw_measure(state: &StateVector) -> Result<f64> {
    check_norm(state)?;
    Ok(mw_raw(state.amplitudes(), state.n_qubits()).clamp(0.0, 1.0))
}

/// `2(1 − (1/n) Σ_j tr ρ_j²)` from the single-qubit reduced density matrices.
/// Independent of [`mw_measure`]; kept as a cross-check.
pub fn mw_measure_purity(state: &StateVector) -> Result<f64> {
    check_norm(state)?;
    let n = state.n_qubits();
    let amps = state.amplitudes();
    let mut purity_sum = 0.0;
    for j in 0..n {
        let (mut r00, mut r11) = (0.0, 0.0);
        let mut r01 = Complex64::new(0.0, 0.0);
        for_each_pair(amps.len(), n, j, |lo, hi| {
            r00 += amps[lo].norm_sqr();
            r11 += amps[hi].norm_sqr();
            r01 += amps[lo] * amps[hi].conj();
        });
        purity_sum += r00 * r00 + r11 * r11 + 2.0 * r01.norm_sqr();
    }
    Ok(2.0 * (1.0 - purity_sum / n as f64))
}

/// Signed per-sample term `k·Q(out) − Q(in)` (or the balanced variant).
pub fn qea_term(state_in: &StateVector, state_out: &StateVector, cfg: &QeaConfig) -> Result<f64> {
    let (w_out, w_in) = cfg.coefficients();
    Ok(w_out * mw_measure(state_out)? - w_in * mw_measure(state_in)?)
}

/// Adequacy of a test set: mean of `|k·Q(U x) − Q(x)|`, or in balanced mode the
/// mean of the signed balanced term.
pub fn qea(inputs: &[StateVector], model: &QnnModel, cfg: &QeaConfig) -> Result<f64> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Empty("test input set"));
    }
    let mut acc = 0.0;
    for x in inputs {
        let out = model.forward(x)?;
        let term = qea_term(x, &out, cfg)?;
        acc += if cfg.balanced { term } else { term.abs() };
    }
    Ok(acc / inputs.len() as f64)
}
