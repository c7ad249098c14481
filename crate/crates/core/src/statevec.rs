//! Dense statevector simulation.
//!
//! Qubit 0 is the most significant bit of the basis index: the basis state
//! `|b0 b1 ... b(n-1)>` lives at index `sum_j b_j * 2^(n-1-j)`. Every module
//! (readout, the Meyer-Wallach map, amplitude encoding) relies on this order.
//!
//! Gates are applied with strided in-place kernels on a private copy, so the
//! public functions have value semantics. Composite gates (`U3`, `CRot`,
//! `SU4`) are lowered to single-parameter rotations and fixed gates when they
//! are added to a [`Circuit`]; the lowered program drives both simulation and
//! differentiation.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Largest register [`circuit_matrix`] will expand into a dense matrix.
pub const MATRIX_QUBIT_LIMIT: usize = 6;

/// Tolerance on `|‖x‖ - 1|` accepted by [`StateVector::from_amplitudes`].
pub const NORM_TOLERANCE: f64 = 1e-10;

/// A normalized pure state of `n_qubits` qubits.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// The all-zeros basis state.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 30 {
            return Err(Error::InvalidArgument(format!(
                "unsupported qubit count {n_qubits}"
            )));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: index,
            });
        }
        let mut amps = vec![ZERO; dim];
        amps[index] = ONE;
        Ok(Self { n_qubits, amps })
    }

    /// Wraps amplitudes that are already unit norm (within [`NORM_TOLERANCE`]).
    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex64>) -> Result<Self> {
        check_len(n_qubits, amps.len())?;
        let norm = l2_norm(&amps);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self { n_qubits, amps })
    }

    /// Divides `amps` by its L2 norm.
    pub fn normalized(n_qubits: usize, mut amps: Vec<Complex64>) -> Result<Self> {
        check_len(n_qubits, amps.len())?;
        let norm = l2_norm(&amps);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NotNormalized { norm });
        }
        amps.iter_mut().for_each(|a| *a /= norm);
        Ok(Self { n_qubits, amps })
    }

    /// Haar-random state drawn from i.i.d. complex Gaussians.
    pub fn random<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> Self {
        let dim = 1usize << n_qubits;
        let amps = (0..dim)
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        Self::normalized(n_qubits, amps).expect("gaussian draw has positive norm")
    }

    /// No normalization check.
    #[cfg(test)]
    pub(crate) fn from_raw(n_qubits: usize, amps: Vec<Complex64>) -> Self {
        debug_assert_eq!(amps.len(), 1usize << n_qubits);
        Self { n_qubits, amps }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amps)
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(inner(&self.amps, &other.amps))
    }

    /// Multiplies every amplitude by `e^{i phase}`.
    pub fn with_global_phase(&self, phase: f64) -> StateVector {
        let f = Complex64::from_polar(1.0, phase);
        StateVector {
            n_qubits: self.n_qubits,
            amps: self.amps.iter().map(|a| a * f).collect(),
        }
    }

    /// Tensor product `self ⊗ other`; `self` supplies the leading qubits.
    pub fn tensor(&self, other: &StateVector) -> StateVector {
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| a * b))
            .collect();
        StateVector {
            n_qubits: self.n_qubits + other.n_qubits,
            amps,
        }
    }
}

fn check_len(n_qubits: usize, len: usize) -> Result<()> {
    if n_qubits == 0 || n_qubits > 30 {
        return Err(Error::InvalidArgument(format!(
            "unsupported qubit count {n_qubits}"
        )));
    }
    let dim = 1usize << n_qubits;
    if len != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: len,
        });
    }
    Ok(())
}

pub(crate) fn l2_norm(amps: &[Complex64]) -> f64 {
    amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// `sum conj(a_i) b_i`
pub(crate) fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    RX,
    RY,
    RZ,
    /// `RZ(phi) RY(theta) RZ(lambda)` with slots `[theta, phi, lambda]`.
    U3,
    H,
    X,
    CNOT,
    CZ,
    /// Controlled `RZ(phi) RY(theta) RZ(lambda)`; targets `[control, target]`,
    /// slots `[theta, phi, lambda]` as for `U3`.
    CRot,
    /// General two-qubit block with 15 angles (three CNOTs plus local rotations).
    SU4,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::RX | GateKind::RY | GateKind::RZ | GateKind::U3 | GateKind::H | GateKind::X => 1,
            GateKind::CNOT | GateKind::CZ | GateKind::CRot | GateKind::SU4 => 2,
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            GateKind::RX | GateKind::RY | GateKind::RZ => 1,
            GateKind::U3 | GateKind::CRot => 3,
            GateKind::SU4 => 15,
            GateKind::H | GateKind::X | GateKind::CNOT | GateKind::CZ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub param_slots: Vec<usize>,
}

impl GateOp {
    pub fn new(kind: GateKind, targets: Vec<usize>, param_slots: Vec<usize>) -> Self {
        Self {
            kind,
            targets,
            param_slots,
        }
    }

    pub fn rx(q: usize, slot: usize) -> Self {
        Self::new(GateKind::RX, vec![q], vec![slot])
    }
    pub fn ry(q: usize, slot: usize) -> Self {
        Self::new(GateKind::RY, vec![q], vec![slot])
    }
    pub fn rz(q: usize, slot: usize) -> Self {
        Self::new(GateKind::RZ, vec![q], vec![slot])
    }
    pub fn u3(q: usize, slots: [usize; 3]) -> Self {
        Self::new(GateKind::U3, vec![q], slots.to_vec())
    }
    pub fn h(q: usize) -> Self {
        Self::new(GateKind::H, vec![q], vec![])
    }
    pub fn x(q: usize) -> Self {
        Self::new(GateKind::X, vec![q], vec![])
    }
    pub fn cnot(control: usize, target: usize) -> Self {
        Self::new(GateKind::CNOT, vec![control, target], vec![])
    }
    pub fn cz(a: usize, b: usize) -> Self {
        Self::new(GateKind::CZ, vec![a, b], vec![])
    }
    pub fn crot(control: usize, target: usize, slots: [usize; 3]) -> Self {
        Self::new(GateKind::CRot, vec![control, target], slots.to_vec())
    }
    pub fn su4(a: usize, b: usize, slots: [usize; 15]) -> Self {
        Self::new(GateKind::SU4, vec![a, b], slots.to_vec())
    }

    /// Checks shape and qubit range; slot range is checked by the caller.
    fn check_targets(&self, n_qubits: usize) -> Result<()> {
        if self.targets.len() != self.kind.arity() {
            return Err(Error::InvalidGate(format!(
                "{:?} acts on {} qubit(s), got {}",
                self.kind,
                self.kind.arity(),
                self.targets.len()
            )));
        }
        if self.param_slots.len() != self.kind.n_params() {
            return Err(Error::InvalidGate(format!(
                "{:?} takes {} parameter(s), got {}",
                self.kind,
                self.kind.n_params(),
                self.param_slots.len()
            )));
        }
        for (i, &q) in self.targets.iter().enumerate() {
            if q >= n_qubits {
                return Err(Error::QubitOutOfRange { qubit: q, n_qubits });
            }
            if self.targets[..i].contains(&q) {
                return Err(Error::DuplicateQubit(q));
            }
        }
        Ok(())
    }

    fn lower(&self, out: &mut Vec<Prim>) {
        let t = &self.targets;
        let s = &self.param_slots;
        let rot = |axis, qubit, slot| Prim::Rot { axis, qubit, slot };
        match self.kind {
            GateKind::RX => out.push(rot(Axis::X, t[0], s[0])),
            GateKind::RY => out.push(rot(Axis::Y, t[0], s[0])),
            GateKind::RZ => out.push(rot(Axis::Z, t[0], s[0])),
            GateKind::U3 => lower_u3(out, t[0], [s[0], s[1], s[2]]),
            GateKind::H => out.push(Prim::H(t[0])),
            GateKind::X => out.push(Prim::X(t[0])),
            GateKind::CNOT => out.push(Prim::Cnot(t[0], t[1])),
            GateKind::CZ => out.push(Prim::Cz(t[0], t[1])),
            GateKind::CRot => {
                let (control, target) = (t[0], t[1]);
                let crot = |axis, slot| Prim::CRot {
                    axis,
                    control,
                    target,
                    slot,
                };
                out.push(crot(Axis::Z, s[2]));
                out.push(crot(Axis::Y, s[0]));
                out.push(crot(Axis::Z, s[1]));
            }
            GateKind::SU4 => {
                let (a, b) = (t[0], t[1]);
                lower_u3(out, a, [s[0], s[1], s[2]]);
                lower_u3(out, b, [s[3], s[4], s[5]]);
                out.push(Prim::Cnot(b, a));
                out.push(rot(Axis::Z, a, s[6]));
                out.push(rot(Axis::Y, b, s[7]));
                out.push(Prim::Cnot(a, b));
                out.push(rot(Axis::Y, b, s[8]));
                out.push(Prim::Cnot(b, a));
                lower_u3(out, a, [s[9], s[10], s[11]]);
                lower_u3(out, b, [s[12], s[13], s[14]]);
            }
        }
    }
}

fn lower_u3(out: &mut Vec<Prim>, q: usize, [theta, phi, lambda]: [usize; 3]) {
    out.push(Prim::Rot { axis: Axis::Z, qubit: q, slot: lambda });
    out.push(Prim::Rot { axis: Axis::Y, qubit: q, slot: theta });
    out.push(Prim::Rot { axis: Axis::Z, qubit: q, slot: phi });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Axis {
    X,
    Y,
    Z,
}

/// Elementary operation after lowering. Rotations are `exp(-i θ/2 P)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Prim {
    Rot { axis: Axis, qubit: usize, slot: usize },
    CRot { axis: Axis, control: usize, target: usize, slot: usize },
    H(usize),
    X(usize),
    Cnot(usize, usize),
    Cz(usize, usize),
}

impl Prim {
    pub(crate) fn slot(&self) -> Option<usize> {
        match *self {
            Prim::Rot { slot, .. } | Prim::CRot { slot, .. } => Some(slot),
            _ => None,
        }
    }

    fn apply(&self, amps: &mut [Complex64], n: usize, theta: f64) {
        match *self {
            Prim::Rot { axis, qubit, .. } => kernel_1q(amps, n, qubit, &rotation(axis, theta)),
            Prim::CRot {
                axis,
                control,
                target,
                ..
            } => kernel_controlled_1q(amps, n, control, target, &rotation(axis, theta)),
            Prim::H(q) => {
                let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
                kernel_1q(amps, n, q, &[[h, h], [h, -h]]);
            }
            Prim::X(q) => kernel_x(amps, n, q),
            Prim::Cnot(c, t) => kernel_cnot(amps, n, c, t),
            Prim::Cz(a, b) => kernel_cz(amps, n, a, b),
        }
    }

    /// `<lambda| G |psi>` where the primitive is `exp(-i θ/2 G)`.
    fn generator_overlap(&self, amps_l: &[Complex64], amps_p: &[Complex64], n: usize) -> Complex64 {
        match *self {
            Prim::Rot { axis, qubit, .. } => pauli_overlap(amps_l, amps_p, n, None, qubit, axis),
            Prim::CRot {
                axis,
                control,
                target,
                ..
            } => pauli_overlap(amps_l, amps_p, n, Some(control), target, axis),
            _ => ZERO,
        }
    }
}

fn rotation(axis: Axis, theta: f64) -> [[Complex64; 2]; 2] {
    let (s, c) = (theta / 2.0).sin_cos();
    match axis {
        Axis::X => [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ],
        Axis::Y => [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ],
        Axis::Z => [
            [Complex64::new(c, -s), ZERO],
            [ZERO, Complex64::new(c, s)],
        ],
    }
}

#[inline]
fn stride(n: usize, q: usize) -> usize {
    1usize << (n - 1 - q)
}

fn kernel_1q(amps: &mut [Complex64], n: usize, q: usize, m: &[[Complex64; 2]; 2]) {
    let st = stride(n, q);
    for base in (0..amps.len()).step_by(2 * st) {
        for i in base..base + st {
            let a = amps[i];
            let b = amps[i + st];
            amps[i] = m[0][0] * a + m[0][1] * b;
            amps[i + st] = m[1][0] * a + m[1][1] * b;
        }
    }
}

fn kernel_controlled_1q(
    amps: &mut [Complex64],
    n: usize,
    control: usize,
    target: usize,
    m: &[[Complex64; 2]; 2],
) {
    let cs = stride(n, control);
    let st = stride(n, target);
    for base in (0..amps.len()).step_by(2 * st) {
        for i in base..base + st {
            if i & cs == 0 {
                continue;
            }
            let a = amps[i];
            let b = amps[i + st];
            amps[i] = m[0][0] * a + m[0][1] * b;
            amps[i + st] = m[1][0] * a + m[1][1] * b;
        }
    }
}

fn kernel_x(amps: &mut [Complex64], n: usize, q: usize) {
    let st = stride(n, q);
    for base in (0..amps.len()).step_by(2 * st) {
        for i in base..base + st {
            amps.swap(i, i + st);
        }
    }
}

fn kernel_cnot(amps: &mut [Complex64], n: usize, control: usize, target: usize) {
    let cs = stride(n, control);
    let st = stride(n, target);
    for base in (0..amps.len()).step_by(2 * st) {
        for i in base..base + st {
            if i & cs != 0 {
                amps.swap(i, i + st);
            }
        }
    }
}

fn kernel_cz(amps: &mut [Complex64], n: usize, a: usize, b: usize) {
    let mask = stride(n, a) | stride(n, b);
    for (i, amp) in amps.iter_mut().enumerate() {
        if i & mask == mask {
            *amp = -*amp;
        }
    }
}

fn pauli_overlap(
    l: &[Complex64],
    p: &[Complex64],
    n: usize,
    control: Option<usize>,
    q: usize,
    axis: Axis,
) -> Complex64 {
    let cs = control.map(|c| stride(n, c));
    let st = stride(n, q);
    let mut acc = ZERO;
    for base in (0..p.len()).step_by(2 * st) {
        for i in base..base + st {
            if let Some(cs) = cs {
                if i & cs == 0 {
                    continue;
                }
            }
            let j = i + st;
            // (P psi)_i, (P psi)_j
            let (pi, pj) = match axis {
                Axis::X => (p[j], p[i]),
                Axis::Y => (-I * p[j], I * p[i]),
                Axis::Z => (p[i], -p[j]),
            };
            acc += l[i].conj() * pi + l[j].conj() * pj;
        }
    }
    acc
}

/// An ordered gate program over a shared parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    n_params: usize,
    gates: Vec<GateOp>,
    prims: Vec<Prim>,
}

impl Circuit {
    pub fn new(n_qubits: usize, n_params: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > 30 {
            return Err(Error::InvalidArgument(format!(
                "unsupported qubit count {n_qubits}"
            )));
        }
        Ok(Self {
            n_qubits,
            n_params,
            gates: Vec::new(),
            prims: Vec::new(),
        })
    }

    /// Builds a circuit from gates, growing `n_params` to cover every slot.
    pub fn from_gates(n_qubits: usize, gates: Vec<GateOp>) -> Result<Self> {
        let n_params = gates
            .iter()
            .flat_map(|g| g.param_slots.iter().map(|s| s + 1))
            .max()
            .unwrap_or(0);
        let mut c = Self::new(n_qubits, n_params)?;
        for g in gates {
            c.push(g)?;
        }
        Ok(c)
    }

    pub fn push(&mut self, gate: GateOp) -> Result<()> {
        gate.check_targets(self.n_qubits)?;
        if let Some(&slot) = gate.param_slots.iter().find(|&&s| s >= self.n_params) {
            return Err(Error::MissingParameter {
                slot,
                len: self.n_params,
            });
        }
        gate.lower(&mut self.prims);
        self.gates.push(gate);
        Ok(())
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn gates(&self) -> &[GateOp] {
        &self.gates
    }

    /// Number of elementary gates after lowering composite blocks
    /// (`U3`/`CRot` count three, `SU4` counts eighteen).
    pub fn gate_count(&self) -> usize {
        self.prims.len()
    }

    pub(crate) fn prims(&self) -> &[Prim] {
        &self.prims
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::DimensionMismatch {
                expected: self.n_params,
                found: params.len(),
            });
        }
        Ok(())
    }

    /// Runs the program in place on raw amplitudes (no normalization check).
    pub(crate) fn run(&self, amps: &mut [Complex64], params: &[f64]) {
        self.run_shifted(amps, params, None);
    }

    /// As `run`, with the angle of primitive `shift.0` offset by `shift.1`.
    pub(crate) fn run_shifted(&self, amps: &mut [Complex64], params: &[f64], shift: Option<(usize, f64)>) {
        for (k, prim) in self.prims.iter().enumerate() {
            let mut theta = prim.slot().map_or(0.0, |s| params[s]);
            if let Some((at, delta)) = shift {
                if at == k {
                    theta += delta;
                }
            }
            prim.apply(amps, self.n_qubits, theta);
        }
    }

    /// Applies `U†` in place.
    pub(crate) fn run_inverse(&self, amps: &mut [Complex64], params: &[f64]) {
        for prim in self.prims.iter().rev() {
            let theta = prim.slot().map_or(0.0, |s| -params[s]);
            prim.apply(amps, self.n_qubits, theta);
        }
    }

    /// Reverse-mode sweep. `output` is `U|x>`, `cotangent` is `∂L/∂output*`.
    /// Returns `(∂L/∂params, ∂L/∂x*)`.
    pub(crate) fn backprop(
        &self,
        params: &[f64],
        output: &[Complex64],
        cotangent: &[Complex64],
    ) -> (Vec<f64>, Vec<Complex64>) {
        let n = self.n_qubits;
        let mut psi = output.to_vec();
        let mut lambda = cotangent.to_vec();
        let mut grad = vec![0.0; self.n_params];
        for prim in self.prims.iter().rev() {
            let theta = prim.slot().map_or(0.0, |s| params[s]);
            if let Some(slot) = prim.slot() {
                // dU/dθ = (-i/2) G U  ⇒  dL/dθ = 2 Re<λ|(-i/2) G ψ> = Im<λ|G ψ>
                grad[slot] += prim.generator_overlap(&lambda, &psi, n).im;
            }
            prim.apply(&mut psi, n, -theta);
            prim.apply(&mut lambda, n, -theta);
        }
        (grad, lambda)
    }
}

/// Returns `U_gate |state>` without modifying `state`.
pub fn apply_gate(state: &StateVector, gate: &GateOp, params: &[f64]) -> Result<StateVector> {
    gate.check_targets(state.n_qubits)?;
    if let Some(&slot) = gate.param_slots.iter().find(|&&s| s >= params.len()) {
        return Err(Error::MissingParameter {
            slot,
            len: params.len(),
        });
    }
    let mut prims = Vec::with_capacity(3);
    gate.lower(&mut prims);
    let mut amps = state.amps.clone();
    for p in &prims {
        let theta = p.slot().map_or(0.0, |s| params[s]);
        p.apply(&mut amps, state.n_qubits, theta);
    }
    Ok(StateVector {
        n_qubits: state.n_qubits,
        amps,
    })
}

/// Returns `U_circuit |state>`.
pub fn apply_circuit(state: &StateVector, circuit: &Circuit, params: &[f64]) -> Result<StateVector> {
    if state.n_qubits != circuit.n_qubits {
        return Err(Error::DimensionMismatch {
            expected: circuit.n_qubits,
            found: state.n_qubits,
        });
    }
    circuit.check_params(params)?;
    let mut amps = state.amps.clone();
    circuit.run(&mut amps, params);
    Ok(StateVector {
        n_qubits: state.n_qubits,
        amps,
    })
}

/// Row-major dense complex square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![ZERO; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = ONE;
        }
        Self { dim, data }
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.dim + col]
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|r| (0..self.dim).map(|c| self.get(r, c) * v[c]).sum())
            .collect()
    }

    /// `max_ij |(U†U - I)_ij|`
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let mut acc: Complex64 = (0..d).map(|k| self.get(k, i).conj() * self.get(k, j)).sum();
                if i == j {
                    acc -= ONE;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }
}

/// Dense matrix of the circuit, column `j` being `U|j>`.
pub fn circuit_matrix(circuit: &Circuit, params: &[f64]) -> Result<CMatrix> {
    if circuit.n_qubits > MATRIX_QUBIT_LIMIT {
        return Err(Error::TooManyQubits {
            n_qubits: circuit.n_qubits,
            limit: MATRIX_QUBIT_LIMIT,
        });
    }
    circuit.check_params(params)?;
    let dim = 1usize << circuit.n_qubits;
    let mut data = vec![ZERO; dim * dim];
    let mut col = vec![ZERO; dim];
    for j in 0..dim {
        col.iter_mut().for_each(|a| *a = ZERO);
        col[j] = ONE;
        circuit.run(&mut col, params);
        for (i, a) in col.iter().enumerate() {
            data[i * dim + j] = *a;
        }
    }
    Ok(CMatrix { dim, data })
}

/// Maps a basis index to the outcome index of the listed qubits; the first
/// listed qubit is the most significant outcome bit.
pub(crate) fn outcome_of(index: usize, n: usize, qubits: &[usize]) -> usize {
    qubits
        .iter()
        .fold(0, |acc, &q| (acc << 1) | ((index >> (n - 1 - q)) & 1))
}

pub(crate) fn check_qubit_list(qubits: &[usize], n_qubits: usize) -> Result<()> {
    for (i, &q) in qubits.iter().enumerate() {
        if q >= n_qubits {
            return Err(Error::QubitOutOfRange { qubit: q, n_qubits });
        }
        if qubits[..i].contains(&q) {
            return Err(Error::DuplicateQubit(q));
        }
    }
    Ok(())
}

/// Marginal Born probabilities of `qubits`, indexed by outcome.
pub fn measure_probs(state: &StateVector, qubits: &[usize]) -> Result<Vec<f64>> {
    check_qubit_list(qubits, state.n_qubits)?;
    Ok(marginal(&state.amps, state.n_qubits, qubits))
}

pub(crate) fn marginal(amps: &[Complex64], n: usize, qubits: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; 1 << qubits.len()];
    for (i, a) in amps.iter().enumerate() {
        out[outcome_of(i, n, qubits)] += a.norm_sqr();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn assert_close(a: &[Complex64], b: &[Complex64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).norm() < tol, "{x} vs {y}");
        }
    }

    fn random_gate<R: Rng>(rng: &mut R, n: usize, n_params: usize) -> GateOp {
        let kinds = [
            GateKind::RX,
            GateKind::RY,
            GateKind::RZ,
            GateKind::U3,
            GateKind::H,
            GateKind::X,
            GateKind::CNOT,
            GateKind::CZ,
            GateKind::CRot,
            GateKind::SU4,
        ];
        let kind = kinds[rng.random_range(0..kinds.len())];
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let targets = if kind.arity() == 1 { vec![a] } else { vec![a, b] };
        let slots = (0..kind.n_params()).map(|_| rng.random_range(0..n_params)).collect();
        GateOp::new(kind, targets, slots)
    }

    pub(crate) fn random_circuit<R: Rng>(rng: &mut R, n: usize, n_gates: usize, n_params: usize) -> (Circuit, Vec<f64>) {
        let mut circ = Circuit::new(n, n_params).unwrap();
        for _ in 0..n_gates {
            circ.push(random_gate(rng, n, n_params)).unwrap();
        }
        let params = (0..n_params).map(|_| rng.random_range(-3.2..3.2)).collect();
        (circ, params)
    }

    #[test]
    fn x_flips_zero() {
        let s = StateVector::zero(1).unwrap();
        let out = apply_gate(&s, &GateOp::x(0), &[]).unwrap();
        assert_close(out.amplitudes(), &[c(0., 0.), c(1., 0.)], 1e-15);
    }

    #[test]
    fn hadamard_on_zero() {
        let s = StateVector::zero(1).unwrap();
        let out = apply_gate(&s, &GateOp::h(0), &[]).unwrap();
        let h = FRAC_1_SQRT_2;
        assert_close(out.amplitudes(), &[c(h, 0.), c(h, 0.)], 1e-15);
    }

    #[test]
    fn cnot_builds_bell_from_superposition() {
        let h = FRAC_1_SQRT_2;
        // (|00> + |10>)/√2, qubit 0 is the high bit
        let s = StateVector::from_amplitudes(2, vec![c(h, 0.), c(0., 0.), c(h, 0.), c(0., 0.)]).unwrap();
        let out = apply_gate(&s, &GateOp::cnot(0, 1), &[]).unwrap();
        assert_close(out.amplitudes(), &[c(h, 0.), c(0., 0.), c(0., 0.), c(h, 0.)], 1e-15);
        // input untouched
        assert_eq!(s.amplitudes()[2], c(h, 0.));
    }

    #[test]
    fn gate_errors() {
        let s = StateVector::zero(2).unwrap();
        assert!(matches!(
            apply_gate(&s, &GateOp::x(2), &[]),
            Err(Error::QubitOutOfRange { qubit: 2, .. })
        ));
        assert!(matches!(
            apply_gate(&s, &GateOp::rx(0, 3), &[0.1]),
            Err(Error::MissingParameter { slot: 3, len: 1 })
        ));
        assert!(matches!(
            apply_gate(&s, &GateOp::cnot(1, 1), &[]),
            Err(Error::DuplicateQubit(1))
        ));
        let bad = GateOp::new(GateKind::RX, vec![0], vec![]);
        assert!(matches!(apply_gate(&s, &bad, &[]), Err(Error::InvalidGate(_))));
    }

    #[test]
    fn empty_circuit_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = StateVector::random(3, &mut rng);
        let circ = Circuit::new(3, 0).unwrap();
        assert_eq!(apply_circuit(&s, &circ, &[]).unwrap(), s);
        let m = circuit_matrix(&Circuit::new(2, 0).unwrap(), &[]).unwrap();
        assert_eq!(m, CMatrix::identity(4));
    }

    #[test]
    fn bell_circuit() {
        let circ = Circuit::from_gates(2, vec![GateOp::h(0), GateOp::cnot(0, 1)]).unwrap();
        let out = apply_circuit(&StateVector::zero(2).unwrap(), &circ, &[]).unwrap();
        let h = FRAC_1_SQRT_2;
        assert_close(out.amplitudes(), &[c(h, 0.), c(0., 0.), c(0., 0.), c(h, 0.)], 1e-15);
    }

    #[test]
    fn single_x_matrix() {
        let circ = Circuit::from_gates(1, vec![GateOp::x(0)]).unwrap();
        let m = circuit_matrix(&circ, &[]).unwrap();
        assert_eq!(m.data, vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)]);
    }

    #[test]
    fn circuit_dimension_mismatch() {
        let circ = Circuit::new(3, 1).unwrap();
        let s = StateVector::zero(2).unwrap();
        assert!(matches!(apply_circuit(&s, &circ, &[0.0]), Err(Error::DimensionMismatch { .. })));
        let s3 = StateVector::zero(3).unwrap();
        assert!(matches!(apply_circuit(&s3, &circ, &[]), Err(Error::DimensionMismatch { .. })));
        let big = Circuit::new(7, 0).unwrap();
        assert!(matches!(circuit_matrix(&big, &[]), Err(Error::TooManyQubits { .. })));
    }

    #[test]
    fn random_three_qubit_circuit_matches_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (circ, params) = random_circuit(&mut rng, 3, 25, 12);
            let m = circuit_matrix(&circ, &params).unwrap();
            let s = StateVector::random(3, &mut rng);
            let out = apply_circuit(&s, &circ, &params).unwrap();
            assert_close(out.amplitudes(), &m.mul_vec(s.amplitudes()), 1e-12);
            assert!(m.unitarity_error() < 1e-10);
        }
    }

    #[test]
    fn u3_matches_explicit_matrix() {
        // U3(θ,φ,λ) = RZ(φ) RY(θ) RZ(λ): |0> column is e^{-i(φ+λ)/2} (cos θ/2, e^{iφ} sin θ/2)
        let (theta, phi, lambda) = (0.7, -1.3, 2.1);
        let circ = Circuit::from_gates(1, vec![GateOp::u3(0, [0, 1, 2])]).unwrap();
        let m = circuit_matrix(&circ, &[theta, phi, lambda]).unwrap();
        let g = Complex64::from_polar(1.0, -(phi + lambda) / 2.0);
        let expect00 = g * (theta / 2.0).cos();
        let expect10 = g * Complex64::from_polar((theta / 2.0).sin(), phi);
        assert!((m.get(0, 0) - expect00).norm() < 1e-14);
        assert!((m.get(1, 0) - expect10).norm() < 1e-14);
    }

    #[test]
    fn crot_acts_only_when_control_set() {
        let circ = Circuit::from_gates(2, vec![GateOp::crot(0, 1, [0, 1, 2])]).unwrap();
        let m = circuit_matrix(&circ, &[0.4, 0.9, -0.2]).unwrap();
        // control (qubit 0) = 0 block is identity
        assert!((m.get(0, 0) - ONE).norm() < 1e-15);
        assert!((m.get(1, 1) - ONE).norm() < 1e-15);
        assert!(m.get(0, 1).norm() < 1e-15);
        assert!(m.get(2, 2).norm() > 0.0 && m.get(2, 2) != ONE);
    }

    #[test]
    fn lowered_gate_counts() {
        let circ = Circuit::from_gates(
            2,
            vec![
                GateOp::u3(0, [0, 1, 2]),
                GateOp::crot(0, 1, [0, 1, 2]),
                GateOp::su4(0, 1, std::array::from_fn(|i| i)),
            ],
        )
        .unwrap();
        assert_eq!(circ.gate_count(), 3 + 3 + 18);
        assert_eq!(circ.n_params(), 15);
    }

    #[test]
    fn measure_probs_examples() {
        let one = StateVector::basis(1, 1).unwrap();
        assert_eq!(measure_probs(&one, &[0]).unwrap(), vec![0.0, 1.0]);
        let circ = Circuit::from_gates(2, vec![GateOp::h(0), GateOp::cnot(0, 1)]).unwrap();
        let bell = apply_circuit(&StateVector::zero(2).unwrap(), &circ, &[]).unwrap();
        let p = measure_probs(&bell, &[0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(matches!(measure_probs(&bell, &[0, 0]), Err(Error::DuplicateQubit(0))));
        assert!(matches!(measure_probs(&bell, &[5]), Err(Error::QubitOutOfRange { .. })));
    }

    #[test]
    fn measure_probs_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = StateVector::random(4, &mut rng);
        let p = measure_probs(&s, &[1, 3]).unwrap();
        let mut brute = [0.0; 4];
        for (i, a) in s.amplitudes().iter().enumerate() {
            // qubit 1 ↔ bit 2 of the index, qubit 3 ↔ bit 0
            let b1 = (i >> 2) & 1;
            let b3 = i & 1;
            brute[b1 * 2 + b3] += a.norm_sqr();
        }
        for k in 0..4 {
            assert!((p[k] - brute[k]).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn backprop_input_cotangent_is_adjoint_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (circ, params) = random_circuit(&mut rng, 3, 15, 6);
        let s = StateVector::random(3, &mut rng);
        let mut out = s.amplitudes().to_vec();
        circ.run(&mut out, &params);
        let cot: Vec<Complex64> = StateVector::random(3, &mut rng).into_amplitudes();
        let (_, back) = circ.backprop(&params, &out, &cot);
        let mut expect = cot.clone();
        circ.run_inverse(&mut expect, &params);
        assert_close(&back, &expect, 1e-12);
    }

    #[test]
    fn state_constructors_validate() {
        assert!(matches!(
            StateVector::from_amplitudes(1, vec![ONE, ONE]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(matches!(
            StateVector::from_amplitudes(2, vec![ONE, ZERO]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(StateVector::normalized(1, vec![ZERO, ZERO]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn gates_preserve_norm(seed in any::<u64>(), n in 2usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = StateVector::random(n, &mut rng);
                let g = random_gate(&mut rng, n, 15);
                let params: Vec<f64> = (0..15).map(|_| rng.random_range(-7.0..7.0)).collect();
                let out = apply_gate(&s, &g, &params).unwrap();
                prop_assert!((out.norm() - 1.0).abs() < 1e-12);
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn random_circuits_are_unitary(seed in any::<u64>(), n in 2usize..5) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (circ, params) = random_circuit(&mut rng, n, 20, 10);
                let m = circuit_matrix(&circ, &params).unwrap();
                prop_assert!(m.unitarity_error() < 1e-10);
            }

            #[test]
            fn composition_is_exact(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g1 = random_gate(&mut rng, 4, 15);
                let g2 = random_gate(&mut rng, 4, 15);
                let params: Vec<f64> = (0..15).map(|_| rng.random_range(-3.0..3.0)).collect();
                let s = StateVector::random(4, &mut rng);
                let mut circ = Circuit::new(4, 15).unwrap();
                circ.push(g1.clone()).unwrap();
                circ.push(g2.clone()).unwrap();
                let folded = apply_circuit(&s, &circ, &params).unwrap();
                let stepwise = apply_gate(&apply_gate(&s, &g1, &params).unwrap(), &g2, &params).unwrap();
                prop_assert_eq!(folded, stepwise);
            }

            #[test]
            fn full_register_probs_are_squared_moduli(seed in any::<u64>(), n in 1usize..7) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = StateVector::random(n, &mut rng);
                let all: Vec<usize> = (0..n).collect();
                let p = measure_probs(&s, &all).unwrap();
                for (pi, a) in p.iter().zip(s.amplitudes()) {
                    prop_assert!((pi - a.norm_sqr()).abs() < 1e-12);
                }
            }
        }
    }
}
