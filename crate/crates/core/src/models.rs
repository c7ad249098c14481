//! The three classifier architectures, their readout, and checkpoints.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statevec::{self, apply_circuit, check_qubit_list, Circuit, GateOp, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Qcl,
    Ccqc,
    Qcnn,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Qcl, Arch::Ccqc, Arch::Qcnn];

    /// Depth at which the 8-qubit build lands near the reference gate budgets
    /// (QCL 160/120, CCQC 200/200, QCNN 134/169 gates/parameters).
    pub fn default_depth(self) -> usize {
        match self {
            Arch::Qcl => 5,
            Arch::Ccqc => 4,
            Arch::Qcnn => 1,
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Qcl => "qcl",
            Arch::Ccqc => "ccqc",
            Arch::Qcnn => "qcnn",
        })
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qcl" => Ok(Arch::Qcl),
            "ccqc" => Ok(Arch::Ccqc),
            "qcnn" => Ok(Arch::Qcnn),
            other => Err(Error::InvalidArgument(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Which qubits are measured and how outcomes map to classes: class `c` is
/// outcome `c` of the measured qubits (first listed qubit is the high bit),
/// renormalized over the first `n_classes` outcomes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadoutScheme {
    pub qubits: Vec<usize>,
    pub n_classes: usize,
}

impl ReadoutScheme {
    /// Measures the first `⌈log₂ C⌉` qubits.
    pub fn for_classes(n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {n_classes}")));
        }
        let width = readout_width(n_classes);
        Ok(Self {
            qubits: (0..width).collect(),
            n_classes,
        })
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        check_qubit_list(&self.qubits, n_qubits)?;
        if self.n_classes < 2 || (1usize << self.qubits.len()) < self.n_classes {
            return Err(Error::InvalidArgument(format!(
                "{} readout qubit(s) cannot encode {} classes",
                self.qubits.len(),
                self.n_classes
            )));
        }
        Ok(())
    }

    pub(crate) fn outcome_of(&self, index: usize, n_qubits: usize) -> usize {
        statevec::outcome_of(index, n_qubits, &self.qubits)
    }
}

fn readout_width(n_classes: usize) -> usize {
    (usize::BITS - (n_classes - 1).leading_zeros()) as usize
}

/// A parameterized circuit plus trained angles and a readout rule.
#[derive(Clone, Debug, PartialEq)]
pub struct QnnModel {
    arch: Arch,
    depth: usize,
    seed: u64,
    custom: bool,
    circuit: Circuit,
    params: Vec<f64>,
    readout: ReadoutScheme,
}

/// Builds one of the three architectures with angles drawn uniformly from `[0, 2π)`.
///
/// * QCL: `depth` blocks of `RX RZ RX` on every qubit followed by a CNOT ring.
/// * CCQC: `depth` blocks of a `U3` layer followed by controlled rotations
///   `i → i + r (mod n)`, the range `r` hopping through `1..n` across blocks.
/// * QCNN: per level, `depth` convolution layers of `SU4` blocks on adjacent
///   pairs of the surviving qubits (even pairs, then odd pairs), then a pooling
///   layer of `CRot`s from each discarded qubit onto a kept one. The lower half
///   survives each level, down to the readout qubits.
pub fn build_model(arch: Arch, n_qubits: usize, depth: usize, n_classes: usize, seed: u64) -> Result<QnnModel> {
    if !(2..=12).contains(&n_qubits) {
        return Err(Error::InvalidArgument(format!(
            "supported qubit counts are 2..=12, got {n_qubits}"
        )));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("depth must be at least 1".into()));
    }
    let readout = ReadoutScheme::for_classes(n_classes)?;
    readout.validate(n_qubits)?;

    let mut gates = Vec::new();
    let mut slots = 0usize..;
    let mut next = || slots.next().expect("unbounded");
    match arch {
        Arch::Qcl => {
            for _ in 0..depth {
                for q in 0..n_qubits {
                    gates.push(GateOp::rx(q, next()));
                    gates.push(GateOp::rz(q, next()));
                    gates.push(GateOp::rx(q, next()));
                }
                for q in 0..n_qubits {
                    gates.push(GateOp::cnot(q, (q + 1) % n_qubits));
                }
            }
        }
        Arch::Ccqc => {
            for block in 0..depth {
                for q in 0..n_qubits {
                    gates.push(GateOp::u3(q, [next(), next(), next()]));
                }
                let range = block % (n_qubits - 1) + 1;
                for q in 0..n_qubits {
                    gates.push(GateOp::crot(q, (q + range) % n_qubits, [next(), next(), next()]));
                }
            }
        }
        Arch::Qcnn => {
            let width = readout.qubits.len();
            let mut active: Vec<usize> = (0..n_qubits).collect();
            while active.len() > width {
                for _ in 0..depth {
                    for start in [0, 1] {
                        for pair in active[start..].chunks_exact(2) {
                            gates.push(GateOp::su4(pair[0], pair[1], std::array::from_fn(|_| next())));
                        }
                    }
                }
                let keep = active.len().div_ceil(2).max(width);
                for (i, &gone) in active[keep..].iter().enumerate() {
                    gates.push(GateOp::crot(gone, active[i % keep], [next(), next(), next()]));
                }
                active.truncate(keep);
            }
        }
    }

    let circuit = Circuit::from_gates(n_qubits, gates)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let params = (0..circuit.n_params()).map(|_| rng.random_range(0.0..TAU)).collect();
    Ok(QnnModel {
        arch,
        depth,
        seed,
        custom: false,
        circuit,
        params,
        readout,
    })
}

impl QnnModel {
    /// Wraps an arbitrary circuit (readout on the default qubits). Such models
    /// cannot be checkpointed.
    pub fn from_circuit(arch: Arch, circuit: Circuit, params: Vec<f64>, n_classes: usize) -> Result<Self> {
        let readout = ReadoutScheme::for_classes(n_classes)?;
        readout.validate(circuit.n_qubits())?;
        if params.len() != circuit.n_params() {
            return Err(Error::DimensionMismatch {
                expected: circuit.n_params(),
                found: params.len(),
            });
        }
        Ok(Self {
            arch,
            depth: 0,
            seed: 0,
            custom: true,
            circuit,
            params,
            readout,
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }
    pub fn depth(&self) -> usize {
        self.depth
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn circuit(&self) -> &Circuit {
        &self.circuit
    }
    pub fn params(&self) -> &[f64] {
        &self.params
    }
    pub fn readout(&self) -> &ReadoutScheme {
        &self.readout
    }
    pub fn n_qubits(&self) -> usize {
        self.circuit.n_qubits()
    }
    pub fn n_classes(&self) -> usize {
        self.readout.n_classes
    }
    pub fn gate_count(&self) -> usize {
        self.circuit.gate_count()
    }
    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.circuit.n_params() {
            return Err(Error::DimensionMismatch {
                expected: self.circuit.n_params(),
                found: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    /// Same structure with the given initialization seed.
    pub fn reinitialized(&self, seed: u64) -> Result<Self> {
        if self.custom {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let mut m = self.clone();
            m.params = (0..m.params.len()).map(|_| rng.random_range(0.0..TAU)).collect();
            return Ok(m);
        }
        build_model(self.arch, self.n_qubits(), self.depth, self.n_classes(), seed)
    }

    /// `U_Θ |input>`
    pub fn forward(&self, input: &StateVector) -> Result<StateVector> {
        apply_circuit(input, &self.circuit, &self.params)
    }

    /// Class probabilities read from a model output state.
    pub fn predict_probs(&self, output: &StateVector) -> Result<Vec<f64>> {
        if output.n_qubits() != self.n_qubits() {
            return Err(Error::DimensionMismatch {
                expected: self.n_qubits(),
                found: output.n_qubits(),
            });
        }
        self.probs_raw(output.amplitudes()).map(|(p, _)| p)
    }

    /// `(probs, restricted mass)` for raw amplitudes.
    pub(crate) fn probs_raw(&self, amps: &[Complex64]) -> Result<(Vec<f64>, f64)> {
        let c = self.n_classes();
        let mut mass = vec![0.0; c];
        let n = self.n_qubits();
        for (i, a) in amps.iter().enumerate() {
            let o = self.readout.outcome_of(i, n);
            if o < c {
                mass[o] += a.norm_sqr();
            }
        }
        let total: f64 = mass.iter().sum();
        if total < 1e-12 {
            return Err(Error::DegenerateReadout { mass: total });
        }
        mass.iter_mut().for_each(|m| *m /= total);
        Ok((mass, total))
    }

    /// `∂f/∂y*` for a function `f` of the class probabilities, given `∂f/∂p`.
    pub(crate) fn readout_cotangent(&self, amps: &[Complex64], probs: &[f64], total: f64, dprobs: &[f64]) -> Vec<Complex64> {
        let c = self.n_classes();
        let mean: f64 = probs.iter().zip(dprobs).map(|(p, d)| p * d).sum();
        // ∂p_d/∂m_c = (δ_dc − p_d)/M
        let per_class: Vec<f64> = dprobs.iter().map(|d| (d - mean) / total).collect();
        let n = self.n_qubits();
        amps.iter()
            .enumerate()
            .map(|(i, a)| {
                let o = self.readout.outcome_of(i, n);
                if o < c {
                    a * per_class[o]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect()
    }

    pub fn predict_label(&self, input: &StateVector) -> Result<usize> {
        let out = self.forward(input)?;
        Ok(argmax(&self.predict_probs(&out)?))
    }

    /// Serializes the structural recipe and the exact parameter vector.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        if self.custom {
            return Err(Error::InvalidArgument(
                "only models produced by build_model can be checkpointed".into(),
            ));
        }
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            arch: self.arch,
            n_qubits: self.n_qubits(),
            depth: self.depth,
            seed: self.seed,
            readout: self.readout.clone(),
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut model = build_model(ck.arch, ck.n_qubits, ck.depth, ck.readout.n_classes, ck.seed)?;
        ck.readout.validate(ck.n_qubits)?;
        model.readout = ck.readout.clone();
        model.set_params(ck.params.clone())?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint()?)?;
        std::fs::write(path.as_ref(), json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }
}

pub const CHECKPOINT_FORMAT: &str = "quantest-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model record. Parameters are written in shortest round-trip decimal
/// form, so save/load is bit-exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub n_qubits: usize,
    pub depth: usize,
    pub seed: u64,
    pub readout: ReadoutScheme,
    pub params: Vec<f64>,
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy `−ln(p[label] + 1e-12)`.
pub fn loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::InvalidLabel {
            label,
            n_classes: probs.len(),
        });
    }
    Ok(-(probs[label] + LOSS_EPS).ln())
}

pub(crate) const LOSS_EPS: f64 = 1e-12;
