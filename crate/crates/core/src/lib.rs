//! Entanglement-guided adversarial test generation for quantum neural network
//! classifiers, on a dense statevector simulator.
//!
//! Qubit 0 is the most significant bit of a basis index throughout.

pub mod attack;
pub mod data;
pub mod entanglement;
pub mod error;
pub mod metrics;
pub mod models;
pub mod sampling;
pub mod statevec;
pub mod train;

pub use attack::{AdversarialRecord, AttackConfig, CampaignSummary, Method, NoiseConfig, Outcome, Strategy};
pub use data::{Dataset, Image, Sample, TaskSpec};
pub use entanglement::{mw_measure, qea, qea_term, QeaConfig};
pub use error::{Error, Result};
pub use metrics::{Combine, SimilarityThresholds};
pub use models::{build_model, Arch, QnnModel, ReadoutScheme};
pub use sampling::ShotConfig;
pub use statevec::{apply_circuit, apply_gate, Circuit, GateKind, GateOp, StateVector};
pub use train::{EpochLog, Optimizer, TrainConfig};
