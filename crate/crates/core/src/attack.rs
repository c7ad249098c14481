//! Entanglement-guided adversarial generation and the coherent-noise baseline.
//!
//! The joint objective on an input state `x` with original prediction `y` is
//!
//! ```text
//! J(x) = w · (k_out · Q(U x) − k_in · Q(x)) + λ · f(p(U x), y)
//! ```
//!
//! where `(k_out, k_in)` is `(k, 1)` or the balanced `(2k/(k+1), 2/(k+1))`,
//! and `f` is the strategy term. Each step moves every amplitude along its
//! complex gradient and renormalizes: `x ← (x + r·G) / ‖x + r·G‖`.
//!
//! A literal reading of the step as `x + (x + G)` renormalizes to the
//! direction of `x + G/2`, so it is the same update at half the step size.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::entanglement::{mw_cotangent, mw_raw, qea_term, QeaConfig};
use crate::error::{Error, Result};
use crate::metrics::{fidelity, SimilarityThresholds};
use crate::models::{QnnModel, LOSS_EPS};
use crate::statevec::{l2_norm, Circuit, GateOp, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Raise the cross-entropy of the original class.
    Fgsm,
    /// Raise the other classes' probability mass over the original's.
    Dlfuzz,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Fgsm => "fgsm",
            Strategy::Dlfuzz => "dlfuzz",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(Strategy::Fgsm),
            "dlfuzz" => Ok(Strategy::Dlfuzz),
            other => Err(Error::InvalidArgument(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub strategy: Strategy,
    /// Weight of the entanglement term.
    pub w: f64,
    /// Output-entanglement weight inside the entanglement term.
    pub k: f64,
    /// Weight of the strategy term.
    pub strategy_weight: f64,
    /// Step size.
    pub r: f64,
    pub max_iters: usize,
    /// `None` accepts any label flip.
    pub thresholds: Option<SimilarityThresholds>,
    pub balanced_qea: bool,
    /// Step along the componentwise sign of the gradient instead.
    pub gradient_sign: bool,
    /// Stop a seed as soon as an iterate fails the similarity gate.
    pub early_abort: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dlfuzz,
            w: 1.0,
            k: 1.0,
            strategy_weight: 1.0,
            r: 0.05,
            max_iters: 10,
            thresholds: Some(SimilarityThresholds::default()),
            balanced_qea: false,
            gradient_sign: false,
            early_abort: false,
        }
    }
}

impl AttackConfig {
    pub fn qea(&self) -> QeaConfig {
        QeaConfig {
            k: self.k,
            balanced: self.balanced_qea,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what} out of range: {v}")));
        if !(self.w >= 0.0 && self.w.is_finite()) {
            return bad("w", self.w);
        }
        if !(self.strategy_weight >= 0.0 && self.strategy_weight.is_finite()) {
            return bad("strategy_weight", self.strategy_weight);
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad("r", self.r);
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        self.qea().validate()?;
        if let Some(t) = &self.thresholds {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Standard deviation of every rotation angle, in radians.
    pub sigma: f64,
    pub max_iters: usize,
    pub thresholds: Option<SimilarityThresholds>,
    pub early_abort: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: 0.02,
            max_iters: 10,
            thresholds: Some(SimilarityThresholds::default()),
            early_abort: false,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma out of range: {}", self.sigma)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if let Some(t) = &self.thresholds {
            t.validate()?;
        }
        Ok(())
    }
}

/// How a seed's run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Label flipped and the similarity gate passed.
    Accepted,
    /// Label flipped but the candidate failed the similarity gate.
    Dissimilar,
    /// `max_iters` ran out without a flip.
    Exhausted,
    /// Early abort: an iterate failed the similarity gate before any flip.
    Abandoned,
    /// The step cancelled the state vector.
    Degenerate,
}

/// Per-seed result with telemetry.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialRecord {
    pub seed_id: usize,
    /// Dataset label of the seed.
    pub label: usize,
    pub original_state: StateVector,
    pub final_state: StateVector,
    pub y_ori: usize,
    pub y_adv: usize,
    pub iterations_used: usize,
    pub fidelity: f64,
    pub trace_distance: f64,
    /// Signed entanglement term of the final state (balanced if configured).
    pub qea_term_final: f64,
    pub accepted: bool,
    pub outcome: Outcome,
    /// Largest `|‖x‖ − 1|` over every state fed to the model.
    pub max_norm_deviation: f64,
    /// Joint objective at the seed and after each step (empty for noise runs).
    pub objective_trace: Vec<f64>,
}

impl AdversarialRecord {
    /// The final state carrying the seed's dataset label.
    pub fn to_sample(&self) -> Sample {
        Sample {
            state: self.final_state.clone(),
            label: self.label,
        }
    }
}

/// `λ`-free strategy term `f`.
pub fn adversarial_term(probs: &[f64], y_ori: usize, strategy: Strategy) -> Result<f64> {
    if y_ori >= probs.len() {
        return Err(Error::InvalidLabel {
            label: y_ori,
            n_classes: probs.len(),
        });
    }
    Ok(match strategy {
        Strategy::Fgsm => -(probs[y_ori] + LOSS_EPS).ln(),
        Strategy::Dlfuzz => {
            let others: f64 = probs.iter().enumerate().filter(|(c, _)| *c != y_ori).map(|(_, p)| p).sum();
            others - probs[y_ori]
        }
    })
}

fn adversarial_dprobs(probs: &[f64], y_ori: usize, strategy: Strategy) -> Vec<f64> {
    match strategy {
        Strategy::Fgsm => {
            let mut d = vec![0.0; probs.len()];
            d[y_ori] = -1.0 / (probs[y_ori] + LOSS_EPS);
            d
        }
        Strategy::Dlfuzz => (0..probs.len()).map(|c| if c == y_ori { -1.0 } else { 1.0 }).collect(),
    }
}

struct Evaluation {
    objective: f64,
    /// `∂J/∂x*`
    cotangent: Option<Vec<Complex64>>,
}

/// Objective (and optionally its cotangent) on raw amplitudes. No norm check,
/// so finite-difference probes may leave the unit sphere.
fn evaluate_raw(model: &QnnModel, x: &[Complex64], y_ori: usize, cfg: &AttackConfig, with_grad: bool) -> Result<Evaluation> {
    let n = model.n_qubits();
    let mut out = x.to_vec();
    model.circuit().run(&mut out, model.params());
    let (probs, total) = model.probs_raw(&out)?;
    let (k_out, k_in) = cfg.qea().coefficients();
    let mut objective = cfg.strategy_weight * adversarial_term(&probs, y_ori, cfg.strategy)?;
    if cfg.w != 0.0 {
        objective += cfg.w * (k_out * mw_raw(&out, n) - k_in * mw_raw(x, n));
    }
    if !with_grad {
        return Ok(Evaluation {
            objective,
            cotangent: None,
        });
    }
    let dprobs: Vec<f64> = adversarial_dprobs(&probs, y_ori, cfg.strategy)
        .into_iter()
        .map(|d| d * cfg.strategy_weight)
        .collect();
    let mut cot = model.readout_cotangent(&out, &probs, total, &dprobs);
    if cfg.w != 0.0 {
        for (c, m) in cot.iter_mut().zip(mw_cotangent(&out, n)) {
            *c += cfg.w * k_out * m;
        }
    }
    // input cotangent is U† applied to the output cotangent
    model.circuit().run_inverse(&mut cot, model.params());
    if cfg.w != 0.0 {
        for (c, m) in cot.iter_mut().zip(mw_cotangent(x, n)) {
            *c -= cfg.w * k_in * m;
        }
    }
    Ok(Evaluation {
        objective,
        cotangent: Some(cot),
    })
}

fn check_input(model: &QnnModel, state: &StateVector, y_ori: usize) -> Result<()> {
    if state.n_qubits() != model.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: model.n_qubits(),
            found: state.n_qubits(),
        });
    }
    if y_ori >= model.n_classes() {
        return Err(Error::InvalidLabel {
            label: y_ori,
            n_classes: model.n_classes(),
        });
    }
    let norm = state.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::NotNormalized { norm });
    }
    Ok(())
}

pub fn joint_objective(model: &QnnModel, state: &StateVector, y_ori: usize, cfg: &AttackConfig) -> Result<f64> {
    check_input(model, state, y_ori)?;
    Ok(evaluate_raw(model, state.amplitudes(), y_ori, cfg, false)?.objective)
}

/// [`joint_objective`] extended to arbitrary amplitude vectors (the readout
/// renormalizes, the entanglement term is a polynomial). This is the function
/// [`input_gradient`] differentiates.
pub fn joint_objective_ambient(model: &QnnModel, amps: &[Complex64], y_ori: usize, cfg: &AttackConfig) -> Result<f64> {
    if amps.len() != 1usize << model.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: 1usize << model.n_qubits(),
            found: amps.len(),
        });
    }
    if y_ori >= model.n_classes() {
        return Err(Error::InvalidLabel {
            label: y_ori,
            n_classes: model.n_classes(),
        });
    }
    Ok(evaluate_raw(model, amps, y_ori, cfg, false)?.objective)
}

/// Gradient of [`joint_objective`] with respect to `(Re x_0, Im x_0, Re x_1, …)`,
/// taken in the ambient space (no projection onto the unit sphere).
pub fn input_gradient(model: &QnnModel, state: &StateVector, y_ori: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    check_input(model, state, y_ori)?;
    let cot = evaluate_raw(model, state.amplitudes(), y_ori, cfg, true)?
        .cotangent
        .expect("requested");
    Ok(cot.iter().flat_map(|g| [2.0 * g.re, 2.0 * g.im]).collect())
}

/// `normalize(x + r·G)` with `G` read as interleaved `(re, im)` pairs.
pub fn perturbation_op(state: &StateVector, grad: &[f64], r: f64) -> Result<StateVector> {
    if grad.len() != 2 * state.dim() {
        return Err(Error::DimensionMismatch {
            expected: 2 * state.dim(),
            found: grad.len(),
        });
    }
    let amps: Vec<Complex64> = state
        .amplitudes()
        .iter()
        .zip(grad.chunks_exact(2))
        .map(|(a, g)| a + r * Complex64::new(g[0], g[1]))
        .collect();
    let norm = l2_norm(&amps);
    if !(norm > 1e-12) || !norm.is_finite() {
        return Err(Error::DegenerateStep);
    }
    StateVector::normalized(state.n_qubits(), amps)
}

fn signum0(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v.signum()
    }
}

struct Tracker<'a> {
    model: &'a QnnModel,
    original: &'a StateVector,
    y_ori: usize,
    thresholds: Option<SimilarityThresholds>,
    early_abort: bool,
    max_norm_deviation: f64,
}

enum Step {
    Continue,
    Stop(Outcome, usize),
}

impl Tracker<'_> {
    fn observe(&mut self, x: &StateVector) -> Result<Step> {
        self.max_norm_deviation = self.max_norm_deviation.max((x.norm() - 1.0).abs());
        let y = self.model.predict_label(x)?;
        let similar = match &self.thresholds {
            None => true,
            Some(t) => {
                let f = fidelity(self.original, x)?;
                t.accepts(f, (1.0 - f).sqrt())
            }
        };
        Ok(if y != self.y_ori {
            Step::Stop(if similar { Outcome::Accepted } else { Outcome::Dissimilar }, y)
        } else if self.early_abort && !similar {
            Step::Stop(Outcome::Abandoned, y)
        } else {
            Step::Continue
        })
    }

    fn finish(
        self,
        seed_id: usize,
        seed: &Sample,
        final_state: StateVector,
        y_adv: usize,
        iterations_used: usize,
        outcome: Outcome,
        qea: &QeaConfig,
        objective_trace: Vec<f64>,
    ) -> Result<AdversarialRecord> {
        let f = fidelity(self.original, &final_state)?;
        let out = self.model.forward(&final_state)?;
        Ok(AdversarialRecord {
            seed_id,
            label: seed.label,
            original_state: self.original.clone(),
            qea_term_final: qea_term(&final_state, &out, qea)?,
            final_state,
            y_ori: self.y_ori,
            y_adv,
            iterations_used,
            fidelity: f,
            trace_distance: (1.0 - f).sqrt(),
            accepted: outcome == Outcome::Accepted,
            outcome,
            max_norm_deviation: self.max_norm_deviation,
            objective_trace,
        })
    }
}

/// Gradient ascent on the joint objective from one seed. Stops at the first
/// label flip (accepted iff the similarity gate passes), or after
/// `max_iters` steps.
pub fn generate_adversarial(model: &QnnModel, seed_id: usize, seed: &Sample, cfg: &AttackConfig) -> Result<AdversarialRecord> {
    cfg.validate()?;
    let y_ori = model.predict_label(&seed.state)?;
    check_input(model, &seed.state, y_ori)?;
    let mut tracker = Tracker {
        model,
        original: &seed.state,
        y_ori,
        thresholds: cfg.thresholds,
        early_abort: cfg.early_abort,
        max_norm_deviation: (seed.state.norm() - 1.0).abs(),
    };
    let mut x = seed.state.clone();
    let mut trace = vec![evaluate_raw(model, x.amplitudes(), y_ori, cfg, false)?.objective];
    let mut y_adv = y_ori;
    let mut outcome = Outcome::Exhausted;
    let mut used = 0;
    for it in 1..=cfg.max_iters {
        let mut g = input_gradient(model, &x, y_ori, cfg)?;
        if cfg.gradient_sign {
            g.iter_mut().for_each(|v| *v = signum0(*v));
        }
        let next = match perturbation_op(&x, &g, cfg.r) {
            Ok(next) => next,
            Err(Error::DegenerateStep) => {
                outcome = Outcome::Degenerate;
                break;
            }
            Err(e) => return Err(e),
        };
        x = next;
        used = it;
        trace.push(evaluate_raw(model, x.amplitudes(), y_ori, cfg, false)?.objective);
        match tracker.observe(&x)? {
            Step::Continue => {}
            Step::Stop(o, y) => {
                outcome = o;
                y_adv = y;
                break;
            }
        }
    }
    tracker.finish(seed_id, seed, x, y_adv, used, outcome, &cfg.qea(), trace)
}

/// Random baseline: each iteration applies a `U3` with independent
/// `Normal(0, σ²)` angles to every qubit, then re-checks the label.
pub fn random_coherent_noise(
    model: &QnnModel,
    seed_id: usize,
    seed: &Sample,
    cfg: &NoiseConfig,
    rng: &mut ChaCha20Rng,
) -> Result<AdversarialRecord> {
    cfg.validate()?;
    let y_ori = model.predict_label(&seed.state)?;
    check_input(model, &seed.state, y_ori)?;
    let n = model.n_qubits();
    let layer = Circuit::from_gates(n, (0..n).map(|q| GateOp::u3(q, [3 * q, 3 * q + 1, 3 * q + 2])).collect())?;
    let normal = Normal::new(0.0, cfg.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut tracker = Tracker {
        model,
        original: &seed.state,
        y_ori,
        thresholds: cfg.thresholds,
        early_abort: cfg.early_abort,
        max_norm_deviation: (seed.state.norm() - 1.0).abs(),
    };
    let mut x = seed.state.clone();
    let mut y_adv = y_ori;
    let mut outcome = Outcome::Exhausted;
    let mut used = 0;
    for it in 1..=cfg.max_iters {
        let angles: Vec<f64> = (0..layer.n_params()).map(|_| normal.sample(rng)).collect();
        x = crate::statevec::apply_circuit(&x, &layer, &angles)?;
        used = it;
        match tracker.observe(&x)? {
            Step::Continue => {}
            Step::Stop(o, y) => {
                outcome = o;
                y_adv = y;
                break;
            }
        }
    }
    tracker.finish(seed_id, seed, x, y_adv, used, outcome, &QeaConfig::default(), Vec::new())
}

/// What a campaign runs on every seed.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    Quantest(AttackConfig),
    Noise(NoiseConfig),
}

impl Method {
    fn qea(&self) -> QeaConfig {
        match self {
            Method::Quantest(c) => c.qea(),
            Method::Noise(_) => QeaConfig::default(),
        }
    }
}

/// Aggregates over a campaign. Similarity and entanglement means cover
/// accepted records only and are `None` when nothing was accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub n_seeds: usize,
    pub n_accepted: usize,
    pub gen_rate: f64,
    pub afm: Option<f64>,
    pub atd: Option<f64>,
    /// Mean `|k·Q(Ux) − Q(x)|` (signed balanced term when balanced).
    pub mean_qea: Option<f64>,
    pub mean_iterations: Option<f64>,
}

pub fn summarize(records: &[AdversarialRecord], qea: &QeaConfig) -> Result<CampaignSummary> {
    if records.is_empty() {
        return Err(Error::Empty("record list"));
    }
    let accepted: Vec<&AdversarialRecord> = records.iter().filter(|r| r.accepted).collect();
    let mean = |f: &dyn Fn(&AdversarialRecord) -> f64| {
        (!accepted.is_empty()).then(|| accepted.iter().map(|r| f(r)).sum::<f64>() / accepted.len() as f64)
    };
    Ok(CampaignSummary {
        n_seeds: records.len(),
        n_accepted: accepted.len(),
        gen_rate: crate::metrics::gen_rate(accepted.len(), records.len())?,
        afm: mean(&|r| r.fidelity),
        atd: mean(&|r| r.trace_distance),
        mean_qea: mean(&|r| if qea.balanced { r.qea_term_final } else { r.qea_term_final.abs() }),
        mean_iterations: mean(&|r| r.iterations_used as f64),
    })
}

/// Runs `method` on every seed in parallel. Seed `i` draws from stream `i` of
/// a generator keyed by `rng_seed`, so results do not depend on scheduling.
pub fn run_campaign(model: &QnnModel, seeds: &[Sample], method: &Method, rng_seed: u64) -> Result<(Vec<AdversarialRecord>, CampaignSummary)> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed set"));
    }
    match method {
        Method::Quantest(c) => c.validate()?,
        Method::Noise(c) => c.validate()?,
    }
    let records = seeds
        .par_iter()
        .enumerate()
        .map(|(i, s)| match method {
            Method::Quantest(c) => generate_adversarial(model, i, s, c),
            Method::Noise(c) => {
                let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
                rng.set_stream(i as u64);
                random_coherent_noise(model, i, s, c, &mut rng)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records, &method.qea())?;
    Ok((records, summary))
}

/// JSON-lines form of a record. States are interleaved `(re, im)` pairs and
/// present only when dumped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordLine {
    pub seed_id: usize,
    pub label: usize,
    pub y_ori: usize,
    pub y_adv: usize,
    pub iterations_used: usize,
    pub fidelity: f64,
    pub trace_distance: f64,
    pub qea_term_final: f64,
    pub accepted: bool,
    pub outcome: Outcome,
    pub max_norm_deviation: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_state: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_state: Option<Vec<f64>>,
}

fn interleave(s: &StateVector) -> Vec<f64> {
    s.amplitudes().iter().flat_map(|a| [a.re, a.im]).collect()
}

fn deinterleave(v: &[f64]) -> Result<StateVector> {
    let dim = v.len() / 2;
    if v.len() % 2 != 0 || !dim.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("{} reals do not form a state vector", v.len())));
    }
    let amps = v.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    StateVector::from_amplitudes(dim.trailing_zeros() as usize, amps)
}

impl RecordLine {
    pub fn from_record(r: &AdversarialRecord, dump_states: bool) -> Self {
        Self {
            seed_id: r.seed_id,
            label: r.label,
            y_ori: r.y_ori,
            y_adv: r.y_adv,
            iterations_used: r.iterations_used,
            fidelity: r.fidelity,
            trace_distance: r.trace_distance,
            qea_term_final: r.qea_term_final,
            accepted: r.accepted,
            outcome: r.outcome,
            max_norm_deviation: r.max_norm_deviation,
            objective_trace: r.objective_trace.clone(),
            original_state: dump_states.then(|| interleave(&r.original_state)),
            final_state: dump_states.then(|| interleave(&r.final_state)),
        }
    }

    /// Rebuilds the full record; fails if the states were not dumped.
    pub fn to_record(&self) -> Result<AdversarialRecord> {
        let (Some(orig), Some(fin)) = (&self.original_state, &self.final_state) else {
            return Err(Error::InvalidArgument(format!(
                "record {} carries no states (generate with state dumping enabled)",
                self.seed_id
            )));
        };
        Ok(AdversarialRecord {
            seed_id: self.seed_id,
            label: self.label,
            original_state: deinterleave(orig)?,
            final_state: deinterleave(fin)?,
            y_ori: self.y_ori,
            y_adv: self.y_adv,
            iterations_used: self.iterations_used,
            fidelity: self.fidelity,
            trace_distance: self.trace_distance,
            qea_term_final: self.qea_term_final,
            accepted: self.accepted,
            outcome: self.outcome,
            max_norm_deviation: self.max_norm_deviation,
            objective_trace: self.objective_trace.clone(),
        })
    }
}
