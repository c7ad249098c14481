//! Gradient training of model parameters on encoded datasets.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{argmax, QnnModel, LOSS_EPS};
use crate::statevec::Prim;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMethod {
    Adjoint,
    ParameterShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub gradient: GradientMethod,
    /// Drives minibatch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
            gradient: GradientMethod::Adjoint,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be at least 1".into()));
        }
        // lr = 0 is allowed as a no-op run
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
}

fn check_sample(model: &QnnModel, s: &Sample) -> Result<()> {
    if s.state.n_qubits() != model.n_qubits() {
        return Err(Error::DimensionMismatch {
            expected: model.n_qubits(),
            found: s.state.n_qubits(),
        });
    }
    if s.label >= model.n_classes() {
        return Err(Error::InvalidLabel {
            label: s.label,
            n_classes: model.n_classes(),
        });
    }
    Ok(())
}

/// `(loss, correct, ∂loss/∂params)` for one sample via the adjoint sweep.
fn sample_gradient(model: &QnnModel, s: &Sample) -> Result<(f64, bool, Vec<f64>)> {
    check_sample(model, s)?;
    let mut out = s.state.amplitudes().to_vec();
    model.circuit().run(&mut out, model.params());
    let (probs, total) = model.probs_raw(&out)?;
    let mut dprobs = vec![0.0; probs.len()];
    dprobs[s.label] = -1.0 / (probs[s.label] + LOSS_EPS);
    let cot = model.readout_cotangent(&out, &probs, total, &dprobs);
    let (grad, _) = model.circuit().backprop(model.params(), &out, &cot);
    let loss = -(probs[s.label] + LOSS_EPS).ln();
    Ok((loss, argmax(&probs) == s.label, grad))
}

/// Unnormalized class masses with one primitive's angle offset.
fn masses_shifted(model: &QnnModel, s: &Sample, shift: (usize, f64)) -> Vec<f64> {
    let mut out = s.state.amplitudes().to_vec();
    model.circuit().run_shifted(&mut out, model.params(), Some(shift));
    let mut m = vec![0.0; model.n_classes()];
    for (i, a) in out.iter().enumerate() {
        let o = model.readout().outcome_of(i, model.n_qubits());
        if o < m.len() {
            m[o] += a.norm_sqr();
        }
    }
    m
}

fn mean_of(rows: Vec<(f64, bool, Vec<f64>)>, n_params: usize) -> (f64, f64, Vec<f64>) {
    let n = rows.len() as f64;
    let mut grad = vec![0.0; n_params];
    let (mut loss, mut hits) = (0.0, 0usize);
    // fixed-order reduction keeps results independent of scheduling
    for (l, ok, g) in rows {
        loss += l;
        hits += ok as usize;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, hits as f64 / n, grad)
}

fn batch_stats(model: &QnnModel, batch: &[Sample]) -> Result<(f64, f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let rows = batch
        .par_iter()
        .map(|s| sample_gradient(model, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(rows, model.param_count()))
}

/// Gradient of the mean cross-entropy over `batch`, by adjoint differentiation.
pub fn param_gradient(model: &QnnModel, batch: &[Sample]) -> Result<Vec<f64>> {
    batch_stats(model, batch).map(|(_, _, g)| g)
}

/// As [`param_gradient`], by the parameter-shift rule applied to the class
/// masses (which are expectation values), chained through the readout and the
/// loss. Single-qubit rotations use two terms at `±π/2`; controlled ones use
/// four terms at `±π/2, ±3π/2`, since `|1><1| ⊗ P` has three eigenvalues.
pub fn param_gradient_shift(model: &QnnModel, batch: &[Sample]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let c_plus = (SQRT_2 + 1.0) / (4.0 * SQRT_2);
    let c_minus = (SQRT_2 - 1.0) / (4.0 * SQRT_2);
    let prims = model.circuit().prims();
    let per_sample = batch
        .par_iter()
        .map(|s| {
            check_sample(model, s)?;
            let mut out = s.state.amplitudes().to_vec();
            model.circuit().run(&mut out, model.params());
            let (probs, total) = model.probs_raw(&out)?;
            // ∂L/∂m_c = (∂L/∂p_c − Σ_d p_d ∂L/∂p_d) / M
            let dl_dp = -1.0 / (probs[s.label] + LOSS_EPS);
            let per_class: Vec<f64> = (0..probs.len())
                .map(|c| (if c == s.label { dl_dp } else { 0.0 } - probs[s.label] * dl_dp) / total)
                .collect();
            let dot = |m: Vec<f64>| m.iter().zip(&per_class).map(|(a, b)| a * b).sum::<f64>();
            let f = |k: usize, d: f64| dot(masses_shifted(model, s, (k, d)));
            let mut grad = vec![0.0; model.param_count()];
            for (k, prim) in prims.iter().enumerate() {
                match prim {
                    Prim::Rot { slot, .. } => grad[*slot] += (f(k, FRAC_PI_2) - f(k, -FRAC_PI_2)) / 2.0,
                    Prim::CRot { slot, .. } => {
                        grad[*slot] += c_plus * (f(k, FRAC_PI_2) - f(k, -FRAC_PI_2))
                            - c_minus * (f(k, 1.5 * PI) - f(k, -1.5 * PI))
                    }
                    _ => {}
                }
            }
            Ok((0.0, false, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_of(per_sample, model.param_count()).2)
}

/// Mean cross-entropy and accuracy over a set.
pub fn evaluate(model: &QnnModel, set: &[Sample]) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let rows = set
        .par_iter()
        .map(|s| {
            check_sample(model, s)?;
            let probs = model.predict_probs(&model.forward(&s.state)?)?;
            Ok((-(probs[s.label] + LOSS_EPS).ln(), argmax(&probs) == s.label))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let loss = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = rows.iter().filter(|r| r.1).count() as f64 / n;
    Ok((loss, acc))
}

pub fn evaluate_accuracy(model: &QnnModel, set: &[Sample]) -> Result<f64> {
    evaluate(model, set).map(|(_, acc)| acc)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Minibatch training. Each epoch reshuffles the set, takes one optimizer step
/// per batch, then logs loss/accuracy over the whole training set and, when
/// `testset` is non-empty, test accuracy.
pub fn train(model: &QnnModel, trainset: &[Sample], testset: &[Sample], cfg: &TrainConfig) -> Result<(QnnModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if trainset.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for s in trainset.iter().chain(testset) {
        check_sample(model, s)?;
    }
    let mut model = model.clone();
    let mut params = model.params().to_vec();
    let mut adam = Adam::new(params.len());
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..trainset.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| trainset[i].clone()).collect();
            let grad = match cfg.gradient {
                GradientMethod::Adjoint => param_gradient(&model, &batch)?,
                GradientMethod::ParameterShift => param_gradient_shift(&model, &batch)?,
            };
            match cfg.optimizer {
                Optimizer::Sgd => params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= cfg.learning_rate * g),
                Optimizer::Adam => adam.step(&mut params, &grad, cfg.learning_rate),
            }
            model.set_params(params.clone())?;
        }
        let (train_loss, train_acc) = evaluate(&model, trainset)?;
        let test_acc = if testset.is_empty() {
            None
        } else {
            Some(evaluate_accuracy(&model, testset)?)
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            train_acc,
            test_acc,
        });
    }
    Ok((model, log))
}

/// Trains from the model's original initialization on `trainset ++ adversarial`.
pub fn retrain_augmented(
    model: &QnnModel,
    trainset: &[Sample],
    adversarial: &[Sample],
    testset: &[Sample],
    cfg: &TrainConfig,
) -> Result<(QnnModel, Vec<EpochLog>)> {
    let fresh = model.reinitialized(model.seed())?;
    let union: Vec<Sample> = trainset.iter().chain(adversarial).cloned().collect();
    train(&fresh, &union, testset, cfg)
}
