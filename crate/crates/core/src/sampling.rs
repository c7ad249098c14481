//! Finite-shot readout and its Wilson-interval cost model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{AdversarialRecord, Outcome};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{argmax, QnnModel};
use crate::statevec::{marginal, StateVector};

/// `z` for a two-sided 99% interval.
pub const Z_99: f64 = 2.58;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShotConfig {
    pub shots: u64,
    pub z: f64,
    pub seed: u64,
}

impl Default for ShotConfig {
    fn default() -> Self {
        Self {
            shots: 1000,
            z: Z_99,
            seed: 0,
        }
    }
}

impl ShotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 || !(self.z > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need shots >= 1 and z > 0, got {} and {}",
                self.shots, self.z
            )));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(self.seed)
    }
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("p in (0, 1)").sample(rng)
    }
}

/// Mean of `shots` Bernoulli(`p`) draws.
pub fn sample_estimate<R: Rng + ?Sized>(p: f64, shots: u64, rng: &mut R) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || shots == 0 {
        return Err(Error::InvalidArgument(format!("need p in [0, 1] and shots >= 1, got {p}, {shots}")));
    }
    Ok(binomial(shots, p, rng) as f64 / shots as f64)
}

/// Wilson score half-width
/// `z/(1 + z²/N) · √(p̄(1 − p̄)/N + z²/(4N²))`.
pub fn wilson_epsilon(p_bar: f64, shots: u64, z: f64) -> f64 {
    let n = shots as f64;
    z / (1.0 + z * z / n) * (p_bar * (1.0 - p_bar) / n + z * z / (4.0 * n * n)).sqrt()
}

/// Readout outcome distribution (all `2^width` outcomes) for an input.
fn readout_distribution(model: &QnnModel, input: &StateVector) -> Result<Vec<f64>> {
    let out = model.forward(input)?;
    Ok(marginal(out.amplitudes(), out.n_qubits(), &model.readout().qubits))
}

/// Multinomial counts via conditional binomials.
fn draw_counts<R: Rng + ?Sized>(dist: &[f64], shots: u64, rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0; dist.len()];
    let mut left = shots;
    let mut mass = 1.0;
    for (i, p) in dist.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == dist.len() {
            counts[i] = left;
            break;
        }
        let k = binomial(left, (p / mass).clamp(0.0, 1.0), rng);
        counts[i] = k;
        left -= k;
        mass -= p;
    }
    counts
}

fn label_from_counts(counts: &[u64], n_classes: usize) -> Result<usize> {
    let kept = &counts[..n_classes];
    if kept.iter().all(|&c| c == 0) {
        return Err(Error::DegenerateReadout { mass: 0.0 });
    }
    let as_f: Vec<f64> = kept.iter().map(|&c| c as f64).collect();
    Ok(argmax(&as_f))
}

/// Class decision from `shots` measurements of the readout qubits, with the
/// same renormalize-then-argmax rule as the exact readout.
pub fn shot_predict_label<R: Rng + ?Sized>(model: &QnnModel, input: &StateVector, shots: u64, rng: &mut R) -> Result<usize> {
    if shots == 0 {
        return Err(Error::InvalidArgument("shots must be at least 1".into()));
    }
    let dist = readout_distribution(model, input)?;
    label_from_counts(&draw_counts(&dist, shots, rng), model.n_classes())
}

/// Macro-averaged classification quality.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class precision/recall averaged over classes; a class never predicted
/// contributes precision 0.
pub fn quality(predicted: &[usize], truth: &[usize], n_classes: usize) -> Quality {
    let n = truth.len() as f64;
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64;
    let (mut precision, mut recall, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..n_classes {
        let tp = predicted.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count() as f64;
        let pred_c = predicted.iter().filter(|p| **p == c).count() as f64;
        let true_c = truth.iter().filter(|t| **t == c).count() as f64;
        let pc = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
        let rc = if true_c > 0.0 { tp / true_c } else { 0.0 };
        precision += pc;
        recall += rc;
        f1 += if pc + rc > 0.0 { 2.0 * pc * rc / (pc + rc) } else { 0.0 };
    }
    let k = n_classes as f64;
    Quality {
        accuracy: hits / n,
        precision: precision / k,
        recall: recall / k,
        f1: f1 / k,
    }
}

/// Quality under exact (infinite-shot) readout.
pub fn ideal_quality(model: &QnnModel, eval: &[Sample]) -> Result<Quality> {
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let predicted = eval
        .iter()
        .map(|s| model.predict_label(&s.state))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = eval.iter().map(|s| s.label).collect();
    Ok(quality(&predicted, &truth, model.n_classes()))
}

/// One row of the experiment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingRow {
    #[serde(rename = "N")]
    pub shots: u64,
    pub error_rate_mean: f64,
    pub error_rate_std: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Seeds that survived an attack without flipping: their last iterates sit
/// near the decision boundary.
pub fn boundary_seeds(records: &[AdversarialRecord]) -> Vec<StateVector> {
    records
        .iter()
        .filter(|r| r.outcome == Outcome::Exhausted)
        .map(|r| r.final_state.clone())
        .collect()
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// For each shot count: the rate at which shot readout disagrees with exact
/// readout on `seeds` (mean and sample std over `repeats`), and the mean
/// quality of shot readout on the labeled `eval` set.
///
/// Cell `(i, r)` of the grid draws from stream `i·2³² + r` of a generator
/// keyed by `rng_seed`.
pub fn sampling_experiment(
    model: &QnnModel,
    seeds: &[StateVector],
    eval: &[Sample],
    grid: &[u64],
    repeats: usize,
    rng_seed: u64,
) -> Result<Vec<SamplingRow>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed set"));
    }
    if eval.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if grid.is_empty() || repeats == 0 {
        return Err(Error::Empty("shot grid or repeat count"));
    }
    if grid.contains(&0) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("shot grid must be positive and strictly ascending".into()));
    }
    let c = model.n_classes();
    let seed_dists = seeds
        .iter()
        .map(|s| readout_distribution(model, s))
        .collect::<Result<Vec<_>>>()?;
    let ideal = seeds
        .iter()
        .map(|s| model.predict_label(s))
        .collect::<Result<Vec<_>>>()?;
    let eval_dists = eval
        .iter()
        .map(|s| readout_distribution(model, &s.state))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = eval.iter().map(|s| s.label).collect();

    let cells: Vec<(usize, usize)> = (0..grid.len()).flat_map(|i| (0..repeats).map(move |r| (i, r))).collect();
    let results = cells
        .par_iter()
        .map(|&(i, r)| {
            let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
            rng.set_stream(((i as u64) << 32) | r as u64);
            let shots = grid[i];
            let mut wrong = 0usize;
            for (d, y) in seed_dists.iter().zip(&ideal) {
                wrong += (label_from_counts(&draw_counts(d, shots, &mut rng), c)? != *y) as usize;
            }
            let predicted = eval_dists
                .iter()
                .map(|d| label_from_counts(&draw_counts(d, shots, &mut rng), c))
                .collect::<Result<Vec<_>>>()?;
            Ok((wrong as f64 / seeds.len() as f64, quality(&predicted, &truth, c)))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &shots)| {
            let block = &results[i * repeats..(i + 1) * repeats];
            let rates: Vec<f64> = block.iter().map(|b| b.0).collect();
            let (error_rate_mean, error_rate_std) = mean_std(&rates);
            let avg = |f: fn(&Quality) -> f64| block.iter().map(|b| f(&b.1)).sum::<f64>() / repeats as f64;
            SamplingRow {
                shots,
                error_rate_mean,
                error_rate_std,
                accuracy: avg(|q| q.accuracy),
                precision: avg(|q| q.precision),
                recall: avg(|q| q.recall),
                f1: avg(|q| q.f1),
            }
        })
        .collect())
}
