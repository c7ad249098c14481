use std::path::PathBuf;

use anyhow::Context;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use quantest::attack::{self, Method};
use quantest::data::{self, Sample};
use quantest::sampling;
use quantest::train::{self, evaluate_accuracy};
use quantest::{build_model, NoiseConfig, QnnModel};

use crate::config::{RunConfig, Split};
use crate::output::{self, SummaryRow};
use crate::UserError;

/// The task split used by every command; depends only on the task and seed.
fn load_task(cfg: &RunConfig) -> anyhow::Result<(Vec<Sample>, Vec<Sample>)> {
    let (images, labels) = cfg.task.dataset.load(&cfg.data_dir)?;
    let task = data::build_task(&cfg.task, &images, &labels, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    Ok(task)
}

fn load_model(cfg: &RunConfig) -> anyhow::Result<QnnModel> {
    let path = cfg
        .model
        .checkpoint
        .as_ref()
        .ok_or_else(|| UserError("no checkpoint given (--checkpoint or model.checkpoint)".into()))?;
    let model = QnnModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let (n, c) = (cfg.task.n_qubits(), cfg.task.classes.len());
    if model.n_qubits() != n || model.n_classes() != c {
        return Err(UserError(format!(
            "checkpoint {} is a {}-qubit {}-class model but task {} needs {n} qubits and {c} classes",
            path.display(),
            model.n_qubits(),
            model.n_classes(),
            cfg.task.name()
        ))
        .into());
    }
    Ok(model)
}

fn campaign_seeds(cfg: &RunConfig, train: Vec<Sample>, test: Vec<Sample>) -> Vec<Sample> {
    let mut seeds = match cfg.campaign.split {
        Split::Train => train,
        Split::Test => test,
    };
    if let Some(n) = cfg.campaign.n_seeds {
        seeds.truncate(n);
    }
    seeds
}

#[derive(Serialize)]
struct TrainReport {
    task: String,
    model: String,
    train_size: usize,
    test_size: usize,
    epochs: usize,
    train_accuracy: f64,
    test_accuracy: f64,
}

pub fn train(cfg: &RunConfig) -> anyhow::Result<()> {
    let (trainset, testset) = load_task(cfg)?;
    let init = build_model(cfg.model.arch, cfg.task.n_qubits(), cfg.depth(), cfg.task.classes.len(), cfg.model.seed)?;
    let (model, log) = train::train(&init, &trainset, &testset, &cfg.train)?;
    model.save(cfg.output_dir.join(output::MODEL))?;
    output::write_csv(&cfg.output_dir.join(output::TRAIN_LOG), &log)?;
    let report = TrainReport {
        task: cfg.task.name(),
        model: output::model_name(&model),
        train_size: trainset.len(),
        test_size: testset.len(),
        epochs: log.len(),
        train_accuracy: evaluate_accuracy(&model, &trainset)?,
        test_accuracy: evaluate_accuracy(&model, &testset)?,
    };
    output::write_json(&cfg.output_dir.join(output::REPORT), &report)?;
    println!(
        "{} on {}: test accuracy {:.4} after {} epochs",
        report.model, report.task, report.test_accuracy, report.epochs
    );
    Ok(())
}

pub fn attack(cfg: &RunConfig) -> anyhow::Result<()> {
    let model = load_model(cfg)?;
    let (trainset, testset) = load_task(cfg)?;
    let seeds = campaign_seeds(cfg, trainset, testset);
    let a = &cfg.attack;
    let (records, summary) = attack::run_campaign(&model, &seeds, &Method::Quantest(a.clone()), cfg.seed)?;
    output::write_records(&cfg.output_dir.join(output::RECORDS), &[(None, records)], cfg.campaign.dump_states)?;
    let row = SummaryRow::new(
        &model,
        cfg.task.name(),
        a.strategy.to_string(),
        Some((a.w, a.k, a.r)),
        a.thresholds.as_ref(),
        &summary,
    );
    output::write_csv(&cfg.output_dir.join(output::SUMMARY), &[row])?;
    println!(
        "{} seeds, {} accepted: Gen_Rate {:.4}",
        summary.n_seeds, summary.n_accepted, summary.gen_rate
    );
    Ok(())
}

pub fn noise(cfg: &RunConfig) -> anyhow::Result<()> {
    let model = load_model(cfg)?;
    let (trainset, testset) = load_task(cfg)?;
    let seeds = campaign_seeds(cfg, trainset, testset);
    let sigmas = if cfg.campaign.sigmas.is_empty() {
        vec![cfg.noise.sigma]
    } else {
        cfg.campaign.sigmas.clone()
    };
    let mut batches = Vec::new();
    let mut rows = Vec::new();
    for sigma in sigmas {
        let nc = NoiseConfig { sigma, ..cfg.noise.clone() };
        let (records, summary) = attack::run_campaign(&model, &seeds, &Method::Noise(nc), cfg.seed)?;
        rows.push(SummaryRow::new(
            &model,
            cfg.task.name(),
            format!("noise(sigma={sigma})"),
            None,
            cfg.noise.thresholds.as_ref(),
            &summary,
        ));
        println!("sigma {sigma}: Gen_Rate {:.4}", summary.gen_rate);
        batches.push((Some(sigma), records));
    }
    output::write_records(&cfg.output_dir.join(output::RECORDS), &batches, cfg.campaign.dump_states)?;
    output::write_csv(&cfg.output_dir.join(output::SUMMARY), &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct RetrainInput {
    path: PathBuf,
    records: usize,
    accepted: usize,
}

#[derive(Serialize)]
struct RetrainReport {
    task: String,
    model: String,
    inputs: Vec<RetrainInput>,
    n_adversarial: usize,
    before_accuracy: f64,
    after_accuracy: f64,
}

pub fn retrain(cfg: &RunConfig) -> anyhow::Result<()> {
    let model = load_model(cfg)?;
    let (trainset, testset) = load_task(cfg)?;
    let mut inputs = Vec::new();
    let mut adversarial = Vec::new();
    for path in &cfg.retrain.adversarial {
        let records = output::read_records(path)?;
        let accepted: Vec<Sample> = records.iter().filter(|r| r.accepted).map(|r| r.to_sample()).collect();
        if let Some(bad) = accepted.iter().find(|s| s.state.n_qubits() != model.n_qubits() || s.label >= model.n_classes()) {
            return Err(UserError(format!(
                "{}: record with {} qubits and label {} does not fit a {}-qubit {}-class model",
                path.display(),
                bad.state.n_qubits(),
                bad.label,
                model.n_qubits(),
                model.n_classes()
            ))
            .into());
        }
        inputs.push(RetrainInput {
            path: path.clone(),
            records: records.len(),
            accepted: accepted.len(),
        });
        adversarial.extend(accepted);
    }
    let before_accuracy = evaluate_accuracy(&model, &testset)?;
    let (retrained, log) = train::retrain_augmented(&model, &trainset, &adversarial, &testset, &cfg.train)?;
    retrained.save(cfg.output_dir.join(output::MODEL))?;
    output::write_csv(&cfg.output_dir.join(output::TRAIN_LOG), &log)?;
    let report = RetrainReport {
        task: cfg.task.name(),
        model: output::model_name(&retrained),
        inputs,
        n_adversarial: adversarial.len(),
        before_accuracy,
        after_accuracy: evaluate_accuracy(&retrained, &testset)?,
    };
    output::write_json(&cfg.output_dir.join(output::REPORT), &report)?;
    println!(
        "{} adversarial samples: clean test accuracy {:.4} -> {:.4}",
        report.n_adversarial, report.before_accuracy, report.after_accuracy
    );
    Ok(())
}

pub fn sampling(cfg: &RunConfig) -> anyhow::Result<()> {
    let model = load_model(cfg)?;
    let path = cfg
        .sampling
        .seeds
        .as_ref()
        .ok_or_else(|| UserError("no seed records given (--seeds or sampling.seeds)".into()))?;
    let seeds = sampling::boundary_seeds(&output::read_records(path)?);
    if seeds.is_empty() {
        return Err(UserError(format!("{}: no unflipped records to use as seeds", path.display())).into());
    }
    if let Some(s) = seeds.iter().find(|s| s.n_qubits() != model.n_qubits()) {
        return Err(UserError(format!(
            "{}: {}-qubit seed does not fit a {}-qubit model",
            path.display(),
            s.n_qubits(),
            model.n_qubits()
        ))
        .into());
    }
    let (_, testset) = load_task(cfg)?;
    let rows = sampling::sampling_experiment(&model, &seeds, &testset, &cfg.sampling.shots_grid, cfg.sampling.repeats, cfg.seed)?;
    output::write_csv(&cfg.output_dir.join(output::SAMPLING), &rows)?;
    for r in &rows {
        println!("N={:<8} error rate {:.4} accuracy {:.4}", r.shots, r.error_rate_mean, r.accuracy);
    }
    Ok(())
}

