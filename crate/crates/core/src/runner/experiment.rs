//! Training runs: data preparation, the epoch loop, evaluation, exports,
//! checkpointing and resume.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use super::checkpoint::{save_checkpoint, Checkpoint, CheckpointError, CheckpointMeta};
use super::config::{hex, ConfigError, DataKind, ExperimentConfig};
use super::metrics::{read_metrics_csv, write_metrics_csv, write_summary, write_timing_csv, MetricsRow, Summary};
use crate::analysis::{entropy_histogram, pca_project, AnalysisError, PredictionBatch};
use crate::data::{batches, gen_blobs, load_idx, DataError, Dataset};
use crate::nn::{per_layer_grad_norms, MlpModel, ModelError};
use crate::optim::{Moments, OptimError, Optimizer, OptimizerState};
use crate::sampling::RngStream;
use crate::tensor::TensorError;
use crate::theory::TheoryError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: usize, step: u64, reason: String },
    #[error("checkpoint does not match the model: {0}")]
    IncompatibleCheckpoint(String),
}

impl RunError {
    /// Configuration problems map to exit code 2, everything else to 3.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            RunError::Config(_) | RunError::Checkpoint(CheckpointError::HashMismatch { .. })
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Independent streams derived from the run seed. Masks draw from their own
/// stream so that `s = 1` reproduces Adam's shuffles exactly.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub data: RngStream,
    pub init: RngStream,
    pub shuffle: RngStream,
    pub mask: RngStream,
}

impl RunStreams {
    pub fn new(seed: u64) -> Self {
        let mut master = RngStream::new(seed);
        Self {
            data: master.fork(),
            init: master.fork(),
            shuffle: master.fork(),
            mask: master.fork(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare_data(cfg: &ExperimentConfig, rng: &mut RngStream) -> Result<PreparedData, RunError> {
    match cfg.data.kind {
        DataKind::Blobs => {
            let b = &cfg.data.blobs;
            let train = gen_blobs(rng, b.train_per_class, b.n_classes, b.dim, b.spacing, b.sigma)?;
            let test = gen_blobs(rng, b.test_per_class, b.n_classes, b.dim, b.spacing, b.sigma)?;
            Ok(PreparedData { train, test })
        }
        DataKind::Idx => {
            let i = &cfg.data.idx;
            let mut train = load_idx(&i.train_images, &i.train_labels)?;
            let mut test = load_idx(&i.test_images, &i.test_labels)?;
            if i.train_limit > 0 {
                train = train.take(i.train_limit);
            }
            if i.test_limit > 0 {
                test = test.take(i.test_limit);
            }
            let n_classes = train.n_classes().max(test.n_classes());
            let train = Dataset::new(train.features().clone(), train.labels().to_vec(), n_classes)?;
            let test = Dataset::new(test.features().clone(), test.labels().to_vec(), n_classes)?;
            if train.dim() != test.dim() {
                return Err(DataError::InvalidParams(format!(
                    "train width {} differs from test width {}",
                    train.dim(),
                    test.dim()
                ))
                .into());
            }
            Ok(PreparedData { train, test })
        }
    }
}

/// Metrics at the current parameters plus the test predictions.
pub struct Evaluation {
    pub train_loss: f64,
    pub grad_norms: Vec<f64>,
    pub test_accuracy: f64,
    pub predictions: PredictionBatch,
}

pub fn evaluate(model: &MlpModel, data: &PreparedData) -> Result<Evaluation, RunError> {
    let (train_loss, grads) = model.loss_and_grad(data.train.features(), data.train.labels())?;
    let probs = model.forward(data.test.features())?.probs;
    let correct = data
        .test
        .labels()
        .iter()
        .enumerate()
        .filter(|&(r, &y)| {
            let row = probs.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == y
        })
        .count();
    Ok(Evaluation {
        train_loss,
        grad_norms: per_layer_grad_norms(&grads),
        test_accuracy: correct as f64 / data.test.len() as f64,
        predictions: PredictionBatch::new(probs)?,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Rows produced by this invocation.
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
    pub model: MlpModel,
    pub optimizer: Optimizer,
    pub checkpoint: Checkpoint,
}

struct Progress {
    epoch: usize,
    step: u64,
    untrained_entropy: f64,
    first_epoch_entropy: f64,
}

fn build_checkpoint(
    hash: [u8; 32],
    model: &MlpModel,
    optimizer: &Optimizer,
    streams: &RunStreams,
    p: &Progress,
) -> Checkpoint {
    let names = model.param_names();
    let mut tensors = Vec::new();
    for (n, t) in names.iter().zip(model.params()) {
        tensors.push((format!("param.{n}"), t.clone()));
    }
    for (n, mv) in names.iter().zip(optimizer.state.moments()) {
        tensors.push((format!("m.{n}"), mv.m.clone()));
    }
    for (n, mv) in names.iter().zip(optimizer.state.moments()) {
        tensors.push((format!("v.{n}"), mv.v.clone()));
    }
    Checkpoint {
        config_hash: hash,
        tensors,
        meta: CheckpointMeta {
            t: optimizer.state.t(),
            epoch: p.epoch as u64,
            global_step: p.step,
            untrained_entropy: p.untrained_entropy,
            first_epoch_entropy: p.first_epoch_entropy,
        },
        rng_states: vec![streams.shuffle.state(), streams.mask.state()],
    }
}

fn restore(
    ck: &Checkpoint,
    hash: &[u8; 32],
    model: &mut MlpModel,
    optimizer: &mut Optimizer,
    streams: &mut RunStreams,
) -> Result<Progress, RunError> {
    if &ck.config_hash != hash {
        return Err(CheckpointError::HashMismatch {
            found: hex(&ck.config_hash),
            expected: hex(hash),
        }
        .into());
    }
    let bad = |m: &str| RunError::IncompatibleCheckpoint(m.to_string());
    model
        .set_params(ck.group("param"))
        .map_err(|e| RunError::IncompatibleCheckpoint(e.to_string()))?;
    let (m, v) = (ck.group("m"), ck.group("v"));
    if m.len() != v.len() || m.len() != model.params().len() {
        return Err(bad("moment tensor count differs from parameter count"));
    }
    if m.iter().zip(model.params()).any(|(a, b)| a.shape() != b.shape()) {
        return Err(bad("moment shapes differ from parameter shapes"));
    }
    let moments = m.into_iter().zip(v).map(|(m, v)| Moments { m, v }).collect();
    optimizer.state = OptimizerState::from_parts(ck.meta.t, moments)?;
    let [shuffle, mask] = ck.rng_states[..] else {
        return Err(bad("expected two stream states"));
    };
    streams.shuffle = RngStream::from_state(shuffle);
    streams.mask = RngStream::from_state(mask);
    Ok(Progress {
        epoch: ck.meta.epoch as usize,
        step: ck.meta.global_step,
        untrained_entropy: ck.meta.untrained_entropy,
        first_epoch_entropy: ck.meta.first_epoch_entropy,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    run_experiment_from(cfg, None)
}

/// Runs `cfg`, continuing from `resume` when given. The checkpoint must come
/// from a config with the same trajectory hash.
pub fn run_experiment_from(cfg: &ExperimentConfig, resume: Option<&Checkpoint>) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let hash = cfg.trajectory_hash();
    let mut streams = RunStreams::new(cfg.seed);
    let data = prepare_data(cfg, &mut streams.data)?;
    let mut dims = vec![data.train.dim()];
    dims.extend(&cfg.model.hidden);
    dims.push(data.train.n_classes());
    let mut model = MlpModel::new(&dims, cfg.model.activation, &mut streams.init)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.hp.clone(), model.params())?.with_mask_streams(cfg.mask_streams);
    let n_layers = model.n_layers();

    let out = cfg.output_dir.as_deref();
    if let Some(dir) = out {
        for sub in ["", "checkpoints", "histograms", "pca"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let p = dir.join("config.txt");
        fs::write(&p, cfg.to_text()).map_err(io_err(&p))?;
    }

    let mut rows = Vec::new();
    let mut file_rows = Vec::new();
    let mut timings = Vec::new();
    let mut progress = match resume {
        Some(ck) => {
            let p = restore(ck, &hash, &mut model, &mut optimizer, &mut streams)?;
            if let Some(dir) = out {
                file_rows = read_metrics_csv(&dir.join("metrics.csv"));
                file_rows.retain(|r| r.epoch <= p.epoch);
            }
            p
        }
        None => {
            let eval = evaluate(&model, &data)?;
            let h = eval.predictions.mean_normalized_entropy();
            let row = row_from(0, 0, &eval);
            export(cfg, out, 0, &eval)?;
            rows.push(row.clone());
            file_rows.push(row);
            Progress {
                epoch: 0,
                step: 0,
                untrained_entropy: h,
                first_epoch_entropy: f64::NAN,
            }
        }
    };
    if let Some(dir) = out {
        let p = dir.join("metrics.csv");
        write_metrics_csv(&p, &file_rows, n_layers).map_err(io_err(&p))?;
    }

    let epochs = cfg.train.epochs;
    while progress.epoch < epochs {
        let epoch = progress.epoch + 1;
        let started = Instant::now();
        for batch in batches(&data.train, cfg.train.batch_size, &mut streams.shuffle, cfg.train.shuffle)? {
            let diverged = |reason: String| RunError::Diverged {
                epoch,
                step: progress.step + 1,
                reason,
            };
            let (loss, grads) = model.loss_and_grad(&batch.x, &batch.labels).map_err(|e| match e {
                ModelError::Tensor(TensorError::NonFinite { .. }) => diverged(e.to_string()),
                other => RunError::Model(other),
            })?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss is {loss}")));
            }
            optimizer
                .step(model.params_mut(), &grads, &mut streams.mask)
                .map_err(|e| match e {
                    OptimError::NonFiniteGradient { .. } | OptimError::NonFiniteUpdate(_) => diverged(e.to_string()),
                    other => RunError::Optim(other),
                })?;
            progress.step += 1;
        }
        progress.epoch = epoch;
        timings.push((epoch, started.elapsed().as_secs_f64()));

        let exporting = cfg.analysis.histogram_epochs.contains(&epoch) || cfg.analysis.pca_epochs.contains(&epoch);
        if epoch == 1 || epoch == epochs || epoch % cfg.train.eval_every == 0 || exporting {
            let eval = evaluate(&model, &data)?;
            if epoch == 1 {
                progress.first_epoch_entropy = eval.predictions.mean_normalized_entropy();
            }
            export(cfg, out, epoch, &eval)?;
            let row = row_from(epoch, progress.step, &eval);
            rows.push(row.clone());
            file_rows.push(row);
            if let Some(dir) = out {
                let p = dir.join("metrics.csv");
                write_metrics_csv(&p, &file_rows, n_layers).map_err(io_err(&p))?;
            }
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                let ck = build_checkpoint(hash, &model, &optimizer, &streams, &progress);
                save_checkpoint(&dir.join(format!("checkpoints/epoch_{epoch:04}.ckpt")), &ck)?;
            }
        }
    }

    let checkpoint = build_checkpoint(hash, &model, &optimizer, &streams, &progress);
    let last = file_rows.last().or(rows.last()).cloned().ok_or_else(|| {
        RunError::IncompatibleCheckpoint("resumed run has no metrics to summarize".into())
    })?;
    let initial_entropy = if progress.first_epoch_entropy.is_nan() {
        progress.untrained_entropy
    } else {
        progress.first_epoch_entropy
    };
    let summary = Summary {
        optimizer: cfg.optimizer.to_string(),
        s: cfg.hp.s,
        seed: cfg.seed,
        epochs,
        steps: progress.step,
        final_accuracy: last.test_accuracy,
        final_loss: last.train_loss,
        untrained_entropy: progress.untrained_entropy,
        initial_entropy,
        final_entropy: last.mean_norm_entropy,
        delta_entropy: initial_entropy - last.mean_norm_entropy,
        config_hash: hex(&hash),
    };
    if let Some(dir) = out {
        save_checkpoint(&dir.join("checkpoints/final.ckpt"), &checkpoint)?;
        let p = dir.join("summary.json");
        write_summary(&p, &summary).map_err(io_err(&p))?;
        let p = dir.join("timing.csv");
        write_timing_csv(&p, &timings).map_err(io_err(&p))?;
    }
    Ok(RunOutcome {
        rows,
        summary,
        model,
        optimizer,
        checkpoint,
    })
}

fn row_from(epoch: usize, step: u64, eval: &Evaluation) -> MetricsRow {
    MetricsRow {
        epoch,
        step,
        train_loss: eval.train_loss,
        test_accuracy: eval.test_accuracy,
        mean_norm_entropy: eval.predictions.mean_normalized_entropy(),
        grad_norms: eval.grad_norms.clone(),
    }
}

fn export(cfg: &ExperimentConfig, out: Option<&Path>, epoch: usize, eval: &Evaluation) -> Result<(), RunError> {
    let Some(dir) = out else { return Ok(()) };
    if cfg.analysis.histogram_epochs.contains(&epoch) {
        let p = dir.join(format!("histograms/epoch_{epoch:04}.csv"));
        let hist = entropy_histogram(&eval.predictions, cfg.analysis.histogram_bins);
        let f = File::create(&p).map_err(io_err(&p))?;
        hist.write_csv(BufWriter::new(f)).map_err(io_err(&p))?;
    }
    if cfg.analysis.pca_epochs.contains(&epoch) {
        let p = dir.join(format!("pca/epoch_{epoch:04}.csv"));
        let pca = pca_project(&eval.predictions.probs, 2)?;
        let f = File::create(&p).map_err(io_err(&p))?;
        pca.write_csv(&eval.predictions.normalized_entropy, BufWriter::new(f))
            .map_err(io_err(&p))?;
    }
    Ok(())
}
