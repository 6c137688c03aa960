//! Deterministic minibatch training loop.
//!
//! Every random stream is derived from `TrainConfig::seed`, and gradient
//! reductions run in a fixed order, so a configuration always produces the
//! same history and weights no matter how many worker threads are used.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::dataset::{self, Dataset, ImageLoader, Manifest, Split, SplitSpec};
use crate::error::{Error, Result};
use crate::nn::{self, Mode, ModelSpec, Params};
use crate::raster::FilterKind;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub filter: Option<FilterKind>,
    pub epochs: usize,
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 15 epochs, 30% validation, batch 32, learning rate 1e-4, seed 42.
    pub fn new(spec: ModelSpec) -> Self {
        TrainConfig {
            spec,
            filter: None,
            epochs: 15,
            validation_fraction: 0.3,
            batch_size: 32,
            learning_rate: 1e-4,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        SplitSpec::new(self.validation_fraction, self.seed).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub history: Vec<EpochRecord>,
    pub train_seconds: f64,
    pub test_accuracy: f64,
    pub test_loss: f64,
    pub config: TrainConfig,
}

pub const HISTORY_HEADER: &str = "epoch,train_acc,train_loss,val_acc,val_loss";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_accuracy, r.train_loss, r.val_accuracy, r.val_loss
        ));
    }
    out
}

pub fn parse_history_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HISTORY_HEADER) {
        return Err(Error::invalid(format!("history CSV must start with {HISTORY_HEADER:?}")));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::invalid(format!("history CSV row {}: {line:?}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].trim().parse().map_err(|_| bad())?,
                train_accuracy: num(f[1])?,
                train_loss: num(f[2])?,
                val_accuracy: num(f[3])?,
                val_loss: num(f[4])?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Eval-mode pass over a whole dataset.
pub fn evaluate(spec: &ModelSpec, params: &Params<f32>, data: &Dataset, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0f64;
    for batch in data.sequential_batches(batch_size)? {
        let probs = nn::predict(spec, params, &batch.images)?;
        let (loss, _) = nn::sparse_ce_loss(&probs, &batch.labels)?;
        loss_sum += f64::from(loss) * batch.labels.len() as f64;
        predictions.extend(probs.argmax_last_axis()?);
    }
    let labels = data.labels().to_vec();
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        loss: loss_sum / labels.len() as f64,
        predictions,
        labels,
    })
}

/// Train/validation/test images, preprocessed once per run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Arc<Dataset>,
    pub validation: Arc<Dataset>,
    pub test: Arc<Dataset>,
}

impl PreparedData {
    /// Splits the manifest's train entries (seeded by the `split` stream of
    /// `seed`) and loads every image through the given filter.
    pub fn load(manifest: &Manifest, filter: Option<FilterKind>, validation_fraction: f64, seed: u64) -> Result<Self> {
        let split = SplitSpec::new(validation_fraction, seed::derive_seed(seed, seed::SPLIT))?;
        let (train, val) = dataset::split_train_val(manifest, split)?;
        let loader = ImageLoader::new(filter.map(FilterKind::spec));
        Ok(PreparedData {
            train: Arc::new(Dataset::load(&train, &loader)?),
            validation: Arc::new(Dataset::load(&val, &loader)?),
            test: Arc::new(Dataset::load(&manifest.split(Split::Test), &loader)?),
        })
    }
}

/// A resumable training run: weights, optimizer state and history.
#[derive(Debug, Clone)]
pub struct Session {
    config: TrainConfig,
    params: Params<f32>,
    optimizer: AdamState<f32>,
    train: Arc<Dataset>,
    validation: Arc<Dataset>,
    history: Vec<EpochRecord>,
}

impl Session {
    pub fn new(config: TrainConfig, train: Arc<Dataset>, validation: Arc<Dataset>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() || validation.is_empty() {
            return Err(Error::invalid("training and validation sets must be non-empty"));
        }
        let params = Params::init(&config.spec, seed::derive_seed(config.seed, seed::INIT))?;
        let optimizer = AdamState::new(&config.spec, AdamConfig::new(config.learning_rate))?;
        Ok(Session {
            config,
            params,
            optimizer,
            train,
            validation,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn params(&self) -> &Params<f32> {
        &self.params
    }

    pub fn into_params(self) -> Params<f32> {
        self.params
    }

    pub fn optimizer(&self) -> &AdamState<f32> {
        &self.optimizer
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    /// One pass of minibatch Adam over the training set (dropout active),
    /// followed by eval-mode metrics on the training and validation sets.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.history.len();
        let spec = self.config.spec;
        let order_seed = dataset::epoch_seed(seed::derive_seed(self.config.seed, seed::SHUFFLE), epoch);
        let dropout_seed = seed::derive_indexed(seed::derive_seed(self.config.seed, seed::DROPOUT), epoch as u64);
        for (b, batch) in self.train.batches(self.config.batch_size, order_seed)?.enumerate() {
            let (loss, grads) = nn::loss_and_gradients(
                &spec,
                &self.params,
                &batch.images,
                &batch.labels,
                Mode::Train,
                seed::derive_indexed(dropout_seed, b as u64),
            )?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            self.optimizer.step(&mut self.params, &grads)?;
        }
        let tr = evaluate(&spec, &self.params, &self.train, self.config.batch_size)?;
        let va = evaluate(&spec, &self.params, &self.validation, self.config.batch_size)?;
        if !tr.loss.is_finite() || !va.loss.is_finite() {
            let after_last = self.train.len().div_ceil(self.config.batch_size);
            return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: after_last });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            train_accuracy: tr.accuracy,
            train_loss: tr.loss,
            val_accuracy: va.accuracy,
            val_loss: va.loss,
        };
        self.history.push(record);
        Ok(record)
    }
}

/// Runs all configured epochs (no early stopping) and scores the test split.
pub fn train(config: &TrainConfig, manifest: &Manifest) -> Result<(TrainReport, Params<f32>)> {
    train_with_progress(config, manifest, |_| {})
}

pub fn train_with_progress(
    config: &TrainConfig,
    manifest: &Manifest,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainReport, Params<f32>)> {
    config.validate()?;
    let data = PreparedData::load(manifest, config.filter, config.validation_fraction, config.seed)?;
    train_prepared(config, &data, on_epoch)
}

pub fn train_prepared(
    config: &TrainConfig,
    data: &PreparedData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(TrainReport, Params<f32>)> {
    let mut session = Session::new(*config, data.train.clone(), data.validation.clone())?;
    let started = Instant::now();
    for _ in 0..config.epochs {
        let record = session.run_epoch()?;
        on_epoch(&record);
    }
    let train_seconds = started.elapsed().as_secs_f64();
    let test = evaluate(&config.spec, session.params(), &data.test, config.batch_size)?;
    let report = TrainReport {
        epochs: config.epochs,
        history: session.history().to_vec(),
        train_seconds,
        test_accuracy: test.accuracy,
        test_loss: test.loss,
        config: *config,
    };
    Ok((report, session.into_params()))
}
