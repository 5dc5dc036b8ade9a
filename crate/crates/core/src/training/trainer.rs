use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adadelta::{apply_step, OptimizerState, StepReport};
use super::batching::{derive_seed, make_batches, sequential_batches};
use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use crate::autograd::{Graph, ParamSet, XentStats};
use crate::error::{Error, Result};
use crate::nn::{Example, ParallelBatch, Seq2Seq, Vocabs};
use crate::subword::MergeTable;

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
    /// Wall time; not persisted, so checkpoints are reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch\ttrain_loss\tdev_loss\tdev_acc\tseconds";

    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.train_loss, self.dev_loss, self.dev_acc, self.seconds
        )
    }
}

/// Progress counters persisted with a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_dev_acc: Option<f64>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

/// Teacher-forced loss and word-level accuracy over a corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    /// Mean cross-entropy per predicted token.
    pub loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub counted: usize,
}

/// Scores `examples` with dropout off, in corpus order.
pub fn evaluate(model: &Seq2Seq<f32>, examples: &[Example], batch_size: usize) -> Result<EvalStats> {
    if examples.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty corpus".into()));
    }
    let mut loss_sum = 0.0;
    let mut totals = XentStats::default();
    for batch in sequential_batches(examples, batch_size, model.config().max_kernel_width())? {
        let mut g = Graph::inference(model.params());
        let (loss, stats) = model.teacher_forced(&mut g, &batch)?;
        loss_sum += g.scalar(loss) as f64 * stats.counted as f64;
        totals.correct += stats.correct;
        totals.counted += stats.counted;
    }
    let counted = totals.counted.max(1) as f64;
    Ok(EvalStats {
        loss: loss_sum / counted,
        accuracy: totals.correct as f64 / counted,
        correct: totals.correct,
        counted: totals.counted,
    })
}

/// Loss and optimizer diagnostics for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub loss: f32,
    pub report: StepReport,
}

/// Result of one call to [`Trainer::epoch`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub record: EpochRecord,
    /// Whether this epoch became the selected model.
    pub improved: bool,
}

#[derive(Debug, Clone)]
struct Snapshot {
    params: ParamSet<f32>,
    optimizer: OptimizerState<f32>,
    state: TrainingState,
}

/// Single-writer training loop with dev-accuracy model selection.
pub struct Trainer {
    model: Seq2Seq<f32>,
    config: TrainConfig,
    optimizer: OptimizerState<f32>,
    state: TrainingState,
    best: Option<Snapshot>,
    steps: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(model: Seq2Seq<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = OptimizerState::zeros_like(model.params());
        Ok(Trainer {
            model,
            config,
            optimizer,
            state: TrainingState::default(),
            best: None,
            steps: Vec::new(),
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    ///
    /// `config` may raise `epochs`; the other fields should match the
    /// original run for the continuation to be exact.
    pub fn resume(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ckpt.model()?;
        let optimizer = match &ckpt.optimizer {
            Some(o) if o.matches(model.params()) => o.clone(),
            Some(_) => return Err(Error::State("optimizer state does not match the parameters".into())),
            None => return Err(Error::State("checkpoint has no optimizer state to resume from".into())),
        };
        Ok(Trainer {
            model,
            config,
            optimizer,
            state: ckpt.state.clone(),
            best: None,
            steps: Vec::new(),
        })
    }

    pub fn model(&self) -> &Seq2Seq<f32> {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainingState {
        &self.state
    }

    pub fn optimizer(&self) -> &OptimizerState<f32> {
        &self.optimizer
    }

    /// Steps taken by this trainer instance (not restored on resume).
    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    /// One forward/backward/update on `batch`.
    pub fn train_step(&mut self, batch: &ParallelBatch) -> Result<(f32, XentStats, StepReport)> {
        let epoch = self.state.epoch + 1;
        let seed = derive_seed(self.config.seed, &[epoch as u64, self.state.step]);
        let (loss, stats, mut grads) = {
            let mut g = Graph::with_params(self.model.params(), true, seed);
            let (loss, stats) = self.model.teacher_forced(&mut g, batch)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(non_finite(epoch, self.state.step, value, batch));
            }
            g.backward(loss)?;
            (value, stats, g.param_grads()?)
        };
        let report = apply_step(self.model.params_mut(), &mut grads, &mut self.optimizer, &self.config)?;
        self.state.step += 1;
        self.steps.push(StepRecord { epoch, loss, report });
        Ok((loss, stats, report))
    }

    /// Runs one pass over `train` and returns the token-weighted mean loss.
    pub fn run_epoch(&mut self, train: &[Example]) -> Result<f64> {
        let epoch = self.state.epoch + 1;
        let width = self.model.config().max_kernel_width();
        let batches = make_batches(train, self.config.batch_size, self.config.seed, epoch, width)?;
        let mut loss_sum = 0.0;
        let mut counted = 0usize;
        for batch in &batches {
            let (loss, stats, _) = self.train_step(batch)?;
            loss_sum += loss as f64 * stats.counted as f64;
            counted += stats.counted;
        }
        Ok(loss_sum / counted.max(1) as f64)
    }

    /// Trains one epoch, evaluates on `dev` and updates the selection.
    pub fn epoch(&mut self, train: &[Example], dev: &[Example]) -> Result<EpochOutcome> {
        let start = Instant::now();
        let train_loss = self.run_epoch(train)?;
        let dev_stats = evaluate(&self.model, dev, self.config.batch_size)?;
        self.state.epoch += 1;
        let record = EpochRecord {
            epoch: self.state.epoch,
            train_loss,
            dev_loss: dev_stats.loss,
            dev_acc: dev_stats.accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.state.history.push(record.clone());
        let improved = self.state.best_dev_acc.map_or(true, |b| record.dev_acc > b);
        if improved {
            self.state.best_dev_acc = Some(record.dev_acc);
            self.state.best_epoch = Some(record.epoch);
            self.best = Some(Snapshot {
                params: self.model.params().clone(),
                optimizer: self.optimizer.clone(),
                state: self.state.clone(),
            });
        }
        log::info!("{}", record.log_line());
        Ok(EpochOutcome { record, improved })
    }

    /// The current (latest) training state as a checkpoint.
    pub fn checkpoint(&self, vocabs: &Vocabs, merges: Option<&MergeTable>, meta: &BTreeMap<String, String>) -> Checkpoint {
        self.make_checkpoint(self.model.params(), &self.optimizer, &self.state, vocabs, merges, meta)
    }

    /// The selected model as a checkpoint, if this trainer has selected one.
    pub fn best_checkpoint(
        &self,
        vocabs: &Vocabs,
        merges: Option<&MergeTable>,
        meta: &BTreeMap<String, String>,
    ) -> Option<Checkpoint> {
        let b = self.best.as_ref()?;
        Some(self.make_checkpoint(&b.params, &b.optimizer, &b.state, vocabs, merges, meta))
    }

    /// Parameters of the selected epoch, or the current ones before any
    /// epoch has been evaluated.
    pub fn best_params(&self) -> &ParamSet<f32> {
        self.best.as_ref().map_or(self.model.params(), |b| &b.params)
    }

    fn make_checkpoint(
        &self,
        params: &ParamSet<f32>,
        optimizer: &OptimizerState<f32>,
        state: &TrainingState,
        vocabs: &Vocabs,
        merges: Option<&MergeTable>,
        meta: &BTreeMap<String, String>,
    ) -> Checkpoint {
        Checkpoint {
            model_config: self.model.config().clone(),
            train_config: self.config.clone(),
            vocabs: vocabs.clone(),
            merges: merges.cloned(),
            meta: meta.clone(),
            params: params.clone(),
            optimizer: Some(optimizer.clone()),
            state: state.clone(),
        }
    }
}

fn non_finite(epoch: usize, step: u64, value: f32, batch: &ParallelBatch) -> Error {
    let mut dump = String::new();
    for b in 0..batch.batch {
        let _ = writeln!(
            dump,
            "  example {}: src {:?} tgt {:?}",
            batch.indices[b],
            &batch.src_ids[b * batch.src_len..b * batch.src_len + batch.src_lengths[b]],
            &batch.tgt_ids[b * batch.tgt_len..b * batch.tgt_len + batch.tgt_lengths[b]],
        );
    }
    log::error!("non-finite loss {value} at epoch {epoch} step {step}; offending batch:\n{dump}");
    Error::Numeric(format!(
        "training loss became {value} at epoch {epoch}, step {step}; batch examples {:?}",
        batch.indices
    ))
}

/// Outcome of a complete [`train`] run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Seq2Seq<f32>,
    pub best_epoch: usize,
    pub best_dev_acc: f64,
    pub history: Vec<EpochRecord>,
}

/// Trains for `config.epochs` epochs and returns the model with the highest
/// dev accuracy.
pub fn train(model: Seq2Seq<f32>, train: &[Example], dev: &[Example], config: TrainConfig) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    let mut trainer = Trainer::new(model, config)?;
    while !trainer.is_finished() {
        trainer.epoch(train, dev)?;
    }
    let state = trainer.state().clone();
    let best = Seq2Seq::from_params(
        trainer.model().config().clone(),
        trainer.model().sizes(),
        trainer.best_params().clone(),
    )?;
    Ok(TrainOutcome {
        best,
        best_epoch: state.best_epoch.unwrap_or(0),
        best_dev_acc: state.best_dev_acc.unwrap_or(0.0),
        history: state.history,
    })
}

/// Key-value run summary naming the selected checkpoint.
pub fn run_summary(state: &TrainingState, best_checkpoint: &str, last_checkpoint: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "epochs_completed={}", state.epoch);
    let _ = writeln!(out, "steps={}", state.step);
    if let (Some(e), Some(a)) = (state.best_epoch, state.best_dev_acc) {
        let _ = writeln!(out, "best_epoch={e}");
        let _ = writeln!(out, "best_dev_acc={a:.6}");
    }
    let _ = writeln!(out, "best_checkpoint={best_checkpoint}");
    let _ = writeln!(out, "last_checkpoint={last_checkpoint}");
    out
}
