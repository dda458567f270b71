//! Joint training of the encoder and prototypes.
//!
//! Each step builds the trigger prompt from the mention and the event prompt
//! from the mention plus its gold trigger, then takes one AdamW step on the
//! batch mean of `alpha * L_t + beta * L_y`. Validation uses predicted
//! triggers and keeps the state with the best weighted F1.

use std::fmt;
use std::io::{self, Write};
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EventMention};
use crate::encoder::{pretrained, toy_encoder, EncoderKind, EncoderSpec, MaskedLm, ToyEncoder, Vocab};
use crate::evaluator::{self, EvalError, EvalReport};
use crate::model::{Ablations, Distance, ExampleLoss, Model, ModelError, ModelGrads, TrainingInputs};
use crate::optim::{AdamW, AdamWConfig, Parameters};
use crate::promptkit::PromptConfig;
use crate::sampler::{self, FewShotSplit};

/// Which loss early stopping watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monitor {
    /// Per-iteration training loss; patience counts iterations.
    #[default]
    TrainingLoss,
    /// Validation loss with gold triggers; patience counts epochs.
    ValidationLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_train: usize,
    pub batch_eval: usize,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub weight_decay: f64,
    pub alpha: f64,
    pub beta: f64,
    pub early_stop_patience: usize,
    pub early_stop_min_delta: f64,
    pub early_stop_monitor: Monitor,
    pub seeds: Vec<u64>,
    pub ablations: Ablations,
    pub distance: Distance,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_train: 32,
            batch_eval: 128,
            lr_encoder: 1e-5,
            lr_other: 1e-2,
            weight_decay: 0.01,
            alpha: 1.0,
            beta: 1.0,
            early_stop_patience: 1000,
            early_stop_min_delta: 1e-6,
            early_stop_monitor: Monitor::TrainingLoss,
            seeds: vec![sampler::DEFAULT_SEED],
            ablations: Ablations::default(),
            distance: Distance::Euclidean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_train", self.batch_train),
            ("batch_eval", self.batch_eval),
            ("early_stop_patience", self.early_stop_patience),
            ("seeds", self.seeds.len()),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        for (name, v) in [("lr_encoder", self.lr_encoder), ("lr_other", self.lr_other)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a positive number"));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("weight_decay", self.weight_decay),
            ("early_stop_min_delta", self.early_stop_min_delta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a nonnegative number"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max-epochs",
            StopReason::EarlyStop => "early-stop",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub trigger_loss: f64,
    pub event_loss: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub iterations: usize,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    /// Epoch whose state was kept, by validation weighted F1.
    pub best_epoch: Option<usize>,
    pub best_valid_f1: Option<f64>,
    pub wall_clock_secs: f64,
}

impl TrainLog {
    /// One JSON object per line: iterations, then epochs, then a summary.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        #[derive(Serialize)]
        #[serde(tag = "kind", rename_all = "kebab-case")]
        enum Line<'a> {
            Iteration(&'a IterationRecord),
            Epoch(&'a EpochRecord),
            Summary {
                seed: u64,
                stop_reason: StopReason,
                best_epoch: Option<usize>,
                best_valid_f1: Option<f64>,
                wall_clock_secs: f64,
            },
        }
        let mut put = |l: Line<'_>| writeln!(w, "{}", serde_json::to_string(&l).expect("log serializes"));
        for r in &self.iterations {
            put(Line::Iteration(r))?;
        }
        for r in &self.epochs {
            put(Line::Epoch(r))?;
        }
        put(Line::Summary {
            seed: self.seed,
            stop_reason: self.stop_reason,
            best_epoch: self.best_epoch,
            best_valid_f1: self.best_valid_f1,
            wall_clock_secs: self.wall_clock_secs,
        })
    }

    pub fn losses(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.loss).collect()
    }
}

#[derive(Debug, Error)]
pub enum TrainError<M: fmt::Debug = Model<ToyEncoder>> {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("split label {0:?} missing from the corpus")]
    UnknownLabel(String),
    #[error("training set is empty")]
    EmptyTrain,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    /// Non-finite loss or gradient. Carries the best validated state, or the
    /// state before the failing step when none was validated yet.
    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_finite: Box<M>,
        log: Box<TrainLog>,
    },
}

#[derive(Debug)]
pub struct TrainOutcome<E: MaskedLm> {
    pub model: Model<E>,
    pub log: TrainLog,
}

/// Seeds derived from the run seed for each random stream.
pub fn encoder_seed(seed: u64) -> u64 {
    seed
}

pub fn prototype_seed(seed: u64) -> u64 {
    seed.wrapping_add(1)
}

fn shuffle_seed(seed: u64) -> u64 {
    seed.wrapping_add(2)
}

/// A freshly initialized model for `split`. Toy backends take their
/// vocabulary from the corpus and the prompt scaffolding.
pub fn build_model(
    corpus: &Corpus,
    split: &FewShotSplit,
    cfg: &TrainConfig,
    enc: &EncoderSpec,
    prompt: &PromptConfig,
    seed: u64,
) -> Result<Model<ToyEncoder>, TrainError> {
    for l in split.kept_labels.iter() {
        if !corpus.labels().contains(l) {
            return Err(TrainError::UnknownLabel(l.to_string()));
        }
    }
    if enc.kind == EncoderKind::Pretrained {
        return Err(ModelError::from(pretrained::load_pretrained(enc).unwrap_err()).into());
    }
    let vocab = Vocab::for_corpus(corpus, prompt, true);
    let spec = EncoderSpec {
        seed: encoder_seed(seed),
        ..enc.clone()
    };
    Ok(Model::new(
        toy_encoder(spec, vocab),
        split.kept_labels.clone(),
        prompt.clone(),
        cfg.ablations,
        cfg.distance,
        prototype_seed(seed),
    )?)
}

/// Builds a toy model for `split` and trains it with `seed`.
pub fn train(
    split: &FewShotSplit,
    corpus: &Corpus,
    cfg: &TrainConfig,
    enc: &EncoderSpec,
    prompt: &PromptConfig,
    seed: u64,
) -> Result<TrainOutcome<ToyEncoder>, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let model = build_model(corpus, split, cfg, enc, prompt, seed)?;
    train_model(
        model,
        &corpus.select(&split.train),
        &corpus.select(&split.valid),
        cfg,
        seed,
    )
}

type Snapshot<P> = (P, Array2<f64>);

fn snapshot<E: MaskedLm>(m: &Model<E>) -> Snapshot<E::Params> {
    (m.encoder.params().clone(), m.prototypes.vectors.clone())
}

fn restore<E: MaskedLm>(m: &mut Model<E>, s: Snapshot<E::Params>) {
    *m.encoder.params_mut() = s.0;
    m.prototypes.vectors = s.1;
}

fn batch_mean<P: Parameters>(
    results: Vec<Result<(ExampleLoss, ModelGrads<P>), ModelError>>,
) -> Result<(ExampleLoss, ModelGrads<P>), ModelError> {
    let n = results.len() as f64;
    let mut iter = results.into_iter();
    let (mut loss, mut grads) = iter.next().expect("nonempty batch")?;
    for r in iter {
        let (l, g) = r?;
        loss.trigger += l.trigger;
        loss.event += l.event;
        loss.total += l.total;
        grads.add_assign(&g);
    }
    loss.trigger /= n;
    loss.event /= n;
    loss.total /= n;
    grads.scale(1.0 / n);
    Ok((loss, grads))
}

/// Trains an existing model on `train` and selects the best state on
/// `valid`. With an empty `valid` the final state is kept.
pub fn train_model<E>(
    mut model: Model<E>,
    train: &[&EventMention],
    valid: &[&EventMention],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<E>, TrainError<Model<E>>>
where
    E: MaskedLm + Clone + fmt::Debug,
{
    cfg.validate().map_err(TrainError::Config)?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let started = Instant::now();
    let inputs: Vec<TrainingInputs> = train
        .par_iter()
        .map(|m| model.training_inputs(m))
        .collect::<Result<_, _>>()?;
    let valid_inputs: Vec<TrainingInputs> = if cfg.early_stop_monitor == Monitor::ValidationLoss {
        valid
            .par_iter()
            .map(|m| model.training_inputs(m))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let mut opt_enc = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::with_lr(cfg.lr_encoder)
        },
        model.encoder.params(),
    );
    let mut opt_proto = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::with_lr(cfg.lr_other)
        },
        &model.prototypes.vectors,
    );

    let mut log = TrainLog {
        seed,
        iterations: Vec::new(),
        epochs: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: None,
        best_valid_f1: None,
        wall_clock_secs: 0.0,
    };
    let mut rng = sampler::rng(shuffle_seed(seed));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut best: Option<Snapshot<E::Params>> = None;
    let mut best_loss = f64::INFINITY;
    let mut since_best = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let first_iter = log.iterations.len();
        let mut stop = false;
        for batch in order.chunks(cfg.batch_train) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| model.example_grad(&inputs[i], cfg.alpha, cfg.beta))
                .collect();
            let (loss, grads) = batch_mean(results)?;
            let iteration = log.iterations.len() + 1;
            log.iterations.push(IterationRecord {
                iteration,
                epoch,
                trigger_loss: loss.trigger,
                event_loss: loss.event,
                loss: loss.total,
            });
            if !loss.total.is_finite() || !grads.encoder.all_finite() || !grads.prototypes.iter().all(|x| x.is_finite())
            {
                if let Some(s) = best.take() {
                    restore(&mut model, s);
                }
                log.wall_clock_secs = started.elapsed().as_secs_f64();
                return Err(TrainError::Diverged {
                    iteration,
                    last_finite: Box::new(model),
                    log: Box::new(log),
                });
            }
            opt_enc.step(model.encoder.params_mut(), &grads.encoder);
            opt_proto.step(&mut model.prototypes.vectors, &grads.prototypes);

            if cfg.early_stop_monitor == Monitor::TrainingLoss {
                if loss.total < best_loss - cfg.early_stop_min_delta {
                    best_loss = loss.total;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.early_stop_patience {
                        stop = true;
                        break;
                    }
                }
            }
        }

        let epoch_iters = &log.iterations[first_iter..];
        let mean_loss = epoch_iters.iter().map(|r| r.loss).sum::<f64>() / epoch_iters.len().max(1) as f64;
        let report = if valid.is_empty() {
            None
        } else {
            Some(evaluator::evaluate(&model, valid, cfg.batch_eval)?)
        };
        let valid_loss = if valid_inputs.is_empty() {
            None
        } else {
            let losses: Vec<ExampleLoss> = valid_inputs
                .par_iter()
                .map(|inp| model.example_loss(inp, cfg.alpha, cfg.beta))
                .collect::<Result<_, _>>()?;
            Some(losses.iter().map(|l| l.total).sum::<f64>() / losses.len() as f64)
        };
        if let Some(r) = &report {
            if !matches!(log.best_valid_f1, Some(b) if r.weighted_f1 <= b) {
                log.best_valid_f1 = Some(r.weighted_f1);
                log.best_epoch = Some(epoch);
                best = Some(snapshot(&model));
            }
        }
        log.epochs.push(EpochRecord {
            epoch,
            iterations: epoch_iters.len(),
            mean_loss,
            valid: report,
            valid_loss,
        });
        log::debug!("epoch {epoch}: mean loss {mean_loss:.6}");

        if let Some(vl) = valid_loss {
            if vl < best_loss - cfg.early_stop_min_delta {
                best_loss = vl;
                since_best = 0;
            } else {
                since_best += 1;
                stop |= since_best >= cfg.early_stop_patience;
            }
        }
        if stop {
            log.stop_reason = StopReason::EarlyStop;
            break 'epochs;
        }
    }

    if let Some(s) = best {
        restore(&mut model, s);
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, log })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl MetricStats {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(MetricStats { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub report: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub runs: Vec<SeedRun>,
    /// False when any seed failed; the statistics then cover the rest.
    pub complete: bool,
    pub accuracy: Option<MetricStats>,
    pub weighted_precision: Option<MetricStats>,
    pub weighted_recall: Option<MetricStats>,
    pub weighted_f1: Option<MetricStats>,
    pub trigger_accuracy: Option<MetricStats>,
}

impl SeedSummary {
    pub fn from_runs(runs: Vec<SeedRun>) -> Self {
        let ok: Vec<&EvalReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
        let stat = |f: fn(&EvalReport) -> f64| MetricStats::of(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
        SeedSummary {
            complete: runs.iter().all(|r| r.report.is_some()),
            accuracy: stat(|r| r.accuracy),
            weighted_precision: stat(|r| r.weighted_precision),
            weighted_recall: stat(|r| r.weighted_recall),
            weighted_f1: stat(|r| r.weighted_f1),
            trigger_accuracy: stat(|r| r.trigger_accuracy),
            runs,
        }
    }
}

/// Runs `run` once per seed, in order, and aggregates the reports.
pub fn run_seeds<F, Err>(seeds: &[u64], mut run: F) -> SeedSummary
where
    F: FnMut(u64) -> Result<EvalReport, Err>,
    Err: fmt::Display,
{
    let runs = seeds
        .iter()
        .map(|&seed| match run(seed) {
            Ok(r) => SeedRun {
                seed,
                report: Some(r),
                error: None,
            },
            Err(e) => SeedRun {
                seed,
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    SeedSummary::from_runs(runs)
}

/// Trains one toy model per configured seed and scores each on the test set.
pub fn run_seeds_toy(
    split: &FewShotSplit,
    corpus: &Corpus,
    cfg: &TrainConfig,
    enc: &EncoderSpec,
    prompt: &PromptConfig,
) -> SeedSummary {
    let test = corpus.select(&split.test);
    run_seeds(&cfg.seeds, |seed| -> Result<EvalReport, TrainError> {
        let out = train(split, corpus, cfg, enc, prompt, seed)?;
        Ok(evaluator::evaluate(&out.model, &test, cfg.batch_eval)?)
    })
}
