//! Two-step prompt model: trigger recognition over mention words followed by
//! prototype-based event classification of the mask embedding.
//!
//! The trigger distribution is a softmax over the vocabulary logits of the
//! mention words' first subwords. The event distribution is
//!
//! ```text
//! p_j = exp(-D(e0, e_j)) / Σ_n exp(-D(e0, e_n))
//! ```
//!
//! with `D` the Euclidean distance (or its square, see [`Distance`]) between
//! the mask embedding `e0` and prototype `e_j`. Both steps share one encoder
//! and are trained on `alpha * L_t + beta * L_y`.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EventMention, LabelSpace};
use crate::encoder::{EncoderError, EncoderOutput, MaskedLm};
use crate::optim::Parameters;
use crate::promptkit::{self, PromptConfig, PromptError, TokenizedPrompt};
use crate::sampler;

/// Lower bound applied to probabilities inside `ln`.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("embedding has dimension {embedding} but prototypes have {prototypes}")]
    DimensionMismatch { embedding: usize, prototypes: usize },
    #[error("label {0:?} is not in the model's label space")]
    UnknownLabel(String),
    #[error("index {index} out of range for {len} classes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no candidate words")]
    NoCandidates,
}

/// Index of the maximum; the lowest index wins exact ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerPrediction {
    pub distribution: Vec<f64>,
    pub predicted_index: usize,
    pub predicted_word: String,
}

/// Scores each candidate word by the mask logit of its first subword and
/// normalizes over the candidates only. Words removed by truncation are not
/// candidates.
pub fn recognize_trigger(
    prompt: &TokenizedPrompt,
    mask_logits: &Array1<f64>,
    mention: &EventMention,
) -> Result<TriggerPrediction, ModelError> {
    let scores: Vec<f64> = prompt
        .candidate_token_ids()
        .iter()
        .map(|&t| mask_logits[t as usize])
        .collect();
    if scores.is_empty() {
        return Err(ModelError::NoCandidates);
    }
    let distribution = softmax(&scores);
    let predicted_index = argmax(&distribution);
    Ok(TriggerPrediction {
        predicted_word: mention.words[predicted_index].clone(),
        distribution,
        predicted_index,
    })
}

/// `-ln max(p, LOG_FLOOR)`, with NaN passed through.
fn neg_log(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        -p.max(LOG_FLOOR).ln()
    }
}

fn nll(distribution: &[f64], gold: usize) -> Result<f64, ModelError> {
    let p = distribution.get(gold).ok_or(ModelError::IndexOutOfRange {
        index: gold,
        len: distribution.len(),
    })?;
    Ok(neg_log(*p))
}

/// Cross-entropy of the trigger distribution against the gold word index.
pub fn trigger_loss(pred: &TriggerPrediction, gold_index: usize) -> Result<f64, ModelError> {
    nll(&pred.distribution, gold_index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventEmbedding(pub Array1<f64>);

/// Hidden state at the event prompt's mask token.
pub fn event_embedding(prompt: &TokenizedPrompt, enc: &EncoderOutput) -> EventEmbedding {
    EventEmbedding(enc.hidden.row(prompt.mask_position).to_owned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    #[default]
    Euclidean,
    Squared,
}

impl Distance {
    pub fn eval(self, a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            Distance::Euclidean => sq.sqrt(),
            Distance::Squared => sq,
        }
    }
}

/// Event-type prototypes, one row per label in label-space order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSpace {
    pub vectors: Array2<f64>,
    pub seed: u64,
}

impl PrototypeSpace {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }
}

/// Prototypes drawn i.i.d. from `N(0, 1/d)`.
pub fn init_prototypes(n: usize, d: usize, seed: u64) -> PrototypeSpace {
    assert!(n >= 1 && d >= 1, "need at least one prototype of dimension >= 1");
    let mut rng = sampler::rng(seed);
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
    PrototypeSpace {
        vectors: Array2::from_shape_fn((n, d), |_| normal.sample(&mut rng)),
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPrediction {
    pub distribution: Vec<f64>,
    pub predicted_index: usize,
    pub predicted_label: String,
}

/// Distances from `e0` to every prototype.
pub fn prototype_distances(
    e0: &EventEmbedding,
    protos: &PrototypeSpace,
    distance: Distance,
) -> Result<Vec<f64>, ModelError> {
    if e0.0.len() != protos.dim() {
        return Err(ModelError::DimensionMismatch {
            embedding: e0.0.len(),
            prototypes: protos.dim(),
        });
    }
    Ok(protos
        .vectors
        .rows()
        .into_iter()
        .map(|row| distance.eval(e0.0.view(), row))
        .collect())
}

/// Softmax over negative distances to the prototypes.
pub fn classify_event(
    e0: &EventEmbedding,
    protos: &PrototypeSpace,
    labels: &LabelSpace,
    distance: Distance,
) -> Result<EventPrediction, ModelError> {
    let d = prototype_distances(e0, protos, distance)?;
    let neg: Vec<f64> = d.iter().map(|x| -x).collect();
    let distribution = softmax(&neg);
    let predicted_index = argmax(&distribution);
    Ok(EventPrediction {
        predicted_label: labels
            .get(predicted_index)
            .map(str::to_string)
            .unwrap_or_else(|| predicted_index.to_string()),
        distribution,
        predicted_index,
    })
}

pub fn event_loss(pred: &EventPrediction, gold_label_index: usize) -> Result<f64, ModelError> {
    nll(&pred.distribution, gold_label_index)
}

pub fn joint_loss(trigger: f64, event: f64, alpha: f64, beta: f64) -> f64 {
    alpha * trigger + beta * event
}

/// Components switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Drop the trigger step: the event prompt carries no trigger clause and
    /// the loss is `beta * L_y`.
    pub no_trigger_recognizer: bool,
    /// Replace the event prompt with `[CLS] mention [SEP]` and classify the
    /// `[CLS]` state.
    pub no_event_classifier_prompt: bool,
    /// Remove ontology texts from both prompts.
    pub no_ontology: bool,
}

impl Ablations {
    pub fn is_empty(&self) -> bool {
        *self == Ablations::default()
    }
}

/// Whether the model is running a training step or inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Counts predicted triggers passed from the recognizer into the event
/// prompt, per mode.
#[derive(Debug, Default)]
pub struct HandoffCounter {
    train: AtomicU64,
    infer: AtomicU64,
}

impl HandoffCounter {
    fn record(&self, mode: Mode) {
        match mode {
            Mode::Train => self.train.fetch_add(1, Ordering::Relaxed),
            Mode::Infer => self.infer.fetch_add(1, Ordering::Relaxed),
        };
    }

    pub fn get(&self, mode: Mode) -> u64 {
        match mode {
            Mode::Train => self.train.load(Ordering::Relaxed),
            Mode::Infer => self.infer.load(Ordering::Relaxed),
        }
    }
}

/// Where the event prompt's trigger clause comes from.
#[derive(Debug, Clone, Copy)]
pub enum TriggerSource<'a> {
    Gold,
    Predicted(&'a str),
}

/// Tokenized inputs for one training example.
#[derive(Debug, Clone)]
pub struct TrainingInputs {
    /// Trigger prompt and the gold word's candidate index, when the trigger
    /// step is active. The index is `None` if truncation removed the gold word.
    pub trigger: Option<(TokenizedPrompt, Option<usize>)>,
    pub event: EventInput,
    pub label: usize,
}

/// Event-side input: tokens plus the positions read from the encoder. The
/// first position is the embedding row; with no trigger step the `[CLS]`
/// row is read too so its logits can score trigger candidates.
#[derive(Debug, Clone)]
pub struct EventInput {
    pub prompt: TokenizedPrompt,
    pub embed_position: usize,
}

/// Gradients for everything the model trains.
#[derive(Debug, Clone)]
pub struct ModelGrads<P> {
    pub encoder: P,
    pub prototypes: Array2<f64>,
}

impl<P: Parameters> ModelGrads<P> {
    pub fn add_assign(&mut self, other: &Self) {
        self.encoder.add_assign(&other.encoder);
        self.prototypes += &other.prototypes;
    }

    pub fn scale(&mut self, s: f64) {
        self.encoder.scale(s);
        self.prototypes *= s;
    }
}

/// Loss terms for one example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleLoss {
    pub trigger: f64,
    pub event: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerGuess {
    pub index: usize,
    pub word: String,
}

/// Model output for one mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub predicted_trigger: TriggerGuess,
    pub predicted_label: String,
    pub label_index: usize,
    pub distribution: Vec<f64>,
}

/// The complete prompt model.
#[derive(Debug)]
pub struct Model<E: MaskedLm> {
    pub encoder: E,
    pub prototypes: PrototypeSpace,
    pub labels: LabelSpace,
    pub prompt: PromptConfig,
    pub ablations: Ablations,
    pub distance: Distance,
    handoffs: HandoffCounter,
}

impl<E: MaskedLm + Clone> Clone for Model<E> {
    fn clone(&self) -> Self {
        Model {
            encoder: self.encoder.clone(),
            prototypes: self.prototypes.clone(),
            labels: self.labels.clone(),
            prompt: self.prompt.clone(),
            ablations: self.ablations,
            distance: self.distance,
            handoffs: HandoffCounter::default(),
        }
    }
}

impl<E: MaskedLm> Model<E> {
    /// A model with freshly initialized prototypes. `no_ontology` is applied
    /// to `prompt` here.
    pub fn new(
        encoder: E,
        labels: LabelSpace,
        mut prompt: PromptConfig,
        ablations: Ablations,
        distance: Distance,
        prototype_seed: u64,
    ) -> Result<Self, ModelError> {
        prompt.validate()?;
        if ablations.no_ontology {
            prompt.use_ontology = false;
        }
        let prototypes = init_prototypes(labels.len().max(1), encoder.dim(), prototype_seed);
        Ok(Model {
            encoder,
            prototypes,
            labels,
            prompt,
            ablations,
            distance,
            handoffs: HandoffCounter::default(),
        })
    }

    pub fn from_parts(
        encoder: E,
        prototypes: PrototypeSpace,
        labels: LabelSpace,
        prompt: PromptConfig,
        ablations: Ablations,
        distance: Distance,
    ) -> Self {
        Model {
            encoder,
            prototypes,
            labels,
            prompt,
            ablations,
            distance,
            handoffs: HandoffCounter::default(),
        }
    }

    pub fn handoffs(&self) -> &HandoffCounter {
        &self.handoffs
    }

    fn uses_trigger_step(&self) -> bool {
        !self.ablations.no_trigger_recognizer
    }

    fn tokenize(&self, p: &promptkit::PromptInstance) -> Result<TokenizedPrompt, ModelError> {
        let enc = &self.encoder;
        Ok(promptkit::map_words_to_tokens(
            p,
            enc.segmenter(),
            enc.vocab(),
            enc.spec().max_tokens,
        )?)
    }

    pub fn trigger_input(&self, m: &EventMention) -> Result<TokenizedPrompt, ModelError> {
        self.tokenize(&promptkit::assemble_trigger_prompt(m, &self.prompt)?)
    }

    /// Assembles the event-side input. Predicted triggers are counted as
    /// recognizer-to-classifier handoffs.
    pub fn event_input(
        &self,
        m: &EventMention,
        trigger: TriggerSource<'_>,
        mode: Mode,
    ) -> Result<EventInput, ModelError> {
        if self.ablations.no_event_classifier_prompt {
            let prompt = self.tokenize(&promptkit::assemble_plain_input(m)?)?;
            return Ok(EventInput {
                embed_position: prompt.mask_position,
                prompt,
            });
        }
        let word = if self.uses_trigger_step() {
            Some(match trigger {
                TriggerSource::Gold => m.gold_trigger_word(),
                TriggerSource::Predicted(w) => {
                    self.handoffs.record(mode);
                    w
                }
            })
        } else {
            None
        };
        let prompt = self.tokenize(&promptkit::assemble_event_prompt(m, word, &self.prompt)?)?;
        Ok(EventInput {
            embed_position: prompt.mask_position,
            prompt,
        })
    }

    pub fn label_index(&self, label: &str) -> Result<usize, ModelError> {
        self.labels
            .position(label)
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }

    /// Training inputs with the gold trigger in the event prompt.
    pub fn training_inputs(&self, m: &EventMention) -> Result<TrainingInputs, ModelError> {
        let trigger = if self.uses_trigger_step() {
            let p = self.trigger_input(m)?;
            let gold = m.gold_trigger_index();
            let gold = (gold < p.mention_spans.len()).then_some(gold);
            Some((p, gold))
        } else {
            None
        };
        Ok(TrainingInputs {
            trigger,
            event: self.event_input(m, TriggerSource::Gold, Mode::Train)?,
            label: self.label_index(&m.label)?,
        })
    }

    fn event_rows(&self, input: &EventInput) -> Vec<usize> {
        if self.uses_trigger_step() || input.embed_position == 0 {
            vec![input.embed_position]
        } else {
            // logits are produced for rows[0]; read [CLS] first, embed second
            vec![0, input.embed_position]
        }
    }

    fn event_hidden_index(&self, input: &EventInput) -> usize {
        self.event_rows(input).len() - 1
    }

    /// Loss and gradients for one example.
    pub fn example_grad(
        &self,
        inp: &TrainingInputs,
        alpha: f64,
        beta: f64,
    ) -> Result<(ExampleLoss, ModelGrads<E::Params>), ModelError> {
        let enc = &self.encoder;
        let mut grads = ModelGrads {
            encoder: enc.params().zeros_like(),
            prototypes: Array2::zeros(self.prototypes.vectors.raw_dim()),
        };

        let mut lt = 0.0;
        if let Some((prompt, Some(gold))) = &inp.trigger {
            let tape = enc.forward(&prompt.ids, &[prompt.mask_position])?;
            let logits = enc.logits(&tape);
            let cand = prompt.candidate_token_ids();
            let scores: Vec<f64> = cand.iter().map(|&t| logits[t as usize]).collect();
            let dist = softmax(&scores);
            lt = neg_log(dist[*gold]);
            if alpha != 0.0 && dist[*gold] >= LOG_FLOOR {
                let mut dz = Array1::zeros(logits.len());
                for (j, (&t, &p)) in cand.iter().zip(&dist).enumerate() {
                    let target = if j == *gold { 1.0 } else { 0.0 };
                    dz[t as usize] += alpha * (p - target);
                }
                enc.backward(&tape, &[], Some(&dz), &mut grads.encoder);
            }
        }

        let rows = self.event_rows(&inp.event);
        let tape = enc.forward(&inp.event.prompt.ids, &rows)?;
        let hi = self.event_hidden_index(&inp.event);
        let e0 = EventEmbedding(enc.hidden(&tape, hi).clone());
        let dists = prototype_distances(&e0, &self.prototypes, self.distance)?;
        let neg: Vec<f64> = dists.iter().map(|x| -x).collect();
        let p = softmax(&neg);
        let ly = neg_log(p[inp.label]);
        if beta != 0.0 && p[inp.label] >= LOG_FLOOR {
            let mut de0 = Array1::<f64>::zeros(e0.0.len());
            for (n, row) in self.prototypes.vectors.rows().into_iter().enumerate() {
                // dL/dD_n = [n == gold] - p_n
                let gd = beta * (if n == inp.label { 1.0 } else { 0.0 } - p[n]);
                let diff = &e0.0 - &row;
                let dd_de0 = match self.distance {
                    Distance::Euclidean if dists[n] > 0.0 => diff / dists[n],
                    Distance::Euclidean => Array1::zeros(e0.0.len()),
                    Distance::Squared => diff * 2.0,
                };
                de0.scaled_add(gd, &dd_de0);
                grads.prototypes.row_mut(n).scaled_add(-gd, &dd_de0);
            }
            let mut d_hidden = vec![Array1::zeros(e0.0.len()); rows.len()];
            d_hidden[hi] = de0;
            enc.backward(&tape, &d_hidden, None, &mut grads.encoder);
        }

        let (lt, alpha) = if inp.trigger.is_some() { (lt, alpha) } else { (0.0, 0.0) };
        Ok((
            ExampleLoss {
                trigger: lt,
                event: ly,
                total: joint_loss(lt, ly, alpha, beta),
            },
            grads,
        ))
    }

    /// Forward-only version of [`Model::example_grad`].
    pub fn example_loss(&self, inp: &TrainingInputs, alpha: f64, beta: f64) -> Result<ExampleLoss, ModelError> {
        let enc = &self.encoder;
        let mut lt = 0.0;
        if let Some((prompt, Some(gold))) = &inp.trigger {
            let tape = enc.forward(&prompt.ids, &[prompt.mask_position])?;
            let scores: Vec<f64> = prompt
                .candidate_token_ids()
                .iter()
                .map(|&t| enc.logits(&tape)[t as usize])
                .collect();
            lt = neg_log(softmax(&scores)[*gold]);
        }
        let rows = self.event_rows(&inp.event);
        let tape = enc.forward(&inp.event.prompt.ids, &rows)?;
        let e0 = EventEmbedding(enc.hidden(&tape, self.event_hidden_index(&inp.event)).clone());
        let pred = classify_event(&e0, &self.prototypes, &self.labels, self.distance)?;
        let ly = event_loss(&pred, inp.label)?;
        let alpha = if inp.trigger.is_some() { alpha } else { 0.0 };
        Ok(ExampleLoss {
            trigger: lt,
            event: ly,
            total: joint_loss(lt, ly, alpha, beta),
        })
    }

    /// Two-step inference: recognize the trigger, then classify with the
    /// predicted trigger in the event prompt.
    pub fn predict(&self, m: &EventMention) -> Result<Prediction, ModelError> {
        let enc = &self.encoder;
        let (trigger, event) = if self.uses_trigger_step() {
            let tp = self.trigger_input(m)?;
            let tape = enc.forward(&tp.ids, &[tp.mask_position])?;
            let t = recognize_trigger(&tp, enc.logits(&tape), m)?;
            let event = self.event_input(m, TriggerSource::Predicted(&t.predicted_word), Mode::Infer)?;
            (Some(t), event)
        } else {
            (None, self.event_input(m, TriggerSource::Gold, Mode::Infer)?)
        };

        let rows = self.event_rows(&event);
        let tape = enc.forward(&event.prompt.ids, &rows)?;
        let e0 = EventEmbedding(enc.hidden(&tape, self.event_hidden_index(&event)).clone());
        let trigger = match trigger {
            Some(t) => t,
            // no trigger step: score candidates with the [CLS] logits
            None => recognize_trigger(&event.prompt, enc.logits(&tape), m)?,
        };
        let pred = classify_event(&e0, &self.prototypes, &self.labels, self.distance)?;
        Ok(Prediction {
            id: m.id.clone(),
            predicted_trigger: TriggerGuess {
                index: trigger.predicted_index,
                word: trigger.predicted_word,
            },
            predicted_label: pred.predicted_label,
            label_index: pred.predicted_index,
            distribution: pred.distribution,
        })
    }
}
