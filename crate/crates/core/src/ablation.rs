//! Variant grids: prompt segment orders and component switches.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::encoder::EncoderSpec;
use crate::evaluator::{self, EvalReport};
use crate::model::Ablations;
use crate::promptkit::{EventOrder, PromptConfig, TriggerOrder};
use crate::sampler::FewShotSplit;
use crate::trainer::{self, TrainConfig};

/// One configuration to train and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub prompt: PromptConfig,
    pub ablations: Ablations,
}

/// Both recognizer orders with the default classifier order, then all six
/// classifier orders with the default recognizer order.
pub fn sequence_variants(base: &PromptConfig, ablations: Ablations) -> Vec<Variant> {
    let triggers = TriggerOrder::ALL.into_iter().map(|o| Variant {
        name: o.name().to_string(),
        prompt: PromptConfig {
            trigger_order: o,
            event_order: EventOrder::default(),
            ..base.clone()
        },
        ablations,
    });
    let events = EventOrder::ALL.into_iter().map(|o| Variant {
        name: o.name().to_string(),
        prompt: PromptConfig {
            trigger_order: TriggerOrder::default(),
            event_order: o,
            ..base.clone()
        },
        ablations,
    });
    triggers.chain(events).collect()
}

/// The full model followed by each single-component removal.
pub fn component_variants(base: &PromptConfig) -> Vec<Variant> {
    let v = |name: &str, ablations: Ablations| Variant {
        name: name.to_string(),
        prompt: base.clone(),
        ablations,
    };
    vec![
        v("full", Ablations::default()),
        v(
            "no-ontology",
            Ablations {
                no_ontology: true,
                ..Default::default()
            },
        ),
        v(
            "no-trigger-recognizer",
            Ablations {
                no_trigger_recognizer: true,
                ..Default::default()
            },
        ),
        v(
            "no-event-classifier-prompt",
            Ablations {
                no_event_classifier_prompt: true,
                ..Default::default()
            },
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub name: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Trains and tests every variant on `split` with `seed`. A failing variant
/// is recorded and the grid continues.
pub fn run_grid(
    corpus: &Corpus,
    split: &FewShotSplit,
    cfg: &TrainConfig,
    enc: &EncoderSpec,
    variants: &[Variant],
    seed: u64,
) -> Vec<GridRow> {
    let test = corpus.select(&split.test);
    variants
        .iter()
        .map(|v| {
            let cfg = TrainConfig {
                ablations: v.ablations,
                ..cfg.clone()
            };
            let result = trainer::train(split, corpus, &cfg, enc, &v.prompt, seed)
                .and_then(|out| Ok(evaluator::evaluate(&out.model, &test, cfg.batch_eval)?));
            match result {
                Ok(r) => GridRow {
                    name: v.name.clone(),
                    report: Some(r),
                    error: None,
                },
                Err(e) => GridRow {
                    name: v.name.clone(),
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}
