//! Few-shot event detection with a two-step prompt model.
//!
//! A masked language model first picks the trigger word of a mention, then
//! classifies the mention by the distance between the mask embedding of an
//! event prompt and one learned prototype per event type.

pub mod ablation;
pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod evaluator;
pub mod model;
pub mod optim;
pub mod promptkit;
pub mod sampler;
pub mod synthetic;
pub mod trainer;

pub use corpus::{load_corpus, Corpus, CorpusFormat, EventMention, LabelSpace};
pub use encoder::{toy_encoder, EncoderSpec, MaskedLm, ToyEncoder, Vocab};
pub use model::{Ablations, Distance, Model, Prediction};
pub use promptkit::PromptConfig;
pub use evaluator::EvalReport;
pub use sampler::{FewShotSplit, ProbeMethod};
pub use trainer::{TrainConfig, TrainLog};
