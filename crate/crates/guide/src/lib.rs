//! mdbook cannot run snippets that depend on workspace crates, so each
//! chapter is pulled in as a module doc and `cargo test --doc` runs it.
//! One module per chapter keeps failures traceable to their page.

#[doc = include_str!("../../../README.md")]
pub mod readme {}
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/prompts.md")]
pub mod prompts {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/ablations.md")]
pub mod ablations {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
