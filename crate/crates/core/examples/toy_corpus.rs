//! Writes the separable toy corpus as JSON lines to stdout.
//!
//! ```sh
//! cargo run -p fsed --example toy_corpus > data/toy/corpus.jsonl
//! ```

use std::io::{self, BufWriter};

use fsed::corpus::write_corpus;
use fsed::synthetic::{separable_corpus, SeparableSpec};

fn main() -> io::Result<()> {
    let corpus = separable_corpus(&SeparableSpec::default());
    write_corpus(&corpus, BufWriter::new(io::stdout().lock()))
}
