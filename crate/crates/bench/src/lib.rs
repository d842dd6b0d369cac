//! Fixtures shared by the benchmarks.

use semcx_core::synthetic::{zipf_corpus, ZipfCorpusConfig};
use semcx_core::{Dataset, EmbeddingMatrix};

pub fn corpus(unique_transcripts: usize) -> Dataset {
    zipf_corpus(&ZipfCorpusConfig {
        unique_transcripts,
        max_copies: 10,
        ..Default::default()
    })
    .expect("synthetic corpus")
}

/// `n` deterministic dense rows with strictly positive entries.
pub fn embedding(n: usize, dim: usize) -> EmbeddingMatrix {
    let rows = (0..n)
        .map(|i| {
            (0..dim)
                .map(|j| 1.1 + ((i * 31 + j * 17) as f64 * 0.37).sin())
                .collect()
        })
        .collect();
    EmbeddingMatrix::from_rows((0..n).map(|i| i.to_string()).collect(), rows, "bench")
        .expect("finite rows")
}
