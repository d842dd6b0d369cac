//! Semantic complexity measures for spoken-language-understanding datasets.
//!
//! Lexical measures count the vocabulary and the n-gram entropy of the
//! transcripts. Geometric measures embed every transcript (LDA topic
//! distributions or precomputed sentence embeddings) and ask how well the
//! intent labels follow the geometry: the share of minimum-spanning-tree
//! weight on edges between different labels, and the disagreement between
//! the labels and a complete-linkage cosine clustering.

pub mod corpus;
pub mod encodings;
pub mod error;
pub mod filtration;
pub mod geometric;
pub mod lexical;
pub mod record;
pub mod reporting;
pub mod synthetic;

pub use corpus::{
    load_dataset, normalize, unique_examples, Dataset, Example, InputFormat, NormalizationPolicy,
};
pub use encodings::{
    cosine_distance, encode_lda, fit_lda, load_embeddings, EmbeddingMatrix, LdaModel, LdaParams,
};
pub use error::{Error, Result};
pub use filtration::{
    filter_step, filtration_sequence, least_frequent_ngrams, random_subsample, FiltrationConfig,
    FiltrationTrace, TraceStep,
};
pub use geometric::{
    adjusted_rand_index, agglomerative_cluster, ari_complexity, distance_matrix,
    geometric_measures, minimum_spanning_tree, mst_complexity, ClusterAssignment, DistanceMatrix,
    GeometricMeasures, MstEdgeList,
};
pub use lexical::{
    lexical_measures, ngram_entropy, ngram_profile, LexicalMeasures, NGramProfile, Scope,
};
pub use reporting::{
    average_geometric, build_report, correlate, emit_report, linear_fit_r2, render, Analyzer,
    ComplexityReport, CorrelationResult, EncoderSpec, MeasureConfig, OutputFormat, Record,
};
