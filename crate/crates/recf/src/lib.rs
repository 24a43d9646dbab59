//! Hybrid collaborative filtering with short item descriptions.
//!
//! The toolkit predicts unknown ratings from three heterogeneous inputs:
//! a sparse rating matrix, a sparse like/dislike labeling matrix, and
//! short per-item text descriptions. Descriptions are turned into
//! vectors by training skip-gram word embeddings with hierarchical
//! softmax and averaging word vectors per item; the resulting
//! description matrix is fused with ratings and labels in a regularized
//! matrix-factorization model fitted by an EM-style loop.
//!
//! Module map:
//!
//! - [`corpus`]: tokenization, vocabularies, Huffman coding trees
//! - [`embedding`]: skip-gram training and the description matrix
//! - [`model`]: the hybrid factor model, its solvers, fitting, prediction
//! - [`eval`]: splits, metrics, and the sparsity-sweep harness
//! - [`io`]: dataset parsing, run configuration, report files

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests, so the book cannot drift
// from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/text-and-trees.md")]
    mod text_and_trees {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/factor-model.md")]
    mod factor_model {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
