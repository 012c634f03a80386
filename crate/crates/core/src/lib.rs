//! Barnes-Hut t-SNE with a Morton-code quadtree, data-parallel over points.
//!
//! The pipeline runs exact neighbor search and per-point perplexity
//! calibration once, then iterates tree build, summarization, attractive and
//! repulsive forces, and a momentum/gains update on a 2-D embedding.
//!
//! Building without the default `parallel` feature swaps every kernel for a
//! sequential version with identical results.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod affinity;
pub mod error;
pub mod forces;
pub mod knn;
pub mod optimizer;
pub mod par;
pub mod points;
pub mod quadtree;
pub mod real;
pub mod tensor_io;

pub use affinity::{calibrate_perplexity, symmetrize, PerplexityResult, SparseAffinity};
pub use error::{Result, TsneError};
pub use forces::{attractive, repulsive_bh, repulsive_exact, GradientBuffers};
pub use knn::{knn_exact, NeighborGraph};
pub use optimizer::{
    init_embedding, kl_divergence, run, Embedding, KlMode, Stage, StepTimings, TsneConfig, TsneOutput,
};
pub use points::Points;
pub use quadtree::{build_summarized, MortonQuadtree};
pub use real::{Precision, Real};
pub use tensor_io::{load_labels, load_matrix, save_matrix, Format, InputMatrix, LabelVector};
