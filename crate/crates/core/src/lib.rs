//! Sliced recurrent networks on a small dense `f64` substrate.
//!
//! A length-`T` sequence is cut into `n` parts `k` times. Layer 0 runs a GRU
//! over each of the `n^k` minimum subsequences, and every higher layer runs a
//! GRU over `n` child states, so the longest dependency chain shrinks from
//! `T` steps to `T/n^k + n·k`. Subsequences on a layer are independent and
//! run in parallel.

// Kernels walk several parallel buffers with one index.
#![allow(clippy::needless_range_loop)]

pub mod cell;
pub mod checkpoint;
mod codec;
pub mod engine;
pub mod equivalence;
pub mod error;
pub mod parallel;
pub mod slice;
pub mod speed;
pub mod tensor;
pub mod text;
pub mod training;

pub use cell::{gru_step, gru_step_backward, linear_step, GruParams, GruStepCache, GruStepGrads, LinearRnnParams, RecurrentCell};
pub use checkpoint::{load_model, save_model};
pub use engine::{
    hierarchical_forward, layer_forward_parallel, srnn_backward, srnn_forward, srnn_forward_batch, srnn_infer,
    standard_backward, standard_forward, ForwardTrace, ModelDims, ModelGradients, SrnnModel,
};
pub use equivalence::{construct_equivalent_srnn, expand_closed_form, verify_equivalence, EquivalenceCase, EquivalenceReport};
pub use error::{Result, SrnnError};
pub use slice::{build_plan, SliceConfig, SlicePlan};
pub use speed::{emit_table, predict_ratio, run_bench, BenchConfig, BenchReport};
pub use tensor::{matmul, matrix_power, softmax, Matrix, SeededRng};
pub use text::{build_vocab, encode_pad, make_toy_corpus, tokenize, Corpus, Example, Vocabulary};
pub use training::{adam_update, evaluate, nll_loss, predict, train, AdamConfig, AdamState, ClassifierHead, TrainConfig};
