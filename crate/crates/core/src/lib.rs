//! Teacher-to-student emergent communication in 4x4 grid-world mazes.
//!
//! Deep-Q teachers solve single maze tasks, a sparse autoencoder compresses
//! their Q-matrices into short real-valued messages, and a message-conditioned
//! student learns to act on them. The language can optionally be shaped by the
//! student's differentiable goal-finding probability. Analysis tools (PCA,
//! grouped variance / F-tests, t-tests) operate on message and Q-matrix
//! archives.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix the scalar to `f64`, which is what the pipeline and
//! the artifact formats use.

pub mod analysis;
pub mod artifacts;
pub mod config;
pub mod diffnet;
pub mod error;
pub mod gridworld;
pub mod language;
pub mod loopback;
pub mod scalar;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use gridworld::{Action, Cell, Maze, Task, TaskFamily, Transition};

/// Differentiable network over `f64`.
pub type Network = diffnet::Network<f64>;
/// Network parameters together with optimizer state.
pub type ParamStore = diffnet::ParamStore<f64>;
/// Teacher Q-matrix (or student raw outputs) over `f64`.
pub type QMatrix = teacher::QMatrix<f64>;
/// Latent message over `f64`.
pub type Message = language::Message<f64>;
/// Sparse autoencoder over `f64`.
pub type Sae = language::Sae<f64>;
/// Message-conditioned student over `f64`.
pub type Student = student::Student<f64>;
/// Per-epoch loss record over `f64`.
pub type LossBreakdown = language::LossBreakdown<f64>;
/// Grouped-variance result over `f64`.
pub type AnovaResult = analysis::AnovaResult<f64>;
/// PCA result over `f64`.
pub type Pca = analysis::Pca<f64>;
