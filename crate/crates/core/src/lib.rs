//! Joint score-based diffusion generation of graphs with multi-dimensional
//! edge attributes.
//!
//! The crate provides, end to end:
//!
//! - [`graph`]: the `(x, e)` graph representation, adjacency extraction,
//!   padding/batching, and JSONL dataset IO;
//! - [`autodiff`]: a small reverse-mode tape used by the score network;
//! - [`sde`]: the variance-preserving forward SDE, the denoising score
//!   matching loss, and the predictor–corrector reverse-time sampler;
//! - [`scorenet`]: the permutation-equivariant score network with graph
//!   neural multiplication and edge-aware attention blocks;
//! - [`train`]: Adam with decoupled weight decay, EMA tracking, the training
//!   loop, and finite-difference gradient checking;
//! - [`ckpt`]: JSON-manifest + binary-blob checkpoints;
//! - [`data`]: synthetic dataset generators (Gaussian clusters, MDP mazes,
//!   stochastic block model, 2-D grids) and augmentation;
//! - [`metrics`]: MMD statistics, WL fingerprints, uniqueness/novelty,
//!   cluster homogeneity, and MDP validity metrics.

pub mod autodiff;
pub mod ckpt;
pub mod data;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod scorenet;
pub mod sde;
pub mod train;

pub use ckpt::{load_checkpoint, save_checkpoint, Checkpoint};
pub use data::{gen_clusters, gen_maze, gen_maze_dataset, split, ClusterSpec, MazeSpec};
pub use error::{EdgeDiffError, Result};
pub use graph::{AdjacencyMatrix, Graph, GraphBatch};
pub use metrics::{
    decode_category, mdp_metrics, mmd, quantize_mdp, KernelSpec, MdpReport, MetricReport,
    NodeCategory,
};
pub use scorenet::{ParamStore, ScoreNet, ScoreNetConfig};
pub use sde::{SamplerConfig, Score, VpSdeConfig};
pub use train::{train, TrainConfig, Trainer, TrainLog};
