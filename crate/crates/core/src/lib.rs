//! Weakly supervised 3D semantic segmentation guided by 2D vision-language
//! embeddings.
//!
//! The pipeline consumes a point cloud, a set of posed views carrying dense
//! per-pixel embeddings from a frozen vision-language image encoder, the text
//! embeddings of every class name, and a scene-level list of the classes
//! present. No per-point annotation is used for training.
//!
//! Stages, in order:
//!
//! 1. [`geometry`] projects points into each view with a depth-occlusion test.
//! 2. [`fusion`] averages the pixel embeddings every point lands on.
//! 3. [`labeling`] classifies fused embeddings against the text bank, masks
//!    classes absent from the scene, and extracts pseudo labels.
//! 4. [`adapter`] trains a two-layer residual adapter on the pseudo labels.
//! 5. [`distill`] trains a point encoder whose outputs match the frozen
//!    adapter's embeddings under a cosine loss.
//! 6. [`evalkit`] runs open-vocabulary inference, metrics and the ablation
//!    harness.
//!
//! [`synth`] generates seeded synthetic rooms with exact ground truth, which
//! every end-to-end test relies on. [`tensorio`] holds the on-disk formats.
//!
//! Run `cargo run --example <name>` for a tour of each stage; the
//! `vlseg3d` binary exposes the same stages as subcommands.

pub mod adapter;
pub mod cli;
pub mod config;
pub mod distill;
pub mod error;
pub mod evalkit;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod knn;
pub mod labeling;
pub mod loss;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod tensorio;

pub use error::{Error, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE: i32 = 255;
