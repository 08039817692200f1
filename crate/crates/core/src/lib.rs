//! Multimodal survival prediction from heterogeneous patient graphs.
//!
//! Each patient carries up to three graphs (pathology patches, genes,
//! clinical fields). Per modality, a meta-path graph autoencoder produces node
//! embeddings, a sparse-convolutional masked autoencoder turns them into a
//! pooled token, tokens are mixed across modalities, and per-modality heads
//! trained with a Cox partial likelihood give risk scores that are averaged.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cmae;
pub mod config;
pub mod error;
pub mod eval;
pub mod fer;
pub mod fusion;
pub mod hetgraph;
pub mod nn;
pub mod numeric;
pub mod persist;
pub mod scalar;
pub mod survival;

pub use config::Config;
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numeric::Tensor<f64>;
pub type Tensor32 = numeric::Tensor<f32>;
pub type Pipeline64 = survival::Pipeline<f64>;
pub type Pipeline32 = survival::Pipeline<f32>;
pub type PatientRecord64 = hetgraph::PatientRecord<f64>;
pub type PatientRecord32 = hetgraph::PatientRecord<f32>;
pub type HetGraph64 = hetgraph::HetGraph<f64>;
pub type HetGraph32 = hetgraph::HetGraph<f32>;
