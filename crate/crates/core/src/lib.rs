//! Unsupervised temporal filter learning for fMRI decoding.
//!
//! Voxel time series are convolved along time with filter banks learned by
//! sparse autoencoders, max-pooled across neighbouring voxels and squashed
//! with `tanh`, in up to two stacked blocks. The resulting representation is
//! sampled at labelled time points and classified with k-nearest neighbours,
//! alongside the classical MVPA baselines.
//!
//! Module map:
//!
//! * [`dataset`]: the voxel x time matrix, its file format, a synthetic
//!   generator and window sampling.
//! * [`autoencoder`]: the sparse autoencoder cost, gradient and trainer.
//! * [`convnet`]: convolution, spatial pooling and the two-block pipeline.
//! * [`hyperopt`]: filter-decorrelation hyperparameter selection.
//! * [`decode`]: design matrices for every method and the kNN classifier.
//! * [`harness`]: statistics, learning curves, experiments and reports.

pub mod autoencoder;
pub mod convnet;
pub mod dataset;
pub mod decode;
mod error;
pub mod harness;
pub mod hyperopt;
pub mod rng;

pub use error::{Error, ParseError, Result};
