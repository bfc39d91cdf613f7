//! Cauchy-Schwarz regularized autoencoding.
//!
//! The crate is organized around the closed-form Cauchy-Schwarz divergence
//! between diagonal Gaussian mixtures ([`gmm`]), a small reverse-mode
//! autodiff engine with dense layers and Adam ([`autodiff`]), the training
//! objectives built on top of both ([`models`], [`semisup`]), dataset
//! generators and loaders ([`data`]), evaluation metrics ([`eval`]) and a
//! configuration-driven experiment runner ([`run`]).

pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod models;
pub mod run;
pub mod semisup;

pub use error::{Error, Result};
pub use gmm::{DiagGaussian, DiagGmm, QuadratureSpec};
