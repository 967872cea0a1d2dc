//! Weakly supervised change detection on bi-temporal image pairs.
//!
//! A Siamese teacher trained only with image-level labels produces class
//! activation maps; a Siamese student is distilled from those maps; the
//! student's multiscale sigmoid inference yields pseudo pixel labels that
//! train a downstream segmentation network.

pub mod config;
pub mod data;
pub mod error;
pub mod figure;
pub mod kd;
pub mod metrics;
pub mod models;
pub mod msi;
pub mod optim;
pub mod pipeline;
pub mod seed;
pub mod segnet;
pub mod tensor;

pub use error::{Error, Result};
