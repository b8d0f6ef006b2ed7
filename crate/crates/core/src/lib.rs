//! Directional-collapse geometry and finite-shot nearest-class-centroid
//! certificates for labeled embedding sets.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataset`] loads, validates and writes labeled embeddings (EMB1 and CSV).
//! * [`geometry`] computes per-class moments, per-pair gaps, CDNV, directional
//!   CDNV and the fourth-moment ratio, plus the decision-axis variance split.
//! * [`certificates`] evaluates the pairwise and multiclass error bounds.
//! * [`fewshot`] runs seeded Monte Carlo few-shot NCC experiments.
//! * [`synthetic`] provides Gaussian pairs, the orthogonal factor model and the
//!   two-point extremal law, each with analytic ground truth.
//! * [`multitask`] measures cross-task decision-axis alignment.
//! * [`report`] drives the command-line subcommands and their JSON/CSV output.
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and plain iterators otherwise. Results do
//! not depend on the worker count.

pub mod certificates;
pub mod dataset;
pub mod eigen;
pub mod error;
pub mod fewshot;
pub mod geometry;
pub mod multitask;
pub mod par;
pub mod report;
pub mod rng;
pub mod sum;
pub mod synthetic;

pub use certificates::{BoundValue, BoundVariant, MulticlassBound, PairInputs};
pub use dataset::{EmbeddingDataset, Labeling, ValidationReport};
pub use error::{Error, Result};
pub use fewshot::{FewShotConfig, FewShotEstimate, Shots};
pub use geometry::{ClassStats, PairGeometry};
