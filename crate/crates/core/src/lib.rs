//! Desk-scale simulation of emergent lexical conventions.
//!
//! Two symmetric neural agents play Lewis signaling games over a synthetic
//! object world: a speaker sees a view of a target object, emits a short
//! discrete message, and a listener must pick the target out of a lineup of
//! distractor views. Varying how often the lineup can only be resolved by a
//! shape distinction (the *communicative need* for shape) changes which
//! attributes the emergent language encodes, and iterated learning across
//! generations tests whether that emphasis survives cultural transmission.
//!
//! The crate is organized around the pipeline:
//!
//! * [`worldgen`] — the discrete object space and reproducible view splits.
//! * [`perception`] — a frozen feature map from views to percepts.
//! * [`gradcore`] — a minimal reverse-mode autodiff engine plus sampling
//!   and optimization primitives used by everything downstream.
//! * [`agent`] — the symmetric speaker/listener architecture.
//! * [`game`] — shape/color/random game construction and batching.
//! * [`learning`] — losses, training phases, and the iterated-learning driver.
//! * [`metrics`] — accuracy/information-loss and mutual-information
//!   complexity measurements, with permuted-language baselines.
//!
//! Experiment orchestration and the command-line front end live in the
//! companion `shapelex-cli` crate; a narrative guide with runnable snippets
//! lives in the repository's `book/` directory.

pub mod agent;
pub mod game;
pub mod gradcore;
pub mod learning;
pub mod metrics;
pub mod perception;
pub mod probe;
pub mod rngutil;
pub mod worldgen;
