//! Desk-scale laboratory for subject-fidelity fine-tuning of flow-matching
//! generative models.
//!
//! The crate builds a complete, deterministic pipeline on a synthetic
//! "subject world" where ground truth is known analytically:
//!
//! 1. [`world`] generates triplet datasets (target scene, subject cue,
//!    context embedding) from a seeded orthogonal mixing map, plus a 2-D
//!    car-color mixture for the mode-narrowing experiment. Because the
//!    generative map is known, subject fidelity and text alignment are
//!    exact cosine oracles instead of learned encoders.
//! 2. [`numcore`] + [`adapters`] provide the model substrate: small dense
//!    MLP vector fields with exact reverse-mode gradients, and named
//!    low-rank adapters that can be toggled to realize reference-vs-policy
//!    evaluation.
//! 3. [`flow`] + [`schedule`] supply the flow-matching path construction, a
//!    guided Euler sampler, and the timestep distributions (uniform and
//!    logit-normal) used to reweight training.
//! 4. [`objectives`] implements the supervised flow-matching loss and the
//!    pairwise subject-fidelity comparison loss against a frozen reference.
//! 5. [`negatives`] synthesizes negative targets (condition-degradation,
//!    naive self-play, similarity-ranked pairs) and measures pair-gap
//!    statistics.
//! 6. [`trainer`] + [`evalkit`] run the staged pipeline
//!    (pretrain -> SFT -> synthesize -> SFO -> evaluate) with checkpoints,
//!    JSONL metrics, and ablation report tables.
//!
//! Everything is deterministic given a seed: RNG streams are counter-based
//! and splittable, parallel loops use per-item streams with order-preserving
//! collection, and all file formats are byte-stable.

pub mod adapters;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod flow;
pub mod manifest;
pub mod negatives;
pub mod numcore;
pub mod objectives;
pub mod parallel;
pub mod report;
pub mod schedule;
pub mod trainer;
pub mod world;

pub use error::{Error, Result};
