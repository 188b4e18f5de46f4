//! Reasoning-faithfulness evaluation for driving models that emit a natural
//! language rationale next to each predicted trajectory.

pub mod action;
pub mod config;
pub mod counterfactual;
pub mod datamodel;
pub mod entity;
pub mod lexicon;
pub mod perturb;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synth;
