//! Closed-loop semantic validation of generated QE artefacts.

pub mod artefact;
pub mod clock;
pub mod embedding;
pub mod generation;
pub mod lexicon;
pub mod similarity;
pub mod text;
pub mod rubric;
pub mod config;
pub mod orchestrator;
pub mod reporting;
pub mod sample;
pub mod workspace;
