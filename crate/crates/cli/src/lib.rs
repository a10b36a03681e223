//! Experiment plumbing around `sqn_core`: synthetic phantoms, diagnostics
//! and the artifact writers behind the commands.

pub mod diagnostics;
pub mod phantom;
pub mod run;
