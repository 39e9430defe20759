//! Built-in graphs.

use crate::error::{Error, Result};
use crate::graph::CausalGraph;

const EHS_FP: &str = include_str!("../fixtures/ehs_fp.graph");

/// Names accepted by [`preset`].
pub const PRESETS: &[&str] = &["ehs-fp"];

/// The energy-efficiency / fuel-poverty graph over 14 observed and 6 latent nodes.
pub fn ehs_fp() -> CausalGraph {
    CausalGraph::from_spec(EHS_FP).expect("bundled graph is valid")
}

pub fn preset(name: &str) -> Result<CausalGraph> {
    match name {
        "ehs-fp" => Ok(ehs_fp()),
        other => Err(Error::InvalidArgument(format!(
            "unknown preset `{other}` (available: {})",
            PRESETS.join(", ")
        ))),
    }
}
