//! The five layout-level mitigation passes over [`LayoutProgram`]: return
//! merging, indirect-jump merging, instruction boundary widening, jump
//! displacement sledding, and function reordering. Each is deterministic
//! given a seed and emits per-pass statistics.

mod merge;
mod reorder;
mod sled;
mod widen;

pub use merge::{merge_indirect_jumps, merge_returns};
pub use reorder::reorder_functions;
pub use sled::sled_jump_displacements;
pub use widen::{widen_boundaries, widen_boundaries_with};

use crate::layout::{AssembleError, LayoutProgram};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Iteration and failure-detection bounds plus the RNG seed for the
/// randomized passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassLimits {
    pub max_iterations: u64,
    /// Consecutive iterations without progress before a function (sled) or
    /// the whole pass (reorder) gives up.
    pub max_consecutive_failures: u64,
    pub seed: u64,
}

impl Default for PassLimits {
    fn default() -> Self {
        PassLimits { max_iterations: 100, max_consecutive_failures: 5, seed: 0 }
    }
}

/// How a pass stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// No remaining sites.
    Clean,
    /// Failure detection tripped; remaining sites could not be reduced.
    LocalMinimum,
    /// The iteration budget ran out.
    IterationLimit,
}

/// Per-pass observability: what was edited, how many problem sites existed
/// before and after, and which functions failure detection excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassStats {
    pub pass: String,
    pub edits: u64,
    pub edits_per_function: BTreeMap<String, u64>,
    pub sites_before: u64,
    pub sites_after: u64,
    pub iterations: u64,
    pub excluded_functions: Vec<String>,
    pub termination: Termination,
}

impl PassStats {
    fn new(pass: &str) -> Self {
        PassStats {
            pass: pass.to_string(),
            edits: 0,
            edits_per_function: BTreeMap::new(),
            sites_before: 0,
            sites_after: 0,
            iterations: 0,
            excluded_functions: Vec::new(),
            termination: Termination::Clean,
        }
    }

    fn record_edit(&mut self, function: &str, count: u64) {
        self.edits += count;
        *self.edits_per_function.entry(function.to_string()).or_default() += count;
    }
}

/// A mitigation pass by CLI name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PassName {
    MergeRet,
    MergeIjmp,
    Widen,
    Sled,
    Reorder,
}

impl PassName {
    pub fn name(&self) -> &'static str {
        match self {
            PassName::MergeRet => "merge-ret",
            PassName::MergeIjmp => "merge-ijmp",
            PassName::Widen => "widen",
            PassName::Sled => "sled",
            PassName::Reorder => "reorder",
        }
    }
}

/// The order the full pipeline applies by default.
pub const DEFAULT_PASS_ORDER: [PassName; 5] = [
    PassName::MergeRet,
    PassName::MergeIjmp,
    PassName::Widen,
    PassName::Sled,
    PassName::Reorder,
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown pass {0:?} (expected merge-ret, merge-ijmp, widen, sled, reorder)")]
pub struct UnknownPass(pub String);

impl std::str::FromStr for PassName {
    type Err = UnknownPass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "merge-ret" => PassName::MergeRet,
            "merge-ijmp" => PassName::MergeIjmp,
            "widen" => PassName::Widen,
            "sled" => PassName::Sled,
            "reorder" => PassName::Reorder,
            other => return Err(UnknownPass(other.to_string())),
        })
    }
}

/// Parses a comma-separated pass list (CLI `--passes` syntax). Empty input
/// yields the empty pipeline.
pub fn parse_pass_list(s: &str) -> Result<Vec<PassName>, UnknownPass> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(str::parse)
        .collect()
}

/// Pipeline failure surface.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    UnknownPass(#[from] UnknownPass),
}

/// Applies passes in order, threading one limits/seed configuration through.
pub fn run_pipeline(
    program: &LayoutProgram,
    passes: &[PassName],
    limits: &PassLimits,
) -> Result<(LayoutProgram, Vec<PassStats>), AssembleError> {
    let mut prog = program.clone();
    let mut stats = Vec::with_capacity(passes.len());
    for pass in passes {
        let (next, pass_stats) = match pass {
            PassName::MergeRet => merge_returns(&prog),
            PassName::MergeIjmp => merge_indirect_jumps(&prog),
            PassName::Widen => widen_boundaries_with(&prog, limits)?,
            PassName::Sled => sled_jump_displacements(&prog, limits)?,
            PassName::Reorder => reorder_functions(&prog, limits)?,
        };
        prog = next;
        stats.push(pass_stats);
    }
    Ok((prog, stats))
}
