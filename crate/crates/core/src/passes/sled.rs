//! Jump displacement sledding: for each function with GPI-bearing jump
//! displacement fields, pick one site at random and insert the shortest nop
//! sled (1 then 2 bytes) that shifts the reassembled field to a benign
//! encoding — before the jump for backward jumps, before the target for
//! forward jumps. Fixing one displacement can perturb others, so the pass
//! iterates; a function that keeps failing to shrink its site count is
//! excluded from further edits.

use super::{PassLimits, PassStats, Termination};
use crate::layout::{
    assemble_detailed, find_problematic_displacements, nop_insn, AssembleError, DispFieldKind,
    LayoutInsn, LayoutProgram, ProblemSite, SymbolicTarget,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

fn jump_sites(program: &LayoutProgram) -> Result<Vec<ProblemSite>, AssembleError> {
    Ok(find_problematic_displacements(program)?
        .into_iter()
        .filter(|s| s.kind == DispFieldKind::Jump)
        .collect())
}

fn count_by_function(sites: &[ProblemSite]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for s in sites {
        *counts.entry(s.function_index).or_insert(0) += 1;
    }
    counts
}

/// Attempts a 1- then 2-byte sled for one site. Returns the edited program
/// on success. Zero-distance jumps (target is the next instruction) cannot
/// take a sled and fail.
fn try_sled(
    program: &LayoutProgram,
    site: &ProblemSite,
) -> Result<Option<LayoutProgram>, AssembleError> {
    let asm = assemble_detailed(program)?;
    let value = asm
        .find(site.function_index, site.insn_index)
        .and_then(|i| i.disp)
        .map(|d| d.value)
        .expect("problem site has a displacement field");
    if value == 0 {
        return Ok(None);
    }

    let insert_at = if value < 0 {
        site.insn_index
    } else {
        let func = &program.functions[site.function_index];
        match &func.instructions[site.insn_index].target {
            Some(SymbolicTarget::Label(label)) => {
                func.label_index(label).expect("label resolved at parse")
            }
            _ => return Ok(None),
        }
    };

    for sled_len in 1..=2usize {
        let mut candidate = program.clone();
        let func = &mut candidate.functions[site.function_index];
        for _ in 0..sled_len {
            func.instructions.insert(insert_at, LayoutInsn::plain(nop_insn()));
        }
        let moved = if insert_at <= site.insn_index { sled_len } else { 0 };
        let edited_index = site.insn_index + moved;
        let clean = jump_sites(&candidate)?.iter().all(|s| {
            s.function_index != site.function_index || s.insn_index != edited_index
        });
        if clean {
            return Ok(Some(candidate));
        }
    }
    Ok(None)
}

/// Runs the sledding pass.
pub fn sled_jump_displacements(
    program: &LayoutProgram,
    limits: &PassLimits,
) -> Result<(LayoutProgram, PassStats), AssembleError> {
    let mut prog = program.clone();
    let mut stats = PassStats::new("sled");
    let mut rng = ChaCha8Rng::seed_from_u64(limits.seed);
    let mut excluded: BTreeSet<usize> = BTreeSet::new();
    let mut streaks: BTreeMap<usize, u64> = BTreeMap::new();

    stats.sites_before = jump_sites(&prog)?.len() as u64;

    loop {
        let sites = jump_sites(&prog)?;
        let counts = count_by_function(&sites);
        let pending: Vec<usize> = counts
            .keys()
            .copied()
            .filter(|fi| !excluded.contains(fi))
            .collect();
        if pending.is_empty() {
            stats.termination = if counts.is_empty() {
                Termination::Clean
            } else {
                Termination::LocalMinimum
            };
            break;
        }
        if stats.iterations >= limits.max_iterations {
            stats.termination = Termination::IterationLimit;
            break;
        }
        stats.iterations += 1;

        // One randomly chosen site per pending function, in layout order.
        for &fi in &pending {
            let current = jump_sites(&prog)?;
            let func_sites: Vec<&ProblemSite> =
                current.iter().filter(|s| s.function_index == fi).collect();
            if func_sites.is_empty() {
                continue; // an earlier edit this iteration cleaned it
            }
            let site = func_sites[rng.random_range(0..func_sites.len())];
            if let Some(edited) = try_sled(&prog, site)? {
                let name = prog.functions[fi].name.clone();
                stats.record_edit(&name, 1);
                prog = edited;
            }
        }

        // Failure accounting per attempted function.
        let after = count_by_function(&jump_sites(&prog)?);
        for &fi in &pending {
            let before = counts[&fi];
            let now = after.get(&fi).copied().unwrap_or(0);
            if now < before {
                streaks.remove(&fi);
            } else {
                let streak = streaks.entry(fi).or_insert(0);
                *streak += 1;
                if *streak >= limits.max_consecutive_failures {
                    excluded.insert(fi);
                }
            }
        }
    }

    stats.sites_after = jump_sites(&prog)?.len() as u64;
    stats.excluded_functions = excluded
        .iter()
        .map(|fi| prog.functions[*fi].name.clone())
        .collect();
    Ok((prog, stats))
}
