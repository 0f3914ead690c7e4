//! Instruction boundary widening: insert a single nop between each adjacent
//! instruction pair whose conjoined bytes encode a multi-byte GPI. Insertions
//! shift later displacements and can surface new spanning patterns, so the
//! pass rescans and repeats until clean or the iteration budget runs out.
//!
//! Some spanning patterns are immune to widening — `C2` ending an
//! instruction forms a ret-imm16 with any two following bytes, nops
//! included — so iterations that fail to shrink the site count trip the
//! consecutive-failure limit and stop at a local minimum.

use super::{PassLimits, PassStats, Termination};
use crate::layout::{
    assemble_detailed, nop_insn, scan_boundary_gpis, AssembleError, LayoutInsn, LayoutProgram,
};
use std::collections::BTreeSet;

/// [`widen_boundaries_with`] under default limits.
pub fn widen_boundaries(
    program: &LayoutProgram,
) -> Result<(LayoutProgram, PassStats), AssembleError> {
    widen_boundaries_with(program, &PassLimits::default())
}

pub fn widen_boundaries_with(
    program: &LayoutProgram,
    limits: &PassLimits,
) -> Result<(LayoutProgram, PassStats), AssembleError> {
    let mut prog = program.clone();
    let mut stats = PassStats::new("widen");
    stats.sites_before = scan_boundary_gpis(&prog)?.len() as u64;
    let mut streak = 0u64;

    loop {
        let sites = scan_boundary_gpis(&prog)?;
        if sites.is_empty() {
            stats.termination = Termination::Clean;
            break;
        }
        if stats.iterations >= limits.max_iterations {
            stats.termination = Termination::IterationLimit;
            break;
        }
        stats.iterations += 1;
        let old_count = sites.len();

        let asm = assemble_detailed(&prog)?;
        let at = |addr: u64| asm.insns.iter().find(|i| i.address == addr).expect("site address");

        // One insertion point per affected boundary: before the second
        // instruction, or appended to the first one's function when the
        // boundary touches padding or a function entry.
        let mut points: BTreeSet<(usize, usize)> = BTreeSet::new();
        for site in &sites {
            let first = at(site.first_address);
            let second = at(site.second_address);
            let point = if !second.is_padding && second.insn_index > 0 {
                (second.function_index, second.insn_index)
            } else if !first.is_padding {
                (first.function_index, first.insn_index + 1)
            } else if !second.is_padding {
                (second.function_index, 0)
            } else {
                continue; // pattern wholly inside padding: nothing to widen
            };
            points.insert(point);
        }
        if points.is_empty() {
            stats.termination = Termination::LocalMinimum;
            break;
        }

        // Insert bottom-up so earlier points stay valid.
        for &(fi, pos) in points.iter().rev() {
            let func = &mut prog.functions[fi];
            func.instructions.insert(pos, LayoutInsn::plain(nop_insn()));
            let name = func.name.clone();
            stats.record_edit(&name, 1);
        }

        let new_count = scan_boundary_gpis(&prog)?.len();
        if new_count < old_count {
            streak = 0;
        } else {
            streak += 1;
            if streak >= limits.max_consecutive_failures {
                stats.termination = Termination::LocalMinimum;
                break;
            }
        }
    }

    stats.sites_after = scan_boundary_gpis(&prog)?.len() as u64;
    Ok((prog, stats))
}
