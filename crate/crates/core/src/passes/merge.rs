//! GPI merging: collapse duplicated returns (and register-indirect jumps)
//! within a function to a single retained instance, replacing the rest with
//! direct jumps to it. Only identical GPIs merge — `ret` never merges with
//! `ret 0x8`, and indirect jumps only merge when they target the same
//! register. The retained instance is the first in layout order.

use super::PassStats;
use crate::insn::{decode_instruction, Instruction, Mnemonic, Operand};
use crate::layout::{FunctionLayout, LayoutInsn, LayoutProgram, SymbolicTarget};

fn is_return(insn: &Instruction) -> bool {
    matches!(insn.mnemonic, Mnemonic::Ret | Mnemonic::Retf)
}

fn is_register_indirect_jump(insn: &Instruction) -> bool {
    insn.mnemonic == Mnemonic::Jmp && matches!(insn.operands.as_slice(), [Operand::Reg(_)])
}

/// A short direct jump placeholder; assembly widens it if the distance
/// demands rel32.
fn short_jmp_to(label: &str) -> LayoutInsn {
    LayoutInsn {
        label: None,
        insn: decode_instruction(&[0xEB, 0x00], 0).expect("jmp rel8 decodes"),
        target: Some(SymbolicTarget::Label(label.to_string())),
    }
}

/// Label on the retained instruction, minting a fresh one when absent.
fn ensure_label(func: &mut FunctionLayout, index: usize, prefix: &str) -> String {
    if let Some(label) = &func.instructions[index].label {
        return label.clone();
    }
    let mut n = 0usize;
    let label = loop {
        let candidate = format!("{prefix}{n}");
        if func.label_index(&candidate).is_none() {
            break candidate;
        }
        n += 1;
    };
    func.instructions[index].label = Some(label.clone());
    label
}

fn merge_by_identity(
    program: &LayoutProgram,
    pass_name: &str,
    label_prefix: &str,
    candidate: fn(&Instruction) -> bool,
) -> (LayoutProgram, PassStats) {
    let mut prog = program.clone();
    let mut stats = PassStats::new(pass_name);
    stats.iterations = 1;

    for func in &mut prog.functions {
        // Group candidate indices by canonical text, first occurrence first.
        let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, li) in func.instructions.iter().enumerate() {
            if !candidate(&li.insn) {
                continue;
            }
            let key = li.insn.text();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, indices)) => indices.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        let name = func.name.clone();
        for (_, indices) in groups.iter().filter(|(_, v)| v.len() >= 2) {
            stats.sites_before += (indices.len() - 1) as u64;
            let label = ensure_label(func, indices[0], label_prefix);
            for &dup in &indices[1..] {
                let mut replacement = short_jmp_to(&label);
                replacement.label = func.instructions[dup].label.clone();
                func.instructions[dup] = replacement;
                stats.record_edit(&name, 1);
            }
        }
    }
    (prog, stats)
}

/// Merges identical return-type instructions per function: the first is
/// retained, the rest become direct jumps to it.
pub fn merge_returns(program: &LayoutProgram) -> (LayoutProgram, PassStats) {
    merge_by_identity(program, "merge-ret", "__ret", is_return)
}

/// Merges register-indirect jumps per function, grouped by target register.
/// Memory-indirect jumps never merge.
pub fn merge_indirect_jumps(program: &LayoutProgram) -> (LayoutProgram, PassStats) {
    merge_by_identity(program, "merge-ijmp", "__ijmp", is_register_indirect_jump)
}
