//! Serializes a [`LayoutProgram`] to region bytes: functions concatenated in
//! order with alignment padding, every relative displacement recomputed from
//! its symbolic target. rel8 branches keep their short form while the
//! distance fits and are widened to rel32 otherwise (never narrowed); width
//! changes shift addresses, so widths iterate to a fixed point before bytes
//! are emitted.

use super::{
    AssembleError, DispFieldKind, FunctionLayout, LayoutProgram, SymbolicTarget,
};
use crate::insn::Mnemonic;
use crate::region::Region;
use std::collections::BTreeMap;

/// The resolved displacement field of an assembled branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsmDispField {
    pub kind: DispFieldKind,
    /// Field start as a region offset.
    pub pos: u64,
    pub width: u8,
    /// The displacement written into the field.
    pub value: i64,
}

/// One assembled instruction (or padding byte) with its final address.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledInsn {
    /// Indices into the program; padding bytes have `function_index` of the
    /// function they follow and `is_padding` set.
    pub function_index: usize,
    pub insn_index: usize,
    pub is_padding: bool,
    pub address: u64,
    pub length: usize,
    pub disp: Option<AsmDispField>,
}

/// The region plus per-instruction address/field facts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembledProgram {
    pub region: Region,
    /// Address-ordered, padding included.
    pub insns: Vec<AssembledInsn>,
}

impl AssembledProgram {
    /// The assembled instruction for a program slot.
    pub fn find(&self, function_index: usize, insn_index: usize) -> Option<&AssembledInsn> {
        self.insns.iter().find(|i| {
            !i.is_padding && i.function_index == function_index && i.insn_index == insn_index
        })
    }

    /// Byte size of one function in the current layout.
    pub fn function_size(&self, function_index: usize) -> u64 {
        self.insns
            .iter()
            .filter(|i| !i.is_padding && i.function_index == function_index)
            .map(|i| i.length as u64)
            .sum()
    }
}

/// Branch encoding plan: the payload keeps its parsed width, `wide` upgrades
/// a rel8 form to rel32.
#[derive(Clone, Copy)]
struct BranchPlan {
    field_width: u8,
    wide: bool,
}

fn jcc_code(mn: Mnemonic) -> Option<u8> {
    use Mnemonic::*;
    Some(match mn {
        Jo => 0x0,
        Jno => 0x1,
        Jb => 0x2,
        Jae => 0x3,
        Je => 0x4,
        Jne => 0x5,
        Jbe => 0x6,
        Ja => 0x7,
        Js => 0x8,
        Jns => 0x9,
        Jp => 0xA,
        Jnp => 0xB,
        Jl => 0xC,
        Jge => 0xD,
        Jle => 0xE,
        Jg => 0xF,
        _ => return None,
    })
}

/// Planned encoded length of an instruction.
fn planned_len(func: &FunctionLayout, index: usize, plan: &BranchPlan) -> usize {
    let insn = &func.instructions[index].insn;
    if !plan.wide {
        return insn.length();
    }
    match insn.mnemonic {
        Mnemonic::Jmp => 5,                       // E9 rel32
        m if m.is_jcc() => 6,                     // 0F 8x rel32
        _ => insn.length(),
    }
}

fn align_up(value: u64, alignment: u64) -> u64 {
    if alignment <= 1 {
        value
    } else {
        value.div_ceil(alignment) * alignment
    }
}

/// Serializes the program; the cheap entry point when only bytes matter.
pub fn assemble(program: &LayoutProgram) -> Result<Region, AssembleError> {
    assemble_detailed(program).map(|a| a.region)
}

/// Serializes the program and reports per-instruction layout facts.
pub fn assemble_detailed(program: &LayoutProgram) -> Result<AssembledProgram, AssembleError> {
    // Per-(function, insn) branch plans.
    let mut plans: Vec<Vec<BranchPlan>> = program
        .functions
        .iter()
        .map(|f| {
            f.instructions
                .iter()
                .map(|i| BranchPlan {
                    field_width: i.insn.rel_operand().map(|r| r.field_width).unwrap_or(0),
                    wide: false,
                })
                .collect()
        })
        .collect();

    // Iterate widths to a fixed point. Each pass computes addresses under the
    // current plans and widens any rel8 whose displacement no longer fits.
    // Widening is monotone, so this terminates.
    let (func_starts, label_addrs, insn_addrs) = loop {
        let mut cursor = 0u64;
        let mut func_starts = Vec::with_capacity(program.functions.len());
        let mut label_addrs: BTreeMap<(usize, &str), u64> = BTreeMap::new();
        let mut insn_addrs: Vec<Vec<(u64, usize)>> = Vec::with_capacity(program.functions.len());

        for (fi, func) in program.functions.iter().enumerate() {
            cursor = align_up(cursor, program.alignment);
            func_starts.push(cursor);
            let mut addrs = Vec::with_capacity(func.instructions.len());
            for (ii, li) in func.instructions.iter().enumerate() {
                let len = planned_len(func, ii, &plans[fi][ii]);
                if let Some(label) = &li.label {
                    label_addrs.insert((fi, label.as_str()), cursor);
                }
                addrs.push((cursor, len));
                cursor += len as u64;
            }
            insn_addrs.push(addrs);
        }

        let mut changed = false;
        for (fi, func) in program.functions.iter().enumerate() {
            for (ii, li) in func.instructions.iter().enumerate() {
                let Some(target) = &li.target else { continue };
                let plan = &mut plans[fi][ii];
                let (addr, len) = insn_addrs[fi][ii];
                let target_addr = match target {
                    SymbolicTarget::Label(l) => label_addrs[&(fi, l.as_str())],
                    SymbolicTarget::Function(name) => {
                        let tfi = program
                            .functions
                            .iter()
                            .position(|f| &f.name == name)
                            .expect("call target resolved at parse");
                        func_starts[tfi]
                    }
                };
                let disp = target_addr as i64 - (addr + len as u64) as i64;
                let effective_width = if plan.wide { 4 } else { plan.field_width };
                if effective_width == 1 && i8::try_from(disp).is_err() {
                    plan.wide = true;
                    changed = true;
                } else if effective_width == 4 && i32::try_from(disp).is_err() {
                    return Err(AssembleError::Unencodable {
                        function: func.name.clone(),
                        index: ii,
                    });
                }
            }
        }
        if !changed {
            break (func_starts, label_addrs, insn_addrs);
        }
    };

    // Emit bytes.
    let mut bytes = Vec::new();
    let mut insns = Vec::new();
    for (fi, func) in program.functions.iter().enumerate() {
        while (bytes.len() as u64) < func_starts[fi] {
            insns.push(AssembledInsn {
                function_index: fi.saturating_sub(1),
                insn_index: usize::MAX,
                is_padding: true,
                address: bytes.len() as u64,
                length: 1,
                disp: None,
            });
            bytes.push(program.padding_byte);
        }
        for (ii, li) in func.instructions.iter().enumerate() {
            let (addr, len) = insn_addrs[fi][ii];
            debug_assert_eq!(addr, bytes.len() as u64);
            let mut disp_field = None;

            if let Some(target) = &li.target {
                let target_addr = match target {
                    SymbolicTarget::Label(l) => label_addrs[&(fi, l.as_str())],
                    SymbolicTarget::Function(name) => {
                        let tfi = program
                            .functions
                            .iter()
                            .position(|f| &f.name == name)
                            .unwrap();
                        func_starts[tfi]
                    }
                };
                let disp = target_addr as i64 - (addr + len as u64) as i64;
                let kind = if li.insn.mnemonic == Mnemonic::Call {
                    DispFieldKind::Call
                } else {
                    DispFieldKind::Jump
                };
                let plan = plans[fi][ii];
                if plan.wide {
                    match li.insn.mnemonic {
                        Mnemonic::Jmp => {
                            bytes.push(0xE9);
                            bytes.extend_from_slice(&(disp as i32).to_le_bytes());
                            disp_field = Some(AsmDispField { kind, pos: addr + 1, width: 4, value: disp });
                        }
                        m => {
                            let cc = jcc_code(m).expect("only jmp/jcc widen");
                            bytes.push(0x0F);
                            bytes.push(0x80 | cc);
                            bytes.extend_from_slice(&(disp as i32).to_le_bytes());
                            disp_field = Some(AsmDispField { kind, pos: addr + 2, width: 4, value: disp });
                        }
                    }
                } else {
                    let rel = li.insn.rel_operand().expect("target implies rel operand");
                    let mut enc = li.insn.bytes.clone();
                    let fp = rel.field_pos as usize;
                    match rel.field_width {
                        1 => enc[fp] = disp as i8 as u8,
                        _ => enc[fp..fp + 4].copy_from_slice(&(disp as i32).to_le_bytes()),
                    }
                    disp_field = Some(AsmDispField {
                        kind,
                        pos: addr + rel.field_pos as u64,
                        width: rel.field_width,
                        value: disp,
                    });
                    bytes.extend_from_slice(&enc);
                }
            } else {
                bytes.extend_from_slice(&li.insn.bytes);
            }

            insns.push(AssembledInsn {
                function_index: fi,
                insn_index: ii,
                is_padding: false,
                address: addr,
                length: len,
                disp: disp_field,
            });
        }
    }

    Ok(AssembledProgram {
        region: Region { name: "assembled".to_string(), base: 0, bytes },
        insns,
    })
}
