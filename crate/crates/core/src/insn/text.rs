//! Canonical text rendering. One fixed form per instruction so normalized
//! gadget keys compare bit-exactly: lower-case mnemonics, `0x`-hex immediates
//! masked to operand width, pointer-size keywords on sized memory operands,
//! and relative branch targets printed as signed displacements.

use super::{Instruction, MemRef, Mnemonic, Operand, Reg, Width};
use std::fmt::Write;

const R64: [&str; 16] = [
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi", "r8", "r9", "r10", "r11", "r12",
    "r13", "r14", "r15",
];
const R32: [&str; 16] = [
    "eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi", "r8d", "r9d", "r10d", "r11d", "r12d",
    "r13d", "r14d", "r15d",
];
const R16: [&str; 16] = [
    "ax", "cx", "dx", "bx", "sp", "bp", "si", "di", "r8w", "r9w", "r10w", "r11w", "r12w", "r13w",
    "r14w", "r15w",
];
const R8: [&str; 16] = [
    "al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil", "r8b", "r9b", "r10b", "r11b", "r12b",
    "r13b", "r14b", "r15b",
];
const R8_HIGH: [&str; 4] = ["ah", "ch", "dh", "bh"];

pub(super) fn reg_name(reg: &Reg) -> &'static str {
    let i = reg.index as usize & 15;
    match reg.width {
        Width::B64 => R64[i],
        Width::B32 => R32[i],
        Width::B16 => R16[i],
        Width::B8 => {
            if reg.high {
                R8_HIGH[i - 4]
            } else {
                R8[i]
            }
        }
    }
}

pub(super) fn mnemonic_name(mn: &Mnemonic) -> &'static str {
    use Mnemonic::*;
    match mn {
        Add => "add",
        Or => "or",
        And => "and",
        Sub => "sub",
        Xor => "xor",
        Cmp => "cmp",
        Test => "test",
        Mov => "mov",
        Lea => "lea",
        Push => "push",
        Pop => "pop",
        Inc => "inc",
        Dec => "dec",
        Shl => "shl",
        Shr => "shr",
        Nop => "nop",
        Xchg => "xchg",
        Leave => "leave",
        Ret => "ret",
        Retf => "retf",
        Jmp => "jmp",
        JmpFar => "jmpf",
        Call => "call",
        CallFar => "callf",
        Int => "int",
        Iret => "iret",
        Syscall => "syscall",
        Sysenter => "sysenter",
        Hlt => "hlt",
        In => "in",
        Out => "out",
        Cli => "cli",
        Sti => "sti",
        Wrmsr => "wrmsr",
        Rdmsr => "rdmsr",
        Lgdt => "lgdt",
        Lidt => "lidt",
        Invlpg => "invlpg",
        Jo => "jo",
        Jno => "jno",
        Jb => "jb",
        Jae => "jae",
        Je => "je",
        Jne => "jne",
        Jbe => "jbe",
        Ja => "ja",
        Js => "js",
        Jns => "jns",
        Jp => "jp",
        Jnp => "jnp",
        Jl => "jl",
        Jge => "jge",
        Jle => "jle",
        Jg => "jg",
    }
}

fn imm_text(value: i64, width: Width) -> String {
    let masked = match width {
        Width::B8 => value as u64 & 0xFF,
        Width::B16 => value as u64 & 0xFFFF,
        Width::B32 => value as u64 & 0xFFFF_FFFF,
        Width::B64 => value as u64,
    };
    format!("0x{masked:x}")
}

fn mem_text(m: &MemRef) -> String {
    let mut out = String::new();
    if let Some(size) = m.size {
        let kw = match size {
            super::MemSize::Byte => "byte",
            super::MemSize::Word => "word",
            super::MemSize::Dword => "dword",
            super::MemSize::Qword => "qword",
        };
        out.push_str(kw);
        out.push(' ');
    }
    out.push('[');
    let mut have_term = false;
    if m.rip_relative {
        out.push_str("rip");
        have_term = true;
    } else if let Some(base) = &m.base {
        out.push_str(reg_name(base));
        have_term = true;
    }
    if let Some(index) = &m.index {
        if have_term {
            out.push('+');
        }
        let _ = write!(out, "{}*{}", reg_name(index), m.scale);
        have_term = true;
    }
    if m.disp != 0 || !have_term {
        if !have_term {
            let _ = write!(out, "0x{:x}", m.disp as u32);
        } else if m.disp < 0 {
            let _ = write!(out, "-0x{:x}", (m.disp as i64).unsigned_abs());
        } else {
            let _ = write!(out, "+0x{:x}", m.disp);
        }
    }
    out.push(']');
    out
}

fn operand_text(op: &Operand) -> String {
    match op {
        Operand::Reg(r) => reg_name(r).to_string(),
        Operand::Imm { value, width } => imm_text(*value, *width),
        Operand::Mem(m) => mem_text(m),
        Operand::Rel(r) => {
            if r.disp < 0 {
                format!("-0x{:x}", r.disp.unsigned_abs())
            } else {
                format!("+0x{:x}", r.disp)
            }
        }
    }
}

pub(super) fn render(insn: &Instruction) -> String {
    let mut out = mnemonic_name(&insn.mnemonic).to_string();
    for (i, op) in insn.operands.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        out.push_str(&operand_text(op));
    }
    out
}
