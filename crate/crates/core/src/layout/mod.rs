//! Layout-agnostic program representation: ordered functions of encoded
//! instructions with symbolic branch targets, an assembler that serializes
//! the layout with displacement fixups, and the scans that locate GPI
//! encodings hiding in displacement fields and across instruction
//! boundaries. This is the substrate the mitigation passes operate on.

mod asm;
mod listing;
mod sites;

pub use asm::{assemble, assemble_detailed, AsmDispField, AssembledInsn, AssembledProgram};
pub use listing::{parse_listing, render_listing};
pub use sites::{find_problematic_displacements, scan_boundary_gpis};

use crate::insn::{decode_instruction, GpiPattern, Instruction};
use thiserror::Error;

/// Ordered functions plus the inter-function padding policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutProgram {
    pub functions: Vec<FunctionLayout>,
    /// Byte used to pad up to `alignment` between functions.
    pub padding_byte: u8,
    /// Function start alignment; 1 means functions are packed back to back.
    pub alignment: u64,
}

impl Default for LayoutProgram {
    fn default() -> Self {
        LayoutProgram { functions: Vec::new(), padding_byte: 0x90, alignment: 1 }
    }
}

impl LayoutProgram {
    pub fn function(&self, name: &str) -> Option<&FunctionLayout> {
        self.functions.iter().find(|f| f.name == name)
    }
}

/// One function: a name and its instruction sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionLayout {
    pub name: String,
    pub instructions: Vec<LayoutInsn>,
}

impl FunctionLayout {
    /// Index of the instruction carrying `label`.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.instructions
            .iter()
            .position(|i| i.label.as_deref() == Some(label))
    }
}

/// Symbolic branch target: an in-function label for jumps, a function name
/// for direct calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymbolicTarget {
    Label(String),
    Function(String),
}

/// One layout slot: an optional label, the encoded instruction, and the
/// symbolic target when the instruction has a relative-displacement operand.
/// Displacement field bytes in `insn` are stored zeroed; the assembler
/// recomputes them from the target on every serialization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayoutInsn {
    pub label: Option<String>,
    pub insn: Instruction,
    pub target: Option<SymbolicTarget>,
}

impl LayoutInsn {
    pub fn plain(insn: Instruction) -> Self {
        LayoutInsn { label: None, insn, target: None }
    }
}

/// A canonical one-byte nop, used for padding, sleds, and boundary widening.
pub fn nop_insn() -> Instruction {
    decode_instruction(&[0x90], 0).expect("nop decodes")
}

/// Which displacement field a problem lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispFieldKind {
    Jump,
    Call,
}

/// A GPI pattern overlapping a branch displacement field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemSite {
    pub function: String,
    pub function_index: usize,
    pub insn_index: usize,
    pub kind: DispFieldKind,
    /// The matched pattern, bytes taken from the assembled region.
    pub pattern: GpiPattern,
    /// Pattern start relative to the instruction start (negative when the
    /// match begins in an earlier instruction and reaches into the field).
    pub pattern_offset_in_insn: i64,
    /// Pattern start as a region offset.
    pub region_offset: u64,
}

/// A multi-byte GPI pattern straddling the boundary between two adjacent
/// assembled instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundarySite {
    pub first_address: u64,
    pub second_address: u64,
    pub pattern: GpiPattern,
    /// Pattern start as a region offset.
    pub region_offset: u64,
}

/// Listing / program construction failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("line {line}: undefined label @{label}")]
    UndefinedLabel { line: usize, label: String },
    #[error("line {line}: undefined function @@{name}")]
    UndefinedFunction { line: usize, name: String },
    #[error("line {line}: duplicate function {name}")]
    DuplicateFunction { line: usize, name: String },
    #[error("line {line}: duplicate label {label}")]
    DuplicateLabel { line: usize, label: String },
}

/// Serialization failures.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("branch in {function} at instruction {index} does not reach its target within rel32")]
    Unencodable { function: String, index: usize },
}
