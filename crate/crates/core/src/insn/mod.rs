//! Instruction model: decoded x86-64 instructions, the GPI taxonomy, and the
//! pluggable decoder contract shared by the scanner and the layout passes.
//!
//! The decoder deliberately covers a documented subset of x86-64 (see
//! [`SubsetDecoder`]): REX prefixes, ModRM/SIB addressing, the common ALU and
//! data-movement instructions, stack ops, direct and indirect branches, and
//! the syscall-class instructions. Bytes outside the subset decode to
//! [`DecodeError::Invalid`], which scanners treat as "sequence rejected".

mod decode;
mod text;

pub use decode::SubsetDecoder;

use thiserror::Error;

/// Decode failure for a byte sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum DecodeError {
    /// The bytes are not a legal encoding in the supported subset.
    #[error("invalid encoding")]
    Invalid,
    /// The encoding runs past the end of the region.
    #[error("truncated encoding")]
    Truncated,
}

/// Operand width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Width {
    B8,
    B16,
    B32,
    B64,
}

/// A general-purpose register. `index` is the 4-bit encoding slot (0 = ax,
/// 4 = sp, 8 = r8, ...). `high` marks the legacy ah/ch/dh/bh bank, which is
/// selected by indices 4-7 of 8-bit operands when no REX prefix is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg {
    pub index: u8,
    pub width: Width,
    pub high: bool,
}

impl Reg {
    pub fn new(index: u8, width: Width) -> Self {
        Reg { index, width, high: false }
    }

    /// True for rsp/esp/sp/spl (the stack pointer in any width).
    pub fn is_stack_pointer(&self) -> bool {
        self.index == 4 && !self.high
    }

    /// Canonical lower-case name.
    pub fn name(&self) -> &'static str {
        text::reg_name(self)
    }
}

/// Memory-operand pointer width, printed in canonical text ("qword [rax]").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MemSize {
    Byte,
    Word,
    Dword,
    Qword,
}

/// A ModRM/SIB memory reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MemRef {
    pub base: Option<Reg>,
    /// RIP-relative addressing (mod=00, rm=101); `base` is `None`.
    pub rip_relative: bool,
    pub index: Option<Reg>,
    pub scale: u8,
    pub disp: i32,
    /// `None` for operands without a meaningful pointer width (lea, far
    /// branches, descriptor-table ops).
    pub size: Option<MemSize>,
}

/// A branch displacement operand. Records the exact byte span of the
/// displacement field within the encoding so layout passes can patch it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RelDisp {
    /// Raw displacement relative to the end of the instruction.
    pub disp: i64,
    /// Resolved target as a byte offset within the region (may fall outside).
    pub target: i64,
    /// Byte offset of the displacement field within the encoding.
    pub field_pos: u8,
    /// Field width in bytes (1 or 4).
    pub field_width: u8,
}

/// An instruction operand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Reg(Reg),
    Imm { value: i64, width: Width },
    Mem(MemRef),
    Rel(RelDisp),
}

/// Canonical mnemonics of the supported subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mnemonic {
    Add,
    Or,
    And,
    Sub,
    Xor,
    Cmp,
    Test,
    Mov,
    Lea,
    Push,
    Pop,
    Inc,
    Dec,
    Shl,
    Shr,
    Nop,
    Xchg,
    Leave,
    Ret,
    Retf,
    Jmp,
    JmpFar,
    Call,
    CallFar,
    Int,
    Iret,
    Syscall,
    Sysenter,
    Hlt,
    In,
    Out,
    Cli,
    Sti,
    Wrmsr,
    Rdmsr,
    Lgdt,
    Lidt,
    Invlpg,
    Jo,
    Jno,
    Jb,
    Jae,
    Je,
    Jne,
    Jbe,
    Ja,
    Js,
    Jns,
    Jp,
    Jnp,
    Jl,
    Jge,
    Jle,
    Jg,
}

impl Mnemonic {
    pub fn name(&self) -> &'static str {
        text::mnemonic_name(self)
    }

    /// Conditional jump?
    pub fn is_jcc(&self) -> bool {
        use Mnemonic::*;
        matches!(
            self,
            Jo | Jno | Jb | Jae | Je | Jne | Jbe | Ja | Js | Jns | Jp | Jnp | Jl | Jge | Jle | Jg
        )
    }
}

/// One decoded machine instruction. `bytes` are authoritative; the canonical
/// text is derived, never re-encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    /// Byte offset of the first byte within its region.
    pub address: u64,
    /// Raw encoding, 1-15 bytes.
    pub bytes: Vec<u8>,
    pub mnemonic: Mnemonic,
    pub operands: Vec<Operand>,
}

impl Instruction {
    /// Encoded length in bytes.
    pub fn length(&self) -> usize {
        self.bytes.len()
    }

    /// Canonical lower-case text, e.g. `mov qword [rdx], rsi`. Relative
    /// branch targets are printed as displacements (`jmp +0x10`) so the text
    /// is location-invariant.
    pub fn text(&self) -> String {
        text::render(self)
    }

    /// The relative-displacement operand, if this is a direct branch.
    pub fn rel_operand(&self) -> Option<&RelDisp> {
        self.operands.iter().find_map(|op| match op {
            Operand::Rel(r) => Some(r),
            _ => None,
        })
    }

    /// Direct jump, conditional or unconditional. These are the only
    /// control-flow instructions permitted inside a gadget body.
    pub fn is_direct_jump(&self) -> bool {
        (self.mnemonic == Mnemonic::Jmp && self.rel_operand().is_some()) || self.mnemonic.is_jcc()
    }

    /// Direct call (`call rel32`).
    pub fn is_direct_call(&self) -> bool {
        self.mnemonic == Mnemonic::Call && self.rel_operand().is_some()
    }
}

/// GPI group per the exploit pattern it feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GpiGroup {
    RopReturn,
    JopIndirectJump,
    JopCopIndirectCall,
    Syscall,
}

/// The specific gadget-producing instruction form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GpiKind {
    Retn,
    RetnImm,
    Retf,
    RetfImm,
    JmpReg,
    JmpMem,
    JmpMemOff,
    CallReg,
    CallMem,
    CallMemOff,
    Int80,
    CallFarPtr,
    Syscall,
    Sysenter,
}

impl GpiKind {
    pub fn group(&self) -> GpiGroup {
        use GpiKind::*;
        match self {
            Retn | RetnImm | Retf | RetfImm => GpiGroup::RopReturn,
            JmpReg | JmpMem | JmpMemOff => GpiGroup::JopIndirectJump,
            CallReg | CallMem | CallMemOff => GpiGroup::JopCopIndirectCall,
            Int80 | CallFarPtr | Syscall | Sysenter => GpiGroup::Syscall,
        }
    }

    pub fn name(&self) -> &'static str {
        use GpiKind::*;
        match self {
            Retn => "retn",
            RetnImm => "retn-imm",
            Retf => "retf",
            RetfImm => "retf-imm",
            JmpReg => "jmp-reg",
            JmpMem => "jmp-mem",
            JmpMemOff => "jmp-mem-off",
            CallReg => "call-reg",
            CallMem => "call-mem",
            CallMemOff => "call-mem-off",
            Int80 => "int80",
            CallFarPtr => "call-far-ptr",
            Syscall => "syscall",
            Sysenter => "sysenter",
        }
    }

    pub fn all() -> &'static [GpiKind] {
        use GpiKind::*;
        &[
            Retn, RetnImm, Retf, RetfImm, JmpReg, JmpMem, JmpMemOff, CallReg, CallMem, CallMemOff,
            Int80, CallFarPtr, Syscall, Sysenter,
        ]
    }
}

/// A GPI terminator byte pattern. `bytes` hold a complete encoding that
/// decodes, at its own start, to an instruction of kind `kind`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GpiPattern {
    pub kind: GpiKind,
    pub bytes: Vec<u8>,
}

/// Classifies an instruction as a gadget-producing instruction. Direct jumps
/// and direct calls are not GPIs.
pub fn classify_gpi(insn: &Instruction) -> Option<GpiKind> {
    match insn.mnemonic {
        Mnemonic::Ret => Some(if insn.operands.is_empty() {
            GpiKind::Retn
        } else {
            GpiKind::RetnImm
        }),
        Mnemonic::Retf => Some(if insn.operands.is_empty() {
            GpiKind::Retf
        } else {
            GpiKind::RetfImm
        }),
        Mnemonic::Jmp => match insn.operands.first() {
            Some(Operand::Reg(_)) => Some(GpiKind::JmpReg),
            Some(Operand::Mem(m)) => Some(if m.disp == 0 {
                GpiKind::JmpMem
            } else {
                GpiKind::JmpMemOff
            }),
            _ => None,
        },
        Mnemonic::Call => match insn.operands.first() {
            Some(Operand::Reg(_)) => Some(GpiKind::CallReg),
            Some(Operand::Mem(m)) => Some(if m.disp == 0 {
                GpiKind::CallMem
            } else {
                GpiKind::CallMemOff
            }),
            _ => None,
        },
        Mnemonic::CallFar => Some(GpiKind::CallFarPtr),
        Mnemonic::Int => match insn.operands.first() {
            Some(Operand::Imm { value: 0x80, .. }) => Some(GpiKind::Int80),
            _ => None,
        },
        Mnemonic::Syscall => Some(GpiKind::Syscall),
        Mnemonic::Sysenter => Some(GpiKind::Sysenter),
        _ => None,
    }
}

/// The canonical terminator byte pattern for every [`GpiKind`]: exhaustive
/// over the taxonomy and duplicate-free. Kinds with variable fields
/// (immediates, ModRM-selected registers) use their shortest zero-filled
/// representative; site discovery matches structurally via [`match_gpi_at`].
pub fn gpi_byte_patterns() -> Vec<GpiPattern> {
    use GpiKind::*;
    let pat = |kind, bytes: &[u8]| GpiPattern { kind, bytes: bytes.to_vec() };
    vec![
        pat(Retn, &[0xC3]),
        pat(RetnImm, &[0xC2, 0x00, 0x00]),
        pat(Retf, &[0xCB]),
        pat(RetfImm, &[0xCA, 0x00, 0x00]),
        pat(JmpReg, &[0xFF, 0xE0]),
        pat(JmpMem, &[0xFF, 0x20]),
        pat(JmpMemOff, &[0xFF, 0x60, 0x01]),
        pat(CallReg, &[0xFF, 0xD0]),
        pat(CallMem, &[0xFF, 0x10]),
        pat(CallMemOff, &[0xFF, 0x50, 0x01]),
        pat(Int80, &[0xCD, 0x80]),
        pat(CallFarPtr, &[0xFF, 0x18]),
        pat(Syscall, &[0x0F, 0x05]),
        pat(Sysenter, &[0x0F, 0x34]),
    ]
}

/// A GPI occurrence in a byte stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GpiMatch {
    pub kind: GpiKind,
    pub len: usize,
}

/// Matches a GPI terminator encoding beginning at `offset`: decodes and
/// classifies. This is the structural matcher behind site discovery,
/// boundary scanning, and displacement checks.
pub fn match_gpi_at(bytes: &[u8], offset: usize) -> Option<GpiMatch> {
    match_gpi_at_with(&SubsetDecoder, bytes, offset)
}

/// [`match_gpi_at`] with an explicit decoder.
pub fn match_gpi_at_with<D: InstructionDecoder + ?Sized>(
    decoder: &D,
    bytes: &[u8],
    offset: usize,
) -> Option<GpiMatch> {
    let insn = decoder.decode(bytes, offset).ok()?;
    classify_gpi(&insn).map(|kind| GpiMatch { kind, len: insn.length() })
}

/// Ring-0 / IO instructions of the supported subset. Gadgets containing one
/// are unusable from user space and get filtered out.
pub fn is_privileged(insn: &Instruction) -> bool {
    use Mnemonic::*;
    matches!(
        insn.mnemonic,
        Hlt | In | Out | Cli | Sti | Iret | Wrmsr | Rdmsr | Lgdt | Lidt | Invlpg
    )
}

/// The decoder contract. Implementations must be deterministic and consume
/// only bytes within the region. A full-ISA disassembler can be substituted
/// behind this trait without touching the scanner or the layout passes.
pub trait InstructionDecoder {
    fn decode(&self, region: &[u8], offset: usize) -> Result<Instruction, DecodeError>;
}

/// Decodes with the default subset decoder.
pub fn decode_instruction(region: &[u8], offset: usize) -> Result<Instruction, DecodeError> {
    SubsetDecoder.decode(region, offset)
}
