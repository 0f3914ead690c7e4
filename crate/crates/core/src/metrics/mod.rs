//! The three qualitative gadget-set metrics: functional gadget set
//! expressivity, functional gadget set quality, and special purpose gadget
//! availability.

mod config;

pub use config::{
    ClassRule, ClassRuleTable, ConfigError, OperandShape, ScoreTable, DEFAULT_CLASS_RULES,
    DEFAULT_SCORE_TABLE, REQUIRED_CLASSES,
};

use crate::insn::{classify_gpi, GpiGroup, GpiKind, Instruction, Mnemonic, Operand, Reg};
use crate::scan::{Gadget, GadgetSet};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Satisfied computational classes per expressivity level, against the
/// required 11/35/17.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressivityProfile {
    pub satisfied: [usize; 3],
    pub required: [usize; 3],
}

impl ExpressivityProfile {
    pub fn fully_expressive_at(&self, level: usize) -> bool {
        self.satisfied[level] == self.required[level]
    }
}

/// The ten special purpose gadget kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpKind {
    Syscall,
    JopDispatcher,
    JopDataLoader,
    JopInitializer,
    JopTrampoline,
    CopDispatcher,
    CopInitializer,
    CopStrongTrampoline,
    CopIntraStackPivot,
    CopTrampoline,
}

impl SpKind {
    pub fn name(&self) -> &'static str {
        use SpKind::*;
        match self {
            Syscall => "syscall",
            JopDispatcher => "jop-dispatcher",
            JopDataLoader => "jop-data-loader",
            JopInitializer => "jop-initializer",
            JopTrampoline => "jop-trampoline",
            CopDispatcher => "cop-dispatcher",
            CopInitializer => "cop-initializer",
            CopStrongTrampoline => "cop-strong-trampoline",
            CopIntraStackPivot => "cop-intra-stack-pivot",
            CopTrampoline => "cop-trampoline",
        }
    }
}

/// Which of the ten special purpose kinds a set provides.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpAvailability {
    pub present: BTreeSet<SpKind>,
}

impl SpAvailability {
    pub fn count(&self) -> usize {
        self.present.len()
    }
}

/// Quality summary of a set: useful-gadget count and mean score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub useful_count: usize,
    pub average_score: f64,
}

fn writes_first_operand(mn: Mnemonic) -> bool {
    use Mnemonic::*;
    matches!(
        mn,
        Add | Or | And | Sub | Xor | Mov | Lea | Pop | Inc | Dec | Shl | Shr | Xchg
    )
}

/// Value-replacing register write: the destination's old value is gone and
/// cannot be reconstructed, shrinking the attacker's controllable set.
fn overwrites_register(insn: &Instruction) -> bool {
    match (&insn.mnemonic, insn.operands.as_slice()) {
        (Mnemonic::Mov | Mnemonic::Lea | Mnemonic::Pop, [Operand::Reg(_), ..]) => true,
        (Mnemonic::Xor | Mnemonic::Sub, [Operand::Reg(a), Operand::Reg(b)]) => a == b,
        _ => false,
    }
}

fn writes_memory(insn: &Instruction) -> bool {
    matches!(insn.operands.first(), Some(Operand::Mem(_))) && writes_first_operand(insn.mnemonic)
}

fn reads_memory(insn: &Instruction) -> bool {
    use Mnemonic::*;
    // lea computes an address without touching memory.
    if insn.mnemonic == Lea {
        return false;
    }
    if matches!(insn.operands.get(1), Some(Operand::Mem(_))) {
        return true;
    }
    if let Some(Operand::Mem(_)) = insn.operands.first() {
        return matches!(
            insn.mnemonic,
            Add | Or | And | Sub | Xor | Cmp | Test | Inc | Dec | Shl | Shr | Xchg | Push
        );
    }
    false
}

fn modifies_stack_pointer(insn: &Instruction) -> bool {
    use Mnemonic::*;
    // push moves the chain position and clobbers the next slot; leave
    // repoints rsp entirely. pop (not into rsp) is benign chain consumption.
    if matches!(insn.mnemonic, Push | Leave) {
        return true;
    }
    let sp = |op: &Operand| matches!(op, Operand::Reg(r) if r.is_stack_pointer());
    match insn.operands.as_slice() {
        [first, rest @ ..] => {
            (sp(first) && writes_first_operand(insn.mnemonic))
                || (insn.mnemonic == Xchg && rest.iter().any(sp))
        }
        [] => false,
    }
}

/// Side-constraint score of one gadget: the sum of category penalties over
/// its intermediate instructions (all but the first and the GPI). The first
/// instruction is the gadget's purpose and is never penalized; gadgets with
/// no intermediates score 0. The return-with-immediate category would apply
/// to an intermediate ret-imm, which the gadget shape rules out here; it
/// stays in the table for substituted gadget models.
pub fn score_quality(g: &Gadget, t: &ScoreTable) -> f64 {
    let mut score = 0.0;
    let body = g.body();
    for insn in body.iter().skip(1) {
        if overwrites_register(insn) {
            score += t.register_overwrite;
        }
        if writes_memory(insn) {
            score += t.memory_write_to_register_address;
        }
        if reads_memory(insn) {
            score += t.memory_read_from_register_address;
        }
        if modifies_stack_pointer(insn) {
            score += t.stack_pointer_modification;
        }
        if insn.mnemonic.is_jcc() {
            score += t.conditional_branch;
        }
        if matches!(classify_gpi(insn), Some(GpiKind::RetnImm | GpiKind::RetfImm)) {
            score += t.return_with_immediate;
        }
    }
    score
}

/// Count and mean quality score of a set (0.0 mean for the empty set).
pub fn set_quality(set: &GadgetSet, t: &ScoreTable) -> QualitySummary {
    let useful_count = set.len();
    let average_score = if useful_count == 0 {
        0.0
    } else {
        set.iter().map(|g| score_quality(g, t)).sum::<f64>() / useful_count as f64
    };
    QualitySummary { useful_count, average_score }
}

/// Counts, per level, the classes satisfied by at least one ROP gadget's
/// first instruction. Non-ROP gadgets are ignored.
pub fn expressivity(
    set: &GadgetSet,
    rules: &ClassRuleTable,
) -> Result<ExpressivityProfile, ConfigError> {
    let counts = rules.level_counts();
    if counts != REQUIRED_CLASSES {
        return Err(ConfigError::BadCardinality(counts.0, counts.1, counts.2));
    }
    let mut satisfied = [0usize; 3];
    for rule in &rules.rules {
        let hit = set
            .iter()
            .filter(|g| g.gpi.group() == GpiGroup::RopReturn)
            .any(|g| rule.matches(&g.instructions[0]));
        if hit {
            for level in &rule.levels {
                satisfied[*level as usize - 1] += 1;
            }
        }
    }
    Ok(ExpressivityProfile {
        satisfied,
        required: [REQUIRED_CLASSES.0, REQUIRED_CLASSES.1, REQUIRED_CLASSES.2],
    })
}

fn is_pop_reg(insn: &Instruction) -> bool {
    insn.mnemonic == Mnemonic::Pop && matches!(insn.operands.as_slice(), [Operand::Reg(_)])
}

fn is_mem_load(insn: &Instruction) -> bool {
    insn.mnemonic == Mnemonic::Mov
        && matches!(insn.operands.as_slice(), [Operand::Reg(_), Operand::Mem(_)])
}

/// The register an indirect branch dispatches through: the operand register,
/// or the memory operand's base.
fn branch_register(insn: &Instruction) -> Option<Reg> {
    match insn.operands.first()? {
        Operand::Reg(r) => Some(*r),
        Operand::Mem(m) => m.base,
        _ => None,
    }
}

/// Arithmetic update of `reg` (the dispatcher idiom: advance a table
/// pointer, then branch through it).
fn updates_register(insn: &Instruction, reg: Reg) -> bool {
    use Mnemonic::*;
    matches!(insn.mnemonic, Add | Sub | Inc | Dec | Lea)
        && matches!(insn.operands.first(),
            Some(Operand::Reg(r)) if r.index == reg.index && !r.high)
}

fn modifies_sp_arith(insn: &Instruction) -> bool {
    matches!(insn.mnemonic, Mnemonic::Add | Mnemonic::Sub)
        && matches!(insn.operands.first(), Some(Operand::Reg(r)) if r.is_stack_pointer())
}

/// Classifies a gadget against the ten special-purpose patterns, first match
/// wins: Syscall; the JOP kinds (data loader, dispatcher, initializer,
/// trampoline); then the COP kinds (dispatcher, initializer, trampoline,
/// strong trampoline, intra-stack pivot).
pub fn classify_special(g: &Gadget) -> Option<SpKind> {
    let gpi = g.gpi;
    let body = g.body();
    let group = gpi.group();

    if group == GpiGroup::Syscall {
        return Some(SpKind::Syscall);
    }

    let last_is_pop = body.last().map(is_pop_reg).unwrap_or(false);
    let mass_load = body.iter().filter(|i| is_mem_load(i)).count() >= 2;
    let dispatcher = || {
        let reg = branch_register(g.terminator())?;
        body.last()
            .filter(|i| updates_register(i, reg))
            .map(|_| ())
    };

    match group {
        GpiGroup::JopIndirectJump => {
            if last_is_pop {
                return Some(SpKind::JopDataLoader);
            }
            if dispatcher().is_some() {
                return Some(SpKind::JopDispatcher);
            }
            if mass_load {
                return Some(SpKind::JopInitializer);
            }
            if matches!(gpi, GpiKind::JmpMem | GpiKind::JmpMemOff) {
                return Some(SpKind::JopTrampoline);
            }
            None
        }
        GpiGroup::JopCopIndirectCall => {
            if dispatcher().is_some() {
                return Some(SpKind::CopDispatcher);
            }
            if mass_load {
                return Some(SpKind::CopInitializer);
            }
            if matches!(gpi, GpiKind::CallMem | GpiKind::CallMemOff) {
                return Some(SpKind::CopTrampoline);
            }
            if last_is_pop {
                return Some(SpKind::CopStrongTrampoline);
            }
            if body.iter().any(modifies_sp_arith) {
                return Some(SpKind::CopIntraStackPivot);
            }
            None
        }
        _ => None,
    }
}

/// Union of [`classify_special`] over the set.
pub fn special_purpose(set: &GadgetSet) -> SpAvailability {
    let mut present = BTreeSet::new();
    for g in set.iter() {
        if let Some(kind) = classify_special(g) {
            present.insert(kind);
        }
    }
    SpAvailability { present }
}
