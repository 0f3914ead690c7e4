//! Metric configuration: the expressivity class-rule table and the quality
//! score table. Both load from a line-oriented text format (see the embedded
//! defaults for the grammar) so studies can swap tables without code changes.

use crate::insn::{Instruction, Operand};
use thiserror::Error;

pub const DEFAULT_CLASS_RULES: &str = include_str!("class_rules.txt");
pub const DEFAULT_SCORE_TABLE: &str = include_str!("score_table.txt");

/// Required class counts per expressivity level.
pub const REQUIRED_CLASSES: (usize, usize, usize) = (11, 35, 17);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("class table has {0}/{1}/{2} classes per level, need 11/35/17")]
    BadCardinality(usize, usize, usize),
    #[error("duplicate class id {0:?}")]
    DuplicateClass(String),
}

/// First-instruction operand shape of an expressivity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperandShape {
    None,
    Reg,
    RegReg,
    RegRegSame,
    RegImm,
    RegMem,
    RegMemOff,
    MemReg,
    MemOffReg,
    MemImm,
    SpImm,
    Any,
}

impl OperandShape {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => OperandShape::None,
            "reg" => OperandShape::Reg,
            "reg-reg" => OperandShape::RegReg,
            "reg-reg-same" => OperandShape::RegRegSame,
            "reg-imm" => OperandShape::RegImm,
            "reg-mem" => OperandShape::RegMem,
            "reg-mem-off" => OperandShape::RegMemOff,
            "mem-reg" => OperandShape::MemReg,
            "mem-off-reg" => OperandShape::MemOffReg,
            "mem-imm" => OperandShape::MemImm,
            "sp-imm" => OperandShape::SpImm,
            "any" => OperandShape::Any,
            _ => return None,
        })
    }

    pub fn matches(&self, ops: &[Operand]) -> bool {
        use Operand::*;
        match self {
            OperandShape::Any => true,
            OperandShape::None => ops.is_empty(),
            OperandShape::Reg => matches!(ops, [Reg(_)]),
            OperandShape::RegReg => matches!(ops, [Reg(_), Reg(_)]),
            OperandShape::RegRegSame => matches!(ops, [Reg(a), Reg(b)] if a == b),
            OperandShape::RegImm => matches!(ops, [Reg(_), Imm { .. }]),
            OperandShape::RegMem => matches!(ops, [Reg(_), Mem(_)]),
            OperandShape::RegMemOff => matches!(ops, [Reg(_), Mem(m)] if m.disp != 0),
            OperandShape::MemReg => matches!(ops, [Mem(_), Reg(_)]),
            OperandShape::MemOffReg => matches!(ops, [Mem(m), Reg(_)] if m.disp != 0),
            OperandShape::MemImm => matches!(ops, [Mem(_), Imm { .. }]),
            OperandShape::SpImm => {
                matches!(ops, [Reg(r), Imm { .. }] if r.is_stack_pointer())
            }
        }
    }
}

/// One computational class: which levels it belongs to and the
/// first-instruction predicate that satisfies it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRule {
    pub id: String,
    pub levels: Vec<u8>,
    pub mnemonics: Vec<String>,
    pub shape: OperandShape,
}

impl ClassRule {
    pub fn matches(&self, insn: &Instruction) -> bool {
        self.mnemonics.iter().any(|m| m == insn.mnemonic.name())
            && self.shape.matches(&insn.operands)
    }
}

/// The full class-rule table, cardinality-checked at load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRuleTable {
    pub rules: Vec<ClassRule>,
}

impl ClassRuleTable {
    /// Parses the documented `class ...` line format and validates the
    /// 11/35/17 per-level cardinalities.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut rules: Vec<ClassRule> = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = strip_comment(line);
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap();
            if tag != "class" {
                return Err(ConfigError::Parse(no + 1, format!("expected 'class', got {tag:?}")));
            }
            let id = fields
                .next()
                .ok_or_else(|| ConfigError::Parse(no + 1, "missing class id".into()))?
                .to_string();
            if rules.iter().any(|r| r.id == id) {
                return Err(ConfigError::DuplicateClass(id));
            }
            let mut levels = None;
            let mut mnemonics = None;
            let mut shape = None;
            for field in fields {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| ConfigError::Parse(no + 1, format!("bad field {field:?}")))?;
                match key {
                    "levels" => {
                        let parsed: Result<Vec<u8>, _> =
                            value.split(',').map(|v| v.parse::<u8>()).collect();
                        let parsed = parsed
                            .map_err(|_| ConfigError::Parse(no + 1, "bad level list".into()))?;
                        if parsed.iter().any(|l| !(1..=3).contains(l)) {
                            return Err(ConfigError::Parse(no + 1, "levels must be 1-3".into()));
                        }
                        levels = Some(parsed);
                    }
                    "mnemonics" => {
                        mnemonics = Some(value.split('|').map(str::to_string).collect());
                    }
                    "shape" => {
                        shape = Some(OperandShape::parse(value).ok_or_else(|| {
                            ConfigError::Parse(no + 1, format!("unknown shape {value:?}"))
                        })?);
                    }
                    _ => return Err(ConfigError::Parse(no + 1, format!("unknown key {key:?}"))),
                }
            }
            rules.push(ClassRule {
                id,
                levels: levels
                    .ok_or_else(|| ConfigError::Parse(no + 1, "missing levels=".into()))?,
                mnemonics: mnemonics
                    .ok_or_else(|| ConfigError::Parse(no + 1, "missing mnemonics=".into()))?,
                shape: shape.ok_or_else(|| ConfigError::Parse(no + 1, "missing shape=".into()))?,
            });
        }
        let table = ClassRuleTable { rules };
        let (l1, l2, l3) = table.level_counts();
        if (l1, l2, l3) != REQUIRED_CLASSES {
            return Err(ConfigError::BadCardinality(l1, l2, l3));
        }
        Ok(table)
    }

    /// The shipped default table.
    pub fn default_table() -> Self {
        Self::parse(DEFAULT_CLASS_RULES).expect("embedded class table is valid")
    }

    pub fn level_counts(&self) -> (usize, usize, usize) {
        let count = |lvl: u8| self.rules.iter().filter(|r| r.levels.contains(&lvl)).count();
        (count(1), count(2), count(3))
    }
}

/// Per-category quality penalties.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub register_overwrite: f64,
    pub memory_write_to_register_address: f64,
    pub memory_read_from_register_address: f64,
    pub stack_pointer_modification: f64,
    pub conditional_branch: f64,
    pub return_with_immediate: f64,
}

impl Default for ScoreTable {
    fn default() -> Self {
        Self::parse(DEFAULT_SCORE_TABLE).expect("embedded score table is valid")
    }
}

impl ScoreTable {
    /// Parses the documented `penalty <category> <value>` line format.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut table = ScoreTable {
            register_overwrite: 0.0,
            memory_write_to_register_address: 0.0,
            memory_read_from_register_address: 0.0,
            stack_pointer_modification: 0.0,
            conditional_branch: 0.0,
            return_with_immediate: 0.0,
        };
        for (no, line) in text.lines().enumerate() {
            let line = strip_comment(line);
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap();
            if tag != "penalty" {
                return Err(ConfigError::Parse(no + 1, format!("expected 'penalty', got {tag:?}")));
            }
            let category = fields
                .next()
                .ok_or_else(|| ConfigError::Parse(no + 1, "missing category".into()))?;
            let value: f64 = fields
                .next()
                .ok_or_else(|| ConfigError::Parse(no + 1, "missing value".into()))?
                .parse()
                .map_err(|_| ConfigError::Parse(no + 1, "bad value".into()))?;
            if value < 0.0 {
                return Err(ConfigError::Parse(no + 1, "penalties must be >= 0".into()));
            }
            let slot = match category {
                "register-overwrite" => &mut table.register_overwrite,
                "memory-write-to-register-address" => {
                    &mut table.memory_write_to_register_address
                }
                "memory-read-from-register-address" => {
                    &mut table.memory_read_from_register_address
                }
                "stack-pointer-modification" => &mut table.stack_pointer_modification,
                "conditional-branch" => &mut table.conditional_branch,
                "return-with-immediate" => &mut table.return_with_immediate,
                _ => {
                    return Err(ConfigError::Parse(
                        no + 1,
                        format!("unknown category {category:?}"),
                    ))
                }
            };
            *slot = value;
        }
        Ok(table)
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => line[..i].trim(),
        None => line.trim(),
    }
}
