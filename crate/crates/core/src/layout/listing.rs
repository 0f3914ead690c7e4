//! The line-oriented listing format.
//!
//! ```text
//! # comment
//! func checksum
//!   push rbp        | 55
//!   jmp @out        | eb ??
//! loop: add eax, 0x1 | 83 c0 01
//! out:  ret          | c3
//! ```
//!
//! `func <name>` opens a function; instruction lines are
//! `[<label>:] <mnemonic> <operands> | <hex bytes>`. Branch operands are
//! `@<label>` for in-function jumps and `@@<function>` for direct calls.
//! Displacement field bytes may be written as `??`; they are symbolic either
//! way and get recomputed on assembly, so the parser stores them zeroed and
//! the renderer always prints `??`.

use super::{FunctionLayout, LayoutInsn, LayoutProgram, ParseError, SymbolicTarget};
use crate::insn::{decode_instruction, Instruction, Mnemonic, Operand};

fn ident_ok(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, column, message: message.into() }
}

/// Parses a listing into a [`LayoutProgram`] with default padding policy.
pub fn parse_listing(text: &str) -> Result<LayoutProgram, ParseError> {
    let mut program = LayoutProgram::default();
    let mut current: Option<FunctionLayout> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }

        if let Some(rest) = trimmed.strip_prefix("func ") {
            let name = rest.trim();
            if !ident_ok(name) {
                return Err(syntax(line_no, 1, format!("bad function name {name:?}")));
            }
            if program.functions.iter().any(|f| f.name == name)
                || current.as_ref().map(|f| f.name == name).unwrap_or(false)
            {
                return Err(ParseError::DuplicateFunction { line: line_no, name: name.into() });
            }
            if let Some(done) = current.take() {
                program.functions.push(done);
            }
            current = Some(FunctionLayout { name: name.into(), instructions: Vec::new() });
            continue;
        }

        let func = current
            .as_mut()
            .ok_or_else(|| syntax(line_no, 1, "instruction before any 'func'"))?;
        let insn = parse_insn_line(line_no, trimmed, func)?;
        func.instructions.push(insn);
    }
    if let Some(done) = current.take() {
        program.functions.push(done);
    }

    resolve_targets(&program)?;
    Ok(program)
}

fn parse_insn_line(
    line_no: usize,
    line: &str,
    func: &FunctionLayout,
) -> Result<LayoutInsn, ParseError> {
    let (text_part, hex_part) = line
        .split_once('|')
        .ok_or_else(|| syntax(line_no, 1, "missing '|' byte separator"))?;

    let mut text = text_part.trim();
    let mut label = None;
    if let Some((head, rest)) = text.split_once(':') {
        let head = head.trim();
        if ident_ok(head) {
            if func.label_index(head).is_some() {
                return Err(ParseError::DuplicateLabel { line: line_no, label: head.into() });
            }
            label = Some(head.to_string());
            text = rest.trim();
        }
    }

    let mnemonic = text
        .split_whitespace()
        .next()
        .ok_or_else(|| syntax(line_no, 1, "missing mnemonic"))?;

    // Symbolic target, if any, from the operand text.
    let mut target = None;
    for token in text.split_whitespace().skip(1) {
        let token = token.trim_matches(',');
        if let Some(name) = token.strip_prefix("@@") {
            if !ident_ok(name) {
                return Err(syntax(line_no, 1, format!("bad call target {token:?}")));
            }
            target = Some(SymbolicTarget::Function(name.to_string()));
        } else if let Some(name) = token.strip_prefix('@') {
            if !ident_ok(name) {
                return Err(syntax(line_no, 1, format!("bad jump target {token:?}")));
            }
            target = Some(SymbolicTarget::Label(name.to_string()));
        }
    }

    // Hex bytes; ?? marks a displacement placeholder byte.
    let mut bytes = Vec::new();
    let mut placeholders = Vec::new();
    for (i, token) in hex_part.split_whitespace().enumerate() {
        if token == "??" {
            placeholders.push(i);
            bytes.push(0);
        } else {
            let b = u8::from_str_radix(token, 16)
                .map_err(|_| syntax(line_no, 1, format!("bad hex byte {token:?}")))?;
            if token.len() != 2 {
                return Err(syntax(line_no, 1, format!("bad hex byte {token:?}")));
            }
            bytes.push(b);
        }
    }
    if bytes.is_empty() {
        return Err(syntax(line_no, 1, "missing instruction bytes"));
    }

    let insn = normalize_payload(&bytes).map_err(|e| {
        syntax(line_no, 1, format!("bytes do not decode: {e}"))
    })?;
    if insn.length() != bytes.len() {
        return Err(syntax(
            line_no,
            1,
            format!("{} bytes given but encoding is {} bytes", bytes.len(), insn.length()),
        ));
    }
    if insn.mnemonic.name() != mnemonic {
        return Err(syntax(
            line_no,
            1,
            format!("mnemonic {mnemonic:?} does not match encoding ({})", insn.mnemonic.name()),
        ));
    }

    match (insn.rel_operand(), &target) {
        (Some(rel), Some(t)) => {
            let span = rel.field_pos as usize..rel.field_pos as usize + rel.field_width as usize;
            if placeholders.iter().any(|p| !span.contains(p)) {
                return Err(syntax(line_no, 1, "?? outside the displacement field"));
            }
            let is_call = insn.mnemonic == Mnemonic::Call;
            match t {
                SymbolicTarget::Function(_) if !is_call => {
                    return Err(syntax(line_no, 1, "@@function target on a non-call"));
                }
                SymbolicTarget::Label(_) if is_call => {
                    return Err(syntax(line_no, 1, "call needs a @@function target"));
                }
                _ => {}
            }
        }
        (Some(_), None) => {
            return Err(syntax(line_no, 1, "branch needs a @label or @@function target"));
        }
        (None, Some(_)) => {
            return Err(syntax(line_no, 1, "target on an instruction with no displacement"));
        }
        (None, None) => {}
    }

    Ok(LayoutInsn { label, insn, target })
}

/// Decodes payload bytes and zeroes any displacement field so stored
/// encodings are canonical regardless of how the listing spelled them.
fn normalize_payload(bytes: &[u8]) -> Result<Instruction, crate::insn::DecodeError> {
    let insn = decode_instruction(bytes, 0)?;
    if let Some(rel) = insn.rel_operand().copied() {
        let mut zeroed = bytes.to_vec();
        for b in &mut zeroed
            [rel.field_pos as usize..rel.field_pos as usize + rel.field_width as usize]
        {
            *b = 0;
        }
        return decode_instruction(&zeroed, 0);
    }
    Ok(insn)
}

fn resolve_targets(program: &LayoutProgram) -> Result<(), ParseError> {
    for func in &program.functions {
        for insn in &func.instructions {
            match &insn.target {
                Some(SymbolicTarget::Label(label)) => {
                    if func.label_index(label).is_none() {
                        return Err(ParseError::UndefinedLabel { line: 0, label: label.clone() });
                    }
                }
                Some(SymbolicTarget::Function(name)) if program.function(name).is_none() => {
                    return Err(ParseError::UndefinedFunction { line: 0, name: name.clone() });
                }
                Some(SymbolicTarget::Function(_)) => {}
                None => {}
            }
        }
    }
    Ok(())
}

/// Operand text with the relative operand replaced by its symbolic form.
fn insn_text(insn: &LayoutInsn) -> String {
    let mut out = insn.insn.mnemonic.name().to_string();
    for (i, op) in insn.insn.operands.iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        match (op, &insn.target) {
            (Operand::Rel(_), Some(SymbolicTarget::Label(l))) => {
                out.push('@');
                out.push_str(l);
            }
            (Operand::Rel(_), Some(SymbolicTarget::Function(f))) => {
                out.push_str("@@");
                out.push_str(f);
            }
            _ => {
                // Re-render the single operand through the instruction
                // renderer by printing a one-operand clone.
                let mut tmp = insn.insn.clone();
                tmp.operands = vec![*op];
                let text = tmp.text();
                out.push_str(text.split_once(' ').map(|(_, rest)| rest).unwrap_or(""));
            }
        }
    }
    out
}

/// Renders a program back to listing text; the inverse of [`parse_listing`]
/// for default-policy programs.
pub fn render_listing(program: &LayoutProgram) -> String {
    let mut out = String::new();
    for func in &program.functions {
        out.push_str("func ");
        out.push_str(&func.name);
        out.push('\n');
        for insn in &func.instructions {
            let mut line = String::new();
            if let Some(label) = &insn.label {
                line.push_str(label);
                line.push_str(": ");
            } else {
                line.push_str("  ");
            }
            line.push_str(&insn_text(insn));
            let mut hex = String::new();
            let rel = insn.insn.rel_operand().copied();
            for (i, b) in insn.insn.bytes.iter().enumerate() {
                if i > 0 {
                    hex.push(' ');
                }
                let in_field = rel
                    .map(|r| {
                        i >= r.field_pos as usize && i < r.field_pos as usize + r.field_width as usize
                    })
                    .unwrap_or(false);
                if in_field {
                    hex.push_str("??");
                } else {
                    hex.push_str(&format!("{b:02x}"));
                }
            }
            out.push_str(&format!("{line} | {hex}\n"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two functions
func f
  push rbp | 55
  jmp @out | eb ??
mid: add eax, 0x1 | 83 c0 01
out: ret | c3
func g
  call @@f | e8 ?? ?? ?? ??
  ret | c3
";

    #[test]
    fn parse_minimal() {
        let p = parse_listing("func f\n  ret | c3\n").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].name, "f");
        assert_eq!(p.functions[0].instructions.len(), 1);
        assert_eq!(p.functions[0].instructions[0].insn.mnemonic.name(), "ret");
    }

    #[test]
    fn parse_sample_and_round_trip() {
        let p = parse_listing(SAMPLE).unwrap();
        assert_eq!(p.functions.len(), 2);
        assert_eq!(p.functions[0].instructions[1].target,
            Some(SymbolicTarget::Label("out".into())));
        assert_eq!(p.functions[1].instructions[0].target,
            Some(SymbolicTarget::Function("f".into())));
        let rendered = render_listing(&p);
        let reparsed = parse_listing(&rendered).unwrap();
        assert_eq!(reparsed, p);
    }

    #[test]
    fn concrete_displacement_bytes_normalize() {
        // jmp spelled with a concrete displacement parses equal to ??.
        let a = parse_listing("func f\n  jmp @l | eb 01\n  nop | 90\nl: ret | c3\n").unwrap();
        let b = parse_listing("func f\n  jmp @l | eb ??\n  nop | 90\nl: ret | c3\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_listing("func f\n  jmp @missing | eb ??\n  ret | c3\n"),
            Err(ParseError::UndefinedLabel { .. })
        ));
        assert!(matches!(
            parse_listing("func f\n  ret | c3\nfunc f\n  ret | c3\n"),
            Err(ParseError::DuplicateFunction { .. })
        ));
        assert!(matches!(
            parse_listing("func f\nl: nop | 90\nl: ret | c3\n"),
            Err(ParseError::DuplicateLabel { .. })
        ));
        assert!(matches!(
            parse_listing("func f\n  call @@g | e8 ?? ?? ?? ??\n"),
            Err(ParseError::UndefinedFunction { .. })
        ));
        assert!(matches!(
            parse_listing("func f\n  jmp | eb ??\n"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_listing("func f\n  ret | zz\n"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_listing("func f\n  nop @x | 90\n"),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            parse_listing("  ret | c3\n"),
            Err(ParseError::Syntax { .. })
        ));
        // Mnemonic/bytes mismatch.
        assert!(matches!(
            parse_listing("func f\n  pop | c3\n"),
            Err(ParseError::Syntax { .. })
        ));
    }
}
