//! Shared test machinery: the brute-force scanner oracle, the synthetic
//! mitigation corpus, and the structural edit checkers used to prove passes
//! only make their permitted kinds of change.
#![allow(dead_code)] // each test target uses a different subset

use gadgetscope_core::insn::{classify_gpi, decode_instruction, Instruction, Mnemonic};
use gadgetscope_core::layout::{
    assemble_detailed, parse_listing, LayoutInsn, LayoutProgram, SymbolicTarget,
};
use gadgetscope_core::region::Region;
use gadgetscope_core::scan::ScanConfig;
use std::collections::BTreeSet;

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// Disallowed in a gadget body: GPIs and any control flow that is not a
/// direct jump. Stated independently of the scanner.
fn oracle_rejects(insn: &Instruction) -> bool {
    if classify_gpi(insn).is_some() {
        return true;
    }
    match insn.mnemonic {
        m if m.is_jcc() => false,
        Mnemonic::Jmp => false, // direct; indirect forms are GPIs
        Mnemonic::Call | Mnemonic::CallFar | Mnemonic::JmpFar | Mnemonic::Int | Mnemonic::Iret => {
            true
        }
        _ => false,
    }
}

/// Enumerates every (start, gpi) offset pair directly and full-decodes each
/// candidate, applying the documented acceptance rules. Returns the set of
/// normalized keys.
pub fn oracle_harvest_keys(region: &Region, cfg: &ScanConfig) -> BTreeSet<String> {
    let bytes = &region.bytes;
    let mut keys = BTreeSet::new();
    for gpi_offset in 0..bytes.len() {
        let Ok(gpi_insn) = decode_instruction(bytes, gpi_offset) else { continue };
        if classify_gpi(&gpi_insn).is_none() {
            continue;
        }
        'start: for start in gpi_offset.saturating_sub(cfg.max_prefix_bytes)..=gpi_offset {
            let mut pos = start;
            let mut text = String::new();
            let mut multi_branch = false;
            while pos < gpi_offset {
                let Ok(insn) = decode_instruction(bytes, pos) else { continue 'start };
                pos += insn.length();
                if pos > gpi_offset || oracle_rejects(&insn) {
                    continue 'start;
                }
                multi_branch |= insn.is_direct_jump();
                text.push_str(&insn.text());
                text.push_str("; ");
            }
            if multi_branch && !cfg.include_multi_branch {
                continue;
            }
            text.push_str(&gpi_insn.text());
            text.push(';');
            keys.insert(text);
        }
    }
    keys
}

// ---------------------------------------------------------------------------
// Synthetic mitigation corpus
// ---------------------------------------------------------------------------

fn repeat_line(out: &mut String, line: &str, count: usize) {
    for _ in 0..count {
        out.push_str(line);
        out.push('\n');
    }
}

/// The duplicated-ret fixture: three identical rets, each preceded by a
/// distinct 10-byte straight-line prefix.
pub fn duplicated_ret_listing() -> String {
    let mut l = String::from("func triple_ret\n");
    for (a, b) in [("rax", "rbx"), ("rcx", "rdx"), ("rsi", "rdi")] {
        // push a; nop x6; pop b; pop a; pop b — a distinct 10-byte prefix.
        l.push_str(&format!("  push {a} | {:02x}\n", 0x50 + reg_code(a)));
        repeat_line(&mut l, "  nop | 90", 6);
        l.push_str(&format!("  pop {b} | {:02x}\n", 0x58 + reg_code(b)));
        l.push_str(&format!("  pop {a} | {:02x}\n", 0x58 + reg_code(a)));
        l.push_str(&format!("  pop {b} | {:02x}\n", 0x58 + reg_code(b)));
        l.push_str("  ret | c3\n");
    }
    l
}

fn reg_code(name: &str) -> u8 {
    match name {
        "rax" => 0,
        "rcx" => 1,
        "rdx" => 2,
        "rbx" => 3,
        "rsi" => 6,
        "rdi" => 7,
        _ => unreachable!("unused register"),
    }
}

/// A 20-function program exercising every defect the passes address:
/// duplicated returns, duplicated register-indirect jumps, boundary-spanning
/// GPI encodings, GPI-bearing jump displacements (rel8 and rel32), and
/// GPI-bearing call displacements. Fully deterministic.
pub fn corpus() -> LayoutProgram {
    let mut l = String::new();

    // 1-3: duplicated identical rets with distinct prefixes.
    l.push_str(&duplicated_ret_listing());
    l.push_str("func dup_ret_b\n  pop rax | 58\n  ret | c3\n  pop rbx | 5b\n  ret | c3\n");
    l.push_str("func dup_ret_imm\n  ret 0x8 | c2 08 00\n  nop | 90\n  ret 0x8 | c2 08 00\n");

    // 4-5: duplicated indirect jumps (one mergeable group, one not).
    l.push_str("func dup_ijmp\n  jmp rax | ff e0\n  nop | 90\n  jmp rax | ff e0\n");
    l.push_str("func mixed_ijmp\n  jmp rax | ff e0\n  jmp rbx | ff e3\n  jmp qword [rcx] | ff 21\n");

    // 6-7: boundary-spanning GPIs (int 0x80 across je|or, ret imm16 span).
    l.push_str("func boundary_int80\nl: nop | 90\n");
    repeat_line(&mut l, "  nop | 90", 48);
    l.push_str("  je @l | 74 ??\n  or byte [rbx+0x4], 0x2 | 80 4b 04 02\n  ret | c3\n");
    l.push_str("func boundary_retimm\n  mov al, 0xc2 | b0 c2\n  nop | 90\n  nop | 90\n  ret | c3\n");

    // 8-10: jump displacement problems.
    l.push_str("func sled_fwd32\n  je @end | 0f 84 ?? ?? ?? ??\n");
    repeat_line(&mut l, "  nop | 90", 0xC3);
    l.push_str("end: ret | c3\n");
    l.push_str("func sled_bwd32\nl: nop | 90\n");
    repeat_line(&mut l, "  nop | 90", 55);
    l.push_str("  jmp @l | e9 ?? ?? ?? ??\n  ret | c3\n");
    l.push_str("func sled_bwd8\nl: nop | 90\n");
    repeat_line(&mut l, "  nop | 90", 58);
    l.push_str("  je @l | 74 ??\n  ret | c3\n");

    // 11-14: call displacement problems (distance = nop count after call).
    l.push_str("func call_ret_disp\n  call @@target_a | e8 ?? ?? ?? ??\n");
    repeat_line(&mut l, "  nop | 90", 0xC3);
    l.push_str("func target_a\n  pop rbx | 5b\n  ret | c3\n");
    l.push_str("func call_int80_disp\n  call @@target_b | e8 ?? ?? ?? ??\n");
    repeat_line(&mut l, "  nop | 90", 0x80CD);
    l.push_str("func target_b\n  pop rcx | 59\n  ret | c3\n");

    // 15-20: ordinary functions (also swap fodder for the reorderer).
    l.push_str("func plain_add\n  add eax, ebx | 01 d8\n  ret | c3\n");
    l.push_str("func plain_store\n  mov qword [rdx], rsi | 48 89 32\n  ret | c3\n");
    l.push_str("func plain_loop\nhead: add eax, 0x1 | 83 c0 01\n  je @head | 74 ??\n  ret | c3\n");
    l.push_str("func plain_syscall\n  syscall | 0f 05\n");
    l.push_str("func plain_leaf\n  lea rax, [rdx+0x8] | 48 8d 42 08\n  ret | c3\n");
    l.push_str("func plain_pop\n  pop rdi | 5f\n  ret | c3\n");

    let program = parse_listing(&l).expect("corpus listing parses");
    assert_eq!(program.functions.len(), 20);
    program
}

// ---------------------------------------------------------------------------
// Structural edit checkers
// ---------------------------------------------------------------------------

fn is_plain_nop(li: &LayoutInsn) -> bool {
    li.label.is_none() && li.target.is_none() && li.insn.mnemonic == Mnemonic::Nop
}

/// Merge passes may only (a) replace a GPI with a direct jump to a retained
/// identical GPI and (b) add a label to the retained instruction.
pub fn assert_merge_edits_only(before: &LayoutProgram, after: &LayoutProgram) {
    assert_eq!(before.functions.len(), after.functions.len());
    for (bf, af) in before.functions.iter().zip(&after.functions) {
        assert_eq!(bf.name, af.name);
        assert_eq!(bf.instructions.len(), af.instructions.len());
        for (bi, ai) in bf.instructions.iter().zip(&af.instructions) {
            if bi == ai {
                continue;
            }
            if bi.insn == ai.insn && bi.target == ai.target {
                // Label added to a retained GPI.
                assert!(bi.label.is_none() && ai.label.is_some());
                assert!(classify_gpi(&ai.insn).is_some());
                continue;
            }
            // Replacement jump: original was a GPI, new is a direct jump to a
            // label sitting on an identical GPI.
            assert!(classify_gpi(&bi.insn).is_some(), "only GPIs are replaced");
            assert_eq!(ai.insn.mnemonic, Mnemonic::Jmp);
            assert_eq!(ai.label, bi.label, "replacement keeps the original label");
            let Some(SymbolicTarget::Label(label)) = &ai.target else {
                panic!("replacement jump must target a label");
            };
            let retained = af
                .label_index(label)
                .map(|i| &af.instructions[i])
                .expect("target label exists");
            assert!(classify_gpi(&retained.insn).is_some());
            assert_eq!(retained.insn.text(), bi.insn.text(), "identical GPI retained");
        }
    }
}

/// Widening/sledding may only insert plain nops.
pub fn assert_nop_insertions_only(before: &LayoutProgram, after: &LayoutProgram) {
    assert_eq!(before.functions.len(), after.functions.len());
    for (bf, af) in before.functions.iter().zip(&after.functions) {
        assert_eq!(bf.name, af.name);
        let mut bit = bf.instructions.iter().peekable();
        for ai in &af.instructions {
            if bit.peek() == Some(&ai) {
                bit.next();
            } else {
                assert!(
                    is_plain_nop(ai),
                    "inserted instruction in {} is not a plain nop: {:?}",
                    af.name,
                    ai.insn.text()
                );
            }
        }
        assert!(bit.next().is_none(), "no instruction may be removed from {}", bf.name);
    }
}

/// Reordering may only permute functions; assembled bytes per function may
/// differ only inside displacement fields.
pub fn assert_reorder_edits_only(before: &LayoutProgram, after: &LayoutProgram) {
    let mut before_names: Vec<&str> = before.functions.iter().map(|f| f.name.as_str()).collect();
    let mut after_names: Vec<&str> = after.functions.iter().map(|f| f.name.as_str()).collect();
    before_names.sort_unstable();
    after_names.sort_unstable();
    assert_eq!(before_names, after_names, "function multiset preserved");
    for af in &after.functions {
        let bf = before.function(&af.name).expect("function survives");
        assert_eq!(bf.instructions, af.instructions, "IR of {} untouched", af.name);
    }
    // Byte level: compare per-function encodings with displacement fields
    // masked out.
    let masked = |p: &LayoutProgram| {
        let asm = assemble_detailed(p).expect("assembles");
        let mut per_func: Vec<(String, Vec<u8>)> = Vec::new();
        for (fi, f) in p.functions.iter().enumerate() {
            let mut bytes = Vec::new();
            for ai in asm.insns.iter().filter(|i| !i.is_padding && i.function_index == fi) {
                let start = ai.address as usize;
                let mut enc = asm.region.bytes[start..start + ai.length].to_vec();
                if let Some(field) = ai.disp {
                    let f0 = (field.pos - ai.address) as usize;
                    for b in &mut enc[f0..f0 + field.width as usize] {
                        *b = 0;
                    }
                }
                bytes.extend(enc);
            }
            per_func.push((f.name.clone(), bytes));
        }
        per_func.sort();
        per_func
    };
    assert_eq!(masked(before), masked(after), "only displacement bytes may change");
}
