//! Locating GPI encodings produced by the layout itself: patterns inside
//! branch displacement fields and patterns straddling instruction
//! boundaries.

use super::{assemble_detailed, AssembleError, BoundarySite, LayoutProgram, ProblemSite};
use crate::insn::{match_gpi_at, GpiPattern};

/// Longest encoding the matcher can produce; bounds the backward search
/// window when looking for matches overlapping a field.
const MAX_ENCODING_LEN: usize = 15;

/// Assembles, then reports every GPI pattern occurrence lying wholly or
/// partially within a direct jump/jcc/call displacement field. Ordered by
/// region offset of the owning instruction, then match offset.
pub fn find_problematic_displacements(
    program: &LayoutProgram,
) -> Result<Vec<ProblemSite>, AssembleError> {
    let asm = assemble_detailed(program)?;
    let bytes = &asm.region.bytes;
    let mut sites = Vec::new();
    for ai in &asm.insns {
        let Some(field) = ai.disp else { continue };
        let f0 = field.pos as usize;
        let f1 = f0 + field.width as usize;
        let lo = f0.saturating_sub(MAX_ENCODING_LEN - 1);
        for offset in lo..f1 {
            let Some(m) = match_gpi_at(bytes, offset) else { continue };
            if offset + m.len <= f0 {
                continue; // ends before the field
            }
            sites.push(ProblemSite {
                function: program.functions[ai.function_index].name.clone(),
                function_index: ai.function_index,
                insn_index: ai.insn_index,
                kind: field.kind,
                pattern: GpiPattern {
                    kind: m.kind,
                    bytes: bytes[offset..offset + m.len].to_vec(),
                },
                pattern_offset_in_insn: offset as i64 - ai.address as i64,
                region_offset: offset as u64,
            });
        }
    }
    Ok(sites)
}

/// Assembles, then reports every multi-byte GPI pattern occurrence spanning
/// the boundary between two adjacent assembled instructions (padding bytes
/// participate as one-byte instructions). A match is anchored to the first
/// boundary it straddles.
pub fn scan_boundary_gpis(program: &LayoutProgram) -> Result<Vec<BoundarySite>, AssembleError> {
    let asm = assemble_detailed(program)?;
    let bytes = &asm.region.bytes;
    let mut sites = Vec::new();
    for pair in asm.insns.windows(2) {
        let (first, second) = (&pair[0], &pair[1]);
        let boundary = second.address;
        // A match starting at the first instruction's own start would just be
        // that instruction; decode determinism keeps it from spanning.
        for offset in first.address + 1..boundary {
            let Some(m) = match_gpi_at(bytes, offset as usize) else { continue };
            if m.len < 2 || offset + m.len as u64 <= boundary {
                continue;
            }
            sites.push(BoundarySite {
                first_address: first.address,
                second_address: second.address,
                pattern: GpiPattern {
                    kind: m.kind,
                    bytes: bytes[offset as usize..offset as usize + m.len].to_vec(),
                },
                region_offset: offset,
            });
        }
    }
    Ok(sites)
}
