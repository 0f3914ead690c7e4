//! Function reordering: call displacements crossing function boundaries can
//! encode GPIs, and sleds long enough to fix them would bloat the layout.
//! Instead, pick a called function whose call sites are problematic, work
//! out the smallest byte shift that clears them, and move the function that
//! far by adjacent swaps — in whichever direction swaps fewer bytes. Each
//! move perturbs other call displacements, so the pass iterates under global
//! failure detection and stops at a local minimum when progress stalls.

use super::{PassLimits, PassStats, Termination};
use crate::insn::match_gpi_at;
use crate::layout::{
    assemble_detailed, find_problematic_displacements, AssembleError, DispFieldKind,
    LayoutProgram, ProblemSite, SymbolicTarget,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn call_sites(program: &LayoutProgram) -> Result<Vec<ProblemSite>, AssembleError> {
    Ok(find_problematic_displacements(program)?
        .into_iter()
        .filter(|s| s.kind == DispFieldKind::Call)
        .collect())
}

/// The bytes around one call's rel32 field. GPI encodings can overlap the
/// field from either side (a small negative displacement ends in FF bytes
/// that complete an indirect-call encoding with whatever follows), and those
/// surrounding bytes stay put when the callee moves — so splicing a
/// candidate displacement into the real context decides cleanliness.
struct FieldContext {
    window: Vec<u8>,
    /// Field start within `window`.
    field_at: usize,
}

const CONTEXT: usize = 14;

impl FieldContext {
    fn new(region: &[u8], field_pos: usize) -> Self {
        let lo = field_pos.saturating_sub(CONTEXT);
        let hi = (field_pos + 4 + CONTEXT).min(region.len());
        FieldContext { window: region[lo..hi].to_vec(), field_at: field_pos - lo }
    }

    fn clean_with(&mut self, value: i32) -> bool {
        self.window[self.field_at..self.field_at + 4].copy_from_slice(&value.to_le_bytes());
        let f0 = self.field_at;
        let f1 = f0 + 4;
        (f0.saturating_sub(CONTEXT)..f1).all(|offset| {
            match match_gpi_at(&self.window, offset) {
                Some(m) => offset + m.len <= f0, // ends before the field
                None => true,
            }
        })
    }
}

/// Plans a move in one direction: the fewest adjacent swaps whose cumulative
/// displacement lands every site on a clean field value. Landing clean
/// implies the cumulative displacement covers each site's minimal clearing
/// shift; checking the landing itself avoids overshooting onto another dirty
/// encoding, since whole neighbor functions are the movement granularity.
/// `None` when the layout runs out of neighbors first.
fn swap_plan(
    target: usize,
    direction: i64,
    sites: &mut [(FieldContext, i64)],
    sizes: &[u64],
) -> Option<(usize, u64)> {
    let mut moved = 0u64;
    let mut swaps = 0usize;
    let mut index = target as i64;
    loop {
        let next = index + direction;
        if next < 0 || next as usize >= sizes.len() {
            return None;
        }
        moved += sizes[next as usize];
        swaps += 1;
        index = next;
        let all_clean = sites.iter_mut().all(|(ctx, value)| {
            i32::try_from(*value + direction * moved as i64)
                .map(|v| ctx.clean_with(v))
                .unwrap_or(false)
        });
        if all_clean {
            return Some((swaps, moved));
        }
    }
}

/// Runs the reordering pass.
pub fn reorder_functions(
    program: &LayoutProgram,
    limits: &PassLimits,
) -> Result<(LayoutProgram, PassStats), AssembleError> {
    let mut prog = program.clone();
    let mut stats = PassStats::new("reorder");
    let mut rng = ChaCha8Rng::seed_from_u64(limits.seed);
    let mut streak = 0u64;

    stats.sites_before = call_sites(&prog)?.len() as u64;

    loop {
        let sites = call_sites(&prog)?;
        if sites.is_empty() {
            stats.termination = Termination::Clean;
            break;
        }
        if stats.iterations >= limits.max_iterations {
            stats.termination = Termination::IterationLimit;
            break;
        }
        stats.iterations += 1;
        let old_count = sites.len();

        // Group sites by the function the problematic calls target.
        let mut by_target: BTreeMap<String, Vec<&ProblemSite>> = BTreeMap::new();
        for site in &sites {
            let li = &prog.functions[site.function_index].instructions[site.insn_index];
            if let Some(SymbolicTarget::Function(name)) = &li.target {
                by_target.entry(name.clone()).or_default().push(site);
            }
        }
        let names: Vec<&String> = by_target.keys().collect();
        let target_name = names[rng.random_range(0..names.len())].clone();
        let target_index = prog
            .functions
            .iter()
            .position(|f| f.name == target_name)
            .expect("call target exists");

        // Field value and surrounding bytes for each of the target's sites.
        let asm = assemble_detailed(&prog)?;
        let mut site_fields: Vec<(FieldContext, i64)> = by_target[&target_name]
            .iter()
            .map(|site| {
                let field = asm
                    .find(site.function_index, site.insn_index)
                    .and_then(|i| i.disp)
                    .expect("call site has a field");
                (FieldContext::new(&asm.region.bytes, field.pos as usize), field.value)
            })
            .collect();
        let sizes: Vec<u64> = (0..prog.functions.len())
            .map(|fi| asm.function_size(fi))
            .collect();
        let plan_fwd = swap_plan(target_index, 1, &mut site_fields, &sizes);
        let plan_bwd = swap_plan(target_index, -1, &mut site_fields, &sizes);

        // Backward (toward lower addresses) wins cost ties.
        let chosen = match (plan_fwd, plan_bwd) {
            (Some(f), Some(b)) => Some(if b.1 <= f.1 { (-1i64, b.0) } else { (1, f.0) }),
            (Some(f), None) => Some((1, f.0)),
            (None, Some(b)) => Some((-1, b.0)),
            (None, None) => None,
        };

        if let Some((direction, swaps)) = chosen {
            let func = prog.functions.remove(target_index);
            let new_index = (target_index as i64 + direction * swaps as i64) as usize;
            prog.functions.insert(new_index, func);
            stats.record_edit(&target_name, swaps as u64);
        }

        let new_count = call_sites(&prog)?.len();
        if new_count < old_count {
            streak = 0;
        } else {
            streak += 1;
            if streak >= limits.max_consecutive_failures {
                stats.termination = Termination::LocalMinimum;
                break;
            }
        }
    }

    stats.sites_after = call_sites(&prog)?.len() as u64;
    Ok((prog, stats))
}
