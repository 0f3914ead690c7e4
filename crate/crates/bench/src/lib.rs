//! Benchmark inputs: seeded byte regions and synthetic layouts sized like
//! small real-world code sections.

use gadgetscope_core::layout::{parse_listing, LayoutProgram};
use gadgetscope_core::region::{load_raw_region, Region};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bytes salted with GPI-ish values so the scanner does real work.
pub fn seeded_region(seed: u64, len: usize) -> Region {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
    for _ in 0..len / 24 {
        let pos = rng.random_range(0..len);
        bytes[pos] = *[0xC3, 0xFF, 0xCD, 0x0F, 0xC2].get(pos % 5).unwrap();
    }
    load_raw_region(&bytes, 0x400000).unwrap()
}

/// A layout with duplicated rets, a problematic jump displacement, and a
/// problematic call displacement.
pub fn defect_layout(functions: usize) -> LayoutProgram {
    let mut l = String::new();
    for i in 0..functions {
        l.push_str(&format!("func f{i}\n"));
        l.push_str("  pop rax | 58\n  ret | c3\n  pop rbx | 5b\n  ret | c3\n");
        l.push_str("  je @end | 0f 84 ?? ?? ?? ??\n");
        for _ in 0..0xC3 {
            l.push_str("  nop | 90\n");
        }
        l.push_str("end: ret | c3\n");
    }
    l.push_str("func caller\n  call @@f0 | e8 ?? ?? ?? ??\n  ret | c3\n");
    parse_listing(&l).unwrap()
}
