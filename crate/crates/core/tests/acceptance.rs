//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the checked bound. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; any failure fails the build either way.

mod support;

use gadgetscope_core::diff::introduction_rate;
use gadgetscope_core::insn::Mnemonic;
use gadgetscope_core::layout::{
    assemble, parse_listing, render_listing, scan_boundary_gpis, DispFieldKind,
};
use gadgetscope_core::metrics::{ClassRuleTable, ScoreTable, REQUIRED_CLASSES};
use gadgetscope_core::passes::{
    merge_returns, reorder_functions, run_pipeline, sled_jump_displacements, widen_boundaries,
    PassLimits, PassName, Termination, DEFAULT_PASS_ORDER,
};
use gadgetscope_core::region::load_raw_region;
use gadgetscope_core::scan::{filter_useful, harvest_gadgets, GadgetSet, ScanConfig};
use gadgetscope_core::{find_problematic_displacements, score_quality};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::time::Instant;
use support::{
    assert_merge_edits_only, assert_nop_insertions_only, assert_reorder_edits_only, corpus,
    duplicated_ret_listing, oracle_harvest_keys,
};

fn useful_count_of_assembled(p: &gadgetscope_core::layout::LayoutProgram) -> usize {
    let region = assemble(p).expect("assembles");
    filter_useful(&harvest_gadgets(&region, &ScanConfig::default())).len()
}

#[test]
fn criterion_01_worked_scan_example() {
    let started = Instant::now();
    let region = load_raw_region(&[0x83, 0xC0, 0x5B, 0xC3], 0).unwrap();
    let set = harvest_gadgets(&region, &ScanConfig::default());
    let keys: Vec<&str> = set.keys().collect();
    assert_eq!(keys, vec!["add eax, 0x5b; ret;", "pop rbx; ret;", "ret;"]);
    let elapsed = started.elapsed();
    assert!(elapsed.as_micros() < 1000, "took {elapsed:?}, budget 1 ms");
    println!("PASS criterion 1: [83 C0 5B C3] yields the three worked gadgets in {elapsed:?}");
}

#[test]
fn criterion_02_worked_quality_scores() {
    let table = ScoreTable::default();
    let cfg = ScanConfig { max_prefix_bytes: 16, ..Default::default() };

    let region = load_raw_region(&[0x01, 0xD8, 0xC3], 0).unwrap();
    let set = harvest_gadgets(&region, &cfg);
    let g = set.iter().find(|g| g.normalized_key == "add eax, ebx; ret;").unwrap();
    assert_eq!(score_quality(g, &table), 0.0);

    let bytes = [0x48, 0x29, 0xCE, 0x48, 0x31, 0xC0, 0x48, 0x89, 0x32, 0xC3];
    let region = load_raw_region(&bytes, 0).unwrap();
    let set = harvest_gadgets(&region, &cfg);
    let key = "sub rsi, rcx; xor rax, rax; mov qword [rdx], rsi; ret;";
    let g = set.iter().find(|g| g.normalized_key == key).unwrap();
    assert_eq!(score_quality(g, &table), 3.0);
    println!("PASS criterion 2: worked gadgets score exactly 0.0 and 3.0");
}

#[test]
fn criterion_03_boundary_widening_example() {
    // 49 nops so the backward je encodes displacement 0xCD, then the or
    // whose leading 0x80 completes the int 0x80 across the boundary.
    let mut listing = String::from("func f\nl: nop | 90\n");
    for _ in 0..48 {
        listing.push_str("  nop | 90\n");
    }
    listing.push_str("  je @l | 74 ??\n  or byte [rbx+0x4], 0x2 | 80 4b 04 02\n  ret | c3\n");
    let p = parse_listing(&listing).unwrap();

    let asm = assemble(&p).unwrap();
    assert_eq!(&asm.bytes[49..55], &[0x74, 0xCD, 0x80, 0x4B, 0x04, 0x02]);
    assert_eq!(scan_boundary_gpis(&p).unwrap().len(), 1);

    let (out, stats) = widen_boundaries(&p).unwrap();
    assert_eq!(stats.edits, 1, "exactly one nop inserted");
    assert!(scan_boundary_gpis(&out).unwrap().is_empty());
    let f = &out.functions[0];
    assert_eq!(f.instructions[50].insn.mnemonic, Mnemonic::Nop);
    println!("PASS criterion 3: je/or boundary int80 fixed with exactly one nop");
}

#[test]
fn criterion_04_scanner_oracle_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0A11);
    let cfg = ScanConfig::default();
    let rounds = 1000;
    for round in 0..rounds {
        let len = rng.random_range(1..=256usize);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        // Plant GPI-ish bytes so gadget-bearing regions dominate.
        for _ in 0..=len / 12 {
            let pos = rng.random_range(0..len);
            bytes[pos] = *[0xC3, 0xC2, 0xFF, 0xCD, 0x0F].get(pos % 5).unwrap();
        }
        let region = load_raw_region(&bytes, 0x1000).unwrap();
        let got: BTreeSet<String> = harvest_gadgets(&region, &cfg)
            .keys()
            .map(str::to_string)
            .collect();
        let want = oracle_harvest_keys(&region, &cfg);
        assert_eq!(got, want, "mismatch in round {round}");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 60 s");
    println!("PASS criterion 4: {rounds} seeded regions match the brute-force oracle in {elapsed:?}");
}

#[test]
fn criterion_05_introduction_rate_definition() {
    // Five distinct single-gadget sources give keys to compose A..E.
    let sources: [&[u8]; 5] = [
        &[0x58, 0xC3], // pop rax; ret
        &[0x5B, 0xC3], // pop rbx; ret
        &[0x59, 0xC3], // pop rcx; ret
        &[0x5A, 0xC3], // pop rdx; ret
        &[0x5E, 0xC3], // pop rsi; ret
    ];
    let gadget_named = |i: usize| {
        let region = load_raw_region(sources[i], 0).unwrap();
        let set = harvest_gadgets(&region, &ScanConfig::default());
        let g = set.iter().find(|g| g.instructions.len() == 2).cloned();
        g.unwrap()
    };
    let set_of = |idx: &[usize]| {
        let mut s = GadgetSet::new(vec!["fixture".into()]);
        for &i in idx {
            s.insert(gadget_named(i));
        }
        s
    };

    let s = set_of(&[0, 1, 2]);
    assert_eq!(introduction_rate(&s, &s), 0.0);

    let disjoint_a = set_of(&[0, 1]);
    let disjoint_b = set_of(&[2, 3]);
    assert_eq!(introduction_rate(&disjoint_a, &disjoint_b), 100.0);

    let abc = set_of(&[0, 1, 2]);
    let bcde = set_of(&[1, 2, 3, 4]);
    assert_eq!(introduction_rate(&abc, &bcde), 50.0);
    println!("PASS criterion 5: rate(S,S)=0, rate(disjoint)=100, rate(ABC,BCDE)=50, exact");
}

#[test]
fn criterion_06_pass_postconditions_on_corpus() {
    let corpus = corpus();
    let limits = PassLimits::default();

    // merge-ret: at most one instance per identical return form per function.
    let (merged, mstats) = merge_returns(&corpus);
    for f in &merged.functions {
        let mut forms: Vec<String> = f
            .instructions
            .iter()
            .filter(|i| matches!(i.insn.mnemonic, Mnemonic::Ret | Mnemonic::Retf))
            .map(|i| i.insn.text())
            .collect();
        let total = forms.len();
        forms.sort();
        forms.dedup();
        assert_eq!(forms.len(), total, "duplicate return form survives in {}", f.name);
    }
    assert!(mstats.edits >= 1);

    // sled: zero jump-displacement sites, or every residual site sits in an
    // excluded function recorded in the stats.
    let (sledded, sstats) = sled_jump_displacements(&corpus, &limits).unwrap();
    let residual: Vec<_> = find_problematic_displacements(&sledded)
        .unwrap()
        .into_iter()
        .filter(|s| s.kind == DispFieldKind::Jump)
        .collect();
    assert!(
        residual.iter().all(|s| sstats.excluded_functions.contains(&s.function)),
        "residual jump sites outside excluded functions: {residual:?}"
    );
    assert!(sstats.iterations <= 100);

    // reorder: zero call-displacement sites, or a local-minimum exit with
    // final count no worse than initial.
    let (_, rstats) = reorder_functions(&corpus, &limits).unwrap();
    match rstats.termination {
        Termination::Clean => assert_eq!(rstats.sites_after, 0),
        Termination::LocalMinimum | Termination::IterationLimit => {
            assert!(rstats.sites_after <= rstats.sites_before)
        }
    }
    assert!(rstats.iterations <= 100);
    println!(
        "PASS criterion 6: corpus postconditions hold (merge {} edits; sled {:?} in {} iter; reorder {:?} {} -> {})",
        mstats.edits, sstats.termination, sstats.iterations, rstats.termination,
        rstats.sites_before, rstats.sites_after
    );
}

#[test]
fn criterion_07_merge_ret_reduces_useful_gadgets() {
    let fixture = parse_listing(&duplicated_ret_listing()).unwrap();
    let before = useful_count_of_assembled(&fixture);
    let (merged, _) = merge_returns(&fixture);
    let after = useful_count_of_assembled(&merged);
    assert!(
        after < before,
        "merge-ret must strictly reduce useful gadgets ({before} -> {after})"
    );

    // And never increases the count on any corpus fixture. A fixture is a
    // function plus whatever functions its direct calls target.
    let corpus = corpus();
    for f in &corpus.functions {
        let mut names = vec![f.name.clone()];
        for insn in &f.instructions {
            if let Some(gadgetscope_core::layout::SymbolicTarget::Function(t)) = &insn.target {
                if !names.contains(t) {
                    names.push(t.clone());
                }
            }
        }
        let single = gadgetscope_core::layout::LayoutProgram {
            functions: names
                .iter()
                .map(|n| corpus.function(n).unwrap().clone())
                .collect(),
            ..corpus.clone()
        };
        let b = useful_count_of_assembled(&single);
        let (m, _) = merge_returns(&single);
        let a = useful_count_of_assembled(&m);
        assert!(a <= b, "merge-ret grew {}: {b} -> {a}", f.name);
    }
    let whole_before = useful_count_of_assembled(&corpus);
    let (whole_merged, _) = merge_returns(&corpus);
    let whole_after = useful_count_of_assembled(&whole_merged);
    assert!(whole_after <= whole_before);
    println!(
        "PASS criterion 7: merge-ret reduces useful gadgets ({before} -> {after} on the 3-ret fixture; corpus {whole_before} -> {whole_after})"
    );
}

#[test]
fn criterion_08_transform_determinism() {
    let limits = PassLimits { seed: 42, ..Default::default() };
    for (name, program) in [
        ("corpus", corpus()),
        ("triple-ret", parse_listing(&duplicated_ret_listing()).unwrap()),
    ] {
        let (out_a, stats_a) = run_pipeline(&program, &DEFAULT_PASS_ORDER, &limits).unwrap();
        let (out_b, stats_b) = run_pipeline(&program, &DEFAULT_PASS_ORDER, &limits).unwrap();
        assert_eq!(out_a, out_b, "{name}: programs differ");
        assert_eq!(stats_a, stats_b, "{name}: stats differ");
        assert_eq!(
            render_listing(&out_a),
            render_listing(&out_b),
            "{name}: listings differ"
        );
        assert_eq!(
            assemble(&out_a).unwrap().bytes,
            assemble(&out_b).unwrap().bytes,
            "{name}: bytes differ"
        );
    }
    println!("PASS criterion 8: identical seeds give byte-identical pipeline outputs");
}

#[test]
fn criterion_09_structural_semantics_preservation() {
    let corpus = corpus();
    let limits = PassLimits::default();

    let (merged, _) = merge_returns(&corpus);
    assert_merge_edits_only(&corpus, &merged);
    let (ijmp, _) = gadgetscope_core::passes::merge_indirect_jumps(&merged);
    assert_merge_edits_only(&merged, &ijmp);

    let (widened, _) = widen_boundaries(&ijmp).unwrap();
    assert_nop_insertions_only(&ijmp, &widened);

    let (sledded, _) = sled_jump_displacements(&widened, &limits).unwrap();
    assert_nop_insertions_only(&widened, &sledded);

    let (reordered, _) = reorder_functions(&sledded, &limits).unwrap();
    assert_reorder_edits_only(&sledded, &reordered);
    println!("PASS criterion 9: every pass output shows only its permitted edit kinds");
}

#[test]
fn criterion_10_default_class_table_cardinality() {
    let table = ClassRuleTable::default_table();
    assert_eq!(table.level_counts(), REQUIRED_CLASSES);
    assert_eq!(REQUIRED_CLASSES, (11, 35, 17));
    // Asserted at load: a malformed table refuses to construct.
    assert!(ClassRuleTable::parse("class a levels=1 mnemonics=pop shape=reg").is_err());
    println!("PASS criterion 10: default class table is exactly 11/35/17 and checked at load");
}

#[test]
fn pipeline_handles_every_defect_kind() {
    // Composite check: the default pipeline applied to the corpus touches
    // every pass and the result still assembles and round-trips.
    let corpus = corpus();
    let limits = PassLimits::default();
    let (out, stats) = run_pipeline(&corpus, &DEFAULT_PASS_ORDER, &limits).unwrap();
    for (pass, s) in DEFAULT_PASS_ORDER.iter().zip(&stats) {
        assert_eq!(pass.name(), s.pass);
        if !matches!(pass, PassName::Widen) {
            assert!(s.edits >= 1, "{} made no edits", s.pass);
        }
    }
    // widen: the int80 boundary pair is present, so it must edit too.
    assert!(stats[2].edits >= 1);
    let listing = render_listing(&out);
    let reparsed = parse_listing(&listing).unwrap();
    assert_eq!(reparsed, out);

    // Decoding the assembled result instruction-by-instruction reproduces
    // the layout's mnemonic sequence.
    let asm = gadgetscope_core::layout::assemble_detailed(&out).unwrap();
    for ai in asm.insns.iter().filter(|i| !i.is_padding) {
        let decoded =
            gadgetscope_core::insn::decode_instruction(&asm.region.bytes, ai.address as usize)
                .unwrap();
        assert_eq!(decoded.length(), ai.length);
        let ir = &out.functions[ai.function_index].instructions[ai.insn_index].insn;
        assert_eq!(decoded.mnemonic.name(), ir.mnemonic.name());
    }
}
