use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gadgetscope_bench::{defect_layout, seeded_region};
use gadgetscope_core::layout::assemble;
use gadgetscope_core::metrics::{ClassRuleTable, ScoreTable};
use gadgetscope_core::passes::{run_pipeline, PassLimits, DEFAULT_PASS_ORDER};
use gadgetscope_core::scan::{filter_useful, harvest_gadgets, ScanConfig};
use gadgetscope_core::{expressivity, set_quality};
use std::hint::black_box;

fn bench_harvest(c: &mut Criterion) {
    let mut group = c.benchmark_group("harvest");
    for len in [4 * 1024usize, 64 * 1024] {
        let region = seeded_region(7, len);
        group.throughput(Throughput::Bytes(len as u64));
        group.bench_with_input(BenchmarkId::from_parameter(len), &region, |b, region| {
            b.iter(|| harvest_gadgets(black_box(region), &ScanConfig::default()));
        });
    }
    group.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let region = seeded_region(11, 64 * 1024);
    let set = filter_useful(&harvest_gadgets(&region, &ScanConfig::default()));
    let rules = ClassRuleTable::default_table();
    let table = ScoreTable::default();
    c.bench_function("metrics/quality+expressivity", |b| {
        b.iter(|| {
            let q = set_quality(black_box(&set), &table);
            let e = expressivity(black_box(&set), &rules).unwrap();
            (q, e)
        });
    });
}

fn bench_assemble(c: &mut Criterion) {
    let program = defect_layout(16);
    c.bench_function("assemble/16-functions", |b| {
        b.iter(|| assemble(black_box(&program)).unwrap());
    });
}

fn bench_pipeline(c: &mut Criterion) {
    let program = defect_layout(8);
    let limits = PassLimits::default();
    c.bench_function("pipeline/default-order", |b| {
        b.iter(|| run_pipeline(black_box(&program), &DEFAULT_PASS_ORDER, &limits).unwrap());
    });
}

criterion_group!(benches, bench_harvest, bench_metrics, bench_assemble, bench_pipeline);
criterion_main!(benches);
