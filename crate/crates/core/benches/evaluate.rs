//! Parallel vs sequential per-household evaluation.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use ivasim_core::solver::solve_with_cashback;
use ivasim_core::{generate_synthetic, Evaluator, ExecMode, Rate, Schedule};

const MODES: [(&str, ExecMode); 2] = [("parallel", ExecMode::Parallel), ("sequential", ExecMode::Sequential)];

fn gross_revenue(c: &mut Criterion) {
    let schedule = Schedule::plp68();
    let rate = Rate::outside(0.379).unwrap();
    let mut group = c.benchmark_group("gross_revenue");
    for n in [10_000usize, 100_000] {
        let pop = generate_synthetic(42, n, &schedule).unwrap();
        for (name, mode) in MODES {
            let ev = Evaluator::new(&pop, &schedule).unwrap().with_mode(mode);
            group.bench_with_input(BenchmarkId::new(name, n), &ev, |b, ev| {
                b.iter(|| ev.gross_revenue(black_box(rate)))
            });
        }
    }
    group.finish();
}

fn solve(c: &mut Criterion) {
    let schedule = Schedule::plp68();
    let pop = generate_synthetic(42, 10_000, &schedule).unwrap();
    let mut group = c.benchmark_group("solve_with_cashback");
    group.sample_size(10);
    for (name, mode) in MODES {
        let ev = Evaluator::new(&pop, &schedule).unwrap().with_mode(mode);
        group.bench_function(name, |b| b.iter(|| solve_with_cashback(&ev, black_box(0.201)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, gross_revenue, solve);
criterion_main!(benches);
