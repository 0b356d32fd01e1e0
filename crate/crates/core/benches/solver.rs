//! Solver throughput benchmarks.
//!
//! Two workloads dominated by independent lower-level solves: a multistart
//! run and a landscape scan. Built with the default `parallel` feature the
//! work fans out over rayon; `--no-default-features` measures the
//! sequential fallback. The pool-size comparison quantifies the fan-out
//! win on the same binary.

use criterion::{criterion_group, criterion_main, Criterion};

use bilevel_core::alm::{multistart, AlmConfig};
use bilevel_core::benchmarks::{default_multistart_grid, get};
use bilevel_core::lower_solver::LowerSolverConfig;
use bilevel_core::scan::scan;

fn clark_multistart(c: &mut Criterion) {
    let entry = get("ClarkWesterberg1990").unwrap();
    let problem = entry.prepared();
    let mut starts = default_multistart_grid(&entry).unwrap();
    // Pad to a 9-point grid so there is enough independent work to share.
    for i in 0..9 {
        let x = 8.0 * (i as f64) / 8.0;
        if !starts.contains(&vec![x]) {
            starts.push(vec![x]);
        }
    }
    let cfg = AlmConfig::default();

    let mut group = c.benchmark_group("clark_multistart");
    group.bench_function("default_pool", |b| {
        b.iter(|| multistart(&problem, &starts, &cfg, "clark").unwrap())
    });
    #[cfg(feature = "parallel")]
    {
        for threads in [1usize, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            group.bench_function(format!("pool_{threads}"), |b| {
                b.iter(|| pool.install(|| multistart(&problem, &starts, &cfg, "clark").unwrap()))
            });
        }
    }
    group.finish();
}

fn clark_scan(c: &mut Criterion) {
    let entry = get("ClarkWesterberg1990").unwrap();
    let problem = entry.prepared();
    let lower = LowerSolverConfig::default();

    let mut group = c.benchmark_group("clark_scan_401");
    group.bench_function("default_pool", |b| {
        b.iter(|| scan(&problem, 0.0, 8.0, 401, &lower).unwrap())
    });
    #[cfg(feature = "parallel")]
    {
        for threads in [1usize, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            group.bench_function(format!("pool_{threads}"), |b| {
                b.iter(|| pool.install(|| scan(&problem, 0.0, 8.0, 401, &lower).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, clark_multistart, clark_scan);
criterion_main!(benches);
