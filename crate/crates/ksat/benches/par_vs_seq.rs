//! Data-parallel vs sequential throughput on the two hot paths: flood-style
//! clause sweeps and embarrassingly parallel ensemble runs. With the
//! `parallel` feature disabled, `par::map` degrades to the sequential path
//! and the two curves coincide.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ksat::bp::{init_state, update_clause, Beta};
use ksat::decimate::{bp_guided_decimation, DecimationConfig};
use ksat::graph::{FactorGraph, Mask};
use ksat::instance::gen_uniform;
use ksat::par;

fn clause_sweep(c: &mut Criterion) {
    let inst = gen_uniform(20_000, 80_000, 3, 7).unwrap();
    let g = FactorGraph::build(&inst);
    let mask = Mask::all_free(&g);
    let state = init_state(&g, Beta::Infinity);
    let clauses: Vec<usize> = (0..inst.n_clauses()).collect();

    let mut group = c.benchmark_group("clause_sweep");
    group.bench_with_input(BenchmarkId::new("par", clauses.len()), &clauses, |b, cl| {
        b.iter(|| {
            black_box(par::map(cl, |&a| {
                g.clause_adj[a].iter().map(|e| update_clause(&g, &mask, &state, a, e.var)).sum::<f64>()
            }))
        })
    });
    group.bench_with_input(BenchmarkId::new("seq", clauses.len()), &clauses, |b, cl| {
        b.iter(|| {
            black_box(par::map_seq(cl, |&a| {
                g.clause_adj[a].iter().map(|e| update_clause(&g, &mask, &state, a, e.var)).sum::<f64>()
            }))
        })
    });
    group.finish();
}

fn ensemble_decimation(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..8).collect();
    let run = |&seed: &u64| {
        let inst = gen_uniform(300, 600, 3, seed).unwrap();
        let cfg = DecimationConfig { seed, ..DecimationConfig::default() };
        bp_guided_decimation(&inst, &cfg).solved()
    };

    let mut group = c.benchmark_group("ensemble_decimation");
    group.sample_size(10);
    group.bench_function("par", |b| b.iter(|| black_box(par::map(&seeds, run))));
    group.bench_function("seq", |b| b.iter(|| black_box(par::map_seq(&seeds, run))));
    group.finish();
}

criterion_group!(benches, clause_sweep, ensemble_decimation);
criterion_main!(benches);
