// SPDX-License-Identifier: Apache-2.0

//! Sequential vs worker-pool attestation of a small cluster. Without the
//! `parallel` feature both arms run sequentially.

use ccxtrust::clock::Clock;
use ccxtrust::harness::exec::{map_indexed, map_sequential};
use ccxtrust::harness::{Cluster, Direction, EPOCH};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const NODES: usize = 16;

fn attest_cluster(c: &mut Criterion) {
    let cluster = Cluster::build(NODES, 42, Clock::virtual_at(EPOCH), 4).expect("cluster builds");
    let kind = Direction::TpmTee.kind();
    let mut group = c.benchmark_group("attest-cluster");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", NODES), |b| {
        b.iter(|| map_sequential(NODES, |i| cluster.attest(i, kind, None).result.is_ok()))
    });
    for workers in [2, 4, 8] {
        group.bench_function(BenchmarkId::new(format!("pool-{workers}"), NODES), |b| {
            b.iter(|| map_indexed(NODES, workers, |i| cluster.attest(i, kind, None).result.is_ok()))
        });
    }
    group.finish();
}

fn build_cluster(c: &mut Criterion) {
    let mut group = c.benchmark_group("build-cluster");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| Cluster::build_sequential(8, 7, Clock::virtual_at(EPOCH)).unwrap())
    });
    group.bench_function("pool-4", |b| b.iter(|| Cluster::build(8, 7, Clock::virtual_at(EPOCH), 4).unwrap()));
    group.finish();
}

criterion_group!(benches, attest_cluster, build_cluster);
criterion_main!(benches);
