// SPDX-License-Identifier: Apache-2.0

//! Concurrent attestation load and the composite-vs-independent latency
//! comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::cluster::{attested_selection, Cluster, POLICY_ID};
use super::config::Direction;
use super::exec::{map_indexed, parallel_enabled};
use crate::crypto::RandomSource;
use crate::protocol::ReportKind;
use crate::verifier::VerifyOutcome;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Percentiles {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl Percentiles {
    pub fn of(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut us: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e6).collect();
        us.sort_by(f64::total_cmp);
        let at = |q: f64| us[((us.len() - 1) as f64 * q).round() as usize];
        Percentiles {
            mean_us: us.iter().sum::<f64>() / us.len() as f64,
            p50_us: at(0.50),
            p90_us: at(0.90),
            p99_us: at(0.99),
            max_us: us[us.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub nodes: usize,
    pub concurrency: usize,
    pub direction: String,
    pub parallel: bool,
    pub successes: usize,
    pub failures: usize,
    pub verifier_messages: usize,
    pub messages_per_run: BTreeSet<usize>,
    pub unique_nonces: usize,
    pub unique_serials: usize,
    pub cross_session_attempts: usize,
    pub cross_session_accepted: usize,
    pub wall_secs: f64,
    pub throughput_per_sec: f64,
    /// Phase name -> latency distribution.
    pub phases: BTreeMap<String, Percentiles>,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "nodes={} concurrency={} direction={} parallel={}",
            self.nodes, self.concurrency, self.direction, self.parallel
        );
        let _ = writeln!(
            out,
            "success={} failure={} tokens(unique serials)={} nonces(unique)={} cross-session accepted={}/{}",
            self.successes,
            self.failures,
            self.unique_serials,
            self.unique_nonces,
            self.cross_session_accepted,
            self.cross_session_attempts
        );
        let _ = writeln!(
            out,
            "verifier messages={} per run={:?} wall={:.3}s throughput={:.1}/s",
            self.verifier_messages, self.messages_per_run, self.wall_secs, self.throughput_per_sec
        );
        let _ = writeln!(out, "{:<24}{:>12}{:>12}{:>12}{:>12}{:>12}", "phase (us)", "mean", "p50", "p90", "p99", "max");
        for (name, p) in &self.phases {
            let _ = writeln!(
                out,
                "{:<24}{:>12.1}{:>12.1}{:>12.1}{:>12.1}{:>12.1}",
                name, p.mean_us, p.p50_us, p.p90_us, p.p99_us, p.max_us
            );
        }
        out
    }

    /// All runs succeeded with distinct nonces and serials and no
    /// envelope was accepted in another node's session.
    pub fn sound(&self) -> bool {
        self.failures == 0
            && self.unique_nonces == self.nodes
            && self.unique_serials == self.nodes
            && self.cross_session_accepted == 0
    }
}

struct RunRecord {
    ok: bool,
    nonce: Option<String>,
    serial: Option<u64>,
    messages: usize,
    end_to_end: Duration,
    verify: Duration,
    issue: Duration,
    validate: Duration,
    envelope: Option<crate::protocol::ReportEnvelope>,
}

/// One composite attestation per node with `concurrency` workers, then a
/// cross-session sweep that submits each node's envelope into a fresh
/// session of the next node.
pub fn run_bench(cluster: &Cluster, direction: Direction, concurrency: usize) -> BenchReport {
    let n = cluster.nodes.len();
    let kind = direction.kind();
    let started = Instant::now();
    let records = map_indexed(n, concurrency, |i| {
        let t0 = Instant::now();
        let out = cluster.attest(i, kind, None);
        let end_to_end = t0.elapsed();
        let t1 = Instant::now();
        let claims = out.result.as_ref().ok().and_then(|t| cluster.verifier.validate_token(t).ok());
        RunRecord {
            ok: claims.is_some(),
            nonce: claims.as_ref().map(|c| c.payload.nonce.clone()),
            serial: claims.as_ref().map(|c| c.payload.serial),
            messages: out.trace.verifier_visible_messages(),
            end_to_end,
            verify: out.timings.verify,
            issue: out.timings.issue,
            validate: t1.elapsed(),
            envelope: out.envelope,
        }
    });
    let wall = started.elapsed();

    let cross = if n > 1 {
        map_indexed(n, concurrency, |i| {
            let Some(env) = &records[(i + 1) % n].envelope else { return false };
            let node = cluster.nodes[i].platform.node_id();
            let Ok(req) = cluster.verifier.new_request(&node, POLICY_ID, kind, attested_selection()) else {
                return false;
            };
            matches!(cluster.verifier.verify_composite(&req.session, env), VerifyOutcome::Accepted(_))
        })
    } else {
        Vec::new()
    };

    let collect = |f: fn(&RunRecord) -> Duration| records.iter().filter(|r| r.ok).map(f).collect::<Vec<_>>();
    let phases = BTreeMap::from([
        ("attestation-processing".to_string(), Percentiles::of(&collect(|r| r.verify))),
        ("token-generation".to_string(), Percentiles::of(&collect(|r| r.issue))),
        ("validation".to_string(), Percentiles::of(&collect(|r| r.validate))),
        ("end-to-end".to_string(), Percentiles::of(&collect(|r| r.end_to_end))),
    ]);
    let successes = records.iter().filter(|r| r.ok).count();
    BenchReport {
        nodes: n,
        concurrency,
        direction: direction.to_string(),
        parallel: parallel_enabled() && concurrency > 1,
        successes,
        failures: n - successes,
        verifier_messages: records.iter().map(|r| r.messages).sum(),
        messages_per_run: records.iter().map(|r| r.messages).collect(),
        unique_nonces: records.iter().filter_map(|r| r.nonce.clone()).collect::<BTreeSet<_>>().len(),
        unique_serials: records.iter().filter_map(|r| r.serial).collect::<BTreeSet<_>>().len(),
        cross_session_attempts: cross.len(),
        cross_session_accepted: cross.iter().filter(|a| **a).count(),
        wall_secs: wall.as_secs_f64(),
        throughput_per_sec: if wall.is_zero() { 0.0 } else { n as f64 / wall.as_secs_f64() },
        phases,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub iterations: usize,
    pub direction: String,
    pub composite_mean_us: f64,
    pub tee_only_mean_us: f64,
    pub tpm_only_mean_us: f64,
    /// 1 - composite / (tee-only + tpm-only), informational.
    pub saving: f64,
    pub resamples: usize,
    /// Share of bootstrap resamples in which the composite mean is below
    /// the summed independent means.
    pub bootstrap_fraction: f64,
    pub all_succeeded: bool,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Share of `resamples` bootstrap draws in which mean(a) < mean(b) + mean(c).
pub fn bootstrap_fraction(a: &[f64], b: &[f64], c: &[f64], resamples: usize, rng: &RandomSource) -> f64 {
    if a.is_empty() || b.is_empty() || c.is_empty() || resamples == 0 {
        return 0.0;
    }
    let draw = |xs: &[f64]| -> f64 {
        (0..xs.len()).map(|_| xs[(rng.u64() % xs.len() as u64) as usize]).sum::<f64>() / xs.len() as f64
    };
    let hits = (0..resamples).filter(|_| draw(a) < draw(b) + draw(c)).count();
    hits as f64 / resamples as f64
}

/// Wall-clock latency of composite attestation against separate TEE-only
/// and TPM-only runs on node `index`. Runs are interleaved.
pub fn compare_latency(cluster: &Cluster, index: usize, direction: Direction, iterations: usize) -> LatencyReport {
    let mut samples: [Vec<f64>; 3] = Default::default();
    let mut all_ok = true;
    let kinds = [direction.kind(), ReportKind::TeeOnly, ReportKind::TpmOnly];
    for _ in 0..iterations {
        for (slot, kind) in kinds.iter().enumerate() {
            let t = Instant::now();
            let out = cluster.attest(index, *kind, None);
            samples[slot].push(t.elapsed().as_secs_f64() * 1e6);
            all_ok &= out.result.is_ok();
        }
    }
    let resamples = 2000;
    let rng = RandomSource::seeded(cluster.seed).fork("bootstrap");
    let [c, e, p] = &samples;
    let (cm, em, pm) = (mean(c), mean(e), mean(p));
    LatencyReport {
        iterations,
        direction: direction.to_string(),
        composite_mean_us: cm,
        tee_only_mean_us: em,
        tpm_only_mean_us: pm,
        saving: 1.0 - cm / (em + pm),
        resamples,
        bootstrap_fraction: bootstrap_fraction(c, e, p, resamples, &rng),
        all_succeeded: all_ok,
    }
}

/// Verifier-visible messages of one composite run and of one independent
/// pair on node `index`.
pub fn message_counts(cluster: &Cluster, index: usize, direction: Direction) -> (usize, usize) {
    let composite = cluster.attest(index, direction.kind(), None).trace.verifier_visible_messages();
    let independent = crate::protocol::run_independent_attest(
        &cluster.nodes[index].platform,
        &cluster.verifier,
        POLICY_ID,
        attested_selection(),
    )
    .trace
    .verifier_visible_messages();
    (composite, independent)
}
