// SPDX-License-Identifier: Apache-2.0

//! `ccxtrust`: runs initialization, attestation, attack and benchmark
//! flows against a simulated cluster and writes traces and reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ccxtrust::harness::{
    attest_all, attested_selection, compare_latency, run_attack, run_bench, AttackKind, ClockMode, Cluster, Direction,
    Scenario, Topology, POLICY_ID,
};
use ccxtrust::protocol::{check_trace, run_independent_attest, TraceReport, Trace, Verdict};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "ccxtrust", version, about = "Collaborative TEE/TPM attestation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file (TOML key-value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// tpm-tee or tee-tpm.
    #[arg(long, global = true)]
    direction: Option<Direction>,
    /// Number of composite nodes; replaces the configured topology.
    #[arg(long, global = true)]
    nodes: Option<usize>,
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Output directory for trace.txt, results.json and bench.txt.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Provision every node through the OCA and record the traces.
    Init,
    /// Composite attestation of every node.
    Attest,
    /// Separate TEE-only and TPM-only attestation of every node.
    Independent,
    /// Inject a fault family and count accepted forgeries.
    Attack {
        /// splice, spoof-id, replay, stale-token, seed-rollback, image-forge or all.
        #[arg(default_value = "all")]
        kind: String,
    },
    /// One composite attestation per node under the worker pool.
    Bench {
        /// Use wall-clock time for token timestamps.
        #[arg(long)]
        wall: bool,
        /// Also compare composite against independent latency on node 0.
        #[arg(long, value_name = "ITERATIONS")]
        latency: Option<usize>,
    },
    /// Check the three trace properties on an exported trace file.
    CheckTrace { path: PathBuf },
}

fn scenario(cli: &Cli) -> Result<Scenario> {
    let mut s = match &cli.config {
        Some(p) => Scenario::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Scenario::default(),
    };
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    if let Some(d) = cli.direction {
        s.direction = d;
    }
    if let Some(n) = cli.nodes {
        s.topology = Topology { composite: n, tpm_only: 0, tee_only: 0 };
    }
    if let Some(k) = cli.concurrency {
        s.concurrency = k;
    }
    s.validate()?;
    Ok(s)
}

fn verdict_json(v: &Verdict) -> Value {
    match v {
        Verdict::Pass => json!("pass"),
        Verdict::Counterexample(at) => json!({ "counterexample": at }),
    }
}

fn properties_json(r: &TraceReport) -> Value {
    json!({ "cert_issuance": verdict_json(&r.cert_issuance), "token_issuance": verdict_json(&r.token_issuance), "report_order": verdict_json(&r.report_order) })
}

struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn trace(&self, trace: &Trace) -> Result<()> {
        self.write("trace.txt", &trace.export())
    }

    fn results(&self, value: &Value) -> Result<()> {
        self.write("results.json", &(serde_json::to_string_pretty(value)? + "\n"))
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        fs::create_dir_all(self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.dir.join(name);
        fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
    }
}

fn build(s: &Scenario) -> Result<Cluster> {
    Ok(s.build_cluster()?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let out = Output { dir: &cli.out };
    match &cli.command {
        Command::CheckTrace { path } => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let trace = Trace::parse(&text).map_err(anyhow::Error::msg)?;
            let report = check_trace(&trace);
            for (name, v) in [("certificate-issuance", &report.cert_issuance), ("token-issuance", &report.token_issuance), ("report-order", &report.report_order)] {
                match v {
                    Verdict::Pass => println!("{name} pass"),
                    Verdict::Counterexample(at) => println!("{name} counterexample at events {at:?}"),
                }
            }
            println!("events={} digest={}", trace.len(), trace.digest());
            Ok(if report.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Init => {
            let s = scenario(&cli)?;
            let cluster = build(&s)?;
            let trace = cluster.init_trace();
            let report = check_trace(&trace);
            out.trace(&trace)?;
            let nodes: Vec<_> = cluster.nodes.iter().map(|n| n.platform.node_id().to_string()).collect();
            out.results(&json!({
                "command": "init",
                "seed": s.seed,
                "nodes": nodes,
                "trace_digest": trace.digest().to_string(),
                "properties": properties_json(&report),
            }))?;
            println!("initialized {} nodes, trace digest {}", nodes.len(), trace.digest());
            Ok(ExitCode::SUCCESS)
        }
        Command::Attest => {
            let s = scenario(&cli)?;
            let cluster = build(&s)?;
            let run = attest_all(&cluster, &s);
            let report = check_trace(&run.trace);
            out.trace(&run.trace)?;
            let failures: Vec<_> = run.failures.iter().map(|(i, e)| json!({ "node": i, "error": e.to_string() })).collect();
            out.results(&json!({
                "command": "attest",
                "seed": s.seed,
                "direction": s.direction.to_string(),
                "tokens": run.tokens.len(),
                "failures": failures,
                "verifier_messages": run.trace.verifier_visible_messages(),
                "trace_digest": run.trace.digest().to_string(),
                "properties": properties_json(&report),
            }))?;
            println!(
                "tokens={} failures={} trace digest {}",
                run.tokens.len(),
                run.failures.len(),
                run.trace.digest()
            );
            Ok(if run.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Independent => {
            let s = scenario(&cli)?;
            let cluster = build(&s)?;
            let mut trace = cluster.init_trace();
            let (mut ok, mut failed) = (0usize, 0usize);
            let before = trace.verifier_visible_messages();
            for node in &cluster.nodes {
                for _ in 0..s.iterations {
                    let r = run_independent_attest(&node.platform, &cluster.verifier, POLICY_ID, attested_selection());
                    trace.extend(&r.trace);
                    for res in [r.tee.is_ok(), r.tpm.is_ok()] {
                        if res {
                            ok += 1;
                        } else {
                            failed += 1;
                        }
                    }
                }
            }
            out.trace(&trace)?;
            out.results(&json!({
                "command": "independent",
                "seed": s.seed,
                "tokens": ok,
                "failures": failed,
                "verifier_messages": trace.verifier_visible_messages() - before,
                "trace_digest": trace.digest().to_string(),
                "properties": properties_json(&check_trace(&trace)),
            }))?;
            println!("tokens={ok} failures={failed} trace digest {}", trace.digest());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Attack { kind } => {
            let s = scenario(&cli)?;
            let kinds = if kind == "all" {
                if s.faults.is_empty() {
                    AttackKind::ALL.to_vec()
                } else {
                    s.faults.clone()
                }
            } else {
                vec![kind.parse::<AttackKind>()?]
            };
            let cluster = build(&s)?;
            let reports: Vec<_> = kinds.iter().map(|k| run_attack(&cluster, *k, s.concurrency)).collect();
            for r in &reports {
                println!(
                    "{:<14} forged accepted {}/{}  honest accepted {}/{}  {}",
                    r.attack,
                    r.accepted,
                    r.attempts,
                    r.honest_accepted,
                    r.honest_attempts,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            out.results(&json!({ "command": "attack", "seed": s.seed, "reports": reports }))?;
            if reports.iter().any(|r| r.accepted > 0) {
                return Ok(ExitCode::from(2));
            }
            if reports.iter().any(|r| !r.passed()) {
                bail!("honest control runs were rejected");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { wall, latency } => {
            let mut s = scenario(&cli)?;
            if *wall {
                s.clock = ClockMode::Wall;
            }
            let cluster = build(&s)?;
            let report = run_bench(&cluster, s.direction, s.concurrency);
            let mut table = report.to_table();
            let latency = latency.map(|it| compare_latency(&cluster, 0, s.direction, it));
            if let Some(l) = &latency {
                table.push_str(&format!(
                    "latency over {} iterations: composite {:.1}us, tee-only {:.1}us, tpm-only {:.1}us, bootstrap {:.3}\n",
                    l.iterations, l.composite_mean_us, l.tee_only_mean_us, l.tpm_only_mean_us, l.bootstrap_fraction
                ));
            }
            print!("{table}");
            out.write("bench.txt", &table)?;
            out.results(&json!({ "command": "bench", "seed": s.seed, "bench": report, "latency": latency }))?;
            if report.cross_session_accepted > 0 {
                return Ok(ExitCode::from(2));
            }
            Ok(if report.sound() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn main() -> ExitCode {
    // Exit code 2 is reserved for accepted forgeries, so usage errors use 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
