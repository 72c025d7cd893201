// SPDX-License-Identifier: Apache-2.0

//! Scenario runner, attack injector and load benchmark built on the
//! protocol, OCA and verifier modules.

pub mod attacks;
pub mod bench;
pub mod cluster;
pub mod config;
pub mod exec;

use thiserror::Error;

use crate::clock::Clock;
use crate::measurement::MeasurementError;
use crate::oca::OcaError;
use crate::protocol::{ProtocolError, Trace};
use crate::tee::TeeError;
use crate::tpm::TpmError;
use crate::verifier::VerifierError;

pub use attacks::{run_attack, splice, AttackReport};
pub use bench::{bootstrap_fraction, compare_latency, message_counts, run_bench, BenchReport, LatencyReport, Percentiles};
pub use cluster::{attested_selection, BootImages, Cluster, Node, EPOCH, POLICY_ID, TCB_VERSION, TOKEN_LIFETIME_SECS};
pub use config::{AttackKind, ClockMode, Direction, Scenario, Topology};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("owner ca: {0}")]
    Oca(#[from] OcaError),
    #[error("verifier: {0}")]
    Verifier(#[from] VerifierError),
    #[error("tpm: {0}")]
    Tpm(#[from] TpmError),
    #[error("tee: {0}")]
    Tee(#[from] TeeError),
    #[error("measured boot: {0}")]
    Measurement(#[from] MeasurementError),
    #[error("node registration refused: {0}")]
    Registration(String),
}

impl Scenario {
    pub fn clock(&self) -> Clock {
        match self.clock {
            ClockMode::Virtual => Clock::virtual_at(EPOCH),
            ClockMode::Wall => Clock::Wall,
        }
    }

    pub fn build_cluster(&self) -> Result<Cluster, HarnessError> {
        Cluster::build(self.topology.total(), self.seed, self.clock(), self.concurrency)
    }
}

/// Result of running every node of a scenario for its iterations.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    /// Initialization traces followed by attestation traces, in node and
    /// iteration order.
    pub trace: Trace,
    pub tokens: Vec<String>,
    pub failures: Vec<(usize, ProtocolError)>,
}

/// Builds the scenario's cluster and attests each node `iterations`
/// times with the report type its topology slot prescribes.
pub fn run_scenario(scenario: &Scenario) -> Result<(Cluster, ScenarioRun), HarnessError> {
    let cluster = scenario.build_cluster()?;
    let run = attest_all(&cluster, scenario);
    Ok((cluster, run))
}

pub fn attest_all(cluster: &Cluster, scenario: &Scenario) -> ScenarioRun {
    let n = cluster.nodes.len();
    let outcomes = exec::map_indexed(n, scenario.concurrency, |i| {
        let kind = scenario.topology.kind_of(i, scenario.direction);
        (0..scenario.iterations).map(|_| cluster.attest(i, kind, None)).collect::<Vec<_>>()
    });
    let mut trace = cluster.init_trace();
    let mut tokens = Vec::new();
    let mut failures = Vec::new();
    for (i, runs) in outcomes.into_iter().enumerate() {
        for out in runs {
            trace.extend(&out.trace);
            match out.result {
                Ok(t) => tokens.push(t),
                Err(e) => failures.push((i, e)),
            }
        }
    }
    ScenarioRun { trace, tokens, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::check_trace;

    #[test]
    fn mixed_topology_runs_and_passes_checks() {
        let s = Scenario {
            topology: Topology { composite: 1, tpm_only: 1, tee_only: 1 },
            iterations: 2,
            ..Scenario::default()
        };
        let (_, run) = run_scenario(&s).unwrap();
        assert!(run.failures.is_empty(), "{:?}", run.failures);
        assert_eq!(run.tokens.len(), 6);
        assert!(check_trace(&run.trace).all_pass());
    }
}
