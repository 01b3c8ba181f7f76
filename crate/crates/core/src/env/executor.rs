//! Optional chat-completion executor.
//!
//! Each round visits agents in index order (a topological order of any
//! admissible DAG). An agent's prompt is the query followed by the latest
//! output of each predecessor, so within a round a receiver already sees what
//! its senders produced earlier in that same round. Grading is left to the
//! caller; without a grader the run ends in [`Error::DryRun`].

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AgentTeam, Topology};

use super::ROUND_CAP;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable that holds the API key.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
}

fn default_timeout() -> u64 {
    30
}
fn default_concurrency() -> usize {
    4
}
fn default_rounds() -> usize {
    ROUND_CAP
}

impl ExecutorConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_concurrent: default_concurrency(),
            rounds: default_rounds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(Error::Config("executor endpoint is empty".into()));
        }
        if self.rounds == 0 || self.rounds > ROUND_CAP {
            return Err(Error::Config(format!(
                "rounds must be in 1..={ROUND_CAP}, got {}",
                self.rounds
            )));
        }
        if self.max_concurrent == 0 || self.timeout_secs == 0 {
            return Err(Error::Config(
                "max_concurrent and timeout_secs must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One request sent to an agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchedMessage {
    pub round: usize,
    /// Zero-based agent index.
    pub agent: usize,
    pub prompt: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionReport {
    pub reward: f64,
    pub final_output: String,
    pub transcript: Vec<DispatchedMessage>,
}

/// Scores the answer agent's final output as a reward in `[0, 1]`.
pub type Grader<'a> = &'a (dyn Fn(&str) -> Result<f64> + Sync);

/// Sends one chat turn and returns the assistant's text.
pub trait ChatTransport: Sync {
    fn complete(&self, system: &str, prompt: &str) -> Result<String>;
}

/// OpenAI-style `chat/completions` endpoint over HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
    config: ExecutorConfig,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(config: ExecutorConfig) -> Result<Self> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| Error::Config(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            agent,
            config,
            api_key,
        })
    }
}

fn transport_err(e: impl std::fmt::Display) -> Error {
    Error::Transport {
        message: e.to_string(),
        retriable: true,
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, system: &str, prompt: &str) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": prompt},
            ],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(transport_err)?;
        let value: serde_json::Value = resp.body_mut().read_json().map_err(transport_err)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| Error::Transport {
                message: format!("malformed completion: {value}"),
                retriable: false,
            })
    }
}

fn compose_prompt(query: &str, inputs: &[(usize, &str)]) -> String {
    let mut prompt = format!("Query: {query}");
    for (sender, text) in inputs {
        prompt.push_str(&format!("\n\n[from a{}]\n{text}", sender + 1));
    }
    prompt
}

/// Runs the team over `t` for the configured number of rounds and hands the
/// answer agent's final output to `grader`.
pub fn external_execute(
    config: &ExecutorConfig,
    transport: &dyn ChatTransport,
    team: &AgentTeam,
    t: &Topology,
    grader: Option<Grader<'_>>,
) -> Result<ExecutionReport> {
    config.validate()?;
    let n = team.n_agents();
    if t.n_agents() != n {
        return Err(Error::Validation(format!(
            "team has {n} agents, topology has {}",
            t.n_agents()
        )));
    }
    let preds: Vec<Vec<usize>> = (0..n).map(|i| t.predecessors(i)).collect();
    let mut latest: Vec<Option<String>> = vec![None; n];
    let mut transcript = Vec::with_capacity(config.rounds * n);
    for round in 0..config.rounds {
        for agent in 0..n {
            let inputs: Vec<(usize, &str)> = preds[agent]
                .iter()
                .filter_map(|&j| latest[j].as_deref().map(|s| (j, s)))
                .collect();
            let prompt = compose_prompt(team.query(), &inputs);
            let system = format!("You are the {}.", team.roles()[agent]);
            let response = transport.complete(&system, &prompt)?;
            transcript.push(DispatchedMessage {
                round,
                agent,
                prompt,
                response: response.clone(),
            });
            latest[agent] = Some(response);
        }
    }
    let final_output = latest[n - 1].clone().unwrap_or_default();
    let Some(grader) = grader else {
        return Err(Error::DryRun { transcript });
    };
    let reward = grader(&final_output)?;
    if !(0.0..=1.0).contains(&reward) {
        return Err(Error::Validation(format!(
            "grader returned {reward}, expected a value in [0,1]"
        )));
    }
    Ok(ExecutionReport {
        reward,
        final_output,
        transcript,
    })
}

/// Executes several topologies with at most `max_concurrent` in flight.
pub fn external_execute_batch(
    config: &ExecutorConfig,
    transport: &dyn ChatTransport,
    jobs: &[(&AgentTeam, &Topology)],
    grader: Option<Grader<'_>>,
) -> Result<Vec<Result<ExecutionReport>>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_concurrent)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    use rayon::prelude::*;
    Ok(pool.install(|| {
        jobs.par_iter()
            .map(|(team, t)| external_execute(config, transport, team, t, grader))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use std::sync::Mutex;

    /// Echoes the prompt back, tagged with the calling role.
    struct Echo {
        calls: Mutex<usize>,
    }

    impl ChatTransport for Echo {
        fn complete(&self, system: &str, prompt: &str) -> Result<String> {
            let mut c = self.calls.lock().unwrap();
            *c += 1;
            Ok(format!("<{system} #{c}> {}", prompt.len()))
        }
    }

    struct Broken;
    impl ChatTransport for Broken {
        fn complete(&self, _: &str, _: &str) -> Result<String> {
            Err(Error::Transport {
                message: "connection refused".into(),
                retriable: true,
            })
        }
    }

    fn team(n: usize) -> AgentTeam {
        AgentTeam::new((1..=n).map(|i| format!("R{i}")).collect(), "what is 2+2").unwrap()
    }

    fn dry(t: &Topology) -> Vec<DispatchedMessage> {
        let echo = Echo {
            calls: Mutex::new(0),
        };
        let cfg = ExecutorConfig::new("http://unused", "m");
        match external_execute(&cfg, &echo, &team(t.n_agents()), t, None) {
            Err(Error::DryRun { transcript }) => transcript,
            other => panic!("expected dry run, got {other:?}"),
        }
    }

    #[test]
    fn empty_topology_sends_only_the_query() {
        for m in dry(&Topology::empty(4)) {
            assert_eq!(m.prompt, "Query: what is 2+2");
        }
    }

    #[test]
    fn complete_topology_dispatches_three_rounds() {
        let transcript = dry(&Topology::complete(5));
        assert_eq!(transcript.len(), 3 * 5);
        let order: Vec<(usize, usize)> = transcript.iter().map(|m| (m.round, m.agent)).collect();
        let expect: Vec<(usize, usize)> =
            (0..3).flat_map(|r| (0..5).map(move |a| (r, a))).collect();
        assert_eq!(order, expect);
    }

    #[test]
    fn prompts_carry_exactly_the_predecessor_outputs() {
        let t =
            Topology::from_edges(4, [Edge::new(1, 0), Edge::new(3, 1), Edge::new(3, 2)]).unwrap();
        let transcript = dry(&t);
        let mut latest: Vec<Option<&str>> = vec![None; 4];
        for m in &transcript {
            let mut expect = String::from("Query: what is 2+2");
            for j in t.predecessors(m.agent) {
                expect.push_str(&format!("\n\n[from a{}]\n{}", j + 1, latest[j].unwrap()));
            }
            assert_eq!(m.prompt, expect, "round {} agent {}", m.round, m.agent);
            latest[m.agent] = Some(&m.response);
        }
    }

    #[test]
    fn grader_receives_final_output() {
        let echo = Echo {
            calls: Mutex::new(0),
        };
        let cfg = ExecutorConfig {
            rounds: 1,
            ..ExecutorConfig::new("http://unused", "m")
        };
        let grade = |s: &str| {
            Ok(if s.starts_with("<You are the R3.") {
                1.0
            } else {
                0.0
            })
        };
        let report =
            external_execute(&cfg, &echo, &team(3), &Topology::chain(3), Some(&grade)).unwrap();
        assert_eq!(report.reward, 1.0);
        assert_eq!(report.transcript.len(), 3);
    }

    #[test]
    fn transport_failures_are_retriable() {
        let cfg = ExecutorConfig::new("http://unused", "m");
        let err = external_execute(&cfg, &Broken, &team(3), &Topology::chain(3), None).unwrap_err();
        assert!(matches!(
            err,
            Error::Transport {
                retriable: true,
                ..
            }
        ));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let base = ExecutorConfig::new("http://x", "m");
        for cfg in [
            ExecutorConfig {
                rounds: 4,
                ..base.clone()
            },
            ExecutorConfig {
                rounds: 0,
                ..base.clone()
            },
            ExecutorConfig {
                max_concurrent: 0,
                ..base.clone()
            },
            ExecutorConfig {
                endpoint: String::new(),
                ..base.clone()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn batch_respects_each_job() {
        let echo = Echo {
            calls: Mutex::new(0),
        };
        let cfg = ExecutorConfig {
            max_concurrent: 2,
            ..ExecutorConfig::new("http://unused", "m")
        };
        let (ta, tb) = (team(3), team(4));
        let (a, b) = (Topology::chain(3), Topology::empty(4));
        let out = external_execute_batch(&cfg, &echo, &[(&ta, &a), (&tb, &b)], None).unwrap();
        let lens: Vec<usize> = out
            .into_iter()
            .map(|r| match r {
                Err(Error::DryRun { transcript }) => transcript.len(),
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(lens, vec![9, 12]);
    }
}
