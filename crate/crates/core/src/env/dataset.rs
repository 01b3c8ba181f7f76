//! Synthetic difficulty-mixture datasets and their JSON file format.
//!
//! File layout: `{version, seed, difficulty_mix?, tasks: [{task_id, roles,
//! query, oracle, critical_edges, q_hi, q_lo, difficulty?}]}`. Critical edges
//! are one-based `[receiver, sender]` pairs; the string `"impossible"` marks
//! an unsatisfiable requirement.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AgentTeam, Edge};
use crate::rng;

use super::task::{OracleKind, Requirement, TaskSpec};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Solvable,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Solvable, Difficulty::Hard];
}

/// Proportions over easy / solvable / hard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyMix {
    pub easy: f64,
    pub solvable: f64,
    pub hard: f64,
}

impl DifficultyMix {
    pub fn new(easy: f64, solvable: f64, hard: f64) -> Result<Self> {
        let mix = Self {
            easy,
            solvable,
            hard,
        };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = self.as_array();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Validation(format!(
                "mixture proportions must be >= 0: {parts:?}"
            )));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "mixture proportions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.easy, self.solvable, self.hard]
    }

    /// Floors each share, then hands the remainder one by one to the earliest
    /// classes with nonzero proportion.
    pub fn counts(&self, n_tasks: usize) -> [usize; 3] {
        let parts = self.as_array();
        let mut counts = parts.map(|p| (p * n_tasks as f64 + 1e-9).floor() as usize);
        let mut remainder = n_tasks.saturating_sub(counts.iter().sum());
        for (c, p) in counts.iter_mut().zip(parts) {
            if remainder == 0 {
                break;
            }
            if p > 0.0 {
                *c += 1;
                remainder -= 1;
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetParams {
    pub mix: DifficultyMix,
    pub n_tasks: usize,
    pub n_agents: usize,
    pub seed: u64,
    /// When set, solvable tasks use the noisy oracle with `(q_hi, q_lo)`.
    pub noise: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub difficulty_mix: Option<DifficultyMix>,
    pub tasks: Vec<TaskSpec>,
}

const ROLE_POOL: [&str; 7] = [
    "Planner",
    "Math Solver",
    "Programmer",
    "Knowledge Expert",
    "Inspector",
    "Critic",
    "Researcher",
];

const VERBS: [&str; 8] = [
    "compute",
    "verify",
    "summarize",
    "derive",
    "estimate",
    "explain",
    "simplify",
    "compare",
];
const NOUNS: [&str; 12] = [
    "ratio",
    "sequence",
    "invoice",
    "polynomial",
    "schedule",
    "matrix",
    "inventory",
    "probability",
    "route",
    "budget",
    "function",
    "interval",
];
const ADJS: [&str; 8] = [
    "weighted", "nested", "partial", "compound", "annual", "sorted", "sparse", "modular",
];

/// Roles for an `n`-agent team; the last agent gives the final answer.
pub fn default_roles(n_agents: usize) -> Vec<String> {
    (0..n_agents)
        .map(|i| {
            if i + 1 == n_agents {
                "Final Decision Maker".to_string()
            } else if i < ROLE_POOL.len() {
                ROLE_POOL[i].to_string()
            } else {
                format!(
                    "{} {}",
                    ROLE_POOL[i % ROLE_POOL.len()],
                    i / ROLE_POOL.len() + 1
                )
            }
        })
        .collect()
}

fn random_query(rng: &mut impl Rng, index: usize) -> String {
    let pick = |rng: &mut dyn rand::RngCore, words: &[&'static str]| {
        words[rng.random_range(0..words.len())]
    };
    format!(
        "Problem {index}: {} the {} {} of the {} {}",
        pick(rng, &VERBS),
        pick(rng, &ADJS),
        pick(rng, &NOUNS),
        pick(rng, &ADJS),
        pick(rng, &NOUNS),
    )
}

/// Random path `a1 ~> aN` with 2 or 3 edges (2 only when `n == 3`).
fn random_path(rng: &mut impl Rng, n_agents: usize) -> Vec<Edge> {
    let max_len = 3.min(n_agents - 1);
    let len = rng.random_range(2..=max_len);
    let mut inner: Vec<usize> = (1..n_agents - 1).collect();
    inner.shuffle(rng);
    let mut hops: Vec<usize> = inner.into_iter().take(len - 1).collect();
    hops.sort_unstable();
    let mut nodes = vec![0];
    nodes.extend(hops);
    nodes.push(n_agents - 1);
    nodes.windows(2).map(|w| Edge::new(w[1], w[0])).collect()
}

/// Builds a dataset: easy tasks always succeed when connected, solvable
/// tasks plant a critical path `a1 ~> aN`, hard tasks can never succeed.
pub fn generate_dataset(params: &DatasetParams) -> Result<DatasetSpec> {
    params.mix.validate()?;
    let counts = params.mix.counts(params.n_tasks);
    let needs_paths = counts[1] + counts[2] > 0;
    if params.n_agents < 2 || (needs_paths && params.n_agents < 3) {
        return Err(Error::Validation(format!(
            "planted paths need at least 3 agents, got {}",
            params.n_agents
        )));
    }
    if let Some((hi, lo)) = params.noise {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(Error::Validation(format!(
                "invalid noise levels q_hi={hi}, q_lo={lo}"
            )));
        }
    }
    let mut rng = rng::stream(params.seed, &[0xda7a]);
    let mut classes: Vec<Difficulty> = Difficulty::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&d, c)| std::iter::repeat_n(d, c))
        .collect();
    classes.shuffle(&mut rng);

    let roles = default_roles(params.n_agents);
    let tasks = classes
        .into_iter()
        .enumerate()
        .map(|(idx, difficulty)| {
            let query = random_query(&mut rng, idx);
            let team = AgentTeam::new(roles.clone(), query)?;
            let (oracle, critical, q_hi, q_lo) = match difficulty {
                Difficulty::Easy => (OracleKind::AlwaysSucceed, vec![], 1.0, 1.0),
                Difficulty::Solvable => {
                    let path = random_path(&mut rng, params.n_agents)
                        .into_iter()
                        .map(Requirement::Edge)
                        .collect();
                    match params.noise {
                        Some((hi, lo)) => (OracleKind::NoisyPlanted, path, hi, lo),
                        None => (OracleKind::PlantedPath, path, 1.0, 0.0),
                    }
                }
                Difficulty::Hard => {
                    let mut reqs: Vec<Requirement> = random_path(&mut rng, params.n_agents)
                        .into_iter()
                        .map(Requirement::Edge)
                        .collect();
                    reqs.push(Requirement::Impossible);
                    (OracleKind::PlantedPath, reqs, 1.0, 0.0)
                }
            };
            let task = TaskSpec {
                task_id: format!("task-{idx:03}"),
                team,
                oracle,
                critical,
                q_hi,
                q_lo,
                difficulty: Some(difficulty),
            };
            task.validate()?;
            Ok(task)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetSpec {
        seed: params.seed,
        difficulty_mix: Some(params.mix),
        tasks,
    })
}

// ---- file format ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum CriticalEntry {
    Edge([usize; 2]),
    Marker(String),
}

const IMPOSSIBLE_MARKER: &str = "impossible";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    task_id: String,
    roles: Vec<String>,
    query: String,
    oracle: OracleKind,
    #[serde(default)]
    critical_edges: Vec<CriticalEntry>,
    q_hi: f64,
    q_lo: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty: Option<Difficulty>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    version: u32,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    difficulty_mix: Option<DifficultyMix>,
    tasks: Vec<TaskRecord>,
}

impl From<&TaskSpec> for TaskRecord {
    fn from(t: &TaskSpec) -> Self {
        TaskRecord {
            task_id: t.task_id.clone(),
            roles: t.team.roles().to_vec(),
            query: t.team.query().to_string(),
            oracle: t.oracle,
            critical_edges: t
                .critical
                .iter()
                .map(|r| match r {
                    Requirement::Edge(e) => CriticalEntry::Edge([e.receiver + 1, e.sender + 1]),
                    Requirement::Impossible => CriticalEntry::Marker(IMPOSSIBLE_MARKER.into()),
                })
                .collect(),
            q_hi: t.q_hi,
            q_lo: t.q_lo,
            difficulty: t.difficulty,
        }
    }
}

impl TryFrom<TaskRecord> for TaskSpec {
    type Error = Error;

    fn try_from(r: TaskRecord) -> Result<Self> {
        let critical = r
            .critical_edges
            .iter()
            .map(|c| match c {
                CriticalEntry::Edge([recv, send]) if *recv >= 1 && *send >= 1 => {
                    Ok(Requirement::Edge(Edge::new(recv - 1, send - 1)))
                }
                CriticalEntry::Marker(m) if m == IMPOSSIBLE_MARKER => Ok(Requirement::Impossible),
                other => Err(Error::Validation(format!(
                    "task {}: bad critical entry {other:?}",
                    r.task_id
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let task = TaskSpec {
            task_id: r.task_id,
            team: AgentTeam::new(r.roles, r.query)?,
            oracle: r.oracle,
            critical,
            q_hi: r.q_hi,
            q_lo: r.q_lo,
            difficulty: r.difficulty,
        };
        task.validate()?;
        Ok(task)
    }
}

impl DatasetSpec {
    pub fn to_json(&self) -> Result<String> {
        let file = DatasetFile {
            version: DATASET_VERSION,
            seed: self.seed,
            difficulty_mix: self.difficulty_mix,
            tasks: self.tasks.iter().map(TaskRecord::from).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(s)?;
        if file.version != DATASET_VERSION {
            return Err(Error::Validation(format!(
                "dataset version {} is not supported (expected {DATASET_VERSION})",
                file.version
            )));
        }
        if let Some(mix) = &file.difficulty_mix {
            mix.validate()?;
        }
        let tasks = file
            .tasks
            .into_iter()
            .map(TaskSpec::try_from)
            .collect::<Result<Vec<_>>>()?;
        let mut ids: Vec<&str> = tasks.iter().map(|t| t.task_id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate task ids".into()));
        }
        Ok(Self {
            seed: file.seed,
            difficulty_mix: file.difficulty_mix,
            tasks,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, d: Difficulty) -> usize {
        self.tasks
            .iter()
            .filter(|t| t.difficulty == Some(d))
            .count()
    }

    /// Same tasks restricted to one difficulty class.
    pub fn filter(&self, d: Difficulty) -> Self {
        Self {
            seed: self.seed,
            difficulty_mix: None,
            tasks: self
                .tasks
                .iter()
                .filter(|t| t.difficulty == Some(d))
                .cloned()
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Topology;

    fn params(mix: (f64, f64, f64), n_tasks: usize, n_agents: usize, seed: u64) -> DatasetParams {
        DatasetParams {
            mix: DifficultyMix::new(mix.0, mix.1, mix.2).unwrap(),
            n_tasks,
            n_agents,
            seed,
            noise: None,
        }
    }

    #[test]
    fn all_easy_mix() {
        let d = generate_dataset(&params((1.0, 0.0, 0.0), 10, 4, 1)).unwrap();
        assert!(d
            .tasks
            .iter()
            .all(|t| t.oracle == OracleKind::AlwaysSucceed && t.critical.is_empty()));
    }

    #[test]
    fn solvable_tasks_plant_admissible_paths() {
        let d = generate_dataset(&params((0.0, 1.0, 0.0), 40, 4, 2)).unwrap();
        for t in &d.tasks {
            let edges = t.critical_edges();
            assert!((2..=3).contains(&edges.len()));
            assert!(edges.iter().all(|e| e.is_admissible(4)));
            let path = Topology::from_edges(4, edges.iter().copied()).unwrap();
            assert!(path.answer_reachable(), "{}", t.task_id);
        }
    }

    #[test]
    fn hard_tasks_are_impossible() {
        let d = generate_dataset(&params((0.0, 0.0, 1.0), 5, 3, 2)).unwrap();
        assert!(d.tasks.iter().all(TaskSpec::is_impossible));
    }

    #[test]
    fn counts_floor_then_distribute() {
        assert_eq!(
            DifficultyMix::new(0.4, 0.4, 0.2).unwrap().counts(30),
            [12, 12, 6]
        );
        assert_eq!(
            DifficultyMix::new(0.5, 0.5, 0.0).unwrap().counts(7),
            [4, 3, 0]
        );
        assert_eq!(
            DifficultyMix::new(0.0, 0.5, 0.5).unwrap().counts(5),
            [0, 3, 2]
        );
        assert_eq!(
            DifficultyMix::new(0.34, 0.33, 0.33).unwrap().counts(10),
            [4, 3, 3]
        );
    }

    #[test]
    fn bad_mixtures_are_rejected() {
        assert!(DifficultyMix::new(0.5, 0.6, 0.2).is_err());
        assert!(DifficultyMix::new(-0.1, 0.6, 0.5).is_err());
        assert!(generate_dataset(&params((0.0, 1.0, 0.0), 3, 2, 0)).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_round_trips() {
        let p = DatasetParams {
            noise: Some((0.9, 0.1)),
            ..params((0.4, 0.4, 0.2), 30, 5, 7)
        };
        let a = generate_dataset(&p).unwrap();
        let b = generate_dataset(&p).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let back = DatasetSpec::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(back, a);
        assert_eq!(
            (
                a.count(Difficulty::Easy),
                a.count(Difficulty::Solvable),
                a.count(Difficulty::Hard)
            ),
            (12, 12, 6)
        );
    }

    #[test]
    fn file_format_is_one_based() {
        let json = r#"{"version":1,"seed":3,"tasks":[{"task_id":"x","roles":["a","b","c"],"query":"q",
            "oracle":"planted_path","critical_edges":[[2,1],[3,2],"impossible"],"q_hi":1.0,"q_lo":0.0}]}"#;
        let d = DatasetSpec::from_json(json).unwrap();
        let t = &d.tasks[0];
        assert_eq!(t.critical_edges(), vec![Edge::new(1, 0), Edge::new(2, 1)]);
        assert!(t.is_impossible());

        let inadmissible = json.replace("[2,1]", "[1,2]");
        assert!(DatasetSpec::from_json(&inadmissible).is_err());
        let unknown = json.replace("\"seed\":3", "\"seed\":3,\"extra\":1");
        assert!(DatasetSpec::from_json(&unknown).is_err());
        let future = json.replace("\"version\":1", "\"version\":9");
        assert!(DatasetSpec::from_json(&future).is_err());
    }
}
