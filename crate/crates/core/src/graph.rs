//! Agent teams, DAG topologies and edge-probability matrices.
//!
//! Agents are indexed `0..n` in code and rendered `a1..aN` in every external
//! format. An edge `(receiver i, sender j)` carries sender `j`'s output to
//! receiver `i` and is admissible only when `j < i`, so the agent order is
//! the single topological order and every admissible adjacency is acyclic.
//! The last agent produces the team's answer; the first is the entry point.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directed edge `sender -> receiver` with zero-based indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub receiver: usize,
    pub sender: usize,
}

impl Edge {
    pub const fn new(receiver: usize, sender: usize) -> Self {
        Self { receiver, sender }
    }

    /// Whether the edge respects the DAG mask.
    pub fn is_admissible(&self, n_agents: usize) -> bool {
        self.sender < self.receiver && self.receiver < n_agents
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}->a{}", self.sender + 1, self.receiver + 1)
    }
}

/// All mask-admissible edges of an `n`-agent team, receiver-major.
pub fn admissible_edges(n_agents: usize) -> impl Iterator<Item = Edge> {
    (0..n_agents).flat_map(|i| (0..i).map(move |j| Edge::new(i, j)))
}

/// Number of admissible edges, `n(n-1)/2`.
pub fn admissible_edge_count(n_agents: usize) -> usize {
    n_agents * n_agents.saturating_sub(1) / 2
}

/// Ordered roster of agent roles plus the task query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTeam {
    roles: Vec<String>,
    query: String,
}

impl AgentTeam {
    pub fn new(roles: Vec<String>, query: impl Into<String>) -> Result<Self> {
        if roles.len() < 2 {
            return Err(Error::Validation(format!(
                "a team needs at least 2 agents, got {}",
                roles.len()
            )));
        }
        Ok(Self {
            roles,
            query: query.into(),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.roles.len()
    }

    pub fn roles(&self) -> &[String] {
        &self.roles
    }

    pub fn query(&self) -> &str {
        &self.query
    }
}

/// A binary adjacency over the team, stored dense and receiver-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Topology {
    n_agents: usize,
    adj: Vec<bool>,
}

impl fmt::Debug for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Topology")
            .field("n_agents", &self.n_agents)
            .field("edges", &self.edge_list())
            .finish()
    }
}

impl Topology {
    pub fn empty(n_agents: usize) -> Self {
        Self {
            n_agents,
            adj: vec![false; n_agents * n_agents],
        }
    }

    /// Builds a topology from admissible edges; rejects anything the mask forbids.
    pub fn from_edges(n_agents: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut t = Self::empty(n_agents);
        for e in edges {
            t.insert(e)?;
        }
        Ok(t)
    }

    /// Raw, unchecked adjacency (`adj[i][j]` means `j -> i`). Use
    /// [`Topology::is_valid_dag`] to check it.
    pub fn from_adjacency(adj: &[Vec<bool>]) -> Result<Self> {
        let n = adj.len();
        if adj.iter().any(|row| row.len() != n) {
            return Err(Error::Dimension("adjacency must be square".into()));
        }
        Ok(Self {
            n_agents: n,
            adj: adj.iter().flatten().copied().collect(),
        })
    }

    /// Complete DAG: every admissible edge present.
    pub fn complete(n_agents: usize) -> Self {
        let mut t = Self::empty(n_agents);
        for e in admissible_edges(n_agents) {
            t.set(e, true);
        }
        t
    }

    /// Chain `a1 -> a2 -> ... -> aN`.
    pub fn chain(n_agents: usize) -> Self {
        let mut t = Self::empty(n_agents);
        for i in 1..n_agents {
            t.set(Edge::new(i, i - 1), true);
        }
        t
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn insert(&mut self, e: Edge) -> Result<()> {
        if !e.is_admissible(self.n_agents) {
            return Err(Error::Validation(format!(
                "edge {e} violates the DAG mask for {} agents",
                self.n_agents
            )));
        }
        self.set(e, true);
        Ok(())
    }

    pub(crate) fn set(&mut self, e: Edge, present: bool) {
        self.adj[e.receiver * self.n_agents + e.sender] = present;
    }

    pub fn contains(&self, e: Edge) -> bool {
        e.receiver < self.n_agents
            && e.sender < self.n_agents
            && self.adj[e.receiver * self.n_agents + e.sender]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count()
    }

    /// True iff every set edge satisfies `sender < receiver`.
    pub fn is_valid_dag(&self) -> bool {
        let n = self.n_agents;
        self.adj.len() == n * n && (0..n).all(|i| (i..n).all(|j| !self.adj[i * n + j]))
    }

    /// Edges sorted receiver-major, then by ascending sender.
    pub fn edge_list(&self) -> Vec<Edge> {
        let n = self.n_agents;
        (0..n)
            .flat_map(|i| (0..n).map(move |j| Edge::new(i, j)))
            .filter(|e| self.adj[e.receiver * n + e.sender])
            .collect()
    }

    /// Senders feeding `receiver`, ascending.
    pub fn predecessors(&self, receiver: usize) -> Vec<usize> {
        (0..self.n_agents)
            .filter(|&j| self.adj[receiver * self.n_agents + j])
            .collect()
    }

    /// Whether a directed path `source ~> sink` exists following sender -> receiver.
    pub fn terminal_reachable(&self, source: usize, sink: usize) -> Result<bool> {
        let n = self.n_agents;
        if source >= n || sink >= n {
            return Err(Error::Dimension(format!(
                "agent index out of range: source={source}, sink={sink}, n={n}"
            )));
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([source]);
        seen[source] = true;
        while let Some(u) = queue.pop_front() {
            if u == sink {
                return Ok(true);
            }
            for v in 0..n {
                if !seen[v] && self.adj[v * n + u] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        Ok(false)
    }

    /// Whether the answer agent is reachable from the entry agent.
    pub fn answer_reachable(&self) -> bool {
        self.n_agents >= 1
            && self
                .terminal_reachable(0, self.n_agents - 1)
                .unwrap_or(false)
    }

    /// Stable 64-bit fingerprint of the adjacency.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(8 + self.adj.len());
        bytes.extend_from_slice(&(self.n_agents as u64).to_le_bytes());
        bytes.extend(self.adj.iter().map(|&b| b as u8));
        crate::rng::fnv1a64(&bytes)
    }

    /// Graphviz rendering: nodes `a1..aN` with role tooltips, edges `aj -> ai`.
    pub fn to_dot(&self, team: Option<&AgentTeam>) -> String {
        let mut out = String::from("digraph topology {\n  rankdir=LR;\n");
        for i in 0..self.n_agents {
            let role = team
                .and_then(|t| t.roles().get(i))
                .map(String::as_str)
                .unwrap_or("");
            out.push_str(&format!(
                "  a{} [label=\"a{}\", tooltip=\"{}\"];\n",
                i + 1,
                i + 1,
                escape_dot(role)
            ));
        }
        for e in self.edge_list() {
            out.push_str(&format!("  a{} -> a{};\n", e.sender + 1, e.receiver + 1));
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', "\\n")
}

/// Strictly lower-triangular matrix of edge existence probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbMatrix {
    n_agents: usize,
    probs: Vec<f64>,
}

impl EdgeProbMatrix {
    /// Validated constructor from a dense row-major `n x n` buffer.
    pub fn new(n_agents: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_agents * n_agents {
            return Err(Error::Dimension(format!(
                "expected {} probabilities, got {}",
                n_agents * n_agents,
                probs.len()
            )));
        }
        for i in 0..n_agents {
            for j in 0..n_agents {
                let p = probs[i * n_agents + j];
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(Error::Numeric(format!(
                        "probability ({i},{j}) = {p} outside [0,1]"
                    )));
                }
                if j >= i && p != 0.0 {
                    return Err(Error::Validation(format!(
                        "masked entry ({i},{j}) must be 0, got {p}"
                    )));
                }
            }
        }
        Ok(Self { n_agents, probs })
    }

    /// Builds from a function over admissible edges; masked entries are 0.
    pub fn from_fn(n_agents: usize, mut f: impl FnMut(Edge) -> f64) -> Result<Self> {
        let mut probs = vec![0.0; n_agents * n_agents];
        for e in admissible_edges(n_agents) {
            probs[e.receiver * n_agents + e.sender] = f(e);
        }
        Self::new(n_agents, probs)
    }

    /// Every admissible entry set to `p`.
    pub fn uniform(n_agents: usize, p: f64) -> Result<Self> {
        Self::from_fn(n_agents, |_| p)
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Probability of edge `e`; 0 for masked pairs.
    pub fn get(&self, e: Edge) -> f64 {
        self.probs[e.receiver * self.n_agents + e.sender]
    }

    pub fn at(&self, receiver: usize, sender: usize) -> f64 {
        self.probs[receiver * self.n_agents + sender]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e1(receiver: usize, sender: usize) -> Edge {
        // one-based helper, mirrors the a1..aN naming
        Edge::new(receiver - 1, sender - 1)
    }

    #[test]
    fn empty_topology_is_valid() {
        assert!(Topology::empty(4).is_valid_dag());
    }

    #[test]
    fn lower_triangular_edge_is_valid() {
        let t = Topology::from_edges(4, [e1(3, 1)]).unwrap();
        assert!(t.is_valid_dag());
    }

    #[test]
    fn upper_triangular_edge_is_invalid() {
        let mut adj = vec![vec![false; 4]; 4];
        adj[0][2] = true; // receiver 1, sender 3
        let t = Topology::from_adjacency(&adj).unwrap();
        assert!(!t.is_valid_dag());
        assert!(Topology::from_edges(4, [e1(1, 3)]).is_err());
    }

    #[test]
    fn reachability_examples() {
        let chain = Topology::chain(4);
        assert!(chain.terminal_reachable(0, 3).unwrap());

        let split = Topology::from_edges(4, [e1(2, 1), e1(4, 3)]).unwrap();
        assert!(!split.terminal_reachable(0, 3).unwrap());

        let branchy = Topology::from_edges(4, [e1(3, 1), e1(4, 3), e1(2, 1)]).unwrap();
        assert!(branchy.terminal_reachable(0, 3).unwrap());

        assert!(matches!(
            chain.terminal_reachable(0, 4),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn edge_list_is_sorted_and_order_independent() {
        assert!(Topology::empty(3).edge_list().is_empty());
        let sorted = vec![e1(2, 1), e1(3, 1), e1(3, 2)];
        let fwd = Topology::from_edges(3, sorted.clone()).unwrap();
        let rev = Topology::from_edges(3, sorted.iter().rev().copied()).unwrap();
        assert_eq!(fwd.edge_list(), sorted);
        assert_eq!(rev.edge_list(), sorted);
    }

    #[test]
    fn dot_export_lists_nodes_and_edges() {
        let team = AgentTeam::new(
            vec!["Coder".into(), "Say \"hi\"".into(), "Judge".into()],
            "q",
        )
        .unwrap();
        let t = Topology::from_edges(3, [e1(3, 1)]).unwrap();
        let dot = t.to_dot(Some(&team));
        assert!(dot.starts_with("digraph topology {"));
        assert!(dot.contains("a1 [label=\"a1\", tooltip=\"Coder\"];"));
        assert!(dot.contains("tooltip=\"Say \\\"hi\\\"\""));
        assert!(dot.contains("a1 -> a3;"));
        assert_eq!(dot.matches("->").count(), 1);
    }

    #[test]
    fn prob_matrix_rejects_masked_mass() {
        let mut probs = vec![0.0; 4];
        probs[1] = 0.3; // (0,1) is masked
        assert!(EdgeProbMatrix::new(2, probs).is_err());
        assert!(EdgeProbMatrix::new(2, vec![0.0, 0.0, 1.5, 0.0]).is_err());
        let ok = EdgeProbMatrix::new(2, vec![0.0, 0.0, 0.4, 0.0]).unwrap();
        assert_eq!(ok.at(1, 0), 0.4);
    }

    #[test]
    fn team_requires_two_agents() {
        assert!(AgentTeam::new(vec!["solo".into()], "q").is_err());
        assert_eq!(
            AgentTeam::new(vec!["a".into(), "b".into()], "q")
                .unwrap()
                .n_agents(),
            2
        );
    }
}
