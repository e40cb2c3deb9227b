//! Multi-phase radial network model: buses, lines, structural validation,
//! JSON persistence and the small running-example feeder.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::phase::{Phase, PhaseSet};

/// A line between two buses. Stored oriented child (`from`) to parent (`to`).
///
/// `z` is the per-unit series impedance, rows and columns ordered by the
/// canonical order of `phases`.
#[derive(Clone, Debug, PartialEq)]
pub struct LineModel {
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    pub z: CMatrix,
}

impl LineModel {
    pub fn new(from: usize, to: usize, phases: PhaseSet, z: CMatrix) -> Self {
        LineModel { from, to, phases, z }
    }

    /// Impedance coupling between two phases, zero if either is absent.
    pub fn z_entry(&self, row: Phase, col: Phase) -> Complex64 {
        match (self.phases.position(row), self.phases.position(col)) {
            (Some(r), Some(c)) => self.z[(r, c)],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    /// The impedance zero-padded into a 3×3 array indexed by phase.
    pub fn z_padded(&self) -> [[Complex64; 3]; 3] {
        let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (r, pr) in self.phases.iter().enumerate() {
            for (c, pc) in self.phases.iter().enumerate() {
                out[pr.index()][pc.index()] = self.z[(r, c)];
            }
        }
        out
    }
}

/// Rooted tree of multi-phase buses. Node ids are the dense indices of `nodes`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialNetwork {
    pub name: String,
    pub reference: usize,
    pub nodes: Vec<PhaseSet>,
    pub edges: Vec<LineModel>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyNetwork,
    ReferenceOutOfRange(usize),
    ReferenceNotThreePhase(PhaseSet),
    UnknownNode { edge: usize, node: usize },
    SelfLoop { edge: usize },
    NotSpanning { nodes: usize, edges: usize },
    Disconnected { node: usize },
    Cycle { edge: usize },
    Orientation { edge: usize, from: usize, to: usize },
    PhaseMonotonicity { child: usize, parent: usize },
    EdgePhases { edge: usize, edge_phases: PhaseSet, child_phases: PhaseSet },
    ImpedanceShape { edge: usize, rows: usize, cols: usize },
    ImpedanceNotSymmetric { edge: usize },
    NonPositiveResistance { edge: usize },
    SingularImpedance { edge: usize },
}

impl Violation {
    /// True for violations that concern the line impedances only.
    pub fn is_impedance(&self) -> bool {
        matches!(
            self,
            Violation::ImpedanceNotSymmetric { .. }
                | Violation::NonPositiveResistance { .. }
                | Violation::SingularImpedance { .. }
        )
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyNetwork => write!(f, "empty network"),
            Violation::ReferenceOutOfRange(r) => write!(f, "reference {r} out of range"),
            Violation::ReferenceNotThreePhase(p) => write!(f, "reference carries phases {p}, not abc"),
            Violation::UnknownNode { edge, node } => write!(f, "edge {edge} references unknown node {node}"),
            Violation::SelfLoop { edge } => write!(f, "edge {edge} is a self loop"),
            Violation::NotSpanning { nodes, edges } => {
                write!(f, "not spanning: {edges} edges for {nodes} nodes")
            }
            Violation::Disconnected { node } => write!(f, "node {node} is disconnected from the reference"),
            Violation::Cycle { edge } => write!(f, "edge {edge} closes a cycle"),
            Violation::Orientation { edge, from, to } => {
                write!(f, "edge {edge} ({from}->{to}) is not oriented child to parent")
            }
            Violation::PhaseMonotonicity { child, parent } => {
                write!(f, "phase monotonicity: node {child} has phases outside parent {parent}")
            }
            Violation::EdgePhases { edge, edge_phases, child_phases } => write!(
                f,
                "edge {edge} phases {edge_phases} differ from child phases {child_phases}"
            ),
            Violation::ImpedanceShape { edge, rows, cols } => {
                write!(f, "edge {edge} impedance is {rows}x{cols}, wrong for its phases")
            }
            Violation::ImpedanceNotSymmetric { edge } => write!(f, "edge {edge} impedance is not symmetric"),
            Violation::NonPositiveResistance { edge } => {
                write!(f, "edge {edge} impedance has a diagonal entry with non-positive real part")
            }
            Violation::SingularImpedance { edge } => write!(f, "edge {edge} impedance is singular"),
        }
    }
}

/// Every invariant a network violates. Empty iff the network is valid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Parent pointers and traversal order of a structurally valid network.
#[derive(Clone, Debug)]
pub struct TreeView {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub parent_edge: Vec<Option<usize>>,
    pub depth: Vec<usize>,
    pub children: Vec<Vec<usize>>,
    /// Breadth-first order from the root.
    pub order: Vec<usize>,
}

impl TreeView {
    /// Edge indices on the path from `node` up to the root, nearest first.
    pub fn path_edges(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.depth[node]);
        let mut cur = node;
        while let Some(e) = self.parent_edge[cur] {
            out.push(e);
            cur = self.parent[cur].expect("edge implies parent");
        }
        out
    }

    pub fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }

    pub fn are_adjacent(&self, a: usize, b: usize) -> bool {
        self.parent[a] == Some(b) || self.parent[b] == Some(a)
    }

    /// Undirected edges as `(min, max)` pairs.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = self
            .parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (c.min(p), c.max(p))))
            .collect();
        out.sort_unstable();
        out
    }
}

impl RadialNetwork {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn phases(&self, node: usize) -> PhaseSet {
        self.nodes[node]
    }

    /// Per-node phase counts, indexed by node id.
    pub fn phase_counts(&self) -> Vec<usize> {
        self.nodes.iter().map(|p| p.len()).collect()
    }

    /// Canonical phase labels of each node, indexed by node id.
    pub fn phase_labels(&self) -> Vec<Vec<Phase>> {
        self.nodes.iter().map(|p| p.to_vec()).collect()
    }

    /// Tree structure, or an error listing the structural violations.
    /// Impedance problems are not considered here.
    pub fn tree(&self) -> Result<TreeView> {
        let (violations, tree) = self.check_structure();
        let violations: Vec<_> = violations.into_iter().filter(|v| !v.is_impedance()).collect();
        match tree {
            Some(t) if violations.is_empty() => Ok(t),
            _ => Err(Error::InvalidNetwork(ValidationReport { violations })),
        }
    }

    fn check_structure(&self) -> (Vec<Violation>, Option<TreeView>) {
        let n = self.nodes.len();
        let mut v = Vec::new();
        if n == 0 {
            v.push(Violation::EmptyNetwork);
            return (v, None);
        }
        if self.reference >= n {
            v.push(Violation::ReferenceOutOfRange(self.reference));
            return (v, None);
        }
        if self.nodes[self.reference] != PhaseSet::ABC {
            v.push(Violation::ReferenceNotThreePhase(self.nodes[self.reference]));
        }
        if self.edges.len() + 1 != n {
            v.push(Violation::NotSpanning {
                nodes: n,
                edges: self.edges.len(),
            });
        }

        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (k, e) in self.edges.iter().enumerate() {
            let mut ok = true;
            for node in [e.from, e.to] {
                if node >= n {
                    v.push(Violation::UnknownNode { edge: k, node });
                    ok = false;
                }
            }
            if ok && e.from == e.to {
                v.push(Violation::SelfLoop { edge: k });
                ok = false;
            }
            if ok {
                adj[e.from].push((e.to, k));
                adj[e.to].push((e.from, k));
            }
        }

        // BFS from the reference; a second visit through a fresh edge is a cycle.
        let mut parent = vec![None; n];
        let mut parent_edge = vec![None; n];
        let mut depth = vec![0; n];
        let mut seen = vec![false; n];
        let mut edge_used = vec![false; self.edges.len()];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([self.reference]);
        seen[self.reference] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(w, k) in &adj[u] {
                if edge_used[k] {
                    continue;
                }
                edge_used[k] = true;
                if seen[w] {
                    v.push(Violation::Cycle { edge: k });
                    continue;
                }
                seen[w] = true;
                parent[w] = Some(u);
                parent_edge[w] = Some(k);
                depth[w] = depth[u] + 1;
                queue.push_back(w);
            }
        }
        for (node, s) in seen.iter().enumerate() {
            if !s {
                v.push(Violation::Disconnected { node });
            }
        }

        for (k, e) in self.edges.iter().enumerate() {
            if e.from >= n || e.to >= n || e.from == e.to {
                continue;
            }
            let (child, par) = if parent_edge[e.from] == Some(k) {
                (e.from, e.to)
            } else if parent_edge[e.to] == Some(k) {
                v.push(Violation::Orientation {
                    edge: k,
                    from: e.from,
                    to: e.to,
                });
                (e.to, e.from)
            } else {
                continue;
            };
            if !self.nodes[child].is_subset(self.nodes[par]) {
                v.push(Violation::PhaseMonotonicity { child, parent: par });
            }
            if e.phases != self.nodes[child] {
                v.push(Violation::EdgePhases {
                    edge: k,
                    edge_phases: e.phases,
                    child_phases: self.nodes[child],
                });
            }
        }

        for (k, e) in self.edges.iter().enumerate() {
            let m = e.phases.len();
            if e.z.nrows() != m || e.z.ncols() != m {
                v.push(Violation::ImpedanceShape {
                    edge: k,
                    rows: e.z.nrows(),
                    cols: e.z.ncols(),
                });
                continue;
            }
            v.extend(impedance_violations(k, &e.z));
        }

        let mut children = vec![Vec::new(); n];
        for &u in &order {
            if let Some(p) = parent[u] {
                children[p].push(u);
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }
        let tree = TreeView {
            root: self.reference,
            parent,
            parent_edge,
            depth,
            children,
            order,
        };
        (v, Some(tree))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::from(self)).expect("network serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        file.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}

/// Symmetry, positive resistance and invertibility of one line matrix.
pub(crate) fn impedance_violations(edge: usize, z: &CMatrix) -> Vec<Violation> {
    let mut v = Vec::new();
    let scale = linalg::max_abs(z).max(f64::MIN_POSITIVE);
    if z.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) || linalg::asymmetry(z) > 1e-12 * scale {
        v.push(Violation::ImpedanceNotSymmetric { edge });
    }
    if (0..z.nrows()).any(|i| !(z[(i, i)].re > 0.0)) {
        v.push(Violation::NonPositiveResistance { edge });
    }
    if linalg::invert(z).is_err() {
        v.push(Violation::SingularImpedance { edge });
    }
    v
}

/// Reports every violated invariant of `net`; an empty report means valid.
pub fn validate_network(net: &RadialNetwork) -> ValidationReport {
    ValidationReport {
        violations: net.check_structure().0,
    }
}

#[derive(Serialize, Deserialize)]
struct NodeEntry {
    id: usize,
    phases: PhaseSet,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    from: usize,
    to: usize,
    phases: PhaseSet,
    z: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    name: String,
    reference: usize,
    nodes: Vec<NodeEntry>,
    edges: Vec<EdgeEntry>,
}

impl From<&RadialNetwork> for NetworkFile {
    fn from(net: &RadialNetwork) -> Self {
        NetworkFile {
            name: net.name.clone(),
            reference: net.reference,
            nodes: net
                .nodes
                .iter()
                .enumerate()
                .map(|(id, &phases)| NodeEntry { id, phases })
                .collect(),
            edges: net
                .edges
                .iter()
                .map(|e| EdgeEntry {
                    from: e.from,
                    to: e.to,
                    phases: e.phases,
                    z: linalg::to_nested(&e.z),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkFile> for RadialNetwork {
    type Error = Error;

    fn try_from(mut file: NetworkFile) -> Result<Self> {
        file.nodes.sort_by_key(|n| n.id);
        for (k, n) in file.nodes.iter().enumerate() {
            if n.id != k {
                return Err(Error::Format(format!(
                    "node ids must be dense 0..{}; found {}",
                    file.nodes.len(),
                    n.id
                )));
            }
        }
        let edges = file
            .edges
            .iter()
            .map(|e| {
                Ok(LineModel {
                    from: e.from,
                    to: e.to,
                    phases: e.phases,
                    z: linalg::from_nested(&e.z)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RadialNetwork {
            name: file.name,
            reference: file.reference,
            nodes: file.nodes.iter().map(|n| n.phases).collect(),
            edges,
        })
    }
}

/// Picks the rows and columns of `full` (3×3, phase indexed) for `phases`.
pub fn restrict(full: &[[Complex64; 3]; 3], phases: PhaseSet) -> CMatrix {
    let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
    CMatrix::from_fn(idx.len(), idx.len(), |r, c| full[idx[r]][idx[c]])
}

/// The nine-bus running example: a three-phase trunk, a `bc` lateral at
/// node 4, and an `ac` lateral at node 6 feeding single-phase nodes 7 (`c`)
/// and 8 (`a`).
pub fn toynet() -> RadialNetwork {
    let c = Complex64::new;
    let base = [
        [c(0.35, 0.74), c(0.08, 0.20), c(0.07, 0.17)],
        [c(0.08, 0.20), c(0.36, 0.72), c(0.08, 0.19)],
        [c(0.07, 0.17), c(0.08, 0.19), c(0.34, 0.75)],
    ];
    let phases = ["abc", "abc", "abc", "abc", "bc", "abc", "ac", "c", "a"];
    let nodes: Vec<PhaseSet> = phases.iter().map(|s| s.parse().unwrap()).collect();
    // (child, parent, length)
    let lines = [
        (1, 0, 1.0),
        (2, 1, 0.8),
        (3, 1, 0.6),
        (4, 2, 0.5),
        (5, 2, 0.7),
        (6, 5, 0.4),
        (7, 6, 0.3),
        (8, 6, 0.35),
    ];
    let edges = lines
        .iter()
        .map(|&(child, parent, len)| {
            let full = base.map(|row| row.map(|z| z * len));
            LineModel::new(child, parent, nodes[child], restrict(&full, nodes[child]))
        })
        .collect();
    RadialNetwork {
        name: "toynet".into(),
        reference: 0,
        nodes,
        edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(z: f64) -> CMatrix {
        CMatrix::from_element(1, 1, Complex64::new(z, 0.0))
    }

    #[test]
    fn toynet_is_valid_and_matches_running_example() {
        let net = toynet();
        let report = validate_network(&net);
        assert!(report.is_valid(), "{report}");
        let e56 = net.edges.iter().find(|e| e.from == 6 && e.to == 5).unwrap();
        assert_eq!(e56.phases.to_string(), "ac");
        assert_eq!(net.phases(7).to_string(), "c");
        let tree = net.tree().unwrap();
        assert_eq!(tree.parent[7], Some(6));
        assert_eq!(tree.parent[8], Some(6));
    }

    #[test]
    fn missing_edge_is_not_spanning() {
        let net = RadialNetwork {
            name: "t".into(),
            reference: 0,
            nodes: vec![PhaseSet::ABC, PhaseSet::ABC],
            edges: vec![],
        };
        let report = validate_network(&net);
        assert!(report.violations.contains(&Violation::NotSpanning { nodes: 2, edges: 0 }));
        assert!(report.to_string().contains("not spanning"));
    }

    #[test]
    fn child_with_more_phases_breaks_monotonicity() {
        let mut net = toynet();
        // node 4 is `bc` under a three-phase parent; give its child all phases
        net.nodes.push(PhaseSet::ABC);
        let z = net.edges[0].z.clone();
        net.edges.push(LineModel::new(9, 4, PhaseSet::ABC, z));
        let report = validate_network(&net);
        assert!(report
            .violations
            .contains(&Violation::PhaseMonotonicity { child: 9, parent: 4 }));
        assert!(report.to_string().contains("phase monotonicity"));
    }

    #[test]
    fn reports_orientation_cycle_and_reference_problems() {
        let a: PhaseSet = "a".parse().unwrap();
        let net = RadialNetwork {
            name: "t".into(),
            reference: 0,
            nodes: vec![a, a, a],
            edges: vec![
                LineModel::new(0, 1, a, scalar(1.0)),
                LineModel::new(2, 1, a, scalar(1.0)),
            ],
        };
        let v = validate_network(&net).violations;
        assert!(v.contains(&Violation::ReferenceNotThreePhase(a)));
        assert!(v.contains(&Violation::Orientation { edge: 0, from: 0, to: 1 }));

        let cyc = RadialNetwork {
            name: "c".into(),
            reference: 0,
            nodes: vec![PhaseSet::ABC, a, a, a],
            edges: vec![
                LineModel::new(1, 0, a, scalar(1.0)),
                LineModel::new(2, 1, a, scalar(1.0)),
                LineModel::new(1, 2, a, scalar(1.0)),
            ],
        };
        let v = validate_network(&cyc).violations;
        assert!(v.iter().any(|x| matches!(x, Violation::Cycle { .. })));
        assert!(v.contains(&Violation::Disconnected { node: 3 }));
    }

    #[test]
    fn impedance_problems_are_reported_but_do_not_block_tree() {
        let mut net = toynet();
        net.edges[2].z[(0, 1)] += Complex64::new(0.5, 0.0);
        net.edges[3].z = CMatrix::from_element(2, 2, Complex64::new(1.0, 1.0));
        let v = validate_network(&net).violations;
        assert!(v.contains(&Violation::ImpedanceNotSymmetric { edge: 2 }));
        assert!(v.contains(&Violation::SingularImpedance { edge: 3 }));
        assert!(net.tree().is_ok());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let net = toynet();
        let text = net.to_json();
        let back = RadialNetwork::from_json(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json(), text);
        assert!(text.contains("\"phases\": \"ac\""));
    }

    #[test]
    fn json_rejects_sparse_ids_and_unsorted_phases() {
        let bad = r#"{"name":"x","reference":0,"nodes":[{"id":0,"phases":"abc"},{"id":2,"phases":"a"}],"edges":[]}"#;
        assert!(RadialNetwork::from_json(bad).is_err());
        let bad = r#"{"name":"x","reference":0,"nodes":[{"id":0,"phases":"cab"}],"edges":[]}"#;
        assert!(RadialNetwork::from_json(bad).is_err());
    }

    #[test]
    fn path_and_lca() {
        let tree = toynet().tree().unwrap();
        assert_eq!(tree.path_edges(7).len(), 5);
        assert_eq!(tree.lca(7, 4), 2);
        assert_eq!(tree.lca(3, 8), 1);
        assert!(tree.are_adjacent(6, 5));
        assert_eq!(tree.undirected_edges().len(), 8);
    }
}
