//! Greedy joint phase and topology recovery, and the variants where either
//! the topology or the phase labels are already known.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ordering::PhaseOrdering;
use crate::phase::{format_labels, parse_labels, Phase};
use crate::simulate::{Mode, VoltagePanel};
use crate::stats::{best_phase_match, pairwise_scores, within_tol, CovarianceTable, PairScores, ScoreOptions};

/// One node attachment made by the greedy loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub added: usize,
    pub parent: usize,
    pub d: f64,
    /// Runner-up distance minus the winning one; `None` with a single candidate.
    pub margin: Option<f64>,
    pub tie: bool,
}

/// Estimated tree and global phase labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryResult {
    pub root: usize,
    /// `(child, parent)` in the order the children were attached.
    pub edges: Vec<(usize, usize)>,
    /// Global phase label of each local channel, per node.
    pub phases: BTreeMap<usize, Vec<Phase>>,
    pub steps: Vec<Step>,
}

#[derive(Serialize, Deserialize)]
struct ResultFile {
    root: usize,
    edges: Vec<[usize; 2]>,
    phases: BTreeMap<usize, String>,
    #[serde(default)]
    steps: Vec<Step>,
}

impl RecoveryResult {
    pub fn to_json(&self) -> String {
        let file = ResultFile {
            root: self.root,
            edges: self.edges.iter().map(|&(c, p)| [c, p]).collect(),
            phases: self.phases.iter().map(|(&n, p)| (n, format_labels(p))).collect(),
            steps: self.steps.clone(),
        };
        serde_json::to_string_pretty(&file).expect("result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ResultFile = serde_json::from_str(s)?;
        let phases = file
            .phases
            .into_iter()
            .map(|(n, p)| Ok((n, parse_labels(&p)?)))
            .collect::<Result<_>>()?;
        Ok(RecoveryResult {
            root: file.root,
            edges: file.edges.into_iter().map(|[c, p]| (c, p)).collect(),
            phases,
            steps: file.steps,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The pair `(i, j)` with `i` in `frontier`, `j` in `tree` minimizing `d`.
/// Ties go to the smallest `(i, j)`.
pub fn get_next(scores: &PairScores, tree: &BTreeSet<usize>, frontier: &BTreeSet<usize>) -> Result<Step> {
    next_by(tree, frontier, |i, j| {
        scores.get(i, j).map(|s| (s.d, s.tie)).ok_or(Error::MissingScore { i, j })
    })
}

fn next_by(
    tree: &BTreeSet<usize>,
    frontier: &BTreeSet<usize>,
    mut dist: impl FnMut(usize, usize) -> Result<(f64, bool)>,
) -> Result<Step> {
    let mut cands = Vec::with_capacity(tree.len() * frontier.len());
    for &i in frontier {
        for &j in tree {
            let (d, tie) = dist(i, j)?;
            if d.is_finite() {
                cands.push((d, i, j, tie));
            }
        }
    }
    let Some(best) = cands.iter().map(|c| c.0).min_by(f64::total_cmp) else {
        let i = *frontier.first().ok_or_else(|| Error::InvalidParameter("nothing left to attach".into()))?;
        return Err(Error::Disconnected(i));
    };
    let tied: Vec<_> = cands.iter().filter(|c| within_tol(c.0, best)).collect();
    // Candidates are generated in (i, j) order, so the first tied one is the smallest.
    let &&(d, i, j, order_tie) = tied.first().expect("minimum exists");
    let margin = cands
        .iter()
        .filter(|c| (c.1, c.2) != (i, j))
        .map(|c| c.0 - d)
        .min_by(f64::total_cmp);
    Ok(Step {
        added: i,
        parent: j,
        d,
        margin,
        tie: tied.len() > 1 || order_tie,
    })
}

fn seed_node(table: &CovarianceTable) -> Result<usize> {
    table
        .datum()
        .or_else(|| (0..table.len()).find(|&n| table.phase_count(n) == 3))
        .ok_or(Error::NoThreePhaseNode)
}

/// Joint recovery from a voltage panel. `phase_counts[n]` is the number of
/// channels at node `n`; the node missing from the panel is the datum.
pub fn gpt(panel: &VoltagePanel, phase_counts: &[usize]) -> Result<RecoveryResult> {
    gpt_with(panel, phase_counts, ScoreOptions::default())
}

pub fn gpt_with(panel: &VoltagePanel, phase_counts: &[usize], opts: ScoreOptions) -> Result<RecoveryResult> {
    let table = CovarianceTable::from_panel(panel, phase_counts)?;
    gpt_from_table(&table, opts)
}

/// Joint recovery on a covariance table (measured or analytic).
pub fn gpt_from_table(table: &CovarianceTable, opts: ScoreOptions) -> Result<RecoveryResult> {
    let root = seed_node(table)?;
    let scores = pairwise_scores(table, opts);
    let mut phases = BTreeMap::new();
    phases.insert(root, Phase::ALL.to_vec());
    let mut tree = BTreeSet::from([root]);
    let mut edges = Vec::new();
    let mut steps = Vec::new();
    for count in [3, 2, 1] {
        let mut frontier: BTreeSet<usize> = (0..table.len())
            .filter(|&n| n != root && table.phase_count(n) == count)
            .collect();
        while !frontier.is_empty() {
            let step = get_next(&scores, &tree, &frontier)?;
            let (i, j) = (step.added, step.parent);
            let pair = scores.get(i, j).expect("scored by get_next");
            phases.insert(i, pair.ordering.compose(&phases[&j]));
            frontier.remove(&i);
            tree.insert(i);
            edges.push((i, j));
            steps.push(step);
        }
    }
    Ok(RecoveryResult {
        root,
        edges,
        phases,
        steps,
    })
}

/// Phase labels when the tree is known: each node is matched to its parent,
/// breadth first from `root`, and inherits labels through the parent.
pub fn phase_id_known_topology(table: &CovarianceTable, edges: &[(usize, usize)], root: usize) -> Result<BTreeMap<usize, Vec<Phase>>> {
    let n = table.len();
    if root >= n || table.phase_count(root) != 3 {
        return Err(Error::NoThreePhaseNode);
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        if a >= n || b >= n {
            return Err(Error::InvalidParameter(format!("edge ({a}, {b}) names an unknown node")));
        }
        adj[a].push(b);
        adj[b].push(a);
    }
    for list in &mut adj {
        list.sort_unstable();
    }
    let mut phases = BTreeMap::new();
    phases.insert(root, Phase::ALL.to_vec());
    let mut queue = VecDeque::from([root]);
    while let Some(p) = queue.pop_front() {
        for &c in &adj[p] {
            if phases.contains_key(&c) {
                continue;
            }
            let ordering = if table.nodes[p].is_datum() {
                let labels = &table.nodes[c].labels;
                PhaseOrdering::matching_labels(labels, &table.nodes[p].labels)
                    .unwrap_or_else(|| PhaseOrdering::identity(labels.len()))
            } else {
                best_phase_match(table, c, p)?.ordering
            };
            let labels = ordering.compose(&phases[&p]);
            phases.insert(c, labels);
            queue.push_back(c);
        }
    }
    if let Some(missing) = (0..n).find(|k| !phases.contains_key(k)) {
        return Err(Error::Disconnected(missing));
    }
    Ok(phases)
}

/// Topology when every channel's global label is known (the table's
/// reported labels): greedy attachment by `d` under the label matching.
pub fn topology_known_phases(table: &CovarianceTable) -> Result<RecoveryResult> {
    let root = seed_node(table)?;
    let labels: Vec<&[Phase]> = table.nodes.iter().map(|b| b.labels.as_slice()).collect();
    let dist = |i: usize, j: usize| -> Result<(f64, bool)> {
        match PhaseOrdering::matching_labels(labels[i], labels[j]) {
            Some(o) => Ok((crate::stats::diff_variance(table, i, j, &o)?, false)),
            None => Ok((f64::INFINITY, false)),
        }
    };
    let mut tree = BTreeSet::from([root]);
    let mut edges = Vec::new();
    let mut steps = Vec::new();
    for count in [3, 2, 1] {
        let mut frontier: BTreeSet<usize> = (0..table.len())
            .filter(|&n| n != root && table.phase_count(n) == count)
            .collect();
        while !frontier.is_empty() {
            let step = next_by(&tree, &frontier, dist)?;
            frontier.remove(&step.added);
            tree.insert(step.added);
            edges.push((step.added, step.parent));
            steps.push(step);
        }
    }
    let phases = table.nodes.iter().enumerate().map(|(n, b)| (n, b.labels.clone())).collect();
    Ok(RecoveryResult {
        root,
        edges,
        phases,
        steps,
    })
}

/// Joint recovery restricted to magnitude panels.
pub fn recover_from_magnitudes(panel: &VoltagePanel, phase_counts: &[usize]) -> Result<RecoveryResult> {
    if panel.mode() != Mode::Magnitude {
        return Err(Error::InvalidParameter("expected a magnitude panel".into()));
    }
    gpt(panel, phase_counts)
}
