//! Decision statistics: covariance tables built from panels or from the
//! linear model, phase-matching scores, and voltage-difference variances.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admittance::{impedance_by_paths, BlockIndex};
use crate::error::{Error, Result};
use crate::network::RadialNetwork;
use crate::ordering::{all_orderings, PhaseOrdering};
use crate::phase::Phase;
use crate::simulate::{InjectionSpec, Samples, VoltagePanel};

/// Relative tolerance under which two scores or distances count as tied.
pub const TIE_RTOL: f64 = 1e-12;

pub(crate) fn within_tol(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_RTOL * a.abs().max(b.abs())
}

/// Series that have a covariance defined as `Re E[(x - x̄) conj(y - ȳ)]`.
pub trait Sample: Copy {
    fn cross(a: Self, b: Self) -> f64;
    fn sub(a: Self, b: Self) -> Self;
    fn mean(xs: &[Self]) -> Self;
}

impl Sample for f64 {
    fn cross(a: f64, b: f64) -> f64 {
        a * b
    }
    fn sub(a: f64, b: f64) -> f64 {
        a - b
    }
    fn mean(xs: &[f64]) -> f64 {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl Sample for Complex64 {
    fn cross(a: Complex64, b: Complex64) -> f64 {
        a.re * b.re + a.im * b.im
    }
    fn sub(a: Complex64, b: Complex64) -> Complex64 {
        a - b
    }
    fn mean(xs: &[Complex64]) -> Complex64 {
        xs.iter().sum::<Complex64>() / xs.len() as f64
    }
}

/// Unbiased sample covariance; the real part of the conjugate cross-moment
/// for complex series.
pub fn empirical_cov<S: Sample>(x: &[S], y: &[S]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidParameter("covariance needs at least two samples".into()));
    }
    let (mx, my) = (S::mean(x), S::mean(y));
    let s: f64 = x.iter().zip(y).map(|(&a, &b)| S::cross(S::sub(a, mx), S::sub(b, my))).sum();
    Ok(s / (x.len() - 1) as f64)
}

/// Channels of one node inside a [`CovarianceTable`].
#[derive(Clone, Debug, PartialEq)]
pub struct NodeBlock {
    /// First row of the node in the covariance matrix; `None` for the datum.
    pub start: Option<usize>,
    /// Reported labels of the node's channels, in local order.
    pub labels: Vec<Phase>,
}

impl NodeBlock {
    pub fn is_datum(&self) -> bool {
        self.start.is_none()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Covariances between all measured channels, grouped by node.
///
/// The datum (the reference, against which all voltages are differences)
/// has three channels that are identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceTable {
    pub nodes: Vec<NodeBlock>,
    pub cov: DMatrix<f64>,
}

impl CovarianceTable {
    /// Sample covariances of a panel. Nodes absent from the panel must be
    /// three-phase and there may be at most one of them; it becomes the datum.
    pub fn from_panel(panel: &VoltagePanel, phase_counts: &[usize]) -> Result<Self> {
        let t = panel.len();
        if t < 2 {
            return Err(Error::InvalidParameter("covariance needs at least two samples".into()));
        }
        let by_node = panel.node_columns();
        let labels = panel.node_labels();
        if let Some((&n, _)) = by_node.iter().find(|(&n, _)| n >= phase_counts.len()) {
            return Err(Error::InvalidParameter(format!("panel node {n} is not in the network")));
        }
        // The table is laid out node by node; map panel columns into that order.
        let mut nodes = Vec::with_capacity(phase_counts.len());
        let mut columns = Vec::with_capacity(panel.channels.len());
        let mut datum = None;
        for (node, &count) in phase_counts.iter().enumerate() {
            match by_node.get(&node) {
                Some(cols) => {
                    if cols.len() != count {
                        return Err(Error::InvalidParameter(format!(
                            "node {node} has {} channels in the panel but {count} phases",
                            cols.len()
                        )));
                    }
                    nodes.push(NodeBlock {
                        start: Some(columns.len()),
                        labels: labels[&node].clone(),
                    });
                    columns.extend_from_slice(cols);
                }
                None if count == 3 && datum.is_none() => {
                    datum = Some(node);
                    nodes.push(NodeBlock {
                        start: None,
                        labels: Phase::ALL.to_vec(),
                    });
                }
                None => return Err(Error::UnmeasuredNode(node)),
            }
        }

        let tf = t as f64;
        let cov = match &panel.samples {
            Samples::Phasor(m) => {
                let mut re = DMatrix::<f64>::zeros(t, columns.len());
                let mut im = DMatrix::<f64>::zeros(t, columns.len());
                for (k, &c) in columns.iter().enumerate() {
                    let mean = m.column(c).sum() / tf;
                    for r in 0..t {
                        let x = m[(r, c)] - mean;
                        re[(r, k)] = x.re;
                        im[(r, k)] = x.im;
                    }
                }
                (re.tr_mul(&re) + im.tr_mul(&im)) / (tf - 1.0)
            }
            Samples::Magnitude(m) => {
                let mut x = DMatrix::<f64>::zeros(t, columns.len());
                for (k, &c) in columns.iter().enumerate() {
                    let mean = m.column(c).sum() / tf;
                    for r in 0..t {
                        x[(r, k)] = m[(r, c)] - mean;
                    }
                }
                x.tr_mul(&x) / (tf - 1.0)
            }
        };
        for (k, &c) in columns.iter().enumerate() {
            if !(cov[(k, k)] > 0.0) {
                let (node, phase) = panel.channels[c];
                return Err(Error::DegenerateChannel { node, phase });
            }
        }
        Ok(CovarianceTable { nodes, cov })
    }

    /// Exact covariances `Re(Z W Zᴴ)` of the linear model with uncorrelated
    /// injections, `W` holding each channel's injection variance.
    pub fn analytic(net: &RadialNetwork, spec: &InjectionSpec) -> Result<Self> {
        spec.check()?;
        if spec.epsilon != 0.0 {
            return Err(Error::InvalidParameter(
                "analytic covariances assume uncorrelated injections (epsilon = 0)".into(),
            ));
        }
        let z = impedance_by_paths(net)?;
        let index = BlockIndex::reduced(net);
        let w = spec.channel_variances(&index);
        let zw = DMatrix::from_fn(z.nrows(), z.ncols(), |r, c| z[(r, c)] * w[c]);
        let cov = (zw * z.adjoint()).map(|x| x.re);
        let nodes = (0..net.len())
            .map(|node| NodeBlock {
                start: index.block(node).map(|b| b.start),
                labels: net.phases(node).to_vec(),
            })
            .collect();
        Ok(CovarianceTable { nodes, cov })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn datum(&self) -> Option<usize> {
        self.nodes.iter().position(NodeBlock::is_datum)
    }

    pub fn phase_count(&self, node: usize) -> usize {
        self.nodes[node].len()
    }

    /// Covariance between local channel `k` of node `i` and channel `l` of node `j`.
    pub fn entry(&self, i: usize, k: usize, j: usize, l: usize) -> f64 {
        match (self.nodes[i].start, self.nodes[j].start) {
            (Some(a), Some(b)) => self.cov[(a + k, b + l)],
            _ => 0.0,
        }
    }

    /// Reorders node `node`'s channels so local channel `k` becomes the
    /// former channel `perm[k]`. Labels are left as they are.
    pub fn permute_node(&mut self, node: usize, perm: &[usize]) -> Result<()> {
        let Some(start) = self.nodes[node].start else {
            return Err(Error::InvalidParameter("the datum has no channels to permute".into()));
        };
        let m = self.nodes[node].len();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if sorted != (0..m).collect::<Vec<_>>() {
            return Err(Error::InvalidOrdering(format!("{perm:?} is not a permutation of {m} channels")));
        }
        let mut order: Vec<usize> = (0..self.cov.nrows()).collect();
        for k in 0..m {
            order[start + k] = start + perm[k];
        }
        let old = self.cov.clone();
        self.cov = DMatrix::from_fn(old.nrows(), old.ncols(), |r, c| old[(order[r], order[c])]);
        Ok(())
    }

    fn check_ordering(&self, i: usize, j: usize, o: &PhaseOrdering) -> Result<()> {
        let (mi, mj) = (self.phase_count(i), self.phase_count(j));
        if o.len() != mi || o.as_slice().iter().any(|&t| t >= mj) {
            return Err(Error::InvalidOrdering(format!(
                "ordering {o} does not map {mi} channels of node {i} into the {mj} of node {j}"
            )));
        }
        Ok(())
    }
}

/// `c_ij^O`: summed covariance of the channels matched by `o`.
pub fn phase_match_score(table: &CovarianceTable, i: usize, j: usize, o: &PhaseOrdering) -> Result<f64> {
    table.check_ordering(i, j, o)?;
    Ok(raw_score(table, i, j, o, false))
}

fn raw_score(table: &CovarianceTable, i: usize, j: usize, o: &PhaseOrdering, normalize: bool) -> f64 {
    o.as_slice()
        .iter()
        .enumerate()
        .map(|(k, &l)| {
            let c = table.entry(i, k, j, l);
            if normalize {
                let v = table.entry(i, k, i, k) * table.entry(j, l, j, l);
                if v > 0.0 {
                    c / v.sqrt()
                } else {
                    0.0
                }
            } else {
                c
            }
        })
        .sum()
}

/// Result of maximizing `c_ij^O` over all injective orderings.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMatch {
    pub ordering: PhaseOrdering,
    pub score: f64,
    /// Another ordering scored within [`TIE_RTOL`] of the winner.
    pub tie: bool,
}

/// Best ordering of node `i`'s channels into node `j`'s. Ties go to the
/// lexicographically smallest ordering and are flagged.
pub fn best_phase_match(table: &CovarianceTable, i: usize, j: usize) -> Result<PhaseMatch> {
    best_match_with(table, i, j, false)
}

fn best_match_with(table: &CovarianceTable, i: usize, j: usize, normalize: bool) -> Result<PhaseMatch> {
    let (mi, mj) = (table.phase_count(i), table.phase_count(j));
    let candidates = all_orderings(mi, mj);
    if candidates.is_empty() {
        return Err(Error::InvalidOrdering(format!(
            "node {i} has more channels ({mi}) than node {j} ({mj})"
        )));
    }
    let scores: Vec<f64> = candidates.iter().map(|o| raw_score(table, i, j, o, normalize)).collect();
    let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..scores.len()).filter(|&k| within_tol(scores[k], best)).collect();
    let w = winners[0];
    Ok(PhaseMatch {
        ordering: candidates[w].clone(),
        score: scores[w],
        tie: winners.len() > 1,
    })
}

/// `d_ij`: summed variance of the differences of matched channels.
/// Clamped at zero against rounding.
pub fn diff_variance(table: &CovarianceTable, i: usize, j: usize, o: &PhaseOrdering) -> Result<f64> {
    table.check_ordering(i, j, o)?;
    Ok(raw_diff(table, i, j, o))
}

fn raw_diff(table: &CovarianceTable, i: usize, j: usize, o: &PhaseOrdering) -> f64 {
    o.as_slice()
        .iter()
        .enumerate()
        .map(|(k, &l)| (table.entry(i, k, i, k) + table.entry(j, l, j, l) - 2.0 * table.entry(i, k, j, l)).max(0.0))
        .sum()
}

/// `d_ij` computed directly from the difference series of a panel.
pub fn panel_diff_variance(panel: &VoltagePanel, i: usize, j: usize, o: &PhaseOrdering) -> Result<f64> {
    let cols = panel.node_columns();
    let (Some(ci), Some(cj)) = (cols.get(&i), cols.get(&j)) else {
        return Err(Error::UnmeasuredNode(if cols.contains_key(&i) { j } else { i }));
    };
    if o.len() != ci.len() || o.as_slice().iter().any(|&t| t >= cj.len()) {
        return Err(Error::InvalidOrdering(format!("ordering {o} does not fit nodes {i}, {j}")));
    }
    let mut total = 0.0;
    for (k, &l) in o.as_slice().iter().enumerate() {
        total += match &panel.samples {
            Samples::Phasor(m) => {
                let d: Vec<Complex64> = m.column(ci[k]).iter().zip(m.column(cj[l]).iter()).map(|(a, b)| a - b).collect();
                empirical_cov(&d, &d)?
            }
            Samples::Magnitude(m) => {
                let d: Vec<f64> = m.column(ci[k]).iter().zip(m.column(cj[l]).iter()).map(|(a, b)| a - b).collect();
                empirical_cov(&d, &d)?
            }
        };
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Rank orderings by summed correlations instead of covariances.
    pub normalize: bool,
}

/// Statistics of one ordered node pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScore {
    pub ordering: PhaseOrdering,
    pub score: f64,
    pub d: f64,
    pub tie: bool,
    /// The reported labels of `i` are not all present at `j`.
    pub cross_set: bool,
}

/// Statistics for every ordered pair `(i, j)` with `|M_i| <= |M_j|`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairScores {
    n: usize,
    cells: Vec<Option<PairScore>>,
}

impl PairScores {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&PairScore> {
        if i >= self.n || j >= self.n {
            return None;
        }
        self.cells[i * self.n + j].as_ref()
    }

    /// Populated pairs in `(i, j)` order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &PairScore)> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.as_ref().map(|c| ((k / self.n, k % self.n), c)))
    }

    /// Columns `i,j,ordering,c,d,cross_set`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["i", "j", "ordering", "c", "d", "cross_set"])?;
        for ((i, j), s) in self.iter() {
            wtr.write_record([
                i.to_string(),
                j.to_string(),
                s.ordering.to_string(),
                s.score.to_string(),
                s.d.to_string(),
                s.cross_set.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Scores every admissible ordered pair. Pairs into the datum carry no
/// phase information (all covariances vanish); their ordering follows the
/// reported labels.
pub fn pairwise_scores(table: &CovarianceTable, opts: ScoreOptions) -> PairScores {
    let n = table.len();
    let rows: Vec<Vec<Option<PairScore>>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| pair_score(table, i, j, opts)).collect())
        .collect();
    PairScores {
        n,
        cells: rows.into_iter().flatten().collect(),
    }
}

fn pair_score(table: &CovarianceTable, i: usize, j: usize, opts: ScoreOptions) -> Option<PairScore> {
    let (bi, bj) = (&table.nodes[i], &table.nodes[j]);
    if i == j || bi.len() > bj.len() || bi.is_datum() {
        return None;
    }
    let cross_set = !bi.labels.iter().all(|p| bj.labels.contains(p));
    let (ordering, score, tie) = if bj.is_datum() {
        let o = PhaseOrdering::matching_labels(&bi.labels, &bj.labels).unwrap_or_else(|| PhaseOrdering::identity(bi.len()));
        (o, 0.0, false)
    } else {
        let m = best_match_with(table, i, j, opts.normalize).ok()?;
        let score = if opts.normalize {
            raw_score(table, i, j, &m.ordering, false)
        } else {
            m.score
        };
        (m.ordering, score, m.tie)
    };
    let d = raw_diff(table, i, j, &ordering);
    Some(PairScore {
        ordering,
        score,
        d,
        tie,
        cross_set,
    })
}
