//! Matrices of the linearised multi-phase network model.
//!
//! Channel order everywhere is nodes ascending by id with phases in
//! canonical order inside each node; edge-phase columns follow the stored
//! edge order the same way. The reduced matrices drop the three reference
//! channels.
//!
//! Incidence columns are oriented away from the reference: `+1` on the
//! parent end, `-1` on the child end. With this sign the path matrix `B`
//! (entries `-1` on a node's root path) is an exact left inverse of the
//! reduced incidence, `Bᵀ·A_red = I`.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};
use crate::network::{RadialNetwork, TreeView};
use crate::phase::{Phase, PhaseSet};

/// Offsets of each item's phase block inside a flattened channel vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockIndex {
    offsets: Vec<Option<(usize, usize)>>,
    channels: Vec<(usize, Phase)>,
}

impl BlockIndex {
    /// Blocks for items with `Some(phases)`; `None` items get no channels.
    pub fn from_sets(sets: impl IntoIterator<Item = Option<PhaseSet>>) -> Self {
        let mut offsets = Vec::new();
        let mut channels = Vec::new();
        for (item, set) in sets.into_iter().enumerate() {
            match set {
                Some(s) => {
                    offsets.push(Some((channels.len(), s.len())));
                    channels.extend(s.iter().map(|p| (item, p)));
                }
                None => offsets.push(None),
            }
        }
        BlockIndex { offsets, channels }
    }

    /// All node channels.
    pub fn full(net: &RadialNetwork) -> Self {
        Self::from_sets(net.nodes.iter().map(|&p| Some(p)))
    }

    /// Node channels without the reference.
    pub fn reduced(net: &RadialNetwork) -> Self {
        Self::from_sets(
            net.nodes
                .iter()
                .enumerate()
                .map(|(k, &p)| (k != net.reference).then_some(p)),
        )
    }

    /// Edge-phase channels in stored edge order.
    pub fn edges(net: &RadialNetwork) -> Self {
        Self::from_sets(net.edges.iter().map(|e| Some(e.phases)))
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn items(&self) -> usize {
        self.offsets.len()
    }

    pub fn block(&self, item: usize) -> Option<Range<usize>> {
        self.offsets
            .get(item)
            .copied()
            .flatten()
            .map(|(s, l)| s..s + l)
    }

    pub fn channel(&self, item: usize, phase: Phase) -> Option<usize> {
        self.block(item)?.find(|&k| self.channels[k].1 == phase)
    }

    /// `(item, phase)` for each flattened position.
    pub fn channels(&self) -> &[(usize, Phase)] {
        &self.channels
    }
}

/// Signed node-phase × edge-phase incidence matrix.
pub fn build_incidence(net: &RadialNetwork) -> Result<(DMatrix<i32>, BlockIndex)> {
    net.tree()?;
    let nodes = BlockIndex::full(net);
    let edges = BlockIndex::edges(net);
    let mut a = DMatrix::<i32>::zeros(nodes.len(), edges.len());
    for (k, e) in net.edges.iter().enumerate() {
        for p in e.phases.iter() {
            let col = edges.channel(k, p).expect("edge phase");
            a[(nodes.channel(e.to, p).expect("parent carries phase"), col)] = 1;
            a[(nodes.channel(e.from, p).expect("child carries phase"), col)] = -1;
        }
    }
    Ok((a, nodes))
}

/// Block-diagonal matrix of line admittances `Y_ij = Z_ij⁻¹`.
pub fn build_line_admittances(net: &RadialNetwork) -> Result<CMatrix> {
    let edges = BlockIndex::edges(net);
    let mut d = CMatrix::zeros(edges.len(), edges.len());
    for (k, e) in net.edges.iter().enumerate() {
        let y = linalg::invert(&e.z).map_err(|_| Error::SingularLine { from: e.from, to: e.to })?;
        let r = edges.block(k).unwrap();
        d.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&y);
    }
    Ok(d)
}

/// Block-diagonal matrix of line impedances, the inverse of the line
/// admittance matrix.
pub fn build_line_impedances(net: &RadialNetwork) -> CMatrix {
    let edges = BlockIndex::edges(net);
    let mut d = CMatrix::zeros(edges.len(), edges.len());
    for (k, e) in net.edges.iter().enumerate() {
        let r = edges.block(k).unwrap();
        d.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&e.z);
    }
    d
}

/// Full multi-phase admittance matrix stamped line by line: off-diagonal
/// block `(i, j)` is `-Y_ij` on shared phases, diagonal block `i` sums the
/// admittances of incident lines. Phases a line does not carry stay zero.
pub fn build_admittance(net: &RadialNetwork) -> Result<(CMatrix, BlockIndex)> {
    net.tree()?;
    let index = BlockIndex::full(net);
    let mut y = CMatrix::zeros(index.len(), index.len());
    for e in &net.edges {
        let ye = linalg::invert(&e.z).map_err(|_| Error::SingularLine { from: e.from, to: e.to })?;
        for (r, pr) in e.phases.iter().enumerate() {
            for (c, pc) in e.phases.iter().enumerate() {
                let v = ye[(r, c)];
                let (fr, fc) = (index.channel(e.from, pr).unwrap(), index.channel(e.from, pc).unwrap());
                let (tr, tc) = (index.channel(e.to, pr).unwrap(), index.channel(e.to, pc).unwrap());
                y[(fr, fc)] += v;
                y[(tr, tc)] += v;
                y[(fr, tc)] -= v;
                y[(tr, fc)] -= v;
            }
        }
    }
    Ok((y, index))
}

/// Deletes the reference rows and columns.
pub fn reduce(full: &CMatrix, net: &RadialNetwork) -> (CMatrix, BlockIndex) {
    let full_index = BlockIndex::full(net);
    let reduced = BlockIndex::reduced(net);
    let keep: Vec<usize> = reduced
        .channels()
        .iter()
        .map(|&(n, p)| full_index.channel(n, p).unwrap())
        .collect();
    let m = CMatrix::from_fn(keep.len(), keep.len(), |r, c| full[(keep[r], keep[c])]);
    (m, reduced)
}

/// Incidence matrix with the reference rows deleted.
pub fn reduced_incidence(net: &RadialNetwork) -> Result<DMatrix<i32>> {
    let (a, full_index) = build_incidence(net)?;
    let reduced = BlockIndex::reduced(net);
    let rows: Vec<usize> = reduced
        .channels()
        .iter()
        .map(|&(n, p)| full_index.channel(n, p).unwrap())
        .collect();
    Ok(DMatrix::from_fn(rows.len(), a.ncols(), |r, c| a[(rows[r], c)]))
}

/// Path matrix: `-1` at (node `i` phase φ, edge `kl` phase φ) when `kl`
/// lies on the root path of `i`, zero elsewhere. Rows follow the reduced
/// index.
pub fn build_b(net: &RadialNetwork) -> Result<DMatrix<i32>> {
    let tree = net.tree()?;
    let reduced = BlockIndex::reduced(net);
    let edges = BlockIndex::edges(net);
    let mut b = DMatrix::<i32>::zeros(reduced.len(), edges.len());
    for (row, &(node, phase)) in reduced.channels().iter().enumerate() {
        for e in tree.path_edges(node) {
            if let Some(col) = edges.channel(e, phase) {
                b[(row, col)] = -1;
            }
        }
    }
    Ok(b)
}

/// Reduced impedance matrix from shared root paths: entry `(iφ, jψ)` sums
/// `Z_kl[φ, ψ]` over lines on both root paths.
pub fn impedance_by_paths(net: &RadialNetwork) -> Result<CMatrix> {
    let tree = net.tree()?;
    Ok(paths_with_tree(net, &tree))
}

fn paths_with_tree(net: &RadialNetwork, tree: &TreeView) -> CMatrix {
    let reduced = BlockIndex::reduced(net);
    let n = net.len();
    let paths: Vec<Vec<usize>> = (0..n).map(|k| tree.path_edges(k)).collect();
    let mut on_path = vec![false; net.edges.len()];
    let mut z = CMatrix::zeros(reduced.len(), reduced.len());
    for i in (0..n).filter(|&k| k != net.reference) {
        for &e in &paths[i] {
            on_path[e] = true;
        }
        let bi = reduced.block(i).unwrap();
        for j in (0..n).filter(|&k| k != net.reference) {
            let bj = reduced.block(j).unwrap();
            for r in bi.clone() {
                let pr = reduced.channels()[r].1;
                for c in bj.clone() {
                    let pc = reduced.channels()[c].1;
                    z[(r, c)] = paths[j]
                        .iter()
                        .filter(|&&e| on_path[e])
                        .map(|&e| net.edges[e].z_entry(pr, pc))
                        .sum();
                }
            }
        }
        for &e in &paths[i] {
            on_path[e] = false;
        }
    }
    z
}

/// Reduced impedance matrix as the numeric inverse of the reduced admittance.
pub fn impedance_by_inverse(net: &RadialNetwork) -> Result<CMatrix> {
    let (y, _) = build_admittance(net)?;
    let (y_red, _) = reduce(&y, net);
    linalg::invert(&y_red)
}

/// Reduced impedance matrix as `B · D⁻¹ · Bᵀ`.
pub fn impedance_by_factors(net: &RadialNetwork) -> Result<CMatrix> {
    let b = linalg::to_complex(&build_b(net)?);
    let d_inv = build_line_impedances(net);
    Ok(&b * d_inv * b.transpose())
}

/// Root-path impedance of every node, zero-padded to 3×3 by phase index.
#[derive(Clone, Debug)]
pub struct PathImpedance {
    pub per_node: Vec<[[Complex64; 3]; 3]>,
}

impl PathImpedance {
    pub fn get(&self, node: usize, row: Phase, col: Phase) -> Complex64 {
        self.per_node[node][row.index()][col.index()]
    }
}

/// Accumulates line impedances from the root outward.
pub fn path_impedances(net: &RadialNetwork) -> Result<PathImpedance> {
    let tree = net.tree()?;
    let zero = [[Complex64::new(0.0, 0.0); 3]; 3];
    let mut per_node = vec![zero; net.len()];
    for &u in &tree.order {
        if let (Some(p), Some(e)) = (tree.parent[u], tree.parent_edge[u]) {
            let line = net.edges[e].z_padded();
            let mut acc = per_node[p];
            for r in 0..3 {
                for c in 0..3 {
                    acc[r][c] += line[r][c];
                }
            }
            per_node[u] = acc;
        }
    }
    Ok(PathImpedance { per_node })
}

/// Every matrix of the linearised model for one network.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub a_hat: DMatrix<i32>,
    pub d_hat: CMatrix,
    pub y_hat: CMatrix,
    pub y_red: CMatrix,
    pub b: DMatrix<i32>,
    pub z_red: CMatrix,
    pub index: BlockIndex,
    pub reduced: BlockIndex,
    pub edge_index: BlockIndex,
}

impl SystemMatrices {
    /// Builds all matrices; `z_red` comes from the path-sum formula.
    pub fn build(net: &RadialNetwork) -> Result<Self> {
        let tree = net.tree()?;
        let (a_hat, index) = build_incidence(net)?;
        let d_hat = build_line_admittances(net)?;
        let (y_hat, _) = build_admittance(net)?;
        let (y_red, reduced) = reduce(&y_hat, net);
        Ok(SystemMatrices {
            a_hat,
            d_hat,
            y_hat,
            y_red,
            b: build_b(net)?,
            z_red: paths_with_tree(net, &tree),
            index,
            reduced,
            edge_index: BlockIndex::edges(net),
        })
    }
}
