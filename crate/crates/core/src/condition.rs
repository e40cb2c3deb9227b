//! Check that line impedances favour matched phases.
//!
//! For every ordered pair of lines `(st, kl)` and every nodal phase set `M`
//! carried by both lines, the identity assignment of `M` onto the rows of
//! `kl` must strictly maximise `Re[vec(Z_st[M, :])ᴴ vec(Z_kl[O(M), :])]`
//! over all injective `O` into the phases of `kl`. Line matrices are
//! zero-padded to 3×3 so the column ranges agree.

use std::collections::BTreeSet;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{impedance_violations, RadialNetwork, Violation};
use crate::ordering::all_orderings;
use crate::phase::{format_labels, Phase, PhaseSet};

/// Relative slack under which a competing ordering counts as a tie.
const TIE_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionViolation {
    /// `(from, to)` of the first line.
    pub st: (usize, usize),
    /// `(from, to)` of the second line.
    pub kl: (usize, usize),
    pub rows: PhaseSet,
    /// Labels of `kl` that the rows were mapped onto.
    pub ordering: String,
    /// Identity score minus offending score; `<= 0` by construction.
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub violations: Vec<ConditionViolation>,
}

fn score(zst: &[[Complex64; 3]; 3], zkl: &[[Complex64; 3]; 3], rows: &[Phase], mapped: &[Phase]) -> f64 {
    let mut acc = 0.0;
    for (r, m) in rows.iter().zip(mapped) {
        for c in 0..3 {
            acc += (zst[r.index()][c].conj() * zkl[m.index()][c]).re;
        }
    }
    acc
}

pub fn check_line_condition(net: &RadialNetwork) -> Result<ConditionReport> {
    net.tree()?;
    for (k, e) in net.edges.iter().enumerate() {
        let bad: Vec<Violation> = impedance_violations(k, &e.z)
            .into_iter()
            .filter(|v| !matches!(v, Violation::SingularImpedance { .. }))
            .collect();
        if let Some(v) = bad.first() {
            return Err(Error::BadImpedance {
                from: e.from,
                to: e.to,
                reason: v.to_string(),
            });
        }
    }

    let sets: BTreeSet<PhaseSet> = net.nodes.iter().copied().collect();
    let padded: Vec<_> = net.edges.iter().map(|e| e.z_padded()).collect();
    let mut violations = Vec::new();

    for (a, st) in net.edges.iter().enumerate() {
        for (b, kl) in net.edges.iter().enumerate() {
            let shared_bits = PhaseSet::new(st.phases.iter().filter(|p| kl.phases.contains(*p)));
            let Ok(shared) = shared_bits else { continue };
            let kl_labels = kl.phases.to_vec();
            for &rows in sets.iter().filter(|m| m.is_subset(shared)) {
                let row_labels = rows.to_vec();
                let orderings = all_orderings(rows.len(), kl_labels.len());
                let id = score(&padded[a], &padded[b], &row_labels, &row_labels);
                let scale = id.abs().max(f64::MIN_POSITIVE);
                for o in &orderings {
                    let mapped = o.compose(&kl_labels);
                    if mapped == row_labels {
                        continue;
                    }
                    let s = score(&padded[a], &padded[b], &row_labels, &mapped);
                    if s >= id - TIE_RTOL * scale {
                        violations.push(ConditionViolation {
                            st: (st.from, st.to),
                            kl: (kl.from, kl.to),
                            rows,
                            ordering: format_labels(&mapped),
                            gap: id - s,
                        });
                    }
                }
            }
        }
    }
    Ok(ConditionReport {
        holds: violations.is_empty(),
        violations,
    })
}
