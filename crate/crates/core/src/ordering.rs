use std::fmt;

use crate::error::{Error, Result};
use crate::phase::Phase;

/// Injective assignment of the local channels of one node to the local
/// channels of another: channel `k` of the first maps to `map[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhaseOrdering {
    map: Vec<usize>,
}

impl PhaseOrdering {
    /// Validates injectivity and range against a target of `target_len` channels.
    pub fn new(map: Vec<usize>, target_len: usize) -> Result<Self> {
        if map.is_empty() || map.len() > target_len {
            return Err(Error::InvalidOrdering(format!(
                "cannot map {} channels into {target_len}",
                map.len()
            )));
        }
        let mut seen = [false; 3];
        for &t in &map {
            if t >= target_len || t >= 3 || seen[t] {
                return Err(Error::InvalidOrdering(format!("{map:?} is not injective into {target_len}")));
            }
            seen[t] = true;
        }
        Ok(PhaseOrdering { map })
    }

    pub fn identity(len: usize) -> Self {
        PhaseOrdering { map: (0..len).collect() }
    }

    /// The ordering that sends each source label to the same label in `target`.
    /// `None` when some source label is absent from the target.
    pub fn matching_labels(source: &[Phase], target: &[Phase]) -> Option<Self> {
        let map = source
            .iter()
            .map(|p| target.iter().position(|q| q == p))
            .collect::<Option<Vec<_>>>()?;
        Some(PhaseOrdering { map })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(k, &t)| k == t)
    }

    /// Labels of the source channels given the target's labels.
    pub fn compose(&self, target_labels: &[Phase]) -> Vec<Phase> {
        self.map.iter().map(|&t| target_labels[t]).collect()
    }
}

impl fmt::Display for PhaseOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.map.iter().map(|t| t.to_string()).collect();
        write!(f, "{}", parts.join(""))
    }
}

/// Every injective map from `m` source channels into `n` targets, in
/// lexicographic order.
pub fn all_orderings(m: usize, n: usize) -> Vec<PhaseOrdering> {
    fn extend(prefix: &mut Vec<usize>, m: usize, n: usize, out: &mut Vec<PhaseOrdering>) {
        if prefix.len() == m {
            out.push(PhaseOrdering { map: prefix.clone() });
            return;
        }
        for t in 0..n {
            if !prefix.contains(&t) {
                prefix.push(t);
                extend(prefix, m, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    if m >= 1 && m <= n && n <= 3 {
        extend(&mut Vec::with_capacity(m), m, n, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_sizes_and_order() {
        assert_eq!(all_orderings(1, 3).len(), 3);
        assert_eq!(all_orderings(2, 3).len(), 6);
        assert_eq!(all_orderings(3, 3).len(), 6);
        assert_eq!(all_orderings(2, 2).len(), 2);
        assert!(all_orderings(3, 2).is_empty());
        let o = all_orderings(3, 3);
        assert!(o[0].is_identity());
        assert!(o.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn validation() {
        assert!(PhaseOrdering::new(vec![0, 0], 3).is_err());
        assert!(PhaseOrdering::new(vec![3], 3).is_err());
        assert!(PhaseOrdering::new(vec![0, 1, 2], 2).is_err());
        assert!(PhaseOrdering::new(vec![2, 0], 3).is_ok());
    }

    #[test]
    fn label_matching_and_composition() {
        use Phase::*;
        let o = PhaseOrdering::matching_labels(&[C, A], &[A, B, C]).unwrap();
        assert_eq!(o.as_slice(), &[2, 0]);
        assert_eq!(o.compose(&[A, B, C]), vec![C, A]);
        assert!(PhaseOrdering::matching_labels(&[B], &[A, C]).is_none());
    }
}
