use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One conductor of a three-phase system. Ordered `A < B < C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        Phase::ALL.get(i).copied()
    }

    pub fn as_char(self) -> char {
        match self {
            Phase::A => 'a',
            Phase::B => 'b',
            Phase::C => 'c',
        }
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Non-empty subset of `{a, b, c}`, iterated in canonical order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn new(phases: impl IntoIterator<Item = Phase>) -> Result<PhaseSet> {
        let mut bits = 0u8;
        for p in phases {
            let bit = 1 << p.index();
            if bits & bit != 0 {
                return Err(Error::InvalidParameter(format!("duplicate phase {p}")));
            }
            bits |= bit;
        }
        if bits == 0 {
            return Err(Error::InvalidParameter("empty phase set".into()));
        }
        Ok(PhaseSet(bits))
    }

    pub fn single(p: Phase) -> PhaseSet {
        PhaseSet(1 << p.index())
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    pub fn to_vec(self) -> Vec<Phase> {
        self.iter().collect()
    }

    /// Position of `p` in the canonical order of this set.
    pub fn position(self, p: Phase) -> Option<usize> {
        self.iter().position(|q| q == p)
    }

    /// All subsets of the given size, in lexicographic order.
    pub fn subsets_of_size(self, k: usize) -> Vec<PhaseSet> {
        (1u8..8)
            .map(PhaseSet)
            .filter(|s| s.len() == k && s.is_subset(self))
            .collect()
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhaseSet({self})")
    }
}

impl FromStr for PhaseSet {
    type Err = Error;

    /// Accepts only canonically sorted strings such as `"ac"`.
    fn from_str(s: &str) -> Result<Self> {
        let phases = parse_labels(s)?;
        if phases.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format(format!("phase set {s:?} is not canonically sorted")));
        }
        PhaseSet::new(phases)
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a label string like `"acb"` into phases, keeping the given order.
pub fn parse_labels(s: &str) -> Result<Vec<Phase>> {
    s.chars()
        .map(|c| Phase::from_char(c).ok_or_else(|| Error::Format(format!("bad phase {c:?} in {s:?}"))))
        .collect()
}

pub fn format_labels(labels: &[Phase]) -> String {
    labels.iter().map(|p| p.as_char()).collect()
}
