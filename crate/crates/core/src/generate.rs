//! Random radial feeders with a prescribed mix of 3/2/1-phase buses.

use num_complex::Complex64;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{restrict, LineModel, RadialNetwork};
use crate::phase::PhaseSet;

/// Probability that a new bus hangs off the most recently placed eligible
/// bus instead of a uniformly chosen one. Produces feeder-like depth.
const CHAIN_BIAS: f64 = 0.5;

/// Bounds for randomly drawn line impedances (per-unit).
///
/// Diagonal entries are `length * (r + j x)` with `r`, `x` uniform in their
/// bands. Off-diagonal entries are drawn the same way, then scaled by
/// `u / dominance_ratio` with `u` uniform in `off_diag_scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpedanceParams {
    pub r_band: (f64, f64),
    pub x_band: (f64, f64),
    pub length: (f64, f64),
    pub dominance_ratio: f64,
    pub off_diag_scale: (f64, f64),
}

impl Default for ImpedanceParams {
    fn default() -> Self {
        ImpedanceParams {
            r_band: (0.30, 0.40),
            x_band: (0.60, 0.80),
            length: (0.2, 1.0),
            dominance_ratio: 3.0,
            off_diag_scale: (0.5, 1.0),
        }
    }
}

impl ImpedanceParams {
    fn check(&self) -> Result<()> {
        let band_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if !band_ok(self.r_band) || !band_ok(self.x_band) || !band_ok(self.length) || !band_ok(self.off_diag_scale) {
            return Err(Error::InvalidParameter("impedance bands must be positive and ordered".into()));
        }
        // Strict diagonal dominance of every 3x3 draw guarantees invertibility.
        let max_mag = self.r_band.1.hypot(self.x_band.1);
        let min_mag = self.r_band.0.hypot(self.x_band.0);
        let needed = 2.0 * self.off_diag_scale.1 * max_mag / min_mag;
        if !(self.dominance_ratio > needed) {
            return Err(Error::InvalidParameter(format!(
                "dominance_ratio {} must exceed {needed:.3} for these bands",
                self.dominance_ratio
            )));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut impl Rng) -> [[Complex64; 3]; 3] {
        let mut uniform = |(lo, hi): (f64, f64)| if lo == hi { lo } else { rng.random_range(lo..hi) };
        let len = uniform(self.length);
        let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
        for (k, row) in z.iter_mut().enumerate() {
            row[k] = Complex64::new(uniform(self.r_band), uniform(self.x_band)) * len;
        }
        for r in 0..3 {
            for c in r + 1..3 {
                let base = Complex64::new(uniform(self.r_band), uniform(self.x_band));
                let off = base * len * uniform(self.off_diag_scale) / self.dominance_ratio;
                z[r][c] = off;
                z[c][r] = off;
            }
        }
        z
    }
}

/// Phase mixes of the standard IEEE test feeders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeederPreset {
    Ieee13,
    Ieee34,
    Ieee37,
}

impl FeederPreset {
    pub const ALL: [FeederPreset; 3] = [FeederPreset::Ieee13, FeederPreset::Ieee34, FeederPreset::Ieee37];

    /// `(n3, n2, n1)` bus counts.
    pub fn counts(self) -> (usize, usize, usize) {
        match self {
            FeederPreset::Ieee13 => (8, 3, 2),
            FeederPreset::Ieee34 => (26, 0, 8),
            FeederPreset::Ieee37 => (37, 0, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeederPreset::Ieee13 => "ieee13",
            FeederPreset::Ieee34 => "ieee34",
            FeederPreset::Ieee37 => "ieee37",
        }
    }
}

impl std::str::FromStr for FeederPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ieee13" => Ok(FeederPreset::Ieee13),
            "ieee34" => Ok(FeederPreset::Ieee34),
            "ieee37" => Ok(FeederPreset::Ieee37),
            _ => Err(Error::InvalidParameter(format!("unknown preset {s:?}"))),
        }
    }
}

/// Builds a random valid radial network with `n3` three-phase (including the
/// reference, id 0), `n2` two-phase and `n1` single-phase buses.
///
/// Non-reference ids are shuffled so that id order carries no information
/// about depth or phase count.
pub fn random_radial(n3: usize, n2: usize, n1: usize, params: &ImpedanceParams, seed: u64) -> Result<RadialNetwork> {
    if n3 == 0 {
        return Err(Error::InvalidParameter("n3 must be at least 1 (three-phase reference)".into()));
    }
    params.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n3 + n2 + n1;

    // Creation-order nodes: (phases, parent in creation order).
    let mut created: Vec<(PhaseSet, Option<usize>)> = vec![(PhaseSet::ABC, None)];
    for (count, size) in [(n3 - 1, 3), (n2, 2), (n1, 1)] {
        let mut last: Option<usize> = None;
        for _ in 0..count {
            let eligible: Vec<usize> = (0..created.len()).filter(|&k| created[k].0.len() >= size).collect();
            let parent = match last {
                Some(l) if rng.random_bool(CHAIN_BIAS) => l,
                _ => *eligible.choose(&mut rng).expect("reference is always eligible"),
            };
            let pset = created[parent].0;
            let phases = if pset.len() == size {
                pset
            } else {
                *pset.subsets_of_size(size).choose(&mut rng).expect("subset exists")
            };
            created.push((phases, Some(parent)));
            last = Some(created.len() - 1);
        }
    }

    let mut ids: Vec<usize> = (1..n).collect();
    ids.shuffle(&mut rng);
    let mut id_of = vec![0usize; n];
    for (k, &id) in ids.iter().enumerate() {
        id_of[k + 1] = id;
    }

    let mut nodes = vec![PhaseSet::ABC; n];
    let mut edges = Vec::with_capacity(n - 1);
    for (k, &(phases, parent)) in created.iter().enumerate() {
        nodes[id_of[k]] = phases;
        if let Some(p) = parent {
            let full = params.draw(&mut rng);
            edges.push(LineModel::new(id_of[k], id_of[p], phases, restrict(&full, phases)));
        }
    }
    edges.sort_by_key(|e| e.from);
    Ok(RadialNetwork {
        name: format!("random-{n3}-{n2}-{n1}-s{seed}"),
        reference: 0,
        nodes,
        edges,
    })
}

pub fn random_preset(preset: FeederPreset, params: &ImpedanceParams, seed: u64) -> Result<RadialNetwork> {
    let (n3, n2, n1) = preset.counts();
    let mut net = random_radial(n3, n2, n1, params, seed)?;
    net.name = format!("{}-like-s{seed}", preset.name());
    Ok(net)
}
