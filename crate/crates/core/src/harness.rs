//! Error metrics, repeated randomized trials, and parameter sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::{random_preset, random_radial, FeederPreset, ImpedanceParams};
use crate::network::{toynet, RadialNetwork};
use crate::phase::Phase;
use crate::recover::{gpt_from_table, phase_id_known_topology, topology_known_phases};
use crate::simulate::{
    add_noise, sample_injections, to_magnitudes, voltages_with_impedance, BaseInjection, InjectionSpec, Marginal, Mode,
    NoiseSpec, VoltagePanel,
};
use crate::stats::{CovarianceTable, ScoreOptions};

/// `(wrong + missing) / |true|` with edges compared as unordered pairs.
///
/// An estimate sharing no edge with the truth scores `1 + |est| / |true|`,
/// so a completely wrong spanning tree scores 2.
pub fn topology_error(estimate: &[(usize, usize)], truth: &[(usize, usize)]) -> f64 {
    let norm = |e: &[(usize, usize)]| -> BTreeSet<(usize, usize)> { e.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect() };
    let (est, tru) = (norm(estimate), norm(truth));
    if tru.is_empty() {
        return 0.0;
    }
    let wrong = est.difference(&tru).count();
    let missing = tru.difference(&est).count();
    (wrong + missing) as f64 / tru.len() as f64
}

/// Fraction of channels whose label differs, the reference excluded.
pub fn phase_error(
    estimate: &BTreeMap<usize, Vec<Phase>>,
    truth: &BTreeMap<usize, Vec<Phase>>,
    reference: usize,
) -> Result<f64> {
    let keys = |m: &BTreeMap<usize, Vec<Phase>>| m.keys().copied().filter(|&k| k != reference).collect::<Vec<_>>();
    if keys(estimate) != keys(truth) {
        return Err(Error::InvalidParameter("estimated and true phase maps cover different nodes".into()));
    }
    let mut wrong = 0;
    let mut total = 0;
    for (node, t) in truth.iter().filter(|(&k, _)| k != reference) {
        let e = &estimate[node];
        if e.len() != t.len() {
            return Err(Error::InvalidParameter(format!("node {node} has {} estimated labels, {} true", e.len(), t.len())));
        }
        wrong += e.iter().zip(t).filter(|(a, b)| a != b).count();
        total += t.len();
    }
    Ok(if total == 0 { 0.0 } else { wrong as f64 / total as f64 })
}

/// splitmix64 output for `state`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of repetition `trial` under `master`. Each trial then splits its
/// seed into network, injection, noise and scrambling streams.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    splitmix64(splitmix64(master) ^ (trial as u64).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

fn stream(seed: u64, k: u64) -> u64 {
    splitmix64(seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    File(PathBuf),
    Random { n3: usize, n2: usize, n1: usize },
    Preset(FeederPreset),
    Toy,
}

impl NetworkSource {
    /// Fixed networks are reused across trials; random ones are redrawn.
    pub fn build(&self, params: &ImpedanceParams, seed: u64) -> Result<RadialNetwork> {
        match self {
            NetworkSource::File(path) => RadialNetwork::load(path),
            NetworkSource::Random { n3, n2, n1 } => random_radial(*n3, *n2, *n1, params, seed),
            NetworkSource::Preset(p) => random_preset(*p, params, seed),
            NetworkSource::Toy => Ok(toynet()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            NetworkSource::File(p) => p.display().to_string(),
            NetworkSource::Random { n3, n2, n1 } => format!("random-{n3}-{n2}-{n1}"),
            NetworkSource::Preset(p) => p.name().to_string(),
            NetworkSource::Toy => "toynet".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Phases and topology both unknown.
    #[default]
    Joint,
    /// Topology known, phases recovered.
    Phase,
    /// Phases known, topology recovered.
    Topology,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Variant::Joint),
            "phase" => Ok(Variant::Phase),
            "topology" => Ok(Variant::Topology),
            _ => Err(Error::InvalidParameter(format!("unknown variant {s:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Joint => "joint",
            Variant::Phase => "phase",
            Variant::Topology => "topology",
        })
    }
}

/// One experimental cell, repeated `trials` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub network: NetworkSource,
    #[serde(default)]
    pub impedance: ImpedanceParams,
    pub samples: usize,
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_s2")]
    pub s2: f64,
    /// Real constant injection added to every channel. Magnitude panels need
    /// a nonzero operating point to carry the fluctuations linearly.
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Shuffle the channel order at every node not fed directly by the reference.
    #[serde(default = "default_true")]
    pub scramble: bool,
    #[serde(default)]
    pub marginal: Marginal,
    #[serde(default)]
    pub scores: ScoreOptions,
}

fn default_s2() -> f64 {
    1.0
}
fn default_base() -> f64 {
    10.0
}
fn default_mode() -> Mode {
    Mode::Phasor
}
fn default_trials() -> usize {
    30
}
fn default_true() -> bool {
    true
}

impl TrialConfig {
    pub fn new(network: NetworkSource, samples: usize) -> Self {
        TrialConfig {
            network,
            impedance: ImpedanceParams::default(),
            samples,
            noise: 0.0,
            epsilon: 0.0,
            s2: default_s2(),
            base: default_base(),
            mode: Mode::Phasor,
            variant: Variant::Joint,
            seed: 0,
            trials: default_trials(),
            scramble: true,
            marginal: Marginal::Gaussian,
            scores: ScoreOptions::default(),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::InvalidParameter("samples must be at least 2".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        self.injection_spec().check()
    }

    pub fn injection_spec(&self) -> InjectionSpec {
        InjectionSpec {
            s2: self.s2,
            epsilon: self.epsilon,
            base: if self.base == 0.0 {
                BaseInjection::None
            } else {
                BaseInjection::Uniform(Complex64::new(self.base, 0.0))
            },
            per_node_variance: BTreeMap::new(),
            marginal: self.marginal,
        }
    }
}

/// A simulated measurement with its ground truth.
#[derive(Clone, Debug)]
pub struct TrialData {
    pub net: RadialNetwork,
    pub panel: VoltagePanel,
    /// True global label of each local panel channel, per node (reference included).
    pub truth: BTreeMap<usize, Vec<Phase>>,
}

/// Network, panel and ground truth for one repetition.
pub fn prepare_trial(cfg: &TrialConfig, trial: usize) -> Result<TrialData> {
    let seed = trial_seed(cfg.seed, trial);
    let net = cfg.network.build(&cfg.impedance, stream(seed, 0))?;
    let z = crate::admittance::impedance_by_paths(&net)?;
    let inj = sample_injections(&net, &cfg.injection_spec(), cfg.samples, stream(seed, 1))?;
    let mut panel = voltages_with_impedance(&z, &inj);
    if cfg.mode == Mode::Magnitude {
        panel = to_magnitudes(&panel)?;
    }
    panel = add_noise(
        &panel,
        &NoiseSpec {
            level: cfg.noise,
            seed: stream(seed, 2),
        },
    )?;
    panel.meta.seed = Some(cfg.seed);

    let truth = if cfg.scramble && cfg.variant != Variant::Topology {
        scramble_panel(&net, &mut panel, stream(seed, 3))?
    } else {
        net.phase_labels().into_iter().enumerate().collect()
    };
    Ok(TrialData { net, panel, truth })
}

/// Shuffles the channel order of every node not fed directly by the
/// reference and returns each node's true labels in the new local order.
/// Nodes on the reference's own lines keep their order: their voltages carry
/// no information about how they connect to the reference phases.
pub fn scramble_panel(net: &RadialNetwork, panel: &mut VoltagePanel, seed: u64) -> Result<BTreeMap<usize, Vec<Phase>>> {
    let tree = net.tree()?;
    let mut truth: BTreeMap<usize, Vec<Phase>> = net.phase_labels().into_iter().enumerate().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for node in 0..net.len() {
        if node == net.reference || tree.parent[node] == Some(net.reference) {
            continue;
        }
        let mut perm: Vec<usize> = (0..net.phases(node).len()).collect();
        perm.shuffle(&mut rng);
        truth.insert(node, panel.scramble_node(node, &perm)?);
    }
    Ok(truth)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub topology_error: f64,
    pub phase_error: f64,
    /// Seconds spent on statistics and recovery.
    pub wall_time: f64,
}

/// Recovers one prepared trial and scores it.
pub fn evaluate_trial(cfg: &TrialConfig, data: &TrialData, trial: usize) -> Result<TrialOutcome> {
    let start = Instant::now();
    let counts = data.net.phase_counts();
    let table = CovarianceTable::from_panel(&data.panel, &counts)?;
    let truth_edges = data.net.tree()?.undirected_edges();
    let (topo, phase) = match cfg.variant {
        Variant::Joint => {
            let r = gpt_from_table(&table, cfg.scores)?;
            (
                topology_error(&r.edges, &truth_edges),
                phase_error(&r.phases, &data.truth, data.net.reference)?,
            )
        }
        Variant::Phase => {
            let p = phase_id_known_topology(&table, &truth_edges, data.net.reference)?;
            (0.0, phase_error(&p, &data.truth, data.net.reference)?)
        }
        Variant::Topology => {
            let r = topology_known_phases(&table)?;
            (topology_error(&r.edges, &truth_edges), 0.0)
        }
    };
    Ok(TrialOutcome {
        trial,
        seed: trial_seed(cfg.seed, trial),
        topology_error: topo,
        phase_error: phase,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

pub fn run_trial(cfg: &TrialConfig, trial: usize) -> Result<TrialOutcome> {
    let data = prepare_trial(cfg, trial)?;
    evaluate_trial(cfg, &data, trial)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

impl Summary {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        let xs: Vec<f64> = xs.into_iter().collect();
        if xs.is_empty() {
            return Summary::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialReport {
    pub trials: Vec<TrialOutcome>,
    pub topology_error: Summary,
    pub phase_error: Summary,
    pub wall_time: Summary,
}

impl TrialReport {
    pub fn from_outcomes(trials: Vec<TrialOutcome>) -> Self {
        TrialReport {
            topology_error: Summary::of(trials.iter().map(|t| t.topology_error)),
            phase_error: Summary::of(trials.iter().map(|t| t.phase_error)),
            wall_time: Summary::of(trials.iter().map(|t| t.wall_time)),
            trials,
        }
    }
}

/// All repetitions of a cell, evaluated in parallel and reported in trial order.
pub fn run_trials(cfg: &TrialConfig) -> Result<TrialReport> {
    cfg.check()?;
    let outcomes: Vec<Result<TrialOutcome>> = (0..cfg.trials).into_par_iter().map(|k| run_trial(cfg, k)).collect();
    let trials = outcomes
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            r.map_err(|e| Error::Trial {
                trial: k,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialReport::from_outcomes(trials))
}

/// Grid of cells sharing everything but samples, noise, epsilon and mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub network: NetworkSource,
    #[serde(default)]
    pub impedance: ImpedanceParams,
    pub samples: Vec<usize>,
    #[serde(default = "zero_grid")]
    pub noise: Vec<f64>,
    #[serde(default = "zero_grid")]
    pub epsilon: Vec<f64>,
    #[serde(default = "mode_grid")]
    pub mode: Vec<Mode>,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_s2")]
    pub s2: f64,
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default = "default_true")]
    pub scramble: bool,
    #[serde(default)]
    pub marginal: Marginal,
    #[serde(default)]
    pub scores: ScoreOptions,
}

fn zero_grid() -> Vec<f64> {
    vec![0.0]
}
fn mode_grid() -> Vec<Mode> {
    vec![Mode::Phasor]
}

impl SweepConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    /// Cells in `(samples, noise, epsilon, mode)` nesting order.
    pub fn cells(&self) -> Vec<TrialConfig> {
        let mut out = Vec::new();
        for &samples in &self.samples {
            for &noise in &self.noise {
                for &epsilon in &self.epsilon {
                    for &mode in &self.mode {
                        out.push(TrialConfig {
                            network: self.network.clone(),
                            impedance: self.impedance.clone(),
                            samples,
                            noise,
                            epsilon,
                            s2: self.s2,
                            base: self.base,
                            mode,
                            variant: self.variant,
                            seed: self.seed,
                            trials: self.trials,
                            scramble: self.scramble,
                            marginal: self.marginal,
                            scores: self.scores,
                        });
                    }
                }
            }
        }
        out
    }
}

/// One CSV line of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: usize,
    pub trial: usize,
    pub network: String,
    pub samples: usize,
    pub noise: f64,
    pub epsilon: f64,
    pub mode: Mode,
    pub variant: Variant,
    pub seed: u64,
    pub topology_error: f64,
    pub phase_error: f64,
    pub wall_time: f64,
}

/// Runs every trial of every cell; rows come out ordered by `(cell, trial)`.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let cells = cfg.cells();
    if cells.is_empty() {
        return Err(Error::InvalidParameter("sweep grid is empty".into()));
    }
    for c in &cells {
        c.check()?;
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.trials).map(move |t| (c, t))).collect();
    let results: Vec<Result<TrialOutcome>> = jobs.par_iter().map(|&(c, t)| run_trial(&cells[c], t)).collect();
    jobs.iter()
        .zip(results)
        .map(|(&(c, t), r)| {
            let o = r.map_err(|e| Error::Trial {
                trial: t,
                source: Box::new(e),
            })?;
            let cell = &cells[c];
            Ok(SweepRow {
                cell: c,
                trial: t,
                network: cell.network.label(),
                samples: cell.samples,
                noise: cell.noise,
                epsilon: cell.epsilon,
                mode: cell.mode,
                variant: cell.variant,
                seed: o.seed,
                topology_error: o.topology_error,
                phase_error: o.phase_error,
                wall_time: o.wall_time,
            })
        })
        .collect()
}

/// Writes sweep rows as CSV. Without `timing` the wall-time column is left
/// empty so that reruns are byte-identical.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], timing: bool, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "cell",
        "trial",
        "network",
        "samples",
        "noise",
        "epsilon",
        "mode",
        "variant",
        "seed",
        "topology_error",
        "phase_error",
        "wall_time",
    ])?;
    for r in rows {
        wtr.write_record([
            r.cell.to_string(),
            r.trial.to_string(),
            r.network.clone(),
            r.samples.to_string(),
            r.noise.to_string(),
            r.epsilon.to_string(),
            r.mode.to_string(),
            r.variant.to_string(),
            r.seed.to_string(),
            r.topology_error.to_string(),
            r.phase_error.to_string(),
            if timing { r.wall_time.to_string() } else { String::new() },
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
