//! Synthetic measurement panels: random current injections mapped through
//! the reduced impedance matrix, optional white noise, and magnitudes.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::admittance::{impedance_by_paths, BlockIndex};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::network::RadialNetwork;
use crate::phase::Phase;

/// Reporting rate of distribution PMUs.
pub const PMU_RATE_HZ: f64 = 120.0;

/// Marginal law of the unit-variance innovations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Marginal {
    #[default]
    Gaussian,
    /// Heavier tailed; same variance.
    Laplace,
}

impl Marginal {
    fn draw(self, rng: &mut impl Rng) -> f64 {
        match self {
            Marginal::Gaussian => StandardNormal.sample(rng),
            Marginal::Laplace => {
                let u: f64 = rng.random_range(-0.5..0.5);
                -u.signum() * (1.0 - 2.0 * u.abs()).ln() / std::f64::consts::SQRT_2
            }
        }
    }
}

/// Constant mean added to every injection sample.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseInjection {
    #[default]
    None,
    Uniform(Complex64),
    PerChannel(Vec<Complex64>),
}

/// Statistics of the nodal current injections.
///
/// Fluctuations are circular: the complex covariance across channels is
/// `s2 * ((1 - epsilon) I + epsilon 11ᵀ)`, split evenly between real and
/// imaginary parts. `per_node_variance` replaces `s2` for all channels of a
/// node and keeps the correlation structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InjectionSpec {
    pub s2: f64,
    pub epsilon: f64,
    pub base: BaseInjection,
    pub per_node_variance: BTreeMap<usize, f64>,
    pub marginal: Marginal,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        InjectionSpec {
            s2: 1.0,
            epsilon: 0.0,
            base: BaseInjection::None,
            per_node_variance: BTreeMap::new(),
            marginal: Marginal::Gaussian,
        }
    }
}

impl InjectionSpec {
    pub fn check(&self) -> Result<()> {
        if !(self.s2 > 0.0 && self.s2.is_finite()) {
            return Err(Error::InvalidParameter(format!("s2 must be positive, got {}", self.s2)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1), got {}", self.epsilon)));
        }
        if let Some((n, v)) = self.per_node_variance.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!("variance override for node {n} must be positive, got {v}")));
        }
        Ok(())
    }

    /// Injection variance of every channel in `index` order.
    pub fn channel_variances(&self, index: &BlockIndex) -> Vec<f64> {
        index
            .channels()
            .iter()
            .map(|(node, _)| self.per_node_variance.get(node).copied().unwrap_or(self.s2))
            .collect()
    }

    fn base_for(&self, channels: usize) -> Result<Vec<Complex64>> {
        match &self.base {
            BaseInjection::None => Ok(vec![Complex64::new(0.0, 0.0); channels]),
            BaseInjection::Uniform(b) => Ok(vec![*b; channels]),
            BaseInjection::PerChannel(v) if v.len() == channels => Ok(v.clone()),
            BaseInjection::PerChannel(v) => Err(Error::LengthMismatch {
                left: v.len(),
                right: channels,
            }),
        }
    }
}

/// Injection time series, one column per reduced channel.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionPanel {
    pub channels: Vec<(usize, Phase)>,
    pub samples: CMatrix,
}

pub fn sample_injections(net: &RadialNetwork, spec: &InjectionSpec, samples: usize, seed: u64) -> Result<InjectionPanel> {
    spec.check()?;
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    net.tree()?;
    let index = BlockIndex::reduced(net);
    let n = index.len();
    let base = spec.base_for(n)?;
    let sd: Vec<f64> = spec.channel_variances(&index).iter().map(|v| (v / 2.0).sqrt()).collect();
    let own = (1.0 - spec.epsilon).sqrt();
    let shared = spec.epsilon.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CMatrix::zeros(samples, n);
    for t in 0..samples {
        let (wr, wi) = if spec.epsilon > 0.0 {
            (spec.marginal.draw(&mut rng), spec.marginal.draw(&mut rng))
        } else {
            (0.0, 0.0)
        };
        for c in 0..n {
            let zr = spec.marginal.draw(&mut rng);
            let zi = spec.marginal.draw(&mut rng);
            out[(t, c)] = base[c] + Complex64::new(own * zr + shared * wr, own * zi + shared * wi) * sd[c];
        }
    }
    Ok(InjectionPanel {
        channels: index.channels().to_vec(),
        samples: out,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Phasor,
    Magnitude,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phasor" => Ok(Mode::Phasor),
            "magnitude" => Ok(Mode::Magnitude),
            _ => Err(Error::InvalidParameter(format!("unknown mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Phasor => "phasor",
            Mode::Magnitude => "magnitude",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Samples {
    Phasor(CMatrix),
    Magnitude(DMatrix<f64>),
}

impl Samples {
    pub fn nrows(&self) -> usize {
        match self {
            Samples::Phasor(m) => m.nrows(),
            Samples::Magnitude(m) => m.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Samples::Phasor(m) => m.ncols(),
            Samples::Magnitude(m) => m.ncols(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub seed: Option<u64>,
    pub noise_level: f64,
}

/// Voltage measurements, one column per `(node, phase)` channel.
///
/// Phasor samples are voltage differences to the matching reference phase.
/// The `phase` of a channel is its reported label; recovery only uses the
/// node grouping and the column order within a node.
#[derive(Clone, Debug, PartialEq)]
pub struct VoltagePanel {
    pub channels: Vec<(usize, Phase)>,
    pub samples: Samples,
    pub rate_hz: f64,
    pub meta: PanelMeta,
}

impl VoltagePanel {
    pub fn mode(&self) -> Mode {
        match self.samples {
            Samples::Phasor(_) => Mode::Phasor,
            Samples::Magnitude(_) => Mode::Magnitude,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column indices of each node's channels, in panel order.
    pub fn node_columns(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, &(node, _)) in self.channels.iter().enumerate() {
            out.entry(node).or_default().push(k);
        }
        out
    }

    /// Reported labels of each node's channels, in panel order.
    pub fn node_labels(&self) -> BTreeMap<usize, Vec<Phase>> {
        let mut out: BTreeMap<usize, Vec<Phase>> = BTreeMap::new();
        for &(node, phase) in &self.channels {
            out.entry(node).or_default().push(phase);
        }
        out
    }

    /// Permutes the data columns of `node` so local channel `k` now carries
    /// what was local channel `perm[k]`; labels stay put. Returns the true
    /// phase of each local channel afterwards.
    pub fn scramble_node(&mut self, node: usize, perm: &[usize]) -> Result<Vec<Phase>> {
        let cols = self.node_columns().remove(&node).unwrap_or_default();
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        if cols.is_empty() || sorted != (0..cols.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidOrdering(format!("{perm:?} is not a permutation of node {node}'s channels")));
        }
        let truth: Vec<Phase> = perm.iter().map(|&p| self.channels[cols[p]].1).collect();
        match &mut self.samples {
            Samples::Phasor(m) => {
                let old: Vec<_> = cols.iter().map(|&c| m.column(c).clone_owned()).collect();
                for (k, &c) in cols.iter().enumerate() {
                    m.set_column(c, &old[perm[k]]);
                }
            }
            Samples::Magnitude(m) => {
                let old: Vec<_> = cols.iter().map(|&c| m.column(c).clone_owned()).collect();
                for (k, &c) in cols.iter().enumerate() {
                    m.set_column(c, &old[perm[k]]);
                }
            }
        }
        Ok(truth)
    }
}

/// `V = Z_red · I` for every sample, with `Z_red` from the path formula.
pub fn voltages_from_injections(net: &RadialNetwork, injections: &InjectionPanel) -> Result<VoltagePanel> {
    let z = impedance_by_paths(net)?;
    let index = BlockIndex::reduced(net);
    if injections.channels != index.channels() {
        return Err(Error::InvalidParameter("injection channels do not match the reduced index".into()));
    }
    Ok(voltages_with_impedance(&z, injections))
}

/// Applies a precomputed reduced impedance matrix to an injection panel.
pub fn voltages_with_impedance(z_red: &CMatrix, injections: &InjectionPanel) -> VoltagePanel {
    // Complex product through four real products so the blocked real kernel is used.
    let i = &injections.samples;
    let (ir, ii) = (i.map(|c| c.re), i.map(|c| c.im));
    let zt = z_red.transpose();
    let (zr, zi) = (zt.map(|c| c.re), zt.map(|c| c.im));
    let vr = &ir * &zr - &ii * &zi;
    let vi = &ir * &zi + &ii * &zr;
    let v = CMatrix::from_fn(vr.nrows(), vr.ncols(), |r, c| Complex64::new(vr[(r, c)], vi[(r, c)]));
    VoltagePanel {
        channels: injections.channels.clone(),
        samples: Samples::Phasor(v),
        rate_hz: PMU_RATE_HZ,
        meta: PanelMeta::default(),
    }
}

/// White measurement noise as a multiple of each channel's variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub level: f64,
    pub seed: u64,
}

fn column_variance_c(m: &CMatrix, c: usize) -> f64 {
    let col = m.column(c);
    let n = col.len() as f64;
    let mean = col.iter().sum::<Complex64>() / n;
    col.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / (n - 1.0)
}

fn column_variance_r(m: &DMatrix<f64>, c: usize) -> f64 {
    let col = m.column(c);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

pub fn add_noise(panel: &VoltagePanel, noise: &NoiseSpec) -> Result<VoltagePanel> {
    if !(noise.level >= 0.0 && noise.level.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise level must be >= 0, got {}", noise.level)));
    }
    if panel.len() < 2 {
        return Err(Error::InvalidParameter("noise calibration needs at least two samples".into()));
    }
    let mut out = panel.clone();
    out.meta.noise_level = noise.level;
    if noise.level == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let degenerate = |c: usize| Error::DegenerateChannel {
        node: panel.channels[c].0,
        phase: panel.channels[c].1,
    };
    match &mut out.samples {
        Samples::Phasor(m) => {
            for c in 0..m.ncols() {
                let var = column_variance_c(m, c);
                if !(var > 0.0) {
                    return Err(degenerate(c));
                }
                let sd = (noise.level * var / 2.0).sqrt();
                for x in m.column_mut(c).iter_mut() {
                    let nr: f64 = StandardNormal.sample(&mut rng);
                    let ni: f64 = StandardNormal.sample(&mut rng);
                    *x += Complex64::new(nr, ni) * sd;
                }
            }
        }
        Samples::Magnitude(m) => {
            for c in 0..m.ncols() {
                let var = column_variance_r(m, c);
                if !(var > 0.0) {
                    return Err(degenerate(c));
                }
                let sd = (noise.level * var).sqrt();
                for x in m.column_mut(c).iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    *x += n * sd;
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise modulus of a phasor panel.
pub fn to_magnitudes(panel: &VoltagePanel) -> Result<VoltagePanel> {
    let Samples::Phasor(m) = &panel.samples else {
        return Err(Error::InvalidParameter("panel is already in magnitude mode".into()));
    };
    Ok(VoltagePanel {
        channels: panel.channels.clone(),
        samples: Samples::Magnitude(m.map(|z| z.norm())),
        rate_hz: panel.rate_hz,
        meta: panel.meta.clone(),
    })
}

/// Run parameters stored next to a panel CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSidecar {
    pub network: String,
    pub seed: u64,
    pub s2: f64,
    pub epsilon: f64,
    pub noise_level: f64,
    pub rate_hz: f64,
    #[serde(rename = "T")]
    pub samples: usize,
    pub mode: Mode,
    /// True labels of scrambled nodes' local channels, when scrambling was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_phases: Option<BTreeMap<usize, String>>,
}

/// Writes `t,<node>_<phase>_re,<node>_<phase>_im,...` (phasor) or
/// `t,<node>_<phase>_mag,...` (magnitude).
pub fn write_panel_csv<W: Write>(panel: &VoltagePanel, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    for (node, phase) in &panel.channels {
        match panel.mode() {
            Mode::Phasor => {
                header.push(format!("{node}_{phase}_re"));
                header.push(format!("{node}_{phase}_im"));
            }
            Mode::Magnitude => header.push(format!("{node}_{phase}_mag")),
        }
    }
    wtr.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..panel.len() {
        row.clear();
        row.push((t as f64 / panel.rate_hz).to_string());
        match &panel.samples {
            Samples::Phasor(m) => {
                for c in 0..m.ncols() {
                    row.push(m[(t, c)].re.to_string());
                    row.push(m[(t, c)].im.to_string());
                }
            }
            Samples::Magnitude(m) => {
                for c in 0..m.ncols() {
                    row.push(m[(t, c)].to_string());
                }
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn parse_column(name: &str) -> Result<(usize, Phase, &str)> {
    let bad = || Error::Format(format!("bad panel column {name:?}"));
    let mut parts = name.splitn(3, '_');
    let node = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let phase = parts.next().and_then(|p| {
        let mut cs = p.chars();
        match (cs.next(), cs.next()) {
            (Some(c), None) => Phase::from_char(c),
            _ => None,
        }
    });
    let kind = parts.next().ok_or_else(bad)?;
    Ok((node, phase.ok_or_else(bad)?, kind))
}

pub fn read_panel_csv<R: Read>(r: R, rate_hz: f64) -> Result<VoltagePanel> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("t") {
        return Err(Error::Format("panel CSV must start with a `t` column".into()));
    }
    let cols: Vec<(usize, Phase, &str)> = header.iter().skip(1).map(parse_column).collect::<Result<_>>()?;
    let magnitude = cols.first().is_some_and(|c| c.2 == "mag");
    let mut channels = Vec::new();
    if magnitude {
        for &(n, p, k) in &cols {
            if k != "mag" {
                return Err(Error::Format("mixed magnitude and phasor columns".into()));
            }
            channels.push((n, p));
        }
    } else {
        if !cols.len().is_multiple_of(2) {
            return Err(Error::Format("phasor columns must come in re/im pairs".into()));
        }
        for pair in cols.chunks(2) {
            let ((n, p, k1), (n2, p2, k2)) = (pair[0], pair[1]);
            if (n, p) != (n2, p2) || k1 != "re" || k2 != "im" {
                return Err(Error::Format(format!("expected {n}_{p}_re,{n}_{p}_im")));
            }
            channels.push((n, p));
        }
    }
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        for field in rec.iter().skip(1) {
            values.push(field.trim().parse().map_err(|_| Error::Format(format!("bad number {field:?}")))?);
        }
        rows += 1;
    }
    let c = channels.len();
    let samples = if magnitude {
        Samples::Magnitude(DMatrix::from_row_slice(rows, c, &values))
    } else {
        Samples::Phasor(CMatrix::from_fn(rows, c, |t, k| {
            Complex64::new(values[t * 2 * c + 2 * k], values[t * 2 * c + 2 * k + 1])
        }))
    };
    Ok(VoltagePanel {
        channels,
        samples,
        rate_hz,
        meta: PanelMeta::default(),
    })
}
