use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use phasetopo::harness::{phase_error, scramble_panel, sweep, topology_error, write_sweep_csv, SweepConfig, Variant};
use phasetopo::phase::{format_labels, parse_labels};
use phasetopo::recover::{gpt_from_table, phase_id_known_topology, topology_known_phases, RecoveryResult};
use phasetopo::simulate::{
    add_noise, read_panel_csv, sample_injections, to_magnitudes, voltages_from_injections, write_panel_csv, BaseInjection,
    InjectionSpec, Mode, NoiseSpec, PanelSidecar, PMU_RATE_HZ,
};
use phasetopo::stats::{pairwise_scores, CovarianceTable, ScoreOptions};
use phasetopo::{check_line_condition, random_preset, random_radial, toynet, Error, FeederPreset, ImpedanceParams, Phase, RadialNetwork};

#[derive(Parser)]
#[command(name = "phasetopo", version, about = "Phase and topology recovery for radial feeders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random radial network as JSON.
    GenNet(GenNet),
    /// Simulate a voltage panel for a network.
    Simulate(Simulate),
    /// Recover topology and phases from a panel.
    Recover(Recover),
    /// Score a recovery result against the true network.
    Eval(Eval),
    /// Check the line-impedance condition for phase matching.
    CheckCond(CheckCond),
    /// Run a parameter sweep described by a TOML file.
    Sweep(Sweep),
}

#[derive(Args)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenNet {
    /// ieee13, ieee34, ieee37 or toy.
    #[arg(long, conflicts_with_all = ["n3", "n2", "n1"])]
    preset: Option<String>,
    /// Three-phase buses, reference included.
    #[arg(long, default_value_t = 8)]
    n3: usize,
    /// Two-phase buses.
    #[arg(long, default_value_t = 3)]
    n2: usize,
    /// Single-phase buses.
    #[arg(long, default_value_t = 2)]
    n1: usize,
    /// Impedance parameters as a TOML file.
    #[arg(long)]
    impedance: Option<PathBuf>,
    /// Seed for topology, phases and impedances.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Simulate {
    /// Network JSON.
    #[arg(long)]
    net: PathBuf,
    /// Number of time steps.
    #[arg(long, default_value_t = 7200)]
    samples: usize,
    /// Seed for injections; noise and scrambling seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measurement noise variance as a fraction of each channel's variance.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Correlation between injections, in [0, 1).
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Injection variance per channel.
    #[arg(long, default_value_t = 1.0)]
    s2: f64,
    /// Real constant injection added to every channel.
    #[arg(long, default_value_t = 10.0)]
    base: f64,
    /// phasor or magnitude.
    #[arg(long, default_value = "phasor")]
    mode: Mode,
    /// Shuffle channel order at nodes not fed by the reference; true labels go to the sidecar.
    #[arg(long)]
    scramble: bool,
    /// Panel CSV path; the sidecar is written next to it with a `.json` suffix.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Recover {
    /// Panel CSV written by `simulate`.
    #[arg(long)]
    panel: PathBuf,
    /// Network JSON: supplies phase counts, and the tree for `--variant phase`.
    #[arg(long)]
    net: Option<PathBuf>,
    /// joint, phase (known topology) or topology (known phases).
    #[arg(long, default_value = "joint")]
    variant: Variant,
    /// Convert a phasor panel to magnitudes before recovery.
    #[arg(long)]
    mode: Option<Mode>,
    /// Rank phase orderings by correlation instead of covariance.
    #[arg(long)]
    normalize: bool,
    /// Also dump the pairwise statistics as CSV.
    #[arg(long)]
    scores_out: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Eval {
    /// Recovery result JSON.
    #[arg(long)]
    result: PathBuf,
    /// True network JSON.
    #[arg(long)]
    net: PathBuf,
    /// Panel sidecar holding true labels of scrambled channels.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct CheckCond {
    /// Network JSON.
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct Sweep {
    /// Sweep configuration TOML.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the recovery variant of the config.
    #[arg(long)]
    variant: Option<Variant>,
    /// Fill the wall_time column (makes output run-dependent).
    #[arg(long)]
    timing: bool,
    #[command(flatten)]
    output: Output,
}

fn emit(output: &Output, bytes: &[u8]) -> Result<(), Error> {
    match &output.out {
        Some(p) => fs::write(p, bytes)?,
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn json_line<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn gen_net(args: GenNet) -> Result<(), Error> {
    let params = match &args.impedance {
        Some(p) => toml::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Format(e.to_string()))?,
        None => ImpedanceParams::default(),
    };
    let net = match args.preset.as_deref() {
        Some("toy") => toynet(),
        Some(p) => random_preset(p.parse::<FeederPreset>()?, &params, args.seed)?,
        None => random_radial(args.n3, args.n2, args.n1, &params, args.seed)?,
    };
    let mut text = net.to_json();
    text.push('\n');
    emit(&args.output, text.as_bytes())
}

fn simulate(args: Simulate) -> Result<(), Error> {
    let net = RadialNetwork::load(&args.net)?;
    let spec = InjectionSpec {
        s2: args.s2,
        epsilon: args.epsilon,
        base: if args.base == 0.0 {
            BaseInjection::None
        } else {
            BaseInjection::Uniform(Complex64::new(args.base, 0.0))
        },
        ..Default::default()
    };
    let inj = sample_injections(&net, &spec, args.samples, args.seed)?;
    let mut panel = voltages_from_injections(&net, &inj)?;
    if args.mode == Mode::Magnitude {
        panel = to_magnitudes(&panel)?;
    }
    let noise_seed = phasetopo::harness::splitmix64(args.seed ^ 0x6E_6F69_7365);
    panel = add_noise(&panel, &NoiseSpec { level: args.noise, seed: noise_seed })?;
    let truth_phases = if args.scramble {
        let truth = scramble_panel(&net, &mut panel, phasetopo::harness::splitmix64(args.seed ^ 0x73_6372_616D))?;
        Some(truth.iter().map(|(&n, p)| (n, format_labels(p))).collect())
    } else {
        None
    };
    let mut buf = Vec::new();
    write_panel_csv(&panel, &mut buf)?;
    fs::write(&args.out, buf)?;
    let sidecar = PanelSidecar {
        network: args.net.display().to_string(),
        seed: args.seed,
        s2: args.s2,
        epsilon: args.epsilon,
        noise_level: args.noise,
        rate_hz: PMU_RATE_HZ,
        samples: args.samples,
        mode: args.mode,
        truth_phases,
    };
    fs::write(sidecar_path(&args.out), json_line(&sidecar))?;
    Ok(())
}

/// Channel counts per node from the panel alone: ids are dense and the one
/// missing id, if any, is the three-phase datum.
fn counts_from_panel(panel: &phasetopo::simulate::VoltagePanel) -> Result<Vec<usize>, Error> {
    let cols = panel.node_columns();
    let max = cols.keys().next_back().copied().unwrap_or(0);
    let mut counts = Vec::with_capacity(max + 2);
    let mut missing = 0;
    for node in 0..=max {
        match cols.get(&node) {
            Some(c) => counts.push(c.len()),
            None => {
                missing += 1;
                counts.push(3);
            }
        }
    }
    match missing {
        // No gap: the datum carries the next id.
        0 => counts.push(3),
        1 => {}
        _ => return Err(Error::InvalidParameter("panel skips more than one node id; pass --net".into())),
    }
    Ok(counts)
}

fn recover(args: Recover) -> Result<(), Error> {
    let mut panel = read_panel_csv(fs::File::open(&args.panel)?, PMU_RATE_HZ)?;
    match (args.mode, panel.mode()) {
        (Some(Mode::Magnitude), Mode::Phasor) => panel = to_magnitudes(&panel)?,
        (Some(Mode::Phasor), Mode::Magnitude) => {
            return Err(Error::InvalidParameter("cannot recover phasors from a magnitude panel".into()))
        }
        _ => {}
    }
    let net = args.net.as_ref().map(RadialNetwork::load).transpose()?;
    let counts = match &net {
        Some(n) => n.phase_counts(),
        None => counts_from_panel(&panel)?,
    };
    let table = CovarianceTable::from_panel(&panel, &counts)?;
    let opts = ScoreOptions { normalize: args.normalize };
    if let Some(path) = &args.scores_out {
        let mut buf = Vec::new();
        pairwise_scores(&table, opts).write_csv(&mut buf)?;
        fs::write(path, buf)?;
    }
    let result = match args.variant {
        Variant::Joint => gpt_from_table(&table, opts)?,
        Variant::Topology => topology_known_phases(&table)?,
        Variant::Phase => {
            let net = net.ok_or_else(|| Error::InvalidParameter("--variant phase needs --net".into()))?;
            let edges: Vec<(usize, usize)> = net.edges.iter().map(|e| (e.from, e.to)).collect();
            let phases = phase_id_known_topology(&table, &edges, net.reference)?;
            RecoveryResult {
                root: net.reference,
                edges,
                phases,
                steps: Vec::new(),
            }
        }
    };
    let mut text = result.to_json();
    text.push('\n');
    emit(&args.output, text.as_bytes())
}

#[derive(Serialize)]
struct Metrics {
    topology_error: f64,
    phase_error: f64,
}

fn eval(args: Eval) -> Result<(), Error> {
    let result = RecoveryResult::load(&args.result)?;
    let net = RadialNetwork::load(&args.net)?;
    let truth_edges = net.tree()?.undirected_edges();
    let mut truth: BTreeMap<usize, Vec<Phase>> = net.phase_labels().into_iter().enumerate().collect();
    if let Some(path) = &args.truth {
        let sidecar: PanelSidecar = serde_json::from_str(&fs::read_to_string(path)?)?;
        for (n, p) in sidecar.truth_phases.unwrap_or_default() {
            truth.insert(n, parse_labels(&p)?);
        }
    }
    let metrics = Metrics {
        topology_error: topology_error(&result.edges, &truth_edges),
        phase_error: phase_error(&result.phases, &truth, net.reference)?,
    };
    emit(&args.output, &json_line(&metrics))
}

fn check_cond(args: CheckCond) -> Result<(), Error> {
    let net = RadialNetwork::load(&args.net)?;
    emit(&args.output, &json_line(&check_line_condition(&net)?))
}

fn run_sweep(args: Sweep) -> Result<(), Error> {
    let mut cfg = SweepConfig::from_toml(&fs::read_to_string(&args.config)?)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    let rows = sweep(&cfg)?;
    let mut buf = Vec::new();
    write_sweep_csv(&rows, args.timing, &mut buf)?;
    emit(&args.output, &buf)
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    message: String,
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let report = ErrorReport { error: kind, message };
    eprintln!("{}", serde_json::to_string(&report).expect("serializable"));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim().to_string(), 2),
    };
    let outcome = match cli.command {
        Command::GenNet(a) => gen_net(a),
        Command::Simulate(a) => simulate(a),
        Command::Recover(a) => recover(a),
        Command::Eval(a) => eval(a),
        Command::CheckCond(a) => check_cond(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
