//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;

use phasetopo::admittance::{build_admittance, build_b, impedance_by_inverse, impedance_by_paths, reduce, reduced_incidence};
use phasetopo::harness::{run_trials, NetworkSource, TrialConfig, TrialReport};
use phasetopo::linalg::{max_abs, max_abs_diff, CMatrix};
use phasetopo::ordering::{all_orderings, PhaseOrdering};
use phasetopo::recover::gpt;
use phasetopo::simulate::{sample_injections, voltages_from_injections, BaseInjection, InjectionSpec, Mode};
use phasetopo::stats::{best_phase_match, diff_variance, phase_match_score, CovarianceTable, TIE_RTOL};
use phasetopo::{check_line_condition, random_radial, FeederPreset, ImpedanceParams, RadialNetwork};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Mixed-phase feeders of 2 to 40 buses.
fn corpus(count: usize, salt: u64) -> Vec<RadialNetwork> {
    (0..count as u64)
        .map(|k| {
            let seed = salt * 1_000_003 + k;
            let total = 2 + (seed * 7919 % 39) as usize;
            let n3 = 1 + (seed * 31 % total as u64) as usize;
            let rest = total - n3;
            let n2 = if rest == 0 { 0 } else { (seed * 17 % (rest as u64 + 1)) as usize };
            random_radial(n3, n2, rest - n2, &ImpedanceParams::default(), seed).unwrap()
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let nets = corpus(120, 1);
    let mut worst_rel = 0.0f64;
    let mut worst_inv = 0.0f64;
    for net in &nets {
        let paths = impedance_by_paths(net).unwrap();
        let inverse = impedance_by_inverse(net).unwrap();
        worst_rel = worst_rel.max(max_abs_diff(&paths, &inverse) / max_abs(&inverse));
        let (y, _) = build_admittance(net).unwrap();
        let (y_red, _) = reduce(&y, net);
        let prod = &paths * &y_red;
        let id = CMatrix::identity(prod.nrows(), prod.ncols());
        worst_inv = worst_inv.max(max_abs_diff(&prod, &id));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_rel <= 1e-9 && worst_inv <= 1e-10 && secs < 10.0,
        format!(
            "{} feeders, max rel diff {worst_rel:.2e} (<=1e-9), max |ZY-I| {worst_inv:.2e} (<=1e-10), {secs:.2}s (<10s)",
            nets.len()
        ),
    )
}

fn pseudo_inverse_identity() -> Outcome {
    let nets = corpus(120, 1);
    let mut bad = 0;
    for net in &nets {
        let b = build_b(net).unwrap();
        let a = reduced_incidence(net).unwrap();
        let prod = b.transpose() * a;
        if prod != DMatrix::<i32>::identity(prod.nrows(), prod.ncols()) {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{} feeders, {bad} with B^T A_red != I", nets.len()))
}

fn phase_matching_theorem() -> Outcome {
    let mut checked = 0;
    let mut pairs = 0usize;
    let mut violations = Vec::new();
    let mut seed = 0u64;
    let spec = InjectionSpec::default();
    while checked < 200 {
        seed += 1;
        let net = corpus(1, 1000 + seed).pop().unwrap();
        if !check_line_condition(&net).unwrap().holds {
            continue;
        }
        checked += 1;
        let table = CovarianceTable::analytic(&net, &spec).unwrap();
        let tree = net.tree().unwrap();
        let labels = net.phase_labels();
        for i in (0..net.len()).filter(|&i| i != net.reference) {
            for j in (0..net.len()).filter(|&j| j != net.reference && j != i) {
                if !net.phases(i).is_subset(net.phases(j)) {
                    continue;
                }
                pairs += 1;
                let truth = PhaseOrdering::matching_labels(&labels[i], &labels[j]).unwrap();
                let shared = tree.path_edges(i).iter().any(|e| tree.path_edges(j).contains(e));
                let ok = if shared {
                    let m = best_phase_match(&table, i, j).unwrap();
                    m.ordering == truth && !m.tie
                } else {
                    // No common path: every covariance vanishes and the truth is one of the tied maximizers.
                    let t = phase_match_score(&table, i, j, &truth).unwrap();
                    all_orderings(labels[i].len(), labels[j].len())
                        .iter()
                        .all(|o| phase_match_score(&table, i, j, o).unwrap() <= t + TIE_RTOL * t.abs())
                };
                if !ok {
                    violations.push((seed, i, j));
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!("{checked} feeders passing the line condition, {pairs} pairs, {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    )
}

fn nearest_neighbor_theorem() -> Outcome {
    let feeders = 520;
    let results: Vec<(usize, Vec<(u64, usize, usize)>)> = (0..feeders as u64)
        .into_par_iter()
        .map(|k| {
            let net = corpus(1, 50_000 + k).pop().unwrap();
            let mut spec = InjectionSpec::default();
            if k % 2 == 1 {
                // Unequal injection variances spanning a factor of 20.
                for n in 0..net.len() {
                    let u = phasetopo::harness::splitmix64(k * 1000 + n as u64) as f64 / u64::MAX as f64;
                    spec.per_node_variance.insert(n, 0.1 + 1.9 * u);
                }
            }
            let table = CovarianceTable::analytic(&net, &spec).unwrap();
            let tree = net.tree().unwrap();
            let labels = net.phase_labels();
            let mut bad = Vec::new();
            let mut nodes = 0;
            for i in (0..net.len()).filter(|&i| i != net.reference) {
                nodes += 1;
                let best = (0..net.len())
                    .filter(|&j| j != i)
                    .filter_map(|j| PhaseOrdering::matching_labels(&labels[i], &labels[j]).map(|o| (j, o)))
                    .map(|(j, o)| (diff_variance(&table, i, j, &o).unwrap(), j))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .unwrap();
                if !tree.are_adjacent(i, best.1) {
                    bad.push((k, i, best.1));
                }
            }
            (nodes, bad)
        })
        .collect();
    let nodes: usize = results.iter().map(|r| r.0).sum();
    let bad: Vec<_> = results.into_iter().flat_map(|r| r.1).collect();
    outcome(
        bad.is_empty(),
        format!("{feeders} feeders (half with unequal variances), {nodes} nodes, {} violations {:?}", bad.len(), bad.iter().take(3).collect::<Vec<_>>()),
    )
}

fn preset_trials(preset: FeederPreset, mode: Mode, noise: f64, trials: usize, seed: u64) -> TrialReport {
    let mut cfg = TrialConfig::new(NetworkSource::Preset(preset), 7200);
    cfg.mode = mode;
    cfg.noise = noise;
    cfg.trials = trials;
    cfg.seed = seed;
    run_trials(&cfg).unwrap()
}

fn recovery_at(noise: f64, check: impl Fn(&[f64], &[f64]) -> (bool, String)) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [Mode::Phasor, Mode::Magnitude] {
        let mut topo = Vec::new();
        let mut phase = Vec::new();
        for (k, preset) in FeederPreset::ALL.into_iter().enumerate() {
            let r = preset_trials(preset, mode, noise, 34, 100 + k as u64);
            topo.extend(r.trials.iter().map(|t| t.topology_error));
            phase.extend(r.trials.iter().map(|t| t.phase_error));
        }
        let (ok, text) = check(&topo, &phase);
        pass &= ok;
        parts.push(format!("{mode}: {} feeders, {text}", topo.len()));
    }
    outcome(pass, parts.join("; "))
}

fn noiseless_recovery() -> Outcome {
    recovery_at(0.0, |topo, phase| {
        let tb = topo.iter().filter(|&&e| e > 0.0).count();
        let pb = phase.iter().filter(|&&e| e > 0.0).count();
        (tb == 0 && pb == 0, format!("{tb} with topology error, {pb} with phase error"))
    })
}

fn low_noise_recovery() -> Outcome {
    recovery_at(0.001, |topo, _| {
        let zero = topo.iter().filter(|&&e| e == 0.0).count() as f64 / topo.len() as f64;
        let mean = topo.iter().sum::<f64>() / topo.len() as f64;
        (zero >= 0.95 && mean <= 0.01, format!("exact in {:.1}% (>=95%), mean {mean:.4} (<=0.01)", 100.0 * zero))
    })
}

fn cell(preset: FeederPreset, samples: usize, noise: f64, epsilon: f64, mode: Mode, trials: usize) -> TrialReport {
    let mut cfg = TrialConfig::new(NetworkSource::Preset(preset), samples);
    cfg.noise = noise;
    cfg.epsilon = epsilon;
    cfg.mode = mode;
    cfg.trials = trials;
    cfg.seed = 7;
    run_trials(&cfg).unwrap()
}

fn sample_trend() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [Mode::Phasor, Mode::Magnitude] {
        let short = cell(FeederPreset::Ieee13, 120, 10.0, 0.0, mode, 200);
        let long = cell(FeederPreset::Ieee13, 7200, 10.0, 0.0, mode, 200);
        let ok = short.topology_error.mean > long.topology_error.mean;
        pass &= ok;
        // Trials share seeds across T, so the paired difference has its own standard error.
        let diffs: Vec<f64> = short
            .trials
            .iter()
            .zip(&long.trials)
            .map(|(a, b)| a.topology_error - b.topology_error)
            .collect();
        let paired = phasetopo::harness::Summary::of(diffs.iter().copied());
        parts.push(format!(
            "{mode}: T=120 mean {:.4}±{:.4}, T=7200 mean {:.4}±{:.4}, paired difference {:.4} (s.e. {:.4})",
            short.topology_error.mean,
            short.topology_error.std,
            long.topology_error.mean,
            long.topology_error.std,
            paired.mean,
            paired.std / (diffs.len() as f64).sqrt()
        ));
    }
    outcome(pass, format!("13-bus, noise 10, 200 trials each; {}", parts.join("; ")))
}

fn correlation_trend() -> Outcome {
    let eps = [0.0, 0.3, 0.6, 0.9];
    let reports: Vec<TrialReport> = eps
        .iter()
        .map(|&e| cell(FeederPreset::Ieee13, 1200, 0.05, e, Mode::Phasor, 60))
        .collect();
    let mut inversions = 0;
    let mut large = 0;
    for w in reports.windows(2) {
        let (a, b) = (&w[0].topology_error, &w[1].topology_error);
        if b.mean < a.mean {
            inversions += 1;
            if a.mean - b.mean > a.std.max(b.std) {
                large += 1;
            }
        }
    }
    let means: Vec<String> = reports
        .iter()
        .map(|r| format!("{:.4}±{:.4}", r.topology_error.mean, r.topology_error.std))
        .collect();
    outcome(
        inversions <= 1 && large == 0,
        format!(
            "13-bus, T=1200, noise 0.05, 60 trials/cell; eps {:?} -> {}; {inversions} inversions",
            eps,
            means.join(", ")
        ),
    )
}

fn estimator_convergence() -> Outcome {
    let net = phasetopo::toynet();
    let spec = InjectionSpec::default();
    let analytic = CovarianceTable::analytic(&net, &spec).unwrap();
    let counts = net.phase_counts();
    let pairs: Vec<(usize, usize, PhaseOrdering)> = (1..net.len())
        .flat_map(|i| (1..net.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && counts[i] <= counts[j])
        .flat_map(|(i, j)| all_orderings(counts[i], counts[j]).into_iter().map(move |o| (i, j, o)))
        .collect();
    let replicates = 16u64;
    let sizes = [1_000usize, 10_000, 100_000];
    let mut mean_err = Vec::new();
    for &t in &sizes {
        let errs: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let inj = sample_injections(&net, &spec, t, 900 + r).unwrap();
                let panel = voltages_from_injections(&net, &inj).unwrap();
                let emp = CovarianceTable::from_panel(&panel, &counts).unwrap();
                pairs
                    .iter()
                    .map(|(i, j, o)| {
                        let dc = (phase_match_score(&emp, *i, *j, o).unwrap() - phase_match_score(&analytic, *i, *j, o).unwrap()).abs();
                        let dd = (diff_variance(&emp, *i, *j, o).unwrap() - diff_variance(&analytic, *i, *j, o).unwrap()).abs();
                        dc.max(dd)
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        mean_err.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    let f1 = mean_err[0] / mean_err[1];
    let f2 = mean_err[1] / mean_err[2];
    outcome(
        f1 >= 2.5 && f2 >= 2.5,
        format!(
            "max |empirical - analytic| over all c and d entries (mean of {replicates} panels): {:.3e}, {:.3e}, {:.3e}; factors {f1:.2}, {f2:.2} (>=2.5)",
            mean_err[0], mean_err[1], mean_err[2]
        ),
    )
}

fn performance() -> Outcome {
    let net = random_radial(37, 0, 0, &ImpedanceParams::default(), 37).unwrap();
    let spec = InjectionSpec {
        base: BaseInjection::Uniform(num_complex::Complex64::new(10.0, 0.0)),
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let sim = Instant::now();
        let inj = sample_injections(&net, &spec, 7200, 1).unwrap();
        let panel = voltages_from_injections(&net, &inj).unwrap();
        let sim_secs = sim.elapsed().as_secs_f64();
        let start = Instant::now();
        let r = gpt(&panel, &net.phase_counts()).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let err = phasetopo::harness::topology_error(&r.edges, &net.tree().unwrap().undirected_edges());
        outcome(
            secs <= 2.0 && err == 0.0,
            format!("37 three-phase buses, T=7200, one thread: recovery {secs:.3}s (<=2s), simulation {sim_secs:.3}s, topology error {err}"),
        )
    })
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_phasetopo"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("sweep.toml"),
        "samples = [120, 600]\nnoise = [0.0, 1.0]\nmode = [\"phasor\", \"magnitude\"]\ntrials = 3\nseed = 4\n[network]\npreset = \"ieee13\"\n",
    )
    .unwrap();
    let run = |tag: &str| -> Result<(), String> {
        let f = |name: &str| format!("{name}.{tag}");
        run_cli(d, &["gen-net", "--n3", "6", "--n2", "3", "--n1", "3", "--seed", "5", "--out", &f("net")])?;
        // Downstream steps read a common network so the recorded path is the same in both runs.
        if tag == "a" {
            std::fs::copy(d.join("net.a"), d.join("net.json")).map_err(|e| e.to_string())?;
        }
        run_cli(d, &["check-cond", "--net", "net.json", "--out", &f("cond")])?;
        run_cli(
            d,
            &["simulate", "--net", "net.json", "--samples", "600", "--seed", "9", "--noise", "0.01", "--epsilon", "0.1", "--scramble", "--out", "panel.csv"],
        )?;
        std::fs::copy(d.join("panel.csv"), d.join(f("panel"))).map_err(|e| e.to_string())?;
        std::fs::copy(d.join("panel.csv.json"), d.join(f("sidecar"))).map_err(|e| e.to_string())?;
        run_cli(d, &["recover", "--panel", "panel.csv", "--scores-out", &f("scores"), "--out", &f("result")])?;
        run_cli(d, &["recover", "--panel", "panel.csv", "--mode", "magnitude", "--out", &f("mresult")])?;
        run_cli(d, &["recover", "--panel", "panel.csv", "--net", "net.json", "--variant", "phase", "--out", &f("presult")])?;
        run_cli(d, &["eval", "--result", &f("result"), "--net", "net.json", "--truth", "panel.csv.json", "--out", &f("eval")])?;
        run_cli(d, &["sweep", "--config", "sweep.toml", "--out", &f("sweep")])?;
        Ok(())
    };
    if let Err(e) = run("a").and_then(|_| run("b")) {
        return outcome(false, format!("command failed: {e}"));
    }
    let names = ["net", "cond", "panel", "sidecar", "scores", "result", "mresult", "presult", "eval", "sweep"];
    let differing: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| std::fs::read(d.join(format!("{n}.a"))).unwrap() != std::fs::read(d.join(format!("{n}.b"))).unwrap())
        .collect();
    outcome(
        differing.is_empty(),
        format!("gen-net, check-cond, simulate, recover (3 variants), eval, sweep run twice; differing outputs: {differing:?}"),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("1 path-sum impedance equals numeric inverse", oracle_equivalence),
        ("2 pseudo-inverse identity", pseudo_inverse_identity),
        ("3 covariance phase matching is exact", phase_matching_theorem),
        ("4 nearest node by difference variance is a neighbor", nearest_neighbor_theorem),
        ("5 exact noiseless recovery", noiseless_recovery),
        ("6 low-noise recovery", low_noise_recovery),
        ("7 error falls with more samples at noise 10", sample_trend),
        ("8 error grows with injection correlation", correlation_trend),
        ("9 estimator convergence rate", estimator_convergence),
        ("10 recovery time on 37 buses", performance),
        ("11 CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    let mut summary = BTreeMap::new();
    for (name, f) in criteria {
        let start = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!("[{tag}] {name}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
        summary.insert(name, o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", summary.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
