use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lqgame::config::{content_hash, GameConfig, SystemConfig};
use lqgame::io::*;
use lqgame::metrics::trajectory_errors;
use lqgame::pipeline::{identify, IdentificationConfig};
use lqgame::study::*;
use lqgame::*;
use serde_json::json;

#[derive(Parser)]
#[command(name = "lqgame", version, about = "Forward and inverse LQG differential games")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled Riccati equations and write the Nash gains.
    Forward {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate demonstrations under the Nash gains.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "bundle")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        demos: Option<u64>,
        /// Drop the noise term.
        #[arg(long)]
        deterministic: bool,
    },
    /// Identify costs and noise from a bundle. Only `A`, `B`, the horizon
    /// and `x0` are read from the config.
    Invert {
        bundle: PathBuf,
        config: PathBuf,
        #[arg(long, default_value_t = 500)]
        nodes: usize,
        #[arg(long, default_value = "estimate")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Rule::Cubic)]
        quadrature: Rule,
    },
    /// Repeated identify-and-compare study over several node counts.
    Study {
        config: PathBuf,
        #[arg(long, default_value = "study")]
        out: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// Comma-separated node counts.
        #[arg(long, value_delimiter = ',')]
        nodes: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        demos: Option<u64>,
        #[arg(long, value_enum)]
        moments: Option<Moments>,
        #[arg(long, value_enum)]
        pairing: Option<Pairing>,
        /// Identifications per (K, rep); t_C is the fastest.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        timing_runs: Option<u64>,
        /// Ignore existing results in the output directory.
        #[arg(long)]
        fresh: bool,
    },
    /// Compare the moments of two bundles.
    Metrics {
        config: PathBuf,
        gt: PathBuf,
        estimate: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Cubic,
    Trapezoid,
}

#[derive(Clone, Copy, ValueEnum)]
enum Moments {
    Propagated,
    Sampled,
}

#[derive(Clone, Copy, ValueEnum)]
enum Pairing {
    Common,
    Fresh,
}

struct Failure {
    code: u8,
    msg: String,
}

type Result<T, E = Failure> = std::result::Result<T, E>;

fn code_of(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Dimension(_) | Error::Json(_) | Error::SingularControlWeight { .. } => 2,
        Error::AmbiguousIdentification { .. } | Error::DegenerateNoise { .. } | Error::IndefiniteEstimate { .. } => 4,
        Error::Io(_) => 5,
        Error::Csv(c) if c.is_io_error() => 5,
        _ => 3,
    }
}

trait Stage<T> {
    fn stage(self, name: &str) -> Result<T, Failure>;
}

impl<T> Stage<T> for lqgame::Result<T> {
    fn stage(self, name: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: code_of(&e), msg: format!("{name}: {e}") })
    }
}

fn io_failure(e: std::io::Error, what: &Path) -> Failure {
    Failure { code: 5, msg: format!("io: {}: {e}", what.display()) }
}

fn load_config(path: &Path) -> Result<(GameConfig, String), Failure> {
    let bytes = fs::read(path).map_err(|e| io_failure(e, path))?;
    let text = String::from_utf8_lossy(&bytes);
    let cfg = GameConfig::from_json(&text).stage("config")?;
    Ok((cfg, content_hash(&bytes)))
}

struct Model {
    game: GameDefinition64,
    costs: CostParameters64,
    noise: Option<NoiseModel64>,
}

fn load_model(cfg: &GameConfig) -> Result<Model, Failure> {
    let game: GameDefinition64 = cfg.game().stage("config")?;
    let costs = cfg.costs().stage("config")?;
    let noise = match cfg.system.l {
        Some(_) => Some(cfg.noise().stage("config")?),
        None => None,
    };
    let unit = NoiseModel::diagonal(&vec![1.0; game.state_dim()], game.grid().dt());
    validate(&game, &costs, noise.as_ref().unwrap_or(&unit)).into_result().stage("validate")?;
    Ok(Model { game, costs, noise })
}

fn require_noise(m: &Model) -> Result<&NoiseModel64, Failure> {
    m.noise.as_ref().ok_or(Failure { code: 2, msg: "config: missing `system.L`".into() })
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(e, dir))
}

fn forward(config: &Path, out: &Path) -> Result<(), Failure> {
    let (cfg, _) = load_config(config)?;
    let m = load_model(&cfg)?;
    let profile = solve_coupled_riccati(&m.game, &m.costs, &RiccatiSolverConfig::default()).stage("solve")?;
    let report = check_stability(&profile).stage("solve")?;
    create_dir(out)?;
    write_strategy_csv(&out.join("strategy.csv"), &profile).stage("io")?;
    let times = m.game.grid().times();
    write_stability_csv(&out.join("stability.csv"), &times, &report).stage("io")?;

    println!("stable: {}", report.stable);
    println!("max real part of closed-loop eigenvalues: {:.6}", report.worst());
    if !report.stable {
        match report.unstable_tail() {
            Some(k) => println!(
                "unstable on the terminal window t in [{}, {}] ({} of {} nodes)",
                times[k],
                times[times.len() - 1],
                times.len() - k,
                times.len()
            ),
            None => println!("unstable nodes are not confined to the end of the horizon"),
        }
    }
    Ok(())
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, demos: Option<u64>, deterministic: bool) -> Result<(), Failure> {
    let (cfg, hash) = load_config(config)?;
    let m = load_model(&cfg)?;
    let noise = require_noise(&m)?;
    let section = cfg.simulation;
    let demos = demos.map(|d| d as usize).or(section.map(|s| s.demos)).unwrap_or(20);
    let seed = seed.or(section.map(|s| s.seed)).unwrap_or(42);
    if demos == 0 {
        return Err(Failure { code: 2, msg: "config: simulation.D must be at least 1".into() });
    }
    let profile = solve_coupled_riccati(&m.game, &m.costs, &RiccatiSolverConfig::default()).stage("solve")?;
    let mut sim = SimulationConfig::new(demos, seed);
    if deterministic {
        sim = sim.deterministic();
    }
    let bundle = simulate_bundle(&m.game, &profile, noise, &sim).stage("simulate")?;
    let manifest = write_bundle(out, &bundle, &hash).stage("io")?;
    println!("wrote {} demonstrations ({} steps, seed {seed}) to {}", manifest.demos, manifest.steps, out.display());
    Ok(())
}

fn report_excitation(report: &lqgame::strategy_id::ExcitationReport) {
    let flagged = report.flagged_count();
    if flagged > 0 {
        let first = report.flagged.iter().position(|&f| f).unwrap_or(0);
        eprintln!(
            "warning: {flagged} of {} nodes under-excited (first at t = {})",
            report.flagged.len(),
            report.times[first]
        );
    }
}

fn invert(bundle_dir: &Path, config: &Path, nodes: usize, out: &Path, rule: Rule) -> Result<(), Failure> {
    let sys = SystemConfig::from_path(config).stage("config")?;
    let game: GameDefinition64 = sys.game().stage("config")?;
    let bundle = read_bundle(bundle_dir, &game).stage("io")?;
    let quadrature = match rule {
        Rule::Cubic => Quadrature::Cubic,
        Rule::Trapezoid => Quadrature::Trapezoid,
    };
    let id_cfg = IdentificationConfig { quadrature, ..IdentificationConfig::with_nodes(nodes) };
    let id = match identify(&game, &bundle, &id_cfg) {
        Ok(id) => id,
        Err(e) => {
            if let Ok((_, excitation)) = lqgame::strategy_id::estimate_gains(&bundle, &id_cfg.gains) {
                report_excitation(&excitation);
            }
            return Err(e).stage("identify");
        }
    };

    create_dir(out)?;
    let estimate = GameConfig::from_parts(&game, Some(&id.costs), Some(&id.noise.noise));
    let json_text = estimate.to_json().stage("io")?;
    fs::write(out.join("estimate.json"), json_text).map_err(|e| io_failure(e, out))?;
    write_excitation_csv(&out.join("excitation.csv"), &id.excitation).stage("io")?;
    for (i, p) in id.players.iter().enumerate() {
        write_singular_values_csv(&out.join(format!("singular_values_player{}.csv", i + 1)), &p.singular_values).stage("io")?;
    }
    let t_c = id.elapsed.as_secs_f64();
    let players: Vec<_> = id
        .players
        .iter()
        .enumerate()
        .map(|(i, p)| {
            json!({
                "player": i + 1,
                "rank": p.diagnostics.rank,
                "param_dim": p.diagnostics.param_dim,
                "rank_flag": p.diagnostics.rank_flag,
                "gap_ratio": p.diagnostics.gap_ratio,
                "certificate": p.diagnostics.certificate,
                "warnings": p.diagnostics.warnings,
                "violations": p.violations,
            })
        })
        .collect();
    let report = json!({
        "nodes": id.nodes.len(),
        "demos": bundle.len(),
        "flagged_nodes": id.excitation.flagged_count(),
        "backfilled_nodes": id.excitation.backfilled,
        "excitation_warnings": id.excitation.warnings,
        "players": players,
        "noise_mismatch_ratio": id.noise.mismatch_ratio,
        "t_C": t_c,
    });
    let report_text = serde_json::to_string_pretty(&report).map_err(|e| Failure { code: 5, msg: format!("io: {e}") })?;
    fs::write(out.join("report.json"), report_text).map_err(|e| io_failure(e, out))?;

    report_excitation(&id.excitation);
    for p in &id.players {
        for w in p.diagnostics.warnings.iter().chain(&p.violations) {
            eprintln!("warning: {w}");
        }
    }
    for (i, p) in id.players.iter().enumerate() {
        println!("player {}: rank {}/{}, certificate {:.2e}", i + 1, p.diagnostics.rank, p.diagnostics.param_dim, p.diagnostics.certificate);
    }
    let l = id.noise.noise.diag();
    println!("L diagonal: {:?}", l.as_slice());
    println!("t_C: {:.3} ms", t_c * 1e3);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn study(
    config: &Path,
    out: &Path,
    reps: Option<usize>,
    nodes: Option<Vec<usize>>,
    seed: Option<u64>,
    demos: Option<u64>,
    moments: Option<Moments>,
    pairing: Option<Pairing>,
    timing_runs: Option<u64>,
    fresh: bool,
) -> Result<(), Failure> {
    let (cfg, _) = load_config(config)?;
    let m = load_model(&cfg)?;
    let noise = require_noise(&m)?.clone();
    let section = cfg.study.clone().unwrap_or_default();
    let mut sc = StudyConfig::new(m.game.clone(), m.costs.clone(), noise);
    sc.node_counts = nodes.unwrap_or(section.nodes);
    sc.repetitions = reps.unwrap_or(section.repetitions);
    sc.seed = seed.unwrap_or(section.seed);
    sc.demos = demos.map(|d| d as usize).or(cfg.simulation.map(|s| s.demos)).unwrap_or(20);
    sc.moments = match moments {
        Some(Moments::Propagated) => MomentSource::Propagated,
        Some(Moments::Sampled) => MomentSource::Sampled,
        None => section.moments,
    };
    sc.pairing = match pairing {
        Some(Pairing::Common) => NoisePairing::Common,
        Some(Pairing::Fresh) => NoisePairing::Fresh,
        None => section.noise,
    };
    sc.timing_runs = timing_runs.map(|t| t as usize).unwrap_or(section.timing_runs).max(1);
    if sc.node_counts.is_empty() || sc.repetitions == 0 || sc.demos < 2 {
        return Err(Failure { code: 2, msg: "config: study needs node counts, repetitions >= 1 and D >= 2".into() });
    }
    if let Some(&k) = sc.node_counts.iter().find(|&&k| k == 0 || k > m.game.grid().steps()) {
        return Err(Failure { code: 2, msg: format!("config: node count {k} outside 1..={}", m.game.grid().steps()) });
    }

    create_dir(out)?;
    let runs_path = out.join("study_runs.csv");
    let mut rows = if runs_path.exists() && !fresh { read_study_rows(&runs_path).stage("io")? } else { Vec::new() };
    rows.retain(|r| sc.node_counts.contains(&r.nodes) && r.rep < sc.repetitions);
    let done: HashSet<(usize, usize)> = rows.iter().map(|r| (r.nodes, r.rep)).collect();
    if !done.is_empty() {
        println!("resuming: {} of {} runs already recorded", done.len(), sc.node_counts.len() * sc.repetitions);
    }
    rows.extend(run_batch_study(&sc, |k, rep| done.contains(&(k, rep))));
    rows.sort_by_key(|r| (r.nodes, r.rep));
    write_study_rows(&runs_path, &rows).stage("io")?;
    let averages = summarize(&rows);
    write_study_averages(&out.join("study_averages.csv"), &averages).stage("io")?;

    let k_env = *sc.node_counts.iter().max().unwrap_or(&500);
    let mut env_cfg = sc.clone();
    env_cfg.timing_runs = 1;
    if let Some(o) = run_repetition(&env_cfg, 0, |k| k == k_env, true).into_iter().next() {
        if let (Some(gt), Some(est)) = (&o.gt, &o.estimate) {
            let env = EnvelopeSeries::new(m.game.grid().times(), gt, est);
            write_envelopes_csv(&out.join(format!("envelopes_K{k_env}.csv")), &env).stage("io")?;
            println!("K={k_env}, rep 0: estimated mean inside the ±2σ band at {:.1}% of nodes", env.mean_inside_band_fraction() * 100.0);
        }
    }

    println!("{:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>4}", "K", "e_mu_x", "e_mu_u", "e_var_x", "e_var_u", "t_C[ms]", "fail");
    for a in &averages {
        println!(
            "{:>5} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2} {:>4}",
            a.nodes,
            a.e_mu_x,
            a.e_mu_u,
            a.e_var_x,
            a.e_var_u,
            a.t_c * 1e3,
            a.failures
        );
    }
    for r in rows.iter().filter(|r| r.failure.is_some()) {
        eprintln!("K={} rep {} failed: {}", r.nodes, r.rep, r.failure.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn metrics(config: &Path, gt: &Path, est: &Path) -> Result<(), Failure> {
    let sys = SystemConfig::from_path(config).stage("config")?;
    let game: GameDefinition64 = sys.game().stage("config")?;
    let a = empirical_moments(&read_bundle(gt, &game).stage("io")?).stage("metrics")?;
    let b = empirical_moments(&read_bundle(est, &game).stage("io")?).stage("metrics")?;
    let e = trajectory_errors(&a, &b).stage("metrics")?;
    println!("e_mu_x  {:.6e}", e.e_mu_x);
    println!("e_mu_u  {:.6e}", e.e_mu_u);
    println!("e_var_x {:.6e}", e.e_var_x);
    println!("e_var_u {:.6e}", e.e_var_u);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure { code: 2, msg: format!("config: {e}") })?;
    }
    match cli.command {
        Command::Forward { config, out } => forward(&config, &out),
        Command::Simulate { config, out, seed, demos, deterministic } => simulate(&config, &out, seed, demos, deterministic),
        Command::Invert { bundle, config, nodes, out, quadrature } => invert(&bundle, &config, nodes, &out, quadrature),
        Command::Study { config, out, reps, nodes, seed, demos, moments, pairing, timing_runs, fresh } => {
            study(&config, &out, reps, nodes, seed, demos, moments, pairing, timing_runs, fresh)
        }
        Command::Metrics { config, gt, estimate } => metrics(&config, &gt, &estimate),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
