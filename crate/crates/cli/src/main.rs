use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use polylock::attack::{attack_loop, AttackConfig, Backend, SolverCommand};
use polylock::bench::config::ExperimentConfig;
use polylock::bench::sweep::{read_csv, to_csv, trend};
use polylock::bench::{builtin, gen_bench, render_plot_data, run_sweep, BenchSpec};
use polylock::bind::synthesize;
use polylock::dfg::parse_dfg;
use polylock::lock::{insert_sbs, LockConfig, LockedDesign};
use polylock::netlist::DatapathNetlist;
use polylock::polysb::{CorruptionPolicy, DesignKey};
use polylock::sim::{error_rate, simulate, SimInput, Simulator};

/// Security-aware HLS with polymorphic switch-box locking.
#[derive(Parser)]
#[command(name = "polylock", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark graph.
    Gen(GenArgs),
    /// Schedule and bind a graph into a datapath netlist.
    Hls(HlsArgs),
    /// Insert switch boxes into a netlist.
    Lock(LockArgs),
    /// Simulate a locked design, or measure its wrong-key error rate.
    Sim(SimArgs),
    /// Run the oracle-guided attack on a foundry view.
    Attack(AttackArgs),
    /// Run an overhead sweep from a TOML experiment file.
    Sweep(SweepArgs),
    /// Summarise a sweep CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Built-in benchmark name (BM1..BM10).
    #[arg(long, conflicts_with_all = ["latency", "ops", "edges", "outputs"])]
    bench: Option<String>,
    #[arg(long, default_value = "custom")]
    name: String,
    #[arg(long)]
    latency: Option<u32>,
    #[arg(long)]
    ops: Option<usize>,
    #[arg(long)]
    edges: Option<usize>,
    #[arg(long)]
    outputs: Option<usize>,
    #[arg(long)]
    inputs: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HlsArgs {
    /// Graph in the text format.
    input: PathBuf,
    /// Schedule length; the critical-path length when absent.
    #[arg(long)]
    latency: Option<u32>,
    #[arg(long, default_value_t = 8)]
    width: u32,
    /// Netlist JSON output; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write the per-node schedule dump here.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args)]
struct LockArgs {
    /// Netlist JSON from `hls`.
    input: PathBuf,
    /// Area overhead budget in percent.
    #[arg(long, default_value_t = 20.0)]
    budget: f64,
    /// Fraction of boxes whose correct mode is Cross.
    #[arg(long, default_value_t = 0.5)]
    cross: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_sbs: Option<usize>,
    #[arg(long, default_value = "wired_or")]
    policy: CorruptionPolicy,
    /// Locked design JSON output.
    #[arg(short, long)]
    out: PathBuf,
    /// Golden key output.
    #[arg(long)]
    key: PathBuf,
    /// Write the foundry view, without correct modes.
    #[arg(long)]
    redact: bool,
}

#[derive(Args)]
struct SimArgs {
    /// Locked design JSON.
    design: PathBuf,
    /// Key file to apply; must hold the golden key for `--error-rate`.
    #[arg(long)]
    key: Option<PathBuf>,
    /// Input assignment `name=value`; repeatable.
    #[arg(long = "input", value_parser = parse_assignment)]
    inputs: Vec<(String, u64)>,
    /// Measure the wrong-key error rate instead of simulating one input.
    #[arg(long)]
    error_rate: bool,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Enum,
    Smt,
}

#[derive(Args)]
struct AttackArgs {
    /// Foundry view of the design (modes may be present; they are ignored).
    design: PathBuf,
    /// Activated chip: the full design JSON answering oracle queries.
    #[arg(long)]
    oracle: PathBuf,
    /// Golden key of the activated chip.
    #[arg(long)]
    oracle_key: PathBuf,
    #[arg(long, value_enum, default_value = "enum")]
    backend: BackendKind,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 60.0)]
    timeout_s: f64,
    /// Largest box count the enumerative backend accepts.
    #[arg(long, default_value_t = 2)]
    capacity: usize,
    #[arg(long, default_value = "z3 -smt2")]
    solver_cmd: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    /// TOML experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the overhead grid.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    width: Option<u32>,
    /// CSV output; stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write gnuplot data here.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Sweep CSV.
    input: PathBuf,
    /// Write gnuplot data here instead of printing a table.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> Result<(String, u64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let value = match value.strip_prefix("0x") {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => value.parse(),
    }
    .map_err(|e| format!("bad value in `{s}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_design(path: &Path) -> Result<LockedDesign> {
    LockedDesign::from_json(&read(path)?)
        .with_context(|| format!("{} is not a locked design", path.display()))
}

fn load_key(path: &Path) -> Result<DesignKey> {
    read(path)?
        .trim()
        .parse()
        .with_context(|| format!("{} does not hold a key", path.display()))
}

fn gen(a: GenArgs) -> Result<()> {
    let spec = match &a.bench {
        Some(name) => {
            builtin(name).with_context(|| format!("unknown built-in benchmark `{name}`"))?
        }
        None => {
            let (Some(latency), Some(ops), Some(edges), Some(outputs)) =
                (a.latency, a.ops, a.edges, a.outputs)
            else {
                bail!("give --bench, or all of --latency, --ops, --edges and --outputs");
            };
            BenchSpec {
                inputs: a.inputs,
                ..BenchSpec::new(&a.name, latency, ops, edges, outputs)
            }
        }
    };
    let dfg = gen_bench(&spec, a.seed)?;
    write_or_print(a.out.as_deref(), &dfg.to_string())
}

fn hls(a: HlsArgs) -> Result<()> {
    let dfg = parse_dfg(&read(&a.input)?)?;
    let latency = a.latency.unwrap_or_else(|| dfg.critical_path_len());
    let syn = synthesize(&dfg, latency, a.width)?;
    if let Some(p) = &a.schedule {
        fs::write(p, syn.schedule.dump(&dfg))
            .with_context(|| format!("cannot write {}", p.display()))?;
    }
    write_or_print(a.out.as_deref(), &syn.netlist.to_json())
}

fn lock(a: LockArgs) -> Result<()> {
    let netlist = DatapathNetlist::from_json(&read(&a.input)?)
        .with_context(|| format!("{} is not a netlist", a.input.display()))?;
    let cfg = LockConfig {
        budget_pct: a.budget,
        cross_fraction: a.cross,
        seed: a.seed,
        max_sbs: a.max_sbs,
        policy: a.policy,
        ..LockConfig::default()
    };
    let design = insert_sbs(&netlist, &cfg)?;
    let golden = design.golden.clone().unwrap_or_default();
    fs::write(&a.key, format!("{golden}\n"))
        .with_context(|| format!("cannot write {}", a.key.display()))?;
    let view = if a.redact {
        design.foundry_view()
    } else {
        design.clone()
    };
    fs::write(&a.out, view.to_json())
        .with_context(|| format!("cannot write {}", a.out.display()))?;
    eprintln!(
        "{} switch boxes, {} key bits, {:.2}% overhead",
        design.sb_count(),
        design.key_bits,
        design.overhead_pct
    );
    if let Some(w) = &design.warning {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn sim(a: SimArgs) -> Result<()> {
    let mut design = load_design(&a.design)?;
    let key = a.key.as_deref().map(load_key).transpose()?;
    if a.error_rate {
        design.golden = Some(key.context("--error-rate needs the golden key via --key")?);
        let report = error_rate(&design, a.trials, a.seed)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    let values: HashMap<String, u64> = a.inputs.into_iter().collect();
    let input = SimInput::from_named(&design.netlist.meta.inputs, &values)?;
    let out = simulate(&design, key.as_ref(), &input)?;
    let named: Vec<serde_json::Value> = design
        .netlist
        .meta
        .outputs
        .iter()
        .zip(out.outputs.iter().zip(&out.unknown))
        .map(|(name, (v, x))| serde_json::json!({ "name": name, "value": v, "unknown_mask": x }))
        .collect();
    println!("{}", serde_json::to_string_pretty(&named)?);
    Ok(())
}

fn attack(a: AttackArgs) -> Result<()> {
    let view = load_design(&a.design)?.foundry_view();
    let chip = load_design(&a.oracle)?;
    let golden = load_key(&a.oracle_key)?;
    let sim = Simulator::for_design(&chip)?;
    sim.run_key(&golden, &SimInput(vec![0; sim.input_count()]))
        .context("oracle key does not fit the oracle design")?;
    let oracle = |i: &SimInput| sim.run_key(&golden, i).expect("input shape checked");
    let timeout = Duration::from_secs_f64(a.timeout_s.max(0.0));
    let backend = match a.backend {
        BackendKind::Enum => Backend::Enumerative {
            capacity: a.capacity,
        },
        BackendKind::Smt => {
            let mut cmd = SolverCommand::parse(&a.solver_cmd).context("empty --solver-cmd")?;
            cmd.timeout = timeout;
            Backend::Smt(cmd)
        }
    };
    let cfg = AttackConfig {
        backend,
        max_iters: a.max_iters,
        timeout,
        seed: a.seed,
    };
    let result = attack_loop(&view, &oracle, &cfg)?;
    println!("{}", result.to_json());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let text = read(&a.config)?;
    let mut cfg: ExperimentConfig =
        toml::from_str(&text).with_context(|| format!("cannot parse {}", a.config.display()))?;
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(g) = a.grid {
        cfg.overhead_grid = g;
    }
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    if let Some(w) = a.width {
        cfg.width = w;
    }
    cfg.validate()?;
    let rows = run_sweep(&cfg)?;
    if let Some(p) = &a.plot {
        fs::write(p, render_plot_data(&rows))
            .with_context(|| format!("cannot write {}", p.display()))?;
    }
    write_or_print(a.out.as_deref(), &to_csv(&rows))
}

fn report(a: ReportArgs) -> Result<()> {
    let rows = read_csv(read(&a.input)?.as_bytes())
        .with_context(|| format!("{} is not a sweep CSV", a.input.display()))?;
    if let Some(p) = &a.plot {
        return fs::write(p, render_plot_data(&rows))
            .with_context(|| format!("cannot write {}", p.display()));
    }
    println!(
        "{:<10} {:>8} {:>10} {:>8} {:>10} {:>7}",
        "benchmark", "budget%", "overhead%", "SBs", "err.rate", "seeds"
    );
    for (bench, pts) in trend(&rows) {
        for p in pts {
            println!(
                "{:<10} {:>8.1} {:>10.2} {:>8.1} {:>10.4} {:>7}",
                bench,
                p.budget_pct,
                p.mean_overhead_pct,
                p.mean_sb_count,
                p.mean_error_rate,
                p.samples
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Hls(a) => hls(a),
        Command::Lock(a) => lock(a),
        Command::Sim(a) => sim(a),
        Command::Attack(a) => attack(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
