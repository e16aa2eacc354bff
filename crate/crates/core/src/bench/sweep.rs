//! Overhead sweeps and plot-data rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{gen_bench, BenchSpec, ExperimentConfig};
use crate::attack::{attack_loop, AttackConfig, Backend};
use crate::bind::synthesize;
use crate::lock::{insert_sbs, LockConfig, LockedDesign};
use crate::sim::{error_rate, Simulator};

/// One CSV row: a benchmark, a seed and an overhead budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub benchmark: String,
    pub seed: u64,
    pub sb_count: usize,
    pub overhead_pct: f64,
    pub trials: u64,
    pub error_rate: f64,
    pub budget_pct: f64,
    pub key_bits: usize,
    pub attack_status: Option<String>,
    pub attack_iterations: Option<usize>,
}

#[derive(Debug, Error)]
#[error("benchmark `{benchmark}`, seed {seed}: {message}")]
pub struct SweepError {
    pub benchmark: String,
    pub seed: u64,
    pub message: String,
}

fn lock_config(config: &ExperimentConfig, spec: &BenchSpec, seed: u64, budget: f64) -> LockConfig {
    LockConfig {
        budget_pct: budget,
        cross_fraction: config.cross_fraction,
        seed,
        max_sbs: if config.cap_to_target { spec.sbs } else { None },
        area: config.area,
        policy: config.policy,
    }
}

fn run_point(
    config: &ExperimentConfig,
    spec: &BenchSpec,
    seed: u64,
) -> Result<Vec<MetricsRow>, String> {
    let dfg = gen_bench(spec, seed).map_err(|e| e.to_string())?;
    let syn = synthesize(&dfg, spec.latency, config.width).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for &budget in &config.overhead_grid {
        let locked = insert_sbs(&syn.netlist, &lock_config(config, spec, seed, budget))
            .map_err(|e| e.to_string())?;
        let report = error_rate(&locked, config.trials, seed).map_err(|e| e.to_string())?;
        let (attack_status, attack_iterations) = match &config.attack {
            Some(a) => {
                let r = run_attack(&locked, a)?;
                (Some(r.0), Some(r.1))
            }
            None => (None, None),
        };
        rows.push(MetricsRow {
            benchmark: spec.name.clone(),
            seed,
            sb_count: locked.sb_count(),
            overhead_pct: locked.overhead_pct,
            trials: report.trials,
            error_rate: report.error_rate,
            budget_pct: budget,
            key_bits: locked.key_bits,
            attack_status,
            attack_iterations,
        });
    }
    Ok(rows)
}

fn run_attack(
    locked: &LockedDesign,
    settings: &super::config::AttackSettings,
) -> Result<(String, usize), String> {
    let sim = Simulator::for_design(locked).map_err(|e| e.to_string())?;
    let golden = locked.golden.clone().unwrap_or_default();
    let oracle = |i: &crate::sim::SimInput| {
        sim.run_key(&golden, i)
            .expect("oracle input is well formed")
    };
    let cfg = AttackConfig {
        backend: Backend::Enumerative {
            capacity: settings.capacity,
        },
        max_iters: settings.max_iters,
        timeout: Duration::from_secs_f64(settings.timeout_s.max(0.0)),
        seed: 0,
    };
    let r = attack_loop(&locked.foundry_view(), &oracle, &cfg).map_err(|e| e.to_string())?;
    Ok((format!("{:?}", r.status), r.iterations))
}

/// Runs every benchmark × seed × overhead point; rows come back sorted.
pub fn run_sweep(config: &ExperimentConfig) -> Result<Vec<MetricsRow>, SweepError> {
    let jobs: Vec<(BenchSpec, u64)> = config
        .benchmarks()
        .into_iter()
        .flat_map(|b| config.seeds.iter().map(move |&s| (b.clone(), s)))
        .collect();
    let results: Vec<Result<Vec<MetricsRow>, SweepError>> =
        crate::par::map(&jobs, |(spec, seed)| {
            run_point(config, spec, *seed).map_err(|message| SweepError {
                benchmark: spec.name.clone(),
                seed: *seed,
                message,
            })
        });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    sort_rows(&mut rows);
    Ok(rows)
}

pub fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        a.benchmark
            .cmp(&b.benchmark)
            .then(a.seed.cmp(&b.seed))
            .then(a.budget_pct.total_cmp(&b.budget_pct))
    });
}

pub fn write_csv<W: std::io::Write>(rows: &[MetricsRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory succeeds");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Mean error rate per benchmark and budget.
#[derive(Debug, Clone, PartialEq)]
pub struct TrendPoint {
    pub budget_pct: f64,
    pub mean_overhead_pct: f64,
    pub mean_error_rate: f64,
    pub min_error_rate: f64,
    pub max_error_rate: f64,
    pub mean_sb_count: f64,
    pub samples: usize,
}

pub fn trend(rows: &[MetricsRow]) -> BTreeMap<String, Vec<TrendPoint>> {
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<&MetricsRow>>> = BTreeMap::new();
    for r in rows {
        groups
            .entry(r.benchmark.clone())
            .or_default()
            .entry(r.budget_pct.to_bits())
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|(b, by_budget)| {
            let mut pts: Vec<TrendPoint> = by_budget
                .into_values()
                .map(|rs| {
                    let n = rs.len() as f64;
                    let mean =
                        |f: &dyn Fn(&MetricsRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
                    TrendPoint {
                        budget_pct: rs[0].budget_pct,
                        mean_overhead_pct: mean(&|r| r.overhead_pct),
                        mean_error_rate: mean(&|r| r.error_rate),
                        min_error_rate: rs
                            .iter()
                            .map(|r| r.error_rate)
                            .fold(f64::INFINITY, f64::min),
                        max_error_rate: rs
                            .iter()
                            .map(|r| r.error_rate)
                            .fold(f64::NEG_INFINITY, f64::max),
                        mean_sb_count: mean(&|r| r.sb_count as f64),
                        samples: rs.len(),
                    }
                })
                .collect();
            pts.sort_by(|a, b| a.budget_pct.total_cmp(&b.budget_pct));
            (b, pts)
        })
        .collect()
}

/// Gnuplot data: one indexed block per benchmark, separated by two blank lines.
pub fn render_plot_data(rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    for (i, (bench, pts)) in trend(rows).into_iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        let _ = writeln!(s, "# {bench}");
        s.push_str("# budget_pct mean_overhead_pct mean_error_rate min_error_rate max_error_rate mean_sb_count samples\n");
        for p in pts {
            let _ = writeln!(
                s,
                "{} {:.4} {:.6} {:.6} {:.6} {:.2} {}",
                p.budget_pct,
                p.mean_overhead_pct,
                p.mean_error_rate,
                p.min_error_rate,
                p.max_error_rate,
                p.mean_sb_count,
                p.samples
            );
        }
    }
    s
}
