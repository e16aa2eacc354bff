//! Synthetic benchmarks and end-to-end experiments.

pub mod config;
pub mod sweep;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfg::{Dfg, DfgBuilder, DfgError, OpType};

pub use config::ExperimentConfig;
pub use sweep::{render_plot_data, run_sweep, MetricsRow};

/// Generator targets for one synthetic benchmark.
///
/// `edges` counts edges leaving operation nodes, towards other nodes or
/// primary outputs. Operand edges from primary inputs are not counted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub name: String,
    pub latency: u32,
    pub ops: usize,
    pub edges: usize,
    pub outputs: usize,
    /// Switch-box count the benchmark is locked with, when fixed.
    #[serde(default)]
    pub sbs: Option<usize>,
    /// Primary input count; derived from the free operand slots when absent.
    #[serde(default)]
    pub inputs: Option<usize>,
}

impl BenchSpec {
    pub fn new(name: &str, latency: u32, ops: usize, edges: usize, outputs: usize) -> BenchSpec {
        BenchSpec {
            name: name.to_string(),
            latency,
            ops,
            edges,
            outputs,
            sbs: None,
            inputs: None,
        }
    }

    /// Allowed deviation of the generated edge count: 5 %, at least 2 edges.
    pub fn edge_tolerance(&self) -> usize {
        ((self.edges as f64 * 0.05).floor() as usize).max(2)
    }
}

/// The ten reference benchmark shapes.
pub fn builtin_benchmarks() -> Vec<BenchSpec> {
    const ROWS: [(&str, u32, usize, usize, usize, usize); 10] = [
        ("BM1", 40, 202, 405, 10, 16),
        ("BM2", 45, 250, 451, 17, 20),
        ("BM3", 55, 261, 457, 25, 23),
        ("BM4", 60, 265, 478, 36, 25),
        ("BM5", 68, 271, 482, 41, 28),
        ("BM6", 79, 275, 489, 50, 31),
        ("BM7", 85, 301, 501, 55, 35),
        ("BM8", 101, 354, 505, 67, 39),
        ("BM9", 110, 408, 510, 78, 55),
        ("BM10", 112, 507, 521, 86, 64),
    ];
    ROWS.iter()
        .map(|&(name, latency, ops, edges, outputs, sbs)| BenchSpec {
            sbs: Some(sbs),
            ..BenchSpec::new(name, latency, ops, edges, outputs)
        })
        .collect()
}

pub fn builtin(name: &str) -> Option<BenchSpec> {
    builtin_benchmarks()
        .into_iter()
        .find(|b| b.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BenchError {
    #[error("benchmark `{name}`: {reason}")]
    Infeasible { name: String, reason: String },
    #[error("benchmark `{name}`: generated graph is invalid: {source}")]
    Invalid { name: String, source: DfgError },
}

const ATTEMPTS: u64 = 16;

/// Generates a random graph meeting `spec`.
///
/// A spine chain fixes the critical path at `min(latency, ops)`. Every other
/// node gets a random level below the spine end; edges only climb levels, so
/// the critical path never exceeds the spine.
pub fn gen_bench(spec: &BenchSpec, seed: u64) -> Result<Dfg, BenchError> {
    let infeasible = |reason: String| BenchError::Infeasible {
        name: spec.name.clone(),
        reason,
    };
    if spec.ops == 0 {
        return Err(infeasible("operator count must be positive".into()));
    }
    if spec.outputs == 0 {
        return Err(infeasible("at least one primary output is required".into()));
    }
    if spec.latency == 0 {
        return Err(infeasible("schedule length must be positive".into()));
    }
    if spec.edges + spec.edge_tolerance() < spec.ops {
        return Err(infeasible(format!(
            "{} edges cannot give each of {} operators a consumer",
            spec.edges, spec.ops
        )));
    }
    let mut last = None;
    for attempt in 0..ATTEMPTS {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9)));
        match attempt_gen(spec, &mut rng) {
            Ok(g) => return Ok(g),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap())
}

fn attempt_gen(spec: &BenchSpec, rng: &mut ChaCha8Rng) -> Result<Dfg, BenchError> {
    let n = spec.ops;
    let top = (spec.latency as usize).min(n);
    let infeasible = |reason: String| BenchError::Infeasible {
        name: spec.name.clone(),
        reason,
    };

    // Levels: the spine takes 1..=top, the rest are random.
    let mut level: Vec<usize> = (1..=top).collect();
    level.extend((top..n).map(|_| rng.gen_range(1..=top.saturating_sub(1).max(1))));
    // Node order by level keeps ids roughly topological.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.sort_by_key(|&v| (level[v], v >= top));
    let spine_end = top - 1;

    // Output drivers: the spine end, then the highest other levels.
    let mut by_height: Vec<usize> = (0..n).filter(|&v| v != spine_end).collect();
    by_height.shuffle(rng);
    by_height.sort_by_key(|&v| std::cmp::Reverse(level[v]));
    let mut drivers = vec![spine_end];
    drivers.extend(
        by_height
            .iter()
            .copied()
            .take(spec.outputs.saturating_sub(1)),
    );
    while drivers.len() < spec.outputs {
        drivers.push(drivers[rng.gen_range(0..drivers.len())]);
    }
    let mut is_driver = vec![false; n];
    for &d in &drivers {
        is_driver[d] = true;
    }

    // Operand slots: None is free.
    let mut slot: Vec<[Option<usize>; 2]> = vec![[None, None]; n];
    let mut node_edges = 0usize;
    let mut has_consumer = vec![false; n];
    for v in 1..top {
        slot[v][0] = Some(v - 1);
        has_consumer[v - 1] = true;
        node_edges += 1;
    }

    // Every non-driver needs a consumer on a higher level.
    let mut need: Vec<usize> = (0..n)
        .filter(|&v| !is_driver[v] && !has_consumer[v])
        .collect();
    need.shuffle(rng);
    need.sort_by_key(|&v| std::cmp::Reverse(level[v]));
    for v in need {
        let cands: Vec<(usize, usize)> = (0..n)
            .filter(|&u| level[u] > level[v])
            .flat_map(|u| [(u, 0), (u, 1)])
            .filter(|&(u, p)| slot[u][p].is_none())
            .collect();
        let Some(&(u, p)) = cands.choose(rng) else {
            return Err(infeasible(format!(
                "no free operand slot above level {} to consume a node",
                level[v]
            )));
        };
        slot[u][p] = Some(v);
        node_edges += 1;
    }

    // Extra node-to-node edges up to the target.
    let target_nn = spec.edges.saturating_sub(spec.outputs);
    let mut free: Vec<(usize, usize)> = (0..n)
        .filter(|&u| level[u] > 1)
        .flat_map(|u| [(u, 0), (u, 1)])
        .filter(|&(u, p)| slot[u][p].is_none())
        .collect();
    free.shuffle(rng);
    let lower: Vec<Vec<usize>> = {
        let mut sorted: Vec<usize> = (0..n).collect();
        sorted.sort_by_key(|&v| level[v]);
        (0..=top)
            .map(|l| {
                sorted
                    .iter()
                    .copied()
                    .take_while(|&v| level[v] < l)
                    .collect()
            })
            .collect()
    };
    for (u, p) in free {
        if node_edges >= target_nn {
            break;
        }
        let pool = &lower[level[u]];
        slot[u][p] = Some(pool[rng.gen_range(0..pool.len())]);
        node_edges += 1;
    }

    let total = node_edges + spec.outputs;
    if total.abs_diff(spec.edges) > spec.edge_tolerance() {
        return Err(infeasible(format!(
            "reached {total} edges, target {} +/- {}",
            spec.edges,
            spec.edge_tolerance()
        )));
    }

    // Remaining slots read primary inputs, each input at least once.
    let mut open: Vec<(usize, usize)> = (0..n)
        .flat_map(|u| [(u, 0), (u, 1)])
        .filter(|&(u, p)| slot[u][p].is_none())
        .collect();
    open.shuffle(rng);
    let default_inputs = open.len().div_ceil(3).max(1);
    let inputs = spec
        .inputs
        .unwrap_or(default_inputs)
        .clamp(1, open.len().max(1));
    let mut input_of: Vec<[Option<usize>; 2]> = vec![[None, None]; n];
    for (i, &(u, p)) in open.iter().enumerate() {
        let k = if i < inputs {
            i
        } else {
            rng.gen_range(0..inputs)
        };
        input_of[u][p] = Some(k);
    }

    let ops = [OpType::Add, OpType::Sub, OpType::Mul];
    let types: Vec<OpType> = (0..n)
        .map(|_| {
            let r = rng.gen_range(0..100);
            ops[if r < 40 {
                0
            } else if r < 75 {
                1
            } else {
                2
            }]
        })
        .collect();

    let nw = digits(n).max(3);
    let iw = digits(inputs).max(2);
    let ow = digits(spec.outputs).max(2);
    let mut rank = vec![0usize; n];
    for (r, &v) in order.iter().enumerate() {
        rank[v] = r;
    }
    let name = |v: usize| format!("n{:0nw$}", rank[v]);
    let mut b = DfgBuilder::new(spec.name.clone());
    for i in 0..inputs {
        b.input(format!("i{i:0iw$}"));
    }
    for o in 0..spec.outputs {
        b.output(format!("o{o:0ow$}"));
    }
    for &v in &order {
        b.node(name(v), types[v]);
    }
    let total_edges = 2 * n + spec.outputs;
    let ew = digits(total_edges).max(4);
    let mut e = 0usize;
    let mut edge = |b: &mut DfgBuilder, src: String, dst: String, port: Option<u8>| {
        b.edge(format!("e{e:0ew$}"), src, dst, port);
        e += 1;
    };
    for &u in &order {
        for p in 0..2 {
            let src = match (slot[u][p], input_of[u][p]) {
                (Some(v), _) => name(v),
                (None, Some(i)) => format!("i{i:0iw$}"),
                (None, None) => unreachable!("every operand slot is filled"),
            };
            edge(&mut b, src, name(u), Some(p as u8));
        }
    }
    for (o, &d) in drivers.iter().enumerate() {
        edge(&mut b, name(d), format!("o{o:0ow$}"), None);
    }
    b.build().map_err(|source| BenchError::Invalid {
        name: spec.name.clone(),
        source,
    })
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

/// Edges leaving operation nodes, the quantity `BenchSpec::edges` targets.
pub fn node_edge_count(dfg: &Dfg) -> usize {
    (0..dfg.node_count()).map(|v| dfg.fanout_count(v)).sum()
}
