//! Random graphs and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use polylock::dfg::{Dfg, DfgBuilder, OpType, Sink, Source};
use polylock::sched::{Schedule, TimeFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random valid graph built without the benchmark generator.
///
/// Operands come from one of the few preceding nodes or from a primary input.
/// Nodes nobody consumes become outputs, plus a few extra outputs.
pub fn random_dfg(seed: u64, nodes: usize, inputs: usize) -> Dfg {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut operand: Vec<[Source; 2]> = Vec::with_capacity(nodes);
    for v in 0..nodes {
        let pick = |rng: &mut ChaCha8Rng| {
            if v > 0 && rng.gen_bool(0.6) {
                Source::Node(rng.gen_range(v.saturating_sub(4)..v))
            } else {
                Source::Input(rng.gen_range(0..inputs))
            }
        };
        operand.push([pick(&mut rng), pick(&mut rng)]);
    }
    let mut consumed = vec![false; nodes];
    for ops in &operand {
        for s in ops {
            if let Source::Node(u) = *s {
                consumed[u] = true;
            }
        }
    }
    let drivers: Vec<usize> = (0..nodes)
        .filter(|&v| !consumed[v] || rng.gen_bool(0.15))
        .collect();
    let mut used = vec![false; inputs];
    for ops in &operand {
        for s in ops {
            if let Source::Input(i) = *s {
                used[i] = true;
            }
        }
    }
    let ops = OpType::ALL;
    let mut b = DfgBuilder::new(format!("r{seed}"));
    for i in (0..inputs).filter(|&i| used[i]) {
        b.input(format!("x{i}"));
    }
    for o in 0..drivers.len() {
        b.output(format!("o{o}"));
    }
    for v in 0..nodes {
        b.node(format!("n{v:02}"), ops[rng.gen_range(0..3)]);
    }
    let mut e = 0;
    for (v, srcs) in operand.iter().enumerate() {
        for (p, s) in srcs.iter().enumerate() {
            let src = match *s {
                Source::Node(u) => format!("n{u:02}"),
                Source::Input(i) => format!("x{i}"),
            };
            b.edge(format!("e{e}"), src, format!("n{v:02}"), Some(p as u8));
            e += 1;
        }
    }
    for (o, &d) in drivers.iter().enumerate() {
        b.edge(format!("e{e}"), format!("n{d:02}"), format!("o{o}"), None);
        e += 1;
    }
    b.build().expect("random graph is valid")
}

/// Primary outputs reachable from `v`, by DFS over the raw edge list.
pub fn po_oracle(dfg: &Dfg, v: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    let mut stack = vec![v];
    let mut seen = BTreeSet::new();
    while let Some(u) = stack.pop() {
        if !seen.insert(u) {
            continue;
        }
        for e in dfg.edges() {
            if e.src != Source::Node(u) {
                continue;
            }
            match e.dst {
                Sink::Output(o) => {
                    out.insert(o);
                }
                Sink::Node { node, .. } => stack.push(node),
            }
        }
    }
    out
}

pub fn fo_oracle(dfg: &Dfg, v: usize) -> usize {
    dfg.edges()
        .iter()
        .filter(|e| e.src == Source::Node(v))
        .count()
}

fn preds(dfg: &Dfg, v: usize) -> Vec<usize> {
    dfg.edges()
        .iter()
        .filter_map(|e| match (e.src, e.dst) {
            (Source::Node(u), Sink::Node { node, .. }) if node == v => Some(u),
            _ => None,
        })
        .collect()
}

fn succs(dfg: &Dfg, v: usize) -> Vec<usize> {
    dfg.edges()
        .iter()
        .filter_map(|e| match (e.src, e.dst) {
            (Source::Node(u), Sink::Node { node, .. }) if u == v => Some(node),
            _ => None,
        })
        .collect()
}

fn longest(v: usize, next: &dyn Fn(usize) -> Vec<usize>, memo: &mut HashMap<usize, u32>) -> u32 {
    if let Some(&d) = memo.get(&v) {
        return d;
    }
    let d = 1 + next(v)
        .into_iter()
        .map(|u| longest(u, next, memo))
        .max()
        .unwrap_or(0);
    memo.insert(v, d);
    d
}

/// Longest chain ending at `v`, counted in nodes.
pub fn depth_from_inputs(dfg: &Dfg, v: usize) -> u32 {
    longest(v, &|u| preds(dfg, u), &mut HashMap::new())
}

/// Longest chain starting at `v`, counted in nodes.
pub fn depth_to_outputs(dfg: &Dfg, v: usize) -> u32 {
    longest(v, &|u| succs(dfg, u), &mut HashMap::new())
}

pub fn frames_oracle(dfg: &Dfg, latency: u32) -> Vec<TimeFrame> {
    (0..dfg.node_count())
        .map(|v| TimeFrame {
            asap: depth_from_inputs(dfg, v),
            alap: latency + 1 - depth_to_outputs(dfg, v),
        })
        .collect()
}

/// Direct recursive evaluation of the graph modulo `2^width`.
pub fn interpret(dfg: &Dfg, inputs: &[u64], width: u32) -> Vec<u64> {
    let mask = if width == 64 {
        u64::MAX
    } else {
        (1 << width) - 1
    };
    fn value(
        dfg: &Dfg,
        s: Source,
        inputs: &[u64],
        mask: u64,
        memo: &mut HashMap<usize, u64>,
    ) -> u64 {
        match s {
            Source::Input(i) => inputs[i] & mask,
            Source::Node(v) => {
                if let Some(&x) = memo.get(&v) {
                    return x;
                }
                let mut operand = [0u64; 2];
                for e in dfg.edges() {
                    if let Sink::Node { node, port } = e.dst {
                        if node == v {
                            operand[port as usize] = value(dfg, e.src, inputs, mask, memo);
                        }
                    }
                }
                let (a, b) = (operand[0], operand[1]);
                let x = match dfg.op(v) {
                    OpType::Add => a.wrapping_add(b),
                    OpType::Sub => a.wrapping_sub(b),
                    OpType::Mul => a.wrapping_mul(b),
                } & mask;
                memo.insert(v, x);
                x
            }
        }
    }
    let mut memo = HashMap::new();
    let mut out = vec![0; dfg.outputs().len()];
    for e in dfg.edges() {
        if let Sink::Output(o) = e.dst {
            out[o] = value(dfg, e.src, inputs, mask, &mut memo);
        }
    }
    out
}

/// The max-weight critical-path node of `op` with weight above 2, lowest id on ties.
pub fn anchor(dfg: &Dfg, s: &Schedule, op: OpType) -> Option<usize> {
    (0..dfg.node_count())
        .filter(|&v| dfg.op(v) == op && s.frames[v].mobility() == 1 && s.weights[v].w > 2)
        .max_by_key(|&v| (s.weights[v].w, std::cmp::Reverse(v)))
}

/// Priority nodes paired with the anchor step they should avoid.
pub fn separation_holes(dfg: &Dfg, s: &Schedule) -> Vec<(usize, usize)> {
    let mut holes = Vec::new();
    for op in OpType::ALL {
        let Some(c) = anchor(dfg, s, op) else {
            continue;
        };
        for p in 0..dfg.node_count() {
            if dfg.op(p) == op && s.frames[p].mobility() > 1 && s.weights[p].w > 2 {
                holes.push((p, c));
            }
        }
    }
    holes
}

/// Priority nodes scheduled on their anchor's step, as `(p, c)` pairs.
pub fn separation_violations(dfg: &Dfg, s: &Schedule) -> Vec<(usize, usize)> {
    separation_holes(dfg, s)
        .into_iter()
        .filter(|&(p, c)| s.step(p) == s.step(c))
        .collect()
}

/// Whether any precedence-respecting assignment inside the frames keeps every
/// priority node off its anchor's step. Exhaustive backtracking.
pub fn fully_separable(dfg: &Dfg, s: &Schedule) -> bool {
    let n = dfg.node_count();
    let mut hole = vec![None; n];
    for (p, c) in separation_holes(dfg, s) {
        hole[p] = Some(s.frames[c].asap);
    }
    let order = {
        let mut o: Vec<usize> = (0..n).collect();
        o.sort_by_key(|&v| depth_from_inputs(dfg, v));
        o
    };
    let preds: Vec<Vec<usize>> = (0..n).map(|v| preds(dfg, v)).collect();
    fn go(
        i: usize,
        order: &[usize],
        preds: &[Vec<usize>],
        frames: &[TimeFrame],
        hole: &[Option<u32>],
        step: &mut Vec<u32>,
    ) -> bool {
        let Some(&v) = order.get(i) else { return true };
        let lb = preds[v].iter().map(|&u| step[u] + 1).max().unwrap_or(1);
        for t in frames[v].asap.max(lb)..=frames[v].alap {
            if hole[v] == Some(t) {
                continue;
            }
            step[v] = t;
            if go(i + 1, order, preds, frames, hole, step) {
                return true;
            }
        }
        false
    }
    go(0, &order, &preds, &s.frames, &hole, &mut vec![0; n])
}

/// Checks precedence, frame containment, the critical-path fixpoint and the
/// weights. Returns the first violation.
pub fn check_schedule_core(dfg: &Dfg, s: &Schedule) -> Result<(), String> {
    let frames = frames_oracle(dfg, s.latency);
    if s.frames != frames {
        return Err(format!(
            "frames {:?} differ from oracle {:?}",
            s.frames, frames
        ));
    }
    for e in dfg.edges() {
        if let (Source::Node(u), Sink::Node { node: v, .. }) = (e.src, e.dst) {
            if s.step(u) >= s.step(v) {
                return Err(format!("edge {} violates precedence", e.id));
            }
        }
    }
    for v in 0..dfg.node_count() {
        let f = frames[v];
        if !f.contains(s.step(v)) {
            return Err(format!(
                "node {} at {} outside {:?}",
                dfg.node(v).id,
                s.step(v),
                f
            ));
        }
        if f.mobility() == 1 && s.step(v) != f.asap {
            return Err(format!("critical node {} moved", dfg.node(v).id));
        }
        let w = fo_oracle(dfg, v) as u32 + po_oracle(dfg, v).len() as u32;
        if s.weights[v].w != w {
            return Err(format!(
                "node {} weight {} != {w}",
                dfg.node(v).id,
                s.weights[v].w
            ));
        }
    }
    Ok(())
}

/// The core checks, plus weighted separation wherever it is attainable: if
/// some valid schedule separates every priority node, this one must too.
pub fn check_schedule(dfg: &Dfg, s: &Schedule) -> Result<(), String> {
    check_schedule_core(dfg, s)?;
    let bad = separation_violations(dfg, s);
    if !bad.is_empty() && fully_separable(dfg, s) {
        let (p, c) = bad[0];
        return Err(format!(
            "priority node {} shares step {} with critical node {} although full separation is possible",
            dfg.node(p).id,
            s.step(p),
            dfg.node(c).id
        ));
    }
    Ok(())
}

/// Largest number of stored values alive across one step boundary.
///
/// A node value crosses boundaries `def..last_use`; one that feeds an output
/// is held through the final boundary. Inputs read by nodes are not stored.
pub fn register_clique(dfg: &Dfg, s: &Schedule) -> usize {
    let mut spans: HashMap<Source, (u32, u32)> = HashMap::new();
    for e in dfg.edges() {
        let def = match e.src {
            Source::Node(u) => s.step(u),
            Source::Input(_) => 1,
        };
        let last = match (e.src, e.dst) {
            (Source::Input(_), Sink::Node { .. }) => continue,
            (_, Sink::Output(_)) => s.latency,
            (_, Sink::Node { node, .. }) => s.step(node) - 1,
        };
        let span = spans.entry(e.src).or_insert((def, last));
        span.1 = span.1.max(last);
    }
    (1..=s.latency)
        .map(|b| spans.values().filter(|&&(a, z)| a <= b && b <= z).count())
        .max()
        .unwrap_or(0)
}
