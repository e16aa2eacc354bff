//! Time frames, security weights and the security-aware force-directed
//! scheduler.
//!
//! Every node gets a weight `w = P_O + F_O`, where `P_O` counts the primary
//! outputs reachable from it and `F_O` its outgoing edges. Critical-path
//! nodes (mobility 1) are fixed first. Then, one resource type at a time,
//! mobile nodes with `w > 2` are placed in descending weight order at the
//! minimum-force step that differs from the step of the heaviest weighted
//! critical-path node of the same type, so the two can later share a
//! functional unit. Every placement is followed by placing the node's
//! unscheduled successors, each kept off steps already holding a scheduled
//! node of its own type.
//!
//! Forces follow the classic formulation: a node's occupation probability is
//! `1/mobility` over its frame, the distribution graph sums those per type
//! and step, and the force of a tentative assignment is the DG-weighted
//! change in occupation of the node itself plus every node whose frame the
//! assignment narrows.

use std::fmt;

use thiserror::Error;

use crate::dfg::{Dfg, NodeIdx, OpType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecurityWeight {
    pub po: u32,
    pub fo: u32,
    pub w: u32,
}

/// Inclusive, 1-based step range a node may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeFrame {
    pub asap: u32,
    pub alap: u32,
}

impl TimeFrame {
    pub fn fixed(step: u32) -> TimeFrame {
        TimeFrame {
            asap: step,
            alap: step,
        }
    }

    pub fn mobility(self) -> u32 {
        self.alap - self.asap + 1
    }

    pub fn contains(self, step: u32) -> bool {
        (self.asap..=self.alap).contains(&step)
    }

    pub fn steps(self) -> std::ops::RangeInclusive<u32> {
        self.asap..=self.alap
    }

    fn probability(self, step: u32) -> f64 {
        if self.contains(step) {
            1.0 / self.mobility() as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("latency bound {latency} is below the critical path length {critical_path}")]
    Infeasible { latency: u32, critical_path: u32 },
    #[error("step {step} lies outside the frame {asap}..={alap} of node `{node}`")]
    StepOutsideFrame {
        node: String,
        step: u32,
        asap: u32,
        alap: u32,
    },
}

/// Expected operator count per resource type and step.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionGraph {
    latency: u32,
    rows: Vec<Vec<f64>>,
}

impl DistributionGraph {
    pub fn new(dfg: &Dfg, frames: &[TimeFrame], latency: u32) -> DistributionGraph {
        let mut rows = vec![vec![0.0; latency as usize]; OpType::ALL.len()];
        for (n, f) in frames.iter().enumerate() {
            let p = 1.0 / f.mobility() as f64;
            let row = &mut rows[dfg.op(n).index()];
            for t in f.steps() {
                row[t as usize - 1] += p;
            }
        }
        DistributionGraph { latency, rows }
    }

    /// `dg(r, t)` for a 1-based step.
    pub fn get(&self, op: OpType, step: u32) -> f64 {
        self.rows[op.index()][step as usize - 1]
    }

    pub fn latency(&self) -> u32 {
        self.latency
    }

    fn occupancy_delta(&self, op: OpType, before: TimeFrame, after: TimeFrame) -> f64 {
        let lo = before.asap.min(after.asap);
        let hi = before.alap.max(after.alap);
        (lo..=hi)
            .map(|t| self.get(op, t) * (after.probability(t) - before.probability(t)))
            .sum()
    }
}

/// A complete assignment of nodes to control steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub latency: u32,
    pub steps: Vec<u32>,
    pub frames: Vec<TimeFrame>,
    pub weights: Vec<SecurityWeight>,
}

impl Schedule {
    pub fn step(&self, n: NodeIdx) -> u32 {
        self.steps[n]
    }

    /// One `node <id> type <op> step <t> asap <a> alap <b> mob <m> po <p> fo <f> w <w>` line per node.
    pub fn dump(&self, dfg: &Dfg) -> String {
        let mut out = String::new();
        for n in 0..dfg.node_count() {
            let f = self.frames[n];
            let w = self.weights[n];
            out.push_str(&format!(
                "node {} type {} step {} asap {} alap {} mob {} po {} fo {} w {}\n",
                dfg.node(n).id,
                dfg.op(n),
                self.steps[n],
                f.asap,
                f.alap,
                f.mobility(),
                w.po,
                w.fo,
                w.w
            ));
        }
        out
    }
}

impl fmt::Display for TimeFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.asap, self.alap)
    }
}

pub fn compute_weights(dfg: &Dfg) -> Vec<SecurityWeight> {
    (0..dfg.node_count())
        .map(|n| {
            let po = dfg.reachable_primary_outputs(n).len() as u32;
            let fo = dfg.fanout_count(n) as u32;
            SecurityWeight { po, fo, w: po + fo }
        })
        .collect()
}

/// ASAP/ALAP frames under latency bound `latency`.
pub fn compute_frames(dfg: &Dfg, latency: u32) -> Result<Vec<TimeFrame>, SchedError> {
    let order = dfg.topo_order();
    let mut asap = vec![1u32; dfg.node_count()];
    for &v in &order {
        for &u in dfg.predecessors(v) {
            asap[v] = asap[v].max(asap[u] + 1);
        }
    }
    let critical_path = asap.iter().copied().max().unwrap_or(0);
    if latency < critical_path {
        return Err(SchedError::Infeasible {
            latency,
            critical_path,
        });
    }
    let mut alap = vec![latency; dfg.node_count()];
    for &u in order.iter().rev() {
        for &v in dfg.successors(u) {
            alap[u] = alap[u].min(alap[v] - 1);
        }
    }
    Ok(asap
        .into_iter()
        .zip(alap)
        .map(|(asap, alap)| TimeFrame { asap, alap })
        .collect())
}

/// Tightens `frames` so every edge `u -> v` keeps room for `step(u) < step(v)`.
fn propagate(dfg: &Dfg, order: &[NodeIdx], frames: &mut [TimeFrame]) {
    for &v in order {
        for &u in dfg.predecessors(v) {
            frames[v].asap = frames[v].asap.max(frames[u].asap + 1);
        }
    }
    for &u in order.iter().rev() {
        for &v in dfg.successors(u) {
            frames[u].alap = frames[u].alap.min(frames[v].alap - 1);
        }
    }
}

/// Force of assigning `node` to `step` given the current `frames`.
///
/// The self force is the DG-weighted change of the node's own occupation;
/// every other node whose frame shrinks as a consequence contributes its own
/// DG-weighted change.
pub fn force(
    dfg: &Dfg,
    dg: &DistributionGraph,
    frames: &[TimeFrame],
    node: NodeIdx,
    step: u32,
) -> Result<f64, SchedError> {
    let order = dfg.topo_order();
    force_with_order(dfg, &order, dg, frames, node, step)
}

fn force_with_order(
    dfg: &Dfg,
    order: &[NodeIdx],
    dg: &DistributionGraph,
    frames: &[TimeFrame],
    node: NodeIdx,
    step: u32,
) -> Result<f64, SchedError> {
    let f = frames[node];
    if !f.contains(step) {
        return Err(SchedError::StepOutsideFrame {
            node: dfg.node(node).id.clone(),
            step,
            asap: f.asap,
            alap: f.alap,
        });
    }
    let mut tentative = frames.to_vec();
    tentative[node] = TimeFrame::fixed(step);
    propagate(dfg, order, &mut tentative);
    Ok(frames
        .iter()
        .zip(&tentative)
        .enumerate()
        .filter(|(_, (before, after))| before != after)
        .map(|(m, (&before, &after))| dg.occupancy_delta(dfg.op(m), before, after))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Priority,
    Successor,
    Plain,
}

struct Scheduler<'a> {
    dfg: &'a Dfg,
    order: Vec<NodeIdx>,
    latency: u32,
    base: Vec<TimeFrame>,
    weights: Vec<SecurityWeight>,
    /// Current frames; placed nodes have a single step.
    frames: Vec<TimeFrame>,
    placed: Vec<bool>,
    /// Per resource type: step of the heaviest `w > 2` critical-path node.
    anchor: [Option<u32>; 3],
    /// Step each mobile `w > 2` node must avoid, when its type has an anchor.
    hole: Vec<Option<u32>>,
}

impl<'a> Scheduler<'a> {
    fn new(dfg: &'a Dfg, latency: u32) -> Result<Self, SchedError> {
        let base = compute_frames(dfg, latency)?;
        let weights = compute_weights(dfg);
        let n = dfg.node_count();
        let placed: Vec<bool> = base.iter().map(|f| f.mobility() == 1).collect();

        let mut anchor = [None; 3];
        let mut best: [Option<NodeIdx>; 3] = [None; 3];
        for v in (0..n).filter(|&v| placed[v] && weights[v].w > 2) {
            let slot = &mut best[dfg.op(v).index()];
            if slot.is_none_or(|b| weights[v].w > weights[b].w) {
                *slot = Some(v);
            }
        }
        for (r, b) in best.iter().enumerate() {
            anchor[r] = b.map(|v| base[v].asap);
        }
        let hole = (0..n)
            .map(|v| {
                if !placed[v] && weights[v].w > 2 {
                    anchor[dfg.op(v).index()]
                } else {
                    None
                }
            })
            .collect();

        Ok(Scheduler {
            dfg,
            order: dfg.topo_order(),
            latency,
            frames: base.clone(),
            base,
            weights,
            placed,
            anchor,
            hole,
        })
    }

    fn run(mut self) -> Schedule {
        let dfg = self.dfg;
        let n = dfg.node_count();
        let mobile: Vec<NodeIdx> = (0..n).filter(|&v| !self.placed[v]).collect();

        let mut types: Vec<OpType> = OpType::ALL
            .into_iter()
            .filter(|&r| mobile.iter().any(|&v| dfg.op(v) == r))
            .collect();
        let heaviest = |r: OpType| {
            mobile
                .iter()
                .filter(|&&v| dfg.op(v) == r)
                .map(|&v| self.weights[v].w)
                .max()
                .unwrap_or(0)
        };
        types.sort_by_key(|&r| (std::cmp::Reverse(heaviest(r)), r.index()));

        for r in types {
            let mut priority: Vec<NodeIdx> = mobile
                .iter()
                .copied()
                .filter(|&v| dfg.op(v) == r && self.weights[v].w > 2)
                .collect();
            priority.sort_by_key(|&v| (std::cmp::Reverse(self.weights[v].w), v));
            for v in priority {
                if !self.placed[v] {
                    self.place(v, Role::Priority);
                    self.place_successors(v);
                }
            }
            let rest: Vec<NodeIdx> = mobile.iter().copied().filter(|&v| dfg.op(v) == r).collect();
            for v in rest {
                if !self.placed[v] {
                    self.place(v, Role::Plain);
                    self.place_successors(v);
                }
            }
        }
        debug_assert!(self.placed.iter().all(|&p| p));

        Schedule {
            latency: self.latency,
            steps: self.frames.iter().map(|f| f.asap).collect(),
            frames: self.base,
            weights: self.weights,
        }
    }

    fn place_successors(&mut self, v: NodeIdx) {
        for &s in self.dfg.successors(v) {
            if !self.placed[s] {
                self.place(s, Role::Successor);
                self.place_successors(s);
            }
        }
    }

    fn place(&mut self, v: NodeIdx, role: Role) {
        let frame = self.frames[v];
        let op = self.dfg.op(v);
        let all: Vec<u32> = frame.steps().collect();

        let preferred: Vec<u32> = match role {
            Role::Priority => match self.anchor[op.index()] {
                Some(c) => all.iter().copied().filter(|&t| t != c).collect(),
                None => all.clone(),
            },
            Role::Successor if self.weights[v].w >= 2 => {
                let taken: Vec<u32> = (0..self.dfg.node_count())
                    .filter(|&m| {
                        m != v && self.placed[m] && self.dfg.op(m) == op && self.weights[m].w >= 2
                    })
                    .map(|m| self.frames[m].asap)
                    .collect();
                all.iter().copied().filter(|t| !taken.contains(t)).collect()
            }
            Role::Successor | Role::Plain => all.clone(),
        };
        let separated: Vec<u32> = match self.hole[v] {
            Some(h) => all.iter().copied().filter(|&t| t != h).collect(),
            None => all.clone(),
        };

        let levels = [preferred, separated, all];
        let chosen = levels
            .iter()
            .map(|level| {
                level
                    .iter()
                    .copied()
                    .filter(|&t| self.keeps_separation_feasible(v, t))
                    .collect::<Vec<u32>>()
            })
            .find(|c| !c.is_empty())
            .or_else(|| levels.iter().find(|l| !l.is_empty()).cloned())
            .expect("a node's frame is never empty");

        let dg = DistributionGraph::new(self.dfg, &self.frames, self.latency);
        let mut best: Option<(f64, u32)> = None;
        for t in chosen {
            let f = force_with_order(self.dfg, &self.order, &dg, &self.frames, v, t)
                .expect("candidate lies in the frame");
            // Earliest step wins ties.
            if best.is_none_or(|(bf, _)| f < bf - 1e-9) {
                best = Some((f, t));
            }
        }
        let (_, step) = best.expect("non-empty candidate set");
        self.frames[v] = TimeFrame::fixed(step);
        self.placed[v] = true;
        propagate(self.dfg, &self.order, &mut self.frames);
    }

    /// Whether fixing `v` at `step` still leaves every unplaced node with a
    /// hole some valid step off that hole.
    ///
    /// Precedence constraints plus single-step holes admit exact bounds
    /// propagation: if every snapped interval is non-empty, placing each node
    /// at its lower bound is a solution.
    fn keeps_separation_feasible(&self, v: NodeIdx, step: u32) -> bool {
        let n = self.dfg.node_count();
        let mut lo: Vec<u32> = (0..n)
            .map(|m| {
                if self.placed[m] {
                    self.frames[m].asap
                } else {
                    self.base[m].asap
                }
            })
            .collect();
        let mut hi: Vec<u32> = (0..n)
            .map(|m| {
                if self.placed[m] {
                    self.frames[m].alap
                } else {
                    self.base[m].alap
                }
            })
            .collect();
        lo[v] = step;
        hi[v] = step;
        let hole = |m: NodeIdx| {
            if m == v || self.placed[m] {
                None
            } else {
                self.hole[m]
            }
        };
        for &m in &self.order {
            for &u in self.dfg.predecessors(m) {
                lo[m] = lo[m].max(lo[u] + 1);
            }
            if hole(m) == Some(lo[m]) {
                lo[m] += 1;
            }
        }
        for &m in self.order.iter().rev() {
            for &s in self.dfg.successors(m) {
                hi[m] = hi[m].min(hi[s].saturating_sub(1));
            }
            if hole(m) == Some(hi[m]) {
                hi[m] = hi[m].saturating_sub(1);
            }
        }
        (0..n).all(|m| lo[m] <= hi[m])
    }
}

/// Runs security-aware force-directed scheduling under latency bound `latency`.
pub fn schedule_secure(dfg: &Dfg, latency: u32) -> Result<Schedule, SchedError> {
    Ok(Scheduler::new(dfg, latency)?.run())
}
