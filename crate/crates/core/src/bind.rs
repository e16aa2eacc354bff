//! Functional-unit and register allocation, and datapath construction.
//!
//! FU allocation gives every weighted node (`w >= 2`) of a type the first
//! unit of that type that is free at its step, visiting nodes in descending
//! weight order, so weighted nodes in pairwise-distinct steps all land on
//! one unit. Leftover nodes are packed by ascending step.
//!
//! Registers hold node values. A value defined in step `d` must survive
//! every step boundary from `d` up to the boundary before its last consumer;
//! values feeding primary outputs survive through the boundary after step
//! `L`. Left-edge packing over those boundary intervals is optimal. Primary
//! inputs are held stable on their ports and need no register.

use std::collections::HashMap;

use crate::dfg::{Dfg, NodeIdx, OpType, Sink, Source};
use crate::netlist::{ControlWord, DatapathNetlist, Fu, Meta, Mux, Net, Pin, Reg};
use crate::sched::Schedule;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuBinding {
    pub fus: Vec<OpType>,
    pub map: Vec<usize>,
}

impl FuBinding {
    pub fn fu_count(&self, op: OpType) -> usize {
        self.fus.iter().filter(|&&o| o == op).count()
    }
}

/// Inclusive step interval of an edge's value, `[def, last_use]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lifetime {
    pub def: u32,
    pub last_use: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterBinding {
    pub regs: usize,
    /// Register per edge; `None` for operand edges read straight from an input port.
    pub map: Vec<Option<usize>>,
    pub lifetime: Vec<Lifetime>,
    /// Register per node value.
    pub node_reg: Vec<usize>,
    /// Register per primary input that is passed straight to an output.
    pub input_reg: HashMap<usize, usize>,
    /// Step-boundary interval `[first, last]` a register slot is occupied for, per value.
    pub occupancy: Vec<(Source, u32, u32)>,
}

/// Binds nodes to functional units.
pub fn allocate_fus(dfg: &Dfg, schedule: &Schedule) -> FuBinding {
    let n = dfg.node_count();
    let mut fus: Vec<OpType> = Vec::new();
    let mut busy: Vec<Vec<u32>> = Vec::new();
    let mut map = vec![usize::MAX; n];

    let mut assign = |v: NodeIdx, fus: &mut Vec<OpType>, busy: &mut Vec<Vec<u32>>| {
        let op = dfg.op(v);
        let t = schedule.step(v);
        let fu = (0..fus.len())
            .find(|&f| fus[f] == op && !busy[f].contains(&t))
            .unwrap_or_else(|| {
                fus.push(op);
                busy.push(Vec::new());
                fus.len() - 1
            });
        busy[fu].push(t);
        map[v] = fu;
    };

    let mut weighted: Vec<NodeIdx> = (0..n).filter(|&v| schedule.weights[v].w >= 2).collect();
    weighted.sort_by_key(|&v| (std::cmp::Reverse(schedule.weights[v].w), v));
    for v in weighted {
        assign(v, &mut fus, &mut busy);
    }
    let mut rest: Vec<NodeIdx> = (0..n).filter(|&v| schedule.weights[v].w < 2).collect();
    rest.sort_by_key(|&v| (schedule.step(v), v));
    for v in rest {
        assign(v, &mut fus, &mut busy);
    }
    FuBinding { fus, map }
}

/// Allocates registers with the left-edge algorithm.
pub fn allocate_registers(dfg: &Dfg, schedule: &Schedule) -> RegisterBinding {
    let latency = schedule.latency;
    let lifetime: Vec<Lifetime> = dfg
        .edges()
        .iter()
        .map(|e| {
            let def = match e.src {
                Source::Node(u) => schedule.step(u),
                Source::Input(_) => 1,
            };
            let last_use = match e.dst {
                Sink::Node { node, .. } => schedule.step(node),
                Sink::Output(_) => latency,
            };
            Lifetime { def, last_use }
        })
        .collect();

    // Boundary interval per registered value.
    let mut span: HashMap<Source, (u32, u32)> = HashMap::new();
    for (e, lt) in dfg.edges().iter().zip(&lifetime) {
        let last = match (e.src, e.dst) {
            (Source::Input(_), Sink::Node { .. }) => continue,
            (_, Sink::Output(_)) => latency,
            (_, Sink::Node { .. }) => lt.last_use - 1,
        };
        let entry = span.entry(e.src).or_insert((lt.def, last));
        entry.1 = entry.1.max(last);
    }
    let mut values: Vec<(Source, u32, u32)> =
        span.into_iter().map(|(s, (a, b))| (s, a, b)).collect();
    values.sort_by_key(|&(s, a, b)| (a, b, s));

    let mut reg_end: Vec<u32> = Vec::new();
    let mut reg_of: HashMap<Source, usize> = HashMap::new();
    for &(s, a, b) in &values {
        let r = match reg_end.iter().position(|&end| end < a) {
            Some(r) => r,
            None => {
                reg_end.push(0);
                reg_end.len() - 1
            }
        };
        reg_end[r] = b;
        reg_of.insert(s, r);
    }

    let map = dfg
        .edges()
        .iter()
        .map(|e| match (e.src, e.dst) {
            (Source::Input(_), Sink::Node { .. }) => None,
            (src, _) => Some(reg_of[&src]),
        })
        .collect();
    let node_reg = (0..dfg.node_count())
        .map(|v| reg_of[&Source::Node(v)])
        .collect();
    let input_reg = reg_of
        .iter()
        .filter_map(|(s, &r)| match s {
            Source::Input(i) => Some((*i, r)),
            Source::Node(_) => None,
        })
        .collect();
    RegisterBinding {
        regs: reg_end.len(),
        map,
        lifetime,
        node_reg,
        input_reg,
        occupancy: values,
    }
}

struct Builder {
    nets: Vec<Net>,
    by_driver: HashMap<Pin, usize>,
    muxes: Vec<Mux>,
    ctrl: Vec<ControlWord>,
}

impl Builder {
    fn connect(&mut self, driver: Pin, sink: Pin) {
        let id = *self.by_driver.entry(driver).or_insert_with(|| {
            self.nets.push(Net {
                id: self.nets.len(),
                driver,
                sinks: Vec::new(),
            });
            self.nets.len() - 1
        });
        self.nets[id].sinks.push(sink);
    }

    /// Wires `sink` to its per-step sources, through a mux when there is more than one.
    fn feed(&mut self, sink: Pin, uses: &[(u32, Pin)]) {
        let mut distinct: Vec<Pin> = Vec::new();
        for &(_, p) in uses {
            if !distinct.contains(&p) {
                distinct.push(p);
            }
        }
        match distinct.len() {
            0 => {}
            1 => self.connect(distinct[0], sink),
            k => {
                let mux = self.muxes.len();
                self.muxes.push(Mux { id: mux, inputs: k });
                for (i, &p) in distinct.iter().enumerate() {
                    self.connect(p, Pin::MuxIn { mux, input: i });
                }
                self.connect(Pin::MuxOut { mux }, sink);
                for w in &mut self.ctrl {
                    w.mux_sel.push(None);
                }
                for &(t, p) in uses {
                    let sel = distinct.iter().position(|&d| d == p).unwrap() as u32;
                    self.ctrl[t as usize - 1].mux_sel[mux] = Some(sel);
                }
            }
        }
    }
}

/// Builds the datapath and controller for a bound schedule.
pub fn build_datapath(
    dfg: &Dfg,
    schedule: &Schedule,
    fub: &FuBinding,
    regb: &RegisterBinding,
    width: u32,
) -> DatapathNetlist {
    let latency = schedule.latency;
    let mut b = Builder {
        nets: Vec::new(),
        by_driver: HashMap::new(),
        muxes: Vec::new(),
        ctrl: (1..=latency)
            .map(|step| ControlWord {
                step,
                mux_sel: Vec::new(),
                reg_load: vec![false; regb.regs],
            })
            .collect(),
    };
    let value_pin = |s: Source| match s {
        Source::Input(i) => Pin::Input { index: i },
        Source::Node(u) => Pin::RegQ {
            reg: regb.node_reg[u],
        },
    };

    let mut on_fu: Vec<Vec<NodeIdx>> = vec![Vec::new(); fub.fus.len()];
    for v in 0..dfg.node_count() {
        on_fu[fub.map[v]].push(v);
    }
    for (fu, nodes) in on_fu.iter_mut().enumerate() {
        nodes.sort_by_key(|&v| schedule.step(v));
        for port in 0..2u8 {
            let uses: Vec<(u32, Pin)> = nodes
                .iter()
                .map(|&v| (schedule.step(v), value_pin(dfg.operand(v, port as usize))))
                .collect();
            b.feed(Pin::FuIn { fu, port }, &uses);
        }
    }

    let mut loads: Vec<Vec<(u32, Pin)>> = vec![Vec::new(); regb.regs];
    for v in 0..dfg.node_count() {
        loads[regb.node_reg[v]].push((schedule.step(v), Pin::FuOut { fu: fub.map[v] }));
    }
    for (&i, &r) in &regb.input_reg {
        loads[r].push((1, Pin::Input { index: i }));
    }
    for (r, l) in loads.iter_mut().enumerate() {
        l.sort();
        for &(t, _) in l.iter() {
            b.ctrl[t as usize - 1].reg_load[r] = true;
        }
        b.feed(Pin::RegD { reg: r }, l);
    }

    for o in 0..dfg.outputs().len() {
        let r = match dfg.output_source(o) {
            Source::Node(u) => regb.node_reg[u],
            Source::Input(i) => regb.input_reg[&i],
        };
        b.connect(Pin::RegQ { reg: r }, Pin::Output { index: o });
    }

    DatapathNetlist {
        fus: fub
            .fus
            .iter()
            .enumerate()
            .map(|(id, &op)| Fu { id, op })
            .collect(),
        regs: (0..regb.regs).map(|id| Reg { id }).collect(),
        muxes: b.muxes,
        nets: b.nets,
        ctrl: b.ctrl,
        meta: Meta {
            name: dfg.name().to_string(),
            width,
            latency,
            inputs: dfg.inputs().to_vec(),
            outputs: dfg.outputs().to_vec(),
        },
    }
}

/// Result of scheduling and binding one graph.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub schedule: Schedule,
    pub fus: FuBinding,
    pub regs: RegisterBinding,
    pub netlist: DatapathNetlist,
}

/// Schedules, binds and builds the datapath in one call.
pub fn synthesize(
    dfg: &Dfg,
    latency: u32,
    width: u32,
) -> Result<Synthesis, crate::sched::SchedError> {
    let schedule = crate::sched::schedule_secure(dfg, latency)?;
    let fus = allocate_fus(dfg, &schedule);
    let regs = allocate_registers(dfg, &schedule);
    let netlist = build_datapath(dfg, &schedule, &fus, &regs, width);
    Ok(Synthesis {
        schedule,
        fus,
        regs,
        netlist,
    })
}
