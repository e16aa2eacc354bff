//! Small committed designs used by tests, examples and the browser demo.

use crate::bench::{gen_bench, BenchSpec};
use crate::bind::synthesize;
use crate::dfg::{parse_dfg, Dfg, OpType};
use crate::lock::{insert_sbs, lock_at_sites, LockConfig, LockedDesign, SbSite, SiteKind};
use crate::netlist::Pin;
use crate::polysb::SbMode;

/// The worked scheduling example: a four-step critical path of two adds and
/// two subtracts, plus a mobile subtract feeding a mobile add.
pub const EXAMPLE_TEXT: &str = include_str!("../fixtures/example.dfg");

/// Latency bound the worked example is scheduled under.
pub const EXAMPLE_LATENCY: u32 = 4;

pub fn example_graph() -> Dfg {
    parse_dfg(EXAMPLE_TEXT).expect("committed fixture parses")
}

/// `o = x <op> y`, a single-node graph.
pub fn single_op(op: OpType) -> Dfg {
    parse_dfg(&format!(
        "dfg single\ninput x\ninput y\noutput o\nnode a {op}\n\
         edge e1 x -> a.0\nedge e2 y -> a.1\nedge e3 a -> o\n"
    ))
    .expect("single-node graph parses")
}

/// `o = x <op> y` with one box across the two operand ports.
///
/// With mode Parallel a Cross key swaps the operands; with mode Cross the
/// operands arrive swapped and Cross routing restores them.
pub fn toy_locked(op: OpType, mode: SbMode, width: u32, seed: u64) -> LockedDesign {
    let syn = synthesize(&single_op(op), 1, width).expect("single node schedules in one step");
    let site = SbSite {
        id: 0,
        kind: SiteKind::A,
        nets: [0, 1],
        taps: [Pin::FuIn { fu: 0, port: 0 }, Pin::FuIn { fu: 0, port: 1 }],
        fus: vec![0],
        impact: 1,
    };
    let sink_nets = syn.netlist.sink_nets();
    let site = SbSite {
        nets: [sink_nets[&site.taps[0]], sink_nets[&site.taps[1]]],
        ..site
    };
    let config = LockConfig {
        seed,
        ..LockConfig::default()
    };
    lock_at_sites(&syn.netlist, vec![site], vec![mode], &config).expect("toy site splices")
}

/// Shape of the small random designs used for exhaustive checks: three
/// inputs, so `3 * width` input bits.
pub fn small_spec(ops: usize) -> BenchSpec {
    BenchSpec {
        inputs: Some(3),
        ..BenchSpec::new("small", 4, ops, ops + 3, 2)
    }
}

/// A small random design locked with exactly `sbs` boxes.
///
/// Seeds whose design offers fewer sites are skipped deterministically.
pub fn small_locked(seed: u64, sbs: usize, width: u32) -> LockedDesign {
    small_design(seed, sbs, width).1
}

/// Like [`small_locked`], also returning the source graph.
pub fn small_design(seed: u64, sbs: usize, width: u32) -> (Dfg, LockedDesign) {
    for attempt in 0..256u64 {
        let s = seed.wrapping_mul(1000).wrapping_add(attempt);
        let ops = 5 + (s % 4) as usize;
        let Ok(dfg) = gen_bench(&small_spec(ops), s) else {
            continue;
        };
        let Ok(syn) = synthesize(&dfg, 4, width) else {
            continue;
        };
        let config = LockConfig {
            budget_pct: 1000.0,
            cross_fraction: 0.5,
            seed: s,
            max_sbs: Some(sbs),
            ..LockConfig::default()
        };
        let locked = insert_sbs(&syn.netlist, &config).expect("valid lock config");
        if locked.sb_count() == sbs {
            return (dfg, locked);
        }
    }
    panic!("no small design with {sbs} switch boxes near seed {seed}");
}
