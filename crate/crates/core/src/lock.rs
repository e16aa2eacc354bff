//! Switch-box insertion sites, budgeted insertion and golden keys.
//!
//! A site is a pair of interconnects entering functional units. Kind A pairs
//! the two operand paths of one unit whose results fan out to two or more
//! registers; kind B pairs paths entering two units of different resource
//! types. An operand path is either the net on the unit's port or, when the
//! port sits behind a multiplexer, the net on one of that multiplexer's data
//! inputs.
//!
//! Inserting a box cuts both paths and routes them through the box inputs
//! `X` and `Y`, with `Z` and `W` driving the original sinks. Boxes whose
//! correct mode is Cross get their inputs swapped, so Cross routing is the
//! one that restores the original connectivity.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfg::OpType;
use crate::netlist::{DatapathNetlist, Net, Pin, SbIn, SbOut};
use crate::polysb::{CorruptionPolicy, DesignKey, SbMode};

/// Transistor-count weights used for the overhead percentage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AreaModel {
    pub adder_per_bit: u64,
    pub subtractor_per_bit: u64,
    pub multiplier_per_bit_sq: u64,
    pub register_per_bit: u64,
    pub mux_per_input_per_bit: u64,
    pub sb_per_bit: u64,
}

impl Default for AreaModel {
    fn default() -> Self {
        AreaModel {
            adder_per_bit: 28,
            subtractor_per_bit: 30,
            multiplier_per_bit_sq: 20,
            register_per_bit: 8,
            mux_per_input_per_bit: 6,
            sb_per_bit: 4,
        }
    }
}

impl AreaModel {
    pub fn fu_area(&self, op: OpType, width: u32) -> u64 {
        let w = width as u64;
        match op {
            OpType::Add => self.adder_per_bit * w,
            OpType::Sub => self.subtractor_per_bit * w,
            OpType::Mul => self.multiplier_per_bit_sq * w * w,
        }
    }

    /// Transistors of the unlocked datapath.
    pub fn base_area(&self, netlist: &DatapathNetlist) -> u64 {
        let w = netlist.width() as u64;
        let fus: u64 = netlist
            .fus
            .iter()
            .map(|f| self.fu_area(f.op, netlist.width()))
            .sum();
        let regs = netlist.regs.len() as u64 * self.register_per_bit * w;
        let muxes: u64 = netlist
            .muxes
            .iter()
            .map(|m| m.inputs as u64 * self.mux_per_input_per_bit * w)
            .sum();
        fus + regs + muxes
    }

    pub fn sb_area(&self, width: u32) -> u64 {
        self.sb_per_bit * width as u64
    }
}

pub fn overhead_percent(base: u64, added: u64) -> f64 {
    if base == 0 {
        return 0.0;
    }
    100.0 * added as f64 / base as f64
}

/// Area overhead of `sb_count` boxes on `netlist`, in percent.
pub fn area_overhead(netlist: &DatapathNetlist, sb_count: usize, model: &AreaModel) -> f64 {
    overhead_percent(
        model.base_area(netlist),
        sb_count as u64 * model.sb_area(netlist.width()),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteKind {
    A,
    B,
}

/// A candidate switch-box location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbSite {
    pub id: usize,
    pub kind: SiteKind,
    /// Nets carrying the two interconnects before splicing.
    pub nets: [usize; 2],
    /// The sink pins that are cut and re-driven from `Z` and `W`.
    pub taps: [Pin; 2],
    pub fus: Vec<usize>,
    pub impact: usize,
}

#[derive(Debug, Clone, Copy)]
struct Tap {
    sink: Pin,
    net: usize,
    port: u8,
}

/// Operand paths entering each functional unit.
fn fu_taps(netlist: &DatapathNetlist, sink_nets: &HashMap<Pin, usize>) -> Vec<Vec<Tap>> {
    netlist
        .fus
        .iter()
        .map(|f| {
            let mut taps = Vec::new();
            for port in 0..2u8 {
                let sink = Pin::FuIn { fu: f.id, port };
                let Some(&net) = sink_nets.get(&sink) else {
                    continue;
                };
                taps.push(Tap { sink, net, port });
                let n = &netlist.nets[net];
                if let Pin::MuxOut { mux } = n.driver {
                    if n.sinks.len() == 1 {
                        for input in 0..netlist.muxes[mux].inputs {
                            let sink = Pin::MuxIn { mux, input };
                            if let Some(&net) = sink_nets.get(&sink) {
                                taps.push(Tap { sink, net, port });
                            }
                        }
                    }
                }
            }
            taps
        })
        .collect()
}

/// Structural successor drivers of a driver pin, through one net.
fn next_drivers(net: &Net, regs: &mut Vec<usize>, out: &mut bool) -> Vec<Pin> {
    let mut next = Vec::new();
    for &s in &net.sinks {
        match s {
            Pin::FuIn { fu, .. } => next.push(Pin::FuOut { fu }),
            Pin::MuxIn { mux, .. } => next.push(Pin::MuxOut { mux }),
            Pin::RegD { reg } => {
                regs.push(reg);
                next.push(Pin::RegQ { reg });
            }
            Pin::SbIn { sb, .. } => {
                next.push(Pin::SbOut { sb, side: SbOut::Z });
                next.push(Pin::SbOut { sb, side: SbOut::W });
            }
            Pin::Output { .. } => *out = true,
            _ => {}
        }
    }
    next
}

/// Registers reachable downstream of `start`, and whether an output is reachable.
fn reach(
    netlist: &DatapathNetlist,
    drivers: &HashMap<Pin, usize>,
    start: Pin,
) -> (BTreeSet<usize>, bool) {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([start]);
    let mut regs = Vec::new();
    let mut out = false;
    seen.insert(start);
    while let Some(p) = queue.pop_front() {
        let Some(&net) = drivers.get(&p) else {
            continue;
        };
        for q in next_drivers(&netlist.nets[net], &mut regs, &mut out) {
            if seen.insert(q) {
                queue.push_back(q);
            }
        }
    }
    (regs.into_iter().collect(), out)
}

/// Enumerates kind-A and kind-B sites, sorted by descending impact then id.
pub fn find_sites(netlist: &DatapathNetlist) -> Vec<SbSite> {
    let sink_nets = netlist.sink_nets();
    let drivers = netlist.driver_nets();
    let taps = fu_taps(netlist, &sink_nets);

    let reg_to_out: Vec<bool> = (0..netlist.regs.len())
        .map(|r| reach(netlist, &drivers, Pin::RegQ { reg: r }).1)
        .collect();
    let downstream: Vec<BTreeSet<usize>> = netlist
        .fus
        .iter()
        .map(|f| {
            reach(netlist, &drivers, Pin::FuOut { fu: f.id })
                .0
                .into_iter()
                .filter(|&r| reg_to_out[r])
                .collect()
        })
        .collect();
    let fanout: Vec<usize> = (0..netlist.fus.len())
        .map(|f| netlist.fu_register_fanout(f).unwrap_or(0))
        .collect();

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut sites = Vec::new();
    let mut push =
        |kind, a: Tap, b: Tap, fus: Vec<usize>, impact: usize, sites: &mut Vec<SbSite>| {
            if a.net == b.net || !seen.insert((a.net.min(b.net), a.net.max(b.net))) {
                return;
            }
            sites.push(SbSite {
                id: sites.len(),
                kind,
                nets: [a.net, b.net],
                taps: [a.sink, b.sink],
                fus,
                impact,
            });
        };

    for (f, ts) in taps.iter().enumerate() {
        if fanout[f] < 2 {
            continue;
        }
        for &a in ts.iter().filter(|t| t.port == 0) {
            for &b in ts.iter().filter(|t| t.port == 1) {
                push(SiteKind::A, a, b, vec![f], downstream[f].len(), &mut sites);
            }
        }
    }
    for f in 0..netlist.fus.len() {
        for g in f + 1..netlist.fus.len() {
            if netlist.fus[f].op == netlist.fus[g].op {
                continue;
            }
            let impact = downstream[f].union(&downstream[g]).count();
            for &a in &taps[f] {
                for &b in &taps[g] {
                    push(SiteKind::B, a, b, vec![f, g], impact, &mut sites);
                }
            }
        }
    }
    sites.sort_by_key(|s| (std::cmp::Reverse(s.impact), s.id));
    sites
}

/// Parameters of one locking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockConfig {
    /// Maximum area overhead in percent.
    pub budget_pct: f64,
    /// Fraction of boxes whose correct mode is Cross.
    pub cross_fraction: f64,
    pub seed: u64,
    /// Optional cap on the number of boxes.
    pub max_sbs: Option<usize>,
    pub area: AreaModel,
    pub policy: CorruptionPolicy,
}

impl Default for LockConfig {
    fn default() -> Self {
        LockConfig {
            budget_pct: 20.0,
            cross_fraction: 0.5,
            seed: 0,
            max_sbs: None,
            area: AreaModel::default(),
            policy: CorruptionPolicy::WiredOr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbInstance {
    pub id: usize,
    pub site: SbSite,
    /// Correct mode; withheld in the foundry view.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SbMode>,
}

/// A netlist with switch boxes spliced in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockedDesign {
    #[serde(flatten)]
    pub netlist: DatapathNetlist,
    pub sbs: Vec<SbInstance>,
    pub policy: CorruptionPolicy,
    pub overhead_pct: f64,
    pub key_bits: usize,
    /// Never serialized with the design; stored in its own key file.
    #[serde(skip)]
    pub golden: Option<DesignKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LockError {
    #[error("budget must be a non-negative number, got {0}")]
    Budget(String),
    #[error("cross fraction must lie in [0, 1], got {0}")]
    CrossFraction(String),
    #[error("switch box {0} has no recorded mode")]
    ModeWithheld(usize),
    #[error("tap {0:?} is not a sink of any net")]
    MissingTap(Pin),
    #[error("switch box {0} is not wired as a spliced box")]
    Malformed(usize),
    #[error("{count} modes given for {sites} sites")]
    ModeCount { sites: usize, count: usize },
    #[error("tap {0:?} is used by more than one box")]
    SharedTap(Pin),
}

impl LockedDesign {
    pub fn sb_count(&self) -> usize {
        self.sbs.len()
    }

    pub fn modes(&self) -> Option<Vec<SbMode>> {
        self.sbs.iter().map(|s| s.mode).collect()
    }

    /// Copy with correct modes and the golden key removed.
    pub fn foundry_view(&self) -> LockedDesign {
        let mut d = self.clone();
        for sb in &mut d.sbs {
            sb.mode = None;
        }
        d.golden = None;
        d
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("locked design serializes")
    }

    pub fn from_json(text: &str) -> Result<LockedDesign, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Removes every box, reconnecting its inputs to the original sinks.
    pub fn unsplice(&self) -> Result<DatapathNetlist, LockError> {
        let mut nl = self.netlist.clone();
        for sb in self.sbs.iter().rev() {
            let mode = sb.mode.ok_or(LockError::ModeWithheld(sb.id))?;
            let k = sb.id;
            let find_in = |nl: &DatapathNetlist, side| {
                nl.nets
                    .iter()
                    .position(|n| n.sinks.contains(&Pin::SbIn { sb: k, side }))
                    .ok_or(LockError::Malformed(k))
            };
            let nx = find_in(&nl, SbIn::X)?;
            let ny = find_in(&nl, SbIn::Y)?;
            let out_sinks = |nl: &DatapathNetlist, side| {
                nl.nets
                    .iter()
                    .position(|n| n.driver == Pin::SbOut { sb: k, side })
                    .ok_or(LockError::Malformed(k))
            };
            let nz = out_sinks(&nl, SbOut::Z)?;
            let nw = out_sinks(&nl, SbOut::W)?;
            let (z_sinks, w_sinks) = (
                std::mem::take(&mut nl.nets[nz].sinks),
                std::mem::take(&mut nl.nets[nw].sinks),
            );
            // Parallel: X feeds Z's sinks. Cross: X feeds W's sinks.
            let (to_x, to_y) = match mode {
                SbMode::Parallel => (z_sinks, w_sinks),
                SbMode::Cross => (w_sinks, z_sinks),
            };
            nl.nets[nx].sinks.retain(|&p| {
                p != Pin::SbIn {
                    sb: k,
                    side: SbIn::X,
                }
            });
            nl.nets[nx].sinks.extend(to_x);
            nl.nets[ny].sinks.retain(|&p| {
                p != Pin::SbIn {
                    sb: k,
                    side: SbIn::Y,
                }
            });
            nl.nets[ny].sinks.extend(to_y);
        }
        nl.nets.retain(|n| !matches!(n.driver, Pin::SbOut { .. }));
        for (i, n) in nl.nets.iter_mut().enumerate() {
            n.id = i;
        }
        Ok(nl)
    }
}

/// Splices one box per site into a copy of `netlist`.
///
/// Sites need not come from [`find_sites`]; any two distinct sink pins work.
pub fn splice_sites(
    netlist: &DatapathNetlist,
    sites: &[SbSite],
    modes: &[SbMode],
) -> Result<DatapathNetlist, LockError> {
    if sites.len() != modes.len() {
        return Err(LockError::ModeCount {
            sites: sites.len(),
            count: modes.len(),
        });
    }
    let mut nl = netlist.clone();
    let mut used = HashSet::new();
    for (k, (site, &mode)) in sites.iter().zip(modes).enumerate() {
        let sink_nets = nl.sink_nets();
        let mut src = [0usize; 2];
        for (i, &tap) in site.taps.iter().enumerate() {
            if !used.insert(tap) {
                return Err(LockError::SharedTap(tap));
            }
            src[i] = *sink_nets.get(&tap).ok_or(LockError::MissingTap(tap))?;
            nl.nets[src[i]].sinks.retain(|&p| p != tap);
        }
        let (x, y) = match mode {
            SbMode::Parallel => (src[0], src[1]),
            SbMode::Cross => (src[1], src[0]),
        };
        nl.nets[x].sinks.push(Pin::SbIn {
            sb: k,
            side: SbIn::X,
        });
        nl.nets[y].sinks.push(Pin::SbIn {
            sb: k,
            side: SbIn::Y,
        });
        for (side, tap) in [(SbOut::Z, site.taps[0]), (SbOut::W, site.taps[1])] {
            let id = nl.nets.len();
            nl.nets.push(Net {
                id,
                driver: Pin::SbOut { sb: k, side },
                sinks: vec![tap],
            });
        }
    }
    Ok(nl)
}

/// Locks explicit sites with explicit modes and a seeded golden key.
pub fn lock_at_sites(
    netlist: &DatapathNetlist,
    sites: Vec<SbSite>,
    modes: Vec<SbMode>,
    config: &LockConfig,
) -> Result<LockedDesign, LockError> {
    let spliced = splice_sites(netlist, &sites, &modes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let golden = DesignKey(
        modes
            .iter()
            .map(|m| {
                let keys = m.keys();
                keys[rng.gen_range(0..keys.len())]
            })
            .collect(),
    );
    let x = sites.len();
    Ok(LockedDesign {
        overhead_pct: area_overhead(netlist, x, &config.area),
        sbs: sites
            .into_iter()
            .zip(modes)
            .enumerate()
            .map(|(id, (site, mode))| SbInstance {
                id,
                site,
                mode: Some(mode),
            })
            .collect(),
        netlist: spliced,
        policy: config.policy,
        key_bits: 8 * x,
        golden: Some(golden),
        warning: (x == 0).then(|| "budget admits no switch boxes".to_string()),
    })
}

/// Picks sites greedily by impact under the area budget, then splices them.
pub fn insert_sbs(
    netlist: &DatapathNetlist,
    config: &LockConfig,
) -> Result<LockedDesign, LockError> {
    if config.budget_pct.is_nan() || config.budget_pct < 0.0 {
        return Err(LockError::Budget(config.budget_pct.to_string()));
    }
    if !(0.0..=1.0).contains(&config.cross_fraction) {
        return Err(LockError::CrossFraction(config.cross_fraction.to_string()));
    }
    let base = config.area.base_area(netlist);
    let per_sb = config.area.sb_area(netlist.width());
    let cap = config.max_sbs.unwrap_or(usize::MAX);

    let mut chosen: Vec<SbSite> = Vec::new();
    let mut used: HashSet<Pin> = HashSet::new();
    for site in find_sites(netlist) {
        if chosen.len() >= cap
            || overhead_percent(base, (chosen.len() as u64 + 1) * per_sb) > config.budget_pct + 1e-9
        {
            break;
        }
        if site.taps.iter().any(|t| used.contains(t)) {
            continue;
        }
        used.extend(site.taps);
        chosen.push(site);
    }

    let x = chosen.len();
    let crosses = (config.cross_fraction * x as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut modes = vec![SbMode::Parallel; x];
    for i in sample(&mut rng, x, crosses.min(x)) {
        modes[i] = SbMode::Cross;
    }
    lock_at_sites(netlist, chosen, modes, config)
}
