//! Cycle-accurate simulation of bare and locked datapaths, the reference DFG
//! interpreter, and output error-rate measurement.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dfg::{Dfg, OpType, Source};
use crate::lock::LockedDesign;
use crate::netlist::{DatapathNetlist, Pin, SbIn, SbOut};
use crate::polysb::{Behavior, CorruptionPolicy, DesignKey, SbKey};
use crate::word::{width_mask, Word};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("key has {found} bits, the design needs {expected}")]
    KeyLength { expected: usize, found: usize },
    #[error("{found} input values given for {expected} primary inputs")]
    InputCount { expected: usize, found: usize },
    #[error("unknown primary input `{0}`")]
    UnknownInput(String),
    #[error("primary input `{0}` has no value")]
    MissingInput(String),
    #[error("combinational loop through {0:?}")]
    Loop(Pin),
    #[error("invalid netlist: {0}")]
    Netlist(#[from] crate::netlist::NetlistError),
}

/// One value per primary input, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SimInput(pub Vec<u64>);

impl SimInput {
    /// Builds an input vector from `name -> value` pairs covering every input once.
    pub fn from_named(
        names: &[String],
        values: &HashMap<String, u64>,
    ) -> Result<SimInput, SimError> {
        if let Some(k) = values.keys().find(|k| !names.contains(k)) {
            return Err(SimError::UnknownInput(k.clone()));
        }
        names
            .iter()
            .map(|n| {
                values
                    .get(n)
                    .copied()
                    .ok_or_else(|| SimError::MissingInput(n.clone()))
            })
            .collect::<Result<_, _>>()
            .map(SimInput)
    }

    pub fn random(rng: &mut impl Rng, inputs: usize, width: u32) -> SimInput {
        let mask = width_mask(width);
        SimInput((0..inputs).map(|_| rng.gen::<u64>() & mask).collect())
    }
}

/// Output values after the last step, with unknown masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct SimResult {
    pub outputs: Vec<u64>,
    pub unknown: Vec<u64>,
}

impl SimResult {
    pub fn is_fully_known(&self) -> bool {
        self.unknown.iter().all(|&u| u == 0)
    }
}

#[derive(Debug, Clone)]
enum Cell {
    Mux {
        mux: usize,
        inputs: Vec<Option<usize>>,
        out: usize,
    },
    Fu {
        fu: usize,
        op: OpType,
        a: Option<usize>,
        b: Option<usize>,
        out: usize,
    },
    Sb {
        sb: usize,
        x: Option<usize>,
        y: Option<usize>,
        z: usize,
        w: usize,
    },
}

/// A netlist compiled into slot-indexed evaluation order.
#[derive(Debug, Clone)]
pub struct Simulator {
    width: u32,
    mask: u64,
    latency: u32,
    inputs: usize,
    sb_count: usize,
    policy: CorruptionPolicy,
    slots: usize,
    input_slot: Vec<usize>,
    reg_q: Vec<usize>,
    reg_d: Vec<Option<usize>>,
    cells: Vec<Cell>,
    outputs: Vec<Option<usize>>,
    mux_sel: Vec<Vec<Option<u32>>>,
    reg_load: Vec<Vec<bool>>,
}

impl Simulator {
    /// Compiles a netlist that contains `sb_count` spliced boxes.
    pub fn new(
        netlist: &DatapathNetlist,
        sb_count: usize,
        policy: CorruptionPolicy,
    ) -> Result<Simulator, SimError> {
        netlist.validate(sb_count)?;
        let mut slot_of: HashMap<Pin, usize> = HashMap::new();
        let slot = |p: Pin, slot_of: &mut HashMap<Pin, usize>| {
            let n = slot_of.len();
            *slot_of.entry(p).or_insert(n)
        };
        let input_slot: Vec<usize> = (0..netlist.meta.inputs.len())
            .map(|i| slot(Pin::Input { index: i }, &mut slot_of))
            .collect();
        let reg_q: Vec<usize> = (0..netlist.regs.len())
            .map(|r| slot(Pin::RegQ { reg: r }, &mut slot_of))
            .collect();
        for net in &netlist.nets {
            slot(net.driver, &mut slot_of);
        }
        let sink_nets = netlist.sink_nets();
        let src = |p: Pin| sink_nets.get(&p).map(|&n| slot_of[&netlist.nets[n].driver]);

        let mut cells = Vec::new();
        for m in &netlist.muxes {
            cells.push(Cell::Mux {
                mux: m.id,
                inputs: (0..m.inputs)
                    .map(|i| {
                        src(Pin::MuxIn {
                            mux: m.id,
                            input: i,
                        })
                    })
                    .collect(),
                out: slot_of
                    .get(&Pin::MuxOut { mux: m.id })
                    .copied()
                    .unwrap_or(usize::MAX),
            });
        }
        for f in &netlist.fus {
            cells.push(Cell::Fu {
                fu: f.id,
                op: f.op,
                a: src(Pin::FuIn { fu: f.id, port: 0 }),
                b: src(Pin::FuIn { fu: f.id, port: 1 }),
                out: slot_of
                    .get(&Pin::FuOut { fu: f.id })
                    .copied()
                    .unwrap_or(usize::MAX),
            });
        }
        for sb in 0..sb_count {
            cells.push(Cell::Sb {
                sb,
                x: src(Pin::SbIn { sb, side: SbIn::X }),
                y: src(Pin::SbIn { sb, side: SbIn::Y }),
                z: slot_of
                    .get(&Pin::SbOut { sb, side: SbOut::Z })
                    .copied()
                    .unwrap_or(usize::MAX),
                w: slot_of
                    .get(&Pin::SbOut { sb, side: SbOut::W })
                    .copied()
                    .unwrap_or(usize::MAX),
            });
        }
        // Unconnected outputs get a private scratch slot.
        let mut slots = slot_of.len();
        for c in &mut cells {
            let outs: Vec<&mut usize> = match c {
                Cell::Mux { out, .. } | Cell::Fu { out, .. } => vec![out],
                Cell::Sb { z, w, .. } => vec![z, w],
            };
            for o in outs {
                if *o == usize::MAX {
                    *o = slots;
                    slots += 1;
                }
            }
        }
        let cells = topo_sort(cells, slots)?;

        Ok(Simulator {
            width: netlist.width(),
            mask: width_mask(netlist.width()),
            latency: netlist.latency(),
            inputs: input_slot.len(),
            sb_count,
            policy,
            slots,
            input_slot,
            reg_d: (0..netlist.regs.len())
                .map(|r| src(Pin::RegD { reg: r }))
                .collect(),
            reg_q,
            cells,
            outputs: (0..netlist.meta.outputs.len())
                .map(|o| src(Pin::Output { index: o }))
                .collect(),
            mux_sel: netlist.ctrl.iter().map(|w| w.mux_sel.clone()).collect(),
            reg_load: netlist.ctrl.iter().map(|w| w.reg_load.clone()).collect(),
        })
    }

    pub fn for_design(design: &LockedDesign) -> Result<Simulator, SimError> {
        Simulator::new(&design.netlist, design.sb_count(), design.policy)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn input_count(&self) -> usize {
        self.inputs
    }

    pub fn sb_count(&self) -> usize {
        self.sb_count
    }

    pub fn policy(&self) -> CorruptionPolicy {
        self.policy
    }

    /// Runs all steps with each box behaving as `behaviors[i]`.
    pub fn run(&self, behaviors: &[Behavior], input: &SimInput) -> Result<SimResult, SimError> {
        if behaviors.len() != self.sb_count {
            return Err(SimError::KeyLength {
                expected: 8 * self.sb_count,
                found: 8 * behaviors.len(),
            });
        }
        if input.0.len() != self.inputs {
            return Err(SimError::InputCount {
                expected: self.inputs,
                found: input.0.len(),
            });
        }
        let mut dom = Concrete {
            input,
            behaviors,
            policy: self.policy,
            mask: self.mask,
        };
        let words = self.execute(&mut dom);
        Ok(SimResult {
            outputs: words.iter().map(|w| w.value).collect(),
            unknown: words.iter().map(|w| w.unknown).collect(),
        })
    }

    /// Runs every step in an arbitrary value domain and returns the outputs.
    pub fn execute<D: Domain>(&self, dom: &mut D) -> Vec<D::V> {
        let zero = dom.zero();
        let mut v = vec![zero; self.slots];
        let mut regs = vec![zero; self.reg_q.len()];
        for (i, &s) in self.input_slot.iter().enumerate() {
            v[s] = dom.input(i);
        }
        for step in 0..=self.latency as usize {
            for (r, &s) in self.reg_q.iter().enumerate() {
                v[s] = regs[r];
            }
            // The extra pass after the last step only settles output nets.
            let sel = self.mux_sel.get(step);
            for c in &self.cells {
                let get = |s: Option<usize>, v: &[D::V]| s.map_or(zero, |s| v[s]);
                match c {
                    Cell::Mux { mux, inputs, out } => {
                        let i = sel.and_then(|s| s[*mux]).unwrap_or(0) as usize;
                        v[*out] = get(inputs[i], &v);
                    }
                    Cell::Fu { op, a, b, out, .. } => {
                        let (a, b) = (get(*a, &v), get(*b, &v));
                        v[*out] = dom.op(*op, a, b);
                    }
                    Cell::Sb { sb, x, y, z, w } => {
                        let (zv, wv) = dom.switch(*sb, get(*x, &v), get(*y, &v));
                        v[*z] = zv;
                        v[*w] = wv;
                    }
                }
            }
            if let Some(loads) = self.reg_load.get(step) {
                for (r, &load) in loads.iter().enumerate() {
                    if load {
                        regs[r] = self.reg_d[r].map_or(zero, |s| v[s]);
                    }
                }
            }
        }
        self.outputs
            .iter()
            .map(|o| o.map_or(zero, |s| v[s]))
            .collect()
    }

    pub fn run_key(&self, key: &DesignKey, input: &SimInput) -> Result<SimResult, SimError> {
        let b: Vec<Behavior> = key.0.iter().map(|&k| Behavior::of(k)).collect();
        self.run(&b, input)
    }
}

/// Value domain a compiled datapath can be executed in.
pub trait Domain {
    type V: Copy;
    fn zero(&mut self) -> Self::V;
    fn input(&mut self, index: usize) -> Self::V;
    fn op(&mut self, op: OpType, a: Self::V, b: Self::V) -> Self::V;
    fn switch(&mut self, sb: usize, x: Self::V, y: Self::V) -> (Self::V, Self::V);
}

struct Concrete<'a> {
    input: &'a SimInput,
    behaviors: &'a [Behavior],
    policy: CorruptionPolicy,
    mask: u64,
}

impl Domain for Concrete<'_> {
    type V = Word;

    fn zero(&mut self) -> Word {
        Word::known(0)
    }

    fn input(&mut self, index: usize) -> Word {
        Word::known(self.input.0[index] & self.mask)
    }

    fn op(&mut self, op: OpType, a: Word, b: Word) -> Word {
        if a.is_known() && b.is_known() {
            Word::known(op.apply(a.value, b.value, self.mask))
        } else {
            Word::all_unknown(self.mask)
        }
    }

    fn switch(&mut self, sb: usize, x: Word, y: Word) -> (Word, Word) {
        self.behaviors[sb].route(x, y, self.policy, self.mask)
    }
}

fn topo_sort(cells: Vec<Cell>, slots: usize) -> Result<Vec<Cell>, SimError> {
    let mut producer = vec![usize::MAX; slots];
    let outs = |c: &Cell| match c {
        Cell::Mux { out, .. } | Cell::Fu { out, .. } => vec![*out],
        Cell::Sb { z, w, .. } => vec![*z, *w],
    };
    let ins = |c: &Cell| -> Vec<usize> {
        match c {
            Cell::Mux { inputs, .. } => inputs.iter().flatten().copied().collect(),
            Cell::Fu { a, b, .. } => a.iter().chain(b).copied().collect(),
            Cell::Sb { x, y, .. } => x.iter().chain(y).copied().collect(),
        }
    };
    for (i, c) in cells.iter().enumerate() {
        for o in outs(c) {
            producer[o] = i;
        }
    }
    let n = cells.len();
    let mut indeg = vec![0usize; n];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, c) in cells.iter().enumerate() {
        for s in ins(c) {
            let p = producer[s];
            if p != usize::MAX {
                indeg[i] += 1;
                users[p].push(i);
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).rev().collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for &u in &users[i] {
            indeg[u] -= 1;
            if indeg[u] == 0 {
                ready.push(u);
            }
        }
    }
    if order.len() != n {
        let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap();
        let pin = match &cells[stuck] {
            Cell::Mux { mux, .. } => Pin::MuxOut { mux: *mux },
            Cell::Fu { fu, .. } => Pin::FuOut { fu: *fu },
            Cell::Sb { sb, .. } => Pin::SbOut {
                sb: *sb,
                side: SbOut::Z,
            },
        };
        return Err(SimError::Loop(pin));
    }
    let mut slots: Vec<Option<Cell>> = cells.into_iter().map(Some).collect();
    Ok(order
        .into_iter()
        .map(|i| slots[i].take().unwrap())
        .collect())
}

/// Simulates a design under `key`; `None` is accepted only for designs without boxes.
pub fn simulate(
    design: &LockedDesign,
    key: Option<&DesignKey>,
    input: &SimInput,
) -> Result<SimResult, SimError> {
    let sim = Simulator::for_design(design)?;
    let empty = DesignKey::default();
    sim.run_key(key.unwrap_or(&empty), input)
}

/// Simulates an unlocked netlist.
pub fn simulate_netlist(
    netlist: &DatapathNetlist,
    input: &SimInput,
) -> Result<SimResult, SimError> {
    Simulator::new(netlist, 0, CorruptionPolicy::WiredOr)?.run(&[], input)
}

/// Direct evaluation of the graph, the functional reference.
pub fn evaluate_dfg(dfg: &Dfg, input: &SimInput, width: u32) -> Vec<u64> {
    let mask = width_mask(width);
    let mut val = vec![0u64; dfg.node_count()];
    let get = |s: Source, val: &[u64]| match s {
        Source::Input(i) => input.0[i] & mask,
        Source::Node(n) => val[n],
    };
    for n in dfg.topo_order() {
        val[n] = dfg.op(n).apply(
            get(dfg.operand(n, 0), &val),
            get(dfg.operand(n, 1), &val),
            mask,
        );
    }
    (0..dfg.outputs().len())
        .map(|o| get(dfg.output_source(o), &val))
        .collect()
}

/// Outcome of an error-rate measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRateReport {
    pub overhead_pct: f64,
    pub sb_count: usize,
    pub trials: u64,
    pub errors: u64,
    pub error_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl ErrorRateReport {
    fn new(design: &LockedDesign, trials: u64, errors: u64) -> ErrorRateReport {
        ErrorRateReport {
            overhead_pct: design.overhead_pct,
            sb_count: design.sb_count(),
            trials,
            errors,
            error_rate: if trials == 0 {
                0.0
            } else {
                errors as f64 / trials as f64
            },
            warning: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ErrorRateError {
    #[error("at least one trial is required")]
    NoTrials,
    #[error("the design carries no golden key")]
    NoGolden,
    #[error(
        "exhaustive mode needs width <= 4 and at most 3 inputs (got W={width}, {inputs} inputs)"
    )]
    TooLarge { width: u32, inputs: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Stream seed for one trial, independent of thread scheduling.
pub fn trial_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws a uniform key with at least one box outside its golden class.
pub fn sample_wrong_key(rng: &mut impl Rng, golden: &[Behavior]) -> DesignKey {
    loop {
        let key = DesignKey(golden.iter().map(|_| SbKey(rng.gen())).collect());
        if key
            .0
            .iter()
            .zip(golden)
            .any(|(&k, &g)| Behavior::of(k) != g)
        {
            return key;
        }
    }
}

fn golden_behaviors(design: &LockedDesign) -> Result<Vec<Behavior>, ErrorRateError> {
    let golden = design.golden.as_ref().ok_or(ErrorRateError::NoGolden)?;
    Ok(golden.0.iter().map(|&k| Behavior::of(k)).collect())
}

/// Monte-Carlo output error rate under wrong keys.
pub fn error_rate(
    design: &LockedDesign,
    trials: u64,
    seed: u64,
) -> Result<ErrorRateReport, ErrorRateError> {
    if trials == 0 {
        return Err(ErrorRateError::NoTrials);
    }
    if design.sb_count() == 0 {
        let mut r = ErrorRateReport::new(design, trials, 0);
        r.warning = Some("design has no switch boxes; no wrong keys exist".into());
        return Ok(r);
    }
    let golden = golden_behaviors(design)?;
    let sim = Simulator::for_design(design)?;
    let errors = crate::par::try_sum(0..trials, |t| -> Result<u64, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t));
        let key = sample_wrong_key(&mut rng, &golden);
        let input = SimInput::random(&mut rng, sim.input_count(), sim.width());
        let good = sim.run(&golden, &input)?;
        let bad = sim.run_key(&key, &input)?;
        Ok((good != bad) as u64)
    })?;
    Ok(ErrorRateReport::new(design, trials, errors))
}

/// Exact error rate over every wrong key and every input.
///
/// Keys are enumerated by behaviour class; each class stands for 16 keys
/// per box, so every wrong key carries the same weight.
pub fn error_rate_exhaustive(design: &LockedDesign) -> Result<ErrorRateReport, ErrorRateError> {
    let width = design.netlist.width();
    let inputs = design.netlist.meta.inputs.len();
    if width > 4 || inputs > 3 {
        return Err(ErrorRateError::TooLarge { width, inputs });
    }
    let x = design.sb_count();
    if x == 0 {
        return error_rate(design, 1, 0);
    }
    let golden = golden_behaviors(design)?;
    let sim = Simulator::for_design(design)?;
    let all_inputs = all_inputs(inputs, width);
    let goods: Vec<SimResult> = all_inputs
        .iter()
        .map(|i| sim.run(&golden, i))
        .collect::<Result<_, _>>()?;
    let tuples = Behavior::COUNT.pow(x as u32);
    let errors = crate::par::try_sum(0..tuples as u64, |t| -> Result<u64, SimError> {
        let b = behavior_tuple(t as usize, x);
        if b == golden {
            return Ok(0);
        }
        let mut e = 0;
        for (i, good) in all_inputs.iter().zip(&goods) {
            e += (sim.run(&b, i)? != *good) as u64;
        }
        Ok(e)
    })?;
    let per_class = 16u64.pow(x as u32);
    let wrong_keys = 256u64.pow(x as u32) - per_class;
    let mut r = ErrorRateReport::new(
        design,
        wrong_keys * all_inputs.len() as u64,
        errors * per_class,
    );
    r.error_rate = r.errors as f64 / r.trials as f64;
    Ok(r)
}

/// The `t`-th tuple of box behaviours, first box most significant.
pub fn behavior_tuple(mut t: usize, x: usize) -> Vec<Behavior> {
    let mut b = vec![Behavior::PARALLEL; x];
    for slot in b.iter_mut().rev() {
        *slot = Behavior::from_index(t % Behavior::COUNT);
        t /= Behavior::COUNT;
    }
    b
}

/// Every input vector for `inputs` inputs of `width` bits, first input most significant.
pub fn all_inputs(inputs: usize, width: u32) -> Vec<SimInput> {
    let total = 1u64 << (inputs as u32 * width);
    let mask = width_mask(width);
    (0..total)
        .map(|mut v| {
            let mut words = vec![0; inputs];
            for w in words.iter_mut().rev() {
                *w = v & mask;
                v >>= width;
            }
            SimInput(words)
        })
        .collect()
}
