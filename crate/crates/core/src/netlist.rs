//! Structural RTL datapath: functional units, registers, multiplexers, nets
//! and a per-step controller ROM.
//!
//! Serialized as JSON with the top-level fields `fus`, `regs`, `muxes`,
//! `nets`, `ctrl` and `meta`. Switch boxes spliced in by the locking pass
//! appear only as net endpoints here; their list lives beside the netlist
//! in the locked-design file.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfg::OpType;

/// Switch-box input side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SbIn {
    X,
    Y,
}

/// Switch-box output side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SbOut {
    Z,
    W,
}

/// A net endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pin {
    Input { index: usize },
    Output { index: usize },
    FuIn { fu: usize, port: u8 },
    FuOut { fu: usize },
    RegD { reg: usize },
    RegQ { reg: usize },
    MuxIn { mux: usize, input: usize },
    MuxOut { mux: usize },
    SbIn { sb: usize, side: SbIn },
    SbOut { sb: usize, side: SbOut },
}

impl Pin {
    pub fn is_driver(self) -> bool {
        matches!(
            self,
            Pin::Input { .. }
                | Pin::FuOut { .. }
                | Pin::RegQ { .. }
                | Pin::MuxOut { .. }
                | Pin::SbOut { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fu {
    pub id: usize,
    pub op: OpType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reg {
    pub id: usize,
}

/// A multiplexer; select code `i` routes input `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mux {
    pub id: usize,
    pub inputs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Net {
    pub id: usize,
    pub driver: Pin,
    pub sinks: Vec<Pin>,
}

/// Mux selects and register load enables for one control step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlWord {
    pub step: u32,
    pub mux_sel: Vec<Option<u32>>,
    pub reg_load: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    #[serde(rename = "W")]
    pub width: u32,
    #[serde(rename = "L")]
    pub latency: u32,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatapathNetlist {
    pub fus: Vec<Fu>,
    pub regs: Vec<Reg>,
    pub muxes: Vec<Mux>,
    pub nets: Vec<Net>,
    pub ctrl: Vec<ControlWord>,
    pub meta: Meta,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetlistError {
    #[error("net {net}: pin {pin:?} cannot drive a net")]
    NotADriver { net: usize, pin: Pin },
    #[error("net {net}: pin {pin:?} cannot be a sink")]
    NotASink { net: usize, pin: Pin },
    #[error("pin {0:?} is driven by more than one net")]
    MultiplyDriven(Pin),
    #[error("pin {0:?} is driven by more than one net or appears twice")]
    DuplicateDriver(Pin),
    #[error("pin {0:?} references a missing component")]
    MissingComponent(Pin),
    #[error("pin {0:?} is not driven")]
    Undriven(Pin),
    #[error("controller has {found} words, expected {expected}")]
    ControllerLength { expected: usize, found: usize },
    #[error("control word for step {step} is malformed: {message}")]
    ControlWord { step: u32, message: String },
    #[error("word width {0} is outside 1..=64")]
    Width(u32),
    #[error("component ids must equal their position ({0})")]
    Ids(&'static str),
}

impl DatapathNetlist {
    pub fn width(&self) -> u32 {
        self.meta.width
    }

    pub fn latency(&self) -> u32 {
        self.meta.latency
    }

    /// Map from every sink pin to the id of the net driving it.
    pub fn sink_nets(&self) -> HashMap<Pin, usize> {
        let mut m = HashMap::new();
        for net in &self.nets {
            for &s in &net.sinks {
                m.insert(s, net.id);
            }
        }
        m
    }

    /// Map from every driver pin to the id of its net.
    pub fn driver_nets(&self) -> HashMap<Pin, usize> {
        self.nets.iter().map(|n| (n.driver, n.id)).collect()
    }

    pub fn net(&self, id: usize) -> &Net {
        &self.nets[id]
    }

    /// Checks structural consistency, allowing switch-box pins for `sb_count` boxes.
    pub fn validate(&self, sb_count: usize) -> Result<(), NetlistError> {
        if !(1..=64).contains(&self.meta.width) {
            return Err(NetlistError::Width(self.meta.width));
        }
        if self.fus.iter().enumerate().any(|(i, f)| f.id != i) {
            return Err(NetlistError::Ids("fus"));
        }
        if self.regs.iter().enumerate().any(|(i, r)| r.id != i) {
            return Err(NetlistError::Ids("regs"));
        }
        if self.muxes.iter().enumerate().any(|(i, m)| m.id != i) {
            return Err(NetlistError::Ids("muxes"));
        }
        if self.nets.iter().enumerate().any(|(i, n)| n.id != i) {
            return Err(NetlistError::Ids("nets"));
        }
        let exists = |p: Pin| match p {
            Pin::Input { index } => index < self.meta.inputs.len(),
            Pin::Output { index } => index < self.meta.outputs.len(),
            Pin::FuIn { fu, port } => fu < self.fus.len() && port < 2,
            Pin::FuOut { fu } => fu < self.fus.len(),
            Pin::RegD { reg } | Pin::RegQ { reg } => reg < self.regs.len(),
            Pin::MuxIn { mux, input } => self.muxes.get(mux).is_some_and(|m| input < m.inputs),
            Pin::MuxOut { mux } => mux < self.muxes.len(),
            Pin::SbIn { sb, .. } | Pin::SbOut { sb, .. } => sb < sb_count,
        };
        let mut drivers = BTreeSet::new();
        let mut sinks = BTreeSet::new();
        for net in &self.nets {
            if !net.driver.is_driver() {
                return Err(NetlistError::NotADriver {
                    net: net.id,
                    pin: net.driver,
                });
            }
            if !exists(net.driver) {
                return Err(NetlistError::MissingComponent(net.driver));
            }
            if !drivers.insert(net.driver) {
                return Err(NetlistError::DuplicateDriver(net.driver));
            }
            for &s in &net.sinks {
                if s.is_driver() {
                    return Err(NetlistError::NotASink {
                        net: net.id,
                        pin: s,
                    });
                }
                if !exists(s) {
                    return Err(NetlistError::MissingComponent(s));
                }
                if !sinks.insert(s) {
                    return Err(NetlistError::MultiplyDriven(s));
                }
            }
        }
        let mut required: Vec<Pin> = Vec::new();
        for f in &self.fus {
            required.push(Pin::FuIn { fu: f.id, port: 0 });
            required.push(Pin::FuIn { fu: f.id, port: 1 });
        }
        for m in &self.muxes {
            required.extend((0..m.inputs).map(|i| Pin::MuxIn {
                mux: m.id,
                input: i,
            }));
        }
        for r in &self.regs {
            required.push(Pin::RegD { reg: r.id });
        }
        required.extend((0..self.meta.outputs.len()).map(|o| Pin::Output { index: o }));
        for sb in 0..sb_count {
            required.push(Pin::SbIn { sb, side: SbIn::X });
            required.push(Pin::SbIn { sb, side: SbIn::Y });
        }
        if let Some(&p) = required.iter().find(|p| !sinks.contains(p)) {
            return Err(NetlistError::Undriven(p));
        }

        if self.ctrl.len() != self.meta.latency as usize {
            return Err(NetlistError::ControllerLength {
                expected: self.meta.latency as usize,
                found: self.ctrl.len(),
            });
        }
        for (i, w) in self.ctrl.iter().enumerate() {
            let bad = |message: String| NetlistError::ControlWord {
                step: w.step,
                message,
            };
            if w.step as usize != i + 1 {
                return Err(bad(format!("expected step {}", i + 1)));
            }
            if w.mux_sel.len() != self.muxes.len() || w.reg_load.len() != self.regs.len() {
                return Err(bad("field lengths do not match the component counts".into()));
            }
            for (m, sel) in w.mux_sel.iter().enumerate() {
                if let Some(s) = sel {
                    if *s as usize >= self.muxes[m].inputs {
                        return Err(bad(format!("mux {m} select {s} out of range")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Distinct registers loaded, at some step, with a value computed by FU `fu`.
    ///
    /// Follows multiplexer selects in the controller; switch boxes are not
    /// traversed, so call this on an unlocked netlist.
    pub fn fu_register_fanout(&self, fu: usize) -> Option<usize> {
        if fu >= self.fus.len() {
            return None;
        }
        let sink_nets = self.sink_nets();
        let mut loaded = BTreeSet::new();
        for w in &self.ctrl {
            for (r, &load) in w.reg_load.iter().enumerate() {
                if !load {
                    continue;
                }
                let mut pin = Pin::RegD { reg: r };
                // Walk back through selected mux inputs to the real source.
                let src = loop {
                    let Some(&net) = sink_nets.get(&pin) else {
                        break None;
                    };
                    match self.nets[net].driver {
                        Pin::MuxOut { mux } => match w.mux_sel[mux] {
                            Some(sel) => {
                                pin = Pin::MuxIn {
                                    mux,
                                    input: sel as usize,
                                }
                            }
                            None => break None,
                        },
                        other => break Some(other),
                    }
                };
                if src == Some(Pin::FuOut { fu }) {
                    loaded.insert(r);
                }
            }
        }
        Some(loaded.len())
    }

    /// Connectivity as driver -> sorted sinks, independent of net numbering.
    pub fn connectivity(&self) -> BTreeMap<Pin, BTreeSet<Pin>> {
        self.nets
            .iter()
            .filter(|n| !n.sinks.is_empty())
            .map(|n| (n.driver, n.sinks.iter().copied().collect()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("netlist serializes")
    }

    pub fn from_json(text: &str) -> Result<DatapathNetlist, serde_json::Error> {
        serde_json::from_str(text)
    }
}
