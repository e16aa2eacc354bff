//! Polymorphic transistors and the four-transistor switch box.
//!
//! A polymorphic transistor has a control gate (CG) and a polarity gate
//! (PG). High PG makes it behave as an NMOS device, which conducts when CG is
//! high; low PG makes it a PMOS device, which conducts when CG is low. Both
//! cases fold into one predicate: the channel conducts iff `cg == pg`.
//!
//! The switch box connects inputs `X`, `Y` to outputs `Z`, `W` through
//!
//! | transistor | path  | key bits |
//! |------------|-------|----------|
//! | T1         | X–Z   | C1 P1    |
//! | T2         | X–W   | C2 P2    |
//! | T3         | Y–Z   | C3 P3    |
//! | T4         | Y–W   | C4 P4    |
//!
//! so one box carries eight key bits, written `C1P1C2P2C3P3C4P4`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::word::Word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolyTransistor {
    pub cg: bool,
    pub pg: bool,
}

impl PolyTransistor {
    pub fn conducts(self) -> bool {
        self.cg == self.pg
    }
}

/// Eight key bits of one switch box; bit 7 is C1 and bit 0 is P4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SbKey(pub u8);

impl SbKey {
    pub const ALL_COUNT: usize = 256;

    /// Transistor `t` in `0..4` (T1..T4).
    pub fn transistor(self, t: usize) -> PolyTransistor {
        assert!(t < 4);
        let shift = 6 - 2 * t;
        PolyTransistor {
            cg: (self.0 >> (shift + 1)) & 1 == 1,
            pg: (self.0 >> shift) & 1 == 1,
        }
    }

    pub fn from_transistors(ts: [PolyTransistor; 4]) -> SbKey {
        let mut bits = 0u8;
        for t in ts {
            bits = (bits << 2) | ((t.cg as u8) << 1) | t.pg as u8;
        }
        SbKey(bits)
    }

    pub fn all() -> impl Iterator<Item = SbKey> {
        (0..=255u8).map(SbKey)
    }
}

impl fmt::Display for SbKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:08b}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("key text must contain only 0/1 characters, found `{0}`")]
    BadChar(char),
    #[error("key length {found} is not {expected}")]
    Length { expected: usize, found: usize },
}

impl FromStr for SbKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = parse_bits(s)?;
        if bits.len() != 8 {
            return Err(KeyError::Length {
                expected: 8,
                found: bits.len(),
            });
        }
        Ok(SbKey(bits.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8)))
    }
}

fn parse_bits(s: &str) -> Result<Vec<bool>, KeyError> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(KeyError::BadChar(other)),
        })
        .collect()
}

/// Subset of `{X, Y}` driving one switch-box output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Drivers {
    pub x: bool,
    pub y: bool,
}

impl Drivers {
    pub const X: Drivers = Drivers { x: true, y: false };
    pub const Y: Drivers = Drivers { x: false, y: true };

    fn bits(self) -> u8 {
        self.x as u8 | (self.y as u8) << 1
    }

    fn from_bits(b: u8) -> Drivers {
        Drivers {
            x: b & 1 == 1,
            y: b & 2 == 2,
        }
    }
}

impl fmt::Display for Drivers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.x, self.y) {
            (false, false) => f.write_str("{}"),
            (true, false) => f.write_str("{X}"),
            (false, true) => f.write_str("{Y}"),
            (true, true) => f.write_str("{X,Y}"),
        }
    }
}

/// Which inputs drive `Z` and `W`.
///
/// The routing function of a box depends on its key only through this pair,
/// so the 256 keys fall into 16 behaviour classes of 16 keys each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Behavior {
    pub z: Drivers,
    pub w: Drivers,
}

impl Behavior {
    pub const COUNT: usize = 16;
    pub const PARALLEL: Behavior = Behavior {
        z: Drivers::X,
        w: Drivers::Y,
    };
    pub const CROSS: Behavior = Behavior {
        z: Drivers::Y,
        w: Drivers::X,
    };

    pub fn of(key: SbKey) -> Behavior {
        let on = |t| key.transistor(t).conducts();
        Behavior {
            z: Drivers { x: on(0), y: on(2) },
            w: Drivers { x: on(1), y: on(3) },
        }
    }

    /// Dense index in `0..16`.
    pub fn index(self) -> usize {
        (self.z.bits() | self.w.bits() << 2) as usize
    }

    pub fn from_index(i: usize) -> Behavior {
        assert!(i < Self::COUNT);
        Behavior {
            z: Drivers::from_bits(i as u8 & 3),
            w: Drivers::from_bits((i as u8 >> 2) & 3),
        }
    }

    /// Smallest key realising this behaviour.
    pub fn representative(self) -> SbKey {
        SbKey::all()
            .find(|&k| Behavior::of(k) == self)
            .expect("every behaviour class is inhabited")
    }

    pub fn mode(self) -> RoutingMode {
        match self {
            Behavior::PARALLEL => RoutingMode::Parallel,
            Behavior::CROSS => RoutingMode::Cross,
            Behavior { z, w } => RoutingMode::Corrupt { z, w },
        }
    }

    pub fn route(self, x: Word, y: Word, policy: CorruptionPolicy, mask: u64) -> (Word, Word) {
        match self {
            Behavior::PARALLEL => (x, y),
            Behavior::CROSS => (y, x),
            Behavior { z, w } => (drive(z, x, y, policy, mask), drive(w, x, y, policy, mask)),
        }
    }
}

fn drive(d: Drivers, x: Word, y: Word, policy: CorruptionPolicy, mask: u64) -> Word {
    match policy {
        CorruptionPolicy::WiredOr => {
            let mut out = Word::known(0);
            for (on, v) in [(d.x, x), (d.y, y)] {
                if on {
                    out.value |= v.value;
                    out.unknown |= v.unknown;
                }
            }
            out
        }
        CorruptionPolicy::Strict3V => match (d.x, d.y) {
            (false, false) => Word::all_unknown(mask),
            (true, false) => x,
            (false, true) => y,
            (true, true) => {
                let unknown = (x.value ^ y.value) | x.unknown | y.unknown;
                Word {
                    value: x.value & !unknown,
                    unknown: unknown & mask,
                }
            }
        },
    }
}

/// The resolved connectivity of a switch box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoutingMode {
    Parallel,
    Cross,
    Corrupt { z: Drivers, w: Drivers },
}

pub fn conducts(t: PolyTransistor) -> bool {
    t.conducts()
}

pub fn resolve(key: SbKey) -> RoutingMode {
    Behavior::of(key).mode()
}

/// Electrical reading of contended or floating switch-box outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionPolicy {
    /// Each output is the bitwise OR of its drivers, zero when undriven.
    #[default]
    WiredOr,
    /// Undriven outputs are unknown; contended bits are unknown where drivers differ.
    Strict3V,
}

impl FromStr for CorruptionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "wired_or" | "wiredor" => Ok(CorruptionPolicy::WiredOr),
            "strict3v" | "strict_3v" => Ok(CorruptionPolicy::Strict3V),
            _ => Err(format!("unknown corruption policy `{s}`")),
        }
    }
}

pub fn route(key: SbKey, x: Word, y: Word, policy: CorruptionPolicy, mask: u64) -> (Word, Word) {
    Behavior::of(key).route(x, y, policy, mask)
}

/// The connectivity a correctly keyed box must realise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SbMode {
    Parallel,
    Cross,
}

impl SbMode {
    pub fn behavior(self) -> Behavior {
        match self {
            SbMode::Parallel => Behavior::PARALLEL,
            SbMode::Cross => Behavior::CROSS,
        }
    }

    /// The 16 keys realising this mode, ascending.
    pub fn keys(self) -> Vec<SbKey> {
        let b = self.behavior();
        SbKey::all().filter(|&k| Behavior::of(k) == b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyPartition {
    pub parallel: usize,
    pub cross: usize,
    pub corrupt: usize,
}

pub fn enumerate_key_partition() -> KeyPartition {
    let mut p = KeyPartition {
        parallel: 0,
        cross: 0,
        corrupt: 0,
    };
    for k in SbKey::all() {
        match resolve(k) {
            RoutingMode::Parallel => p.parallel += 1,
            RoutingMode::Cross => p.cross += 1,
            RoutingMode::Corrupt { .. } => p.corrupt += 1,
        }
    }
    p
}

/// A full design key: one [`SbKey`] per switch box in placement order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct DesignKey(pub Vec<SbKey>);

impl DesignKey {
    pub fn bit_len(&self) -> usize {
        8 * self.0.len()
    }

    pub fn sb_count(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for DesignKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in &self.0 {
            write!(f, "{k}")?;
        }
        Ok(())
    }
}

impl FromStr for DesignKey {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = parse_bits(s)?;
        if bits.len() % 8 != 0 {
            return Err(KeyError::Length {
                expected: bits.len().div_ceil(8) * 8,
                found: bits.len(),
            });
        }
        Ok(DesignKey(
            bits.chunks(8)
                .map(|c| SbKey(c.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8)))
                .collect(),
        ))
    }
}

/// Number of keys for `x` boxes, as a power of two exponent: `256^x == 2^(8x)`.
pub fn key_space_log2(x: usize) -> usize {
    8 * x
}
