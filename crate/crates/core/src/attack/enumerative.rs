//! Exact DIP search over switch-box behaviour classes.
//!
//! A design's outputs depend on a box key only through its behaviour (which
//! inputs drive `Z` and `W`), so `x` boxes give `16^x` candidate classes
//! instead of `256^x` keys.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AttackError, Constraint, Dip};
use crate::lock::LockedDesign;
use crate::polysb::{Behavior, DesignKey};
use crate::sim::{all_inputs, behavior_tuple, SimInput, SimResult, Simulator};

/// Input vectors above this many bits are sampled instead of enumerated.
pub const EXHAUSTIVE_INPUT_BITS: u32 = 16;
pub const SAMPLED_INPUTS: usize = 10_000;

pub struct EnumerativeSearch {
    sim: Simulator,
    x: usize,
    consistent: Vec<usize>,
    inputs: Vec<SimInput>,
    exhaustive: bool,
}

impl EnumerativeSearch {
    pub fn new(
        design: &LockedDesign,
        capacity: usize,
        seed: u64,
    ) -> Result<EnumerativeSearch, AttackError> {
        let x = design.sb_count();
        if x > capacity {
            return Err(AttackError::Capacity { sbs: x, capacity });
        }
        let sim = Simulator::for_design(design)?;
        let n = sim.input_count();
        let bits = n as u32 * sim.width();
        let exhaustive = bits <= EXHAUSTIVE_INPUT_BITS;
        let inputs = if exhaustive {
            all_inputs(n, sim.width())
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..SAMPLED_INPUTS)
                .map(|_| SimInput::random(&mut rng, n, sim.width()))
                .collect()
        };
        Ok(EnumerativeSearch {
            consistent: (0..Behavior::COUNT.pow(x as u32)).collect(),
            sim,
            x,
            inputs,
            exhaustive,
        })
    }

    /// Whether the searched input set is the whole input space.
    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    /// Number of behaviour classes still consistent with every constraint.
    pub fn consistent_count(&self) -> usize {
        self.consistent.len()
    }

    /// Number of concrete keys still consistent (16 per box per class).
    pub fn consistent_keys(&self) -> u128 {
        self.consistent.len() as u128 * 16u128.pow(self.x as u32)
    }

    fn eval(&self, t: usize, input: &SimInput) -> Result<SimResult, AttackError> {
        Ok(self.sim.run(&behavior_tuple(t, self.x), input)?)
    }

    pub fn add_constraint(&mut self, c: &Constraint) -> Result<(), AttackError> {
        let mut keep = Vec::with_capacity(self.consistent.len());
        for &t in &self.consistent {
            if self.eval(t, &c.input)? == c.output {
                keep.push(t);
            }
        }
        self.consistent = keep;
        Ok(())
    }

    pub fn find_dip(&self) -> Result<Option<Dip>, AttackError> {
        if self.consistent.len() < 2 {
            return Ok(None);
        }
        for input in &self.inputs {
            let first = self.consistent[0];
            let r0 = self.eval(first, input)?;
            for &t in &self.consistent[1..] {
                if self.eval(t, input)? != r0 {
                    return Ok(Some(Dip {
                        input: input.clone(),
                        k1: self.key_of(first),
                        k2: self.key_of(t),
                    }));
                }
            }
        }
        Ok(None)
    }

    fn key_of(&self, t: usize) -> DesignKey {
        DesignKey(
            behavior_tuple(t, self.x)
                .into_iter()
                .map(|b| b.representative())
                .collect(),
        )
    }

    pub fn any_consistent_key(&self) -> Option<DesignKey> {
        self.consistent.first().map(|&t| self.key_of(t))
    }
}
