//! Oracle-guided distinguishing-input attack on locked designs.
//!
//! The attacker holds the foundry view and a black-box oracle that answers
//! input queries with the golden outputs. Each round looks for a
//! distinguishing input pattern (DIP): an input on which two keys, both
//! consistent with every answer so far, produce different outputs. The
//! oracle's answer on that input rules out at least one of them. When no DIP
//! remains, any consistent key is functionally correct on the searched
//! input space.
//!
//! Two backends are provided. The enumerative one works over behaviour
//! classes (16 per box) and is exact for up to two boxes. The SMT backend
//! emits a QF_BV miter and runs an external solver.

pub mod enumerative;
pub mod smt;

use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::lock::LockedDesign;
use crate::polysb::{CorruptionPolicy, DesignKey};
use crate::sim::{SimError, SimInput, SimResult};

pub use enumerative::EnumerativeSearch;
pub use smt::{export_smtlib, Encoding, SolverCommand};

/// One oracle answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub input: SimInput,
    pub output: SimResult,
}

/// An input on which two consistent keys disagree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dip {
    pub input: SimInput,
    pub k1: DesignKey,
    pub k2: DesignKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AttackStatus {
    KeyFound,
    Timeout,
    Infeasible,
}

fn key_text<S: Serializer>(key: &Option<DesignKey>, s: S) -> Result<S::Ok, S::Error> {
    match key {
        Some(k) => s.serialize_str(&k.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackResult {
    pub status: AttackStatus,
    #[serde(serialize_with = "key_text")]
    pub key: Option<DesignKey>,
    pub dips: usize,
    pub iterations: usize,
    pub wall_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl AttackResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    /// Behaviour-class enumeration; refuses designs with more than `capacity` boxes.
    Enumerative { capacity: usize },
    /// External QF_BV solver.
    Smt(SolverCommand),
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Enumerative { capacity: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackConfig {
    pub backend: Backend,
    pub max_iters: usize,
    pub timeout: Duration,
    /// Seed for input sampling when the input space is too large to enumerate.
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            backend: Backend::default(),
            max_iters: 1000,
            timeout: Duration::from_secs(60),
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("{sbs} switch boxes exceed the enumerative backend capacity of {capacity}")]
    Capacity { sbs: usize, capacity: usize },
    #[error("the SMT encoding supports only the wired-or corruption policy, not {0:?}")]
    Policy(CorruptionPolicy),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error("could not decode solver output: {0}")]
    Decode(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Searches for a DIP consistent with `constraints`.
pub fn find_dip(
    design: &LockedDesign,
    constraints: &[Constraint],
    config: &AttackConfig,
) -> Result<Option<Dip>, AttackError> {
    if design.sb_count() == 0 {
        return Ok(None);
    }
    match &config.backend {
        Backend::Enumerative { capacity } => {
            let mut e = EnumerativeSearch::new(design, *capacity, config.seed)?;
            for c in constraints {
                e.add_constraint(c)?;
            }
            e.find_dip()
        }
        Backend::Smt(cmd) => smt::find_dip(design, constraints, cmd),
    }
}

/// Runs the DIP loop against `oracle` until no DIP remains or a budget runs out.
pub fn attack_loop(
    design: &LockedDesign,
    oracle: &dyn Fn(&SimInput) -> SimResult,
    config: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    let start = Instant::now();
    let mut result = AttackResult {
        status: AttackStatus::Timeout,
        key: None,
        dips: 0,
        iterations: 0,
        wall_s: 0.0,
        reason: None,
    };
    let finish = |mut r: AttackResult| {
        r.wall_s = start.elapsed().as_secs_f64();
        Ok(r)
    };
    if design.sb_count() == 0 {
        result.status = AttackStatus::KeyFound;
        result.key = Some(DesignKey::default());
        return finish(result);
    }

    let mut fallback = None;
    let backend = match &config.backend {
        Backend::Smt(cmd) if !cmd.is_available() => {
            fallback = Some(format!(
                "solver `{}` not found; used the enumerative backend",
                cmd.program
            ));
            Backend::default()
        }
        b => b.clone(),
    };
    match &backend {
        Backend::Enumerative { capacity } => {
            let mut search = match EnumerativeSearch::new(design, *capacity, config.seed) {
                Ok(s) => s,
                Err(AttackError::Capacity { sbs, capacity }) => {
                    let note = fallback
                        .as_ref()
                        .map(|f| format!("; {f}"))
                        .unwrap_or_default();
                    result.reason = Some(format!(
                        "capacity exceeded: {sbs} switch boxes, enumerative limit {capacity}{note}"
                    ));
                    return finish(result);
                }
                Err(e) => return Err(e),
            };
            loop {
                if result.iterations >= config.max_iters || start.elapsed() >= config.timeout {
                    result.reason = Some("iteration or time budget exhausted".into());
                    return finish(result);
                }
                result.iterations += 1;
                match search.find_dip()? {
                    Some(dip) => {
                        let before = search.consistent_count();
                        search.add_constraint(&Constraint {
                            output: oracle(&dip.input),
                            input: dip.input,
                        })?;
                        let after = search.consistent_count();
                        assert!(
                            after < before,
                            "a DIP must eliminate a consistent key class"
                        );
                        result.dips += 1;
                    }
                    None => {
                        match search.any_consistent_key() {
                            Some(k) => {
                                result.status = AttackStatus::KeyFound;
                                result.key = Some(k);
                                result.reason = fallback;
                            }
                            None => {
                                result.status = AttackStatus::Infeasible;
                                result.reason = Some("no key is consistent with the oracle".into());
                            }
                        }
                        return finish(result);
                    }
                }
            }
        }
        Backend::Smt(cmd) => {
            if design.policy != CorruptionPolicy::WiredOr {
                return Err(AttackError::Policy(design.policy));
            }
            let mut constraints: Vec<Constraint> = Vec::new();
            loop {
                if result.iterations >= config.max_iters || start.elapsed() >= config.timeout {
                    result.reason = Some("iteration or time budget exhausted".into());
                    return finish(result);
                }
                result.iterations += 1;
                match smt::find_dip(design, &constraints, cmd)? {
                    Some(dip) => {
                        constraints.push(Constraint {
                            output: oracle(&dip.input),
                            input: dip.input,
                        });
                        result.dips += 1;
                    }
                    None => {
                        match smt::consistent_key(design, &constraints, cmd)? {
                            Some(k) => {
                                result.status = AttackStatus::KeyFound;
                                result.key = Some(k);
                            }
                            None => {
                                result.status = AttackStatus::Infeasible;
                                result.reason = Some("no key is consistent with the oracle".into());
                            }
                        }
                        return finish(result);
                    }
                }
            }
        }
    }
}
