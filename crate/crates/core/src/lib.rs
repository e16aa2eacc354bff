//! Security-aware high-level synthesis with polymorphic switch-box
//! interconnect locking.
//!
//! The flow is: parse a [`dfg::Dfg`], schedule it with [`sched`], bind it
//! into a [`netlist::DatapathNetlist`] with [`bind`], lock interconnects with
//! switch boxes ([`lock`]), then evaluate the result by simulation ([`sim`])
//! and the oracle-guided attack ([`attack`]). [`bench`] generates synthetic
//! benchmarks and drives whole experiments.

pub mod attack;
pub mod bench;
pub mod bind;
pub mod dfg;
pub mod fixtures;
pub mod lock;
pub mod netlist;
mod par;
pub mod polysb;
pub mod sched;
pub mod sim;
pub mod word;
