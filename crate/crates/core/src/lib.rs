//! Network slice embedding on a shared 5G core.
//!
//! The crate places slice requests (VNF graphs with CPU, bandwidth, delay
//! and intra-slice isolation requirements) onto a physical server/switch
//! topology by solving a mixed-integer program exactly, keeps an exact
//! resource ledger of active slices, and runs a seeded adversarial
//! experiment measuring how often an attacker's slice lands on the same
//! server as a victim slice.

pub mod allocator;
pub mod digest;
pub mod error;
pub mod experiment;
pub mod lp;
pub mod slice;
pub mod state;
pub mod topology;

pub use error::{Error, Result};
