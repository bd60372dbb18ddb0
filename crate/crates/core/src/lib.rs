//! A last-level-cache side-channel laboratory built on a deterministic
//! cache simulator.
//!
//! [`memsim`] models the machine. [`evset`] builds eviction sets without
//! knowledge of physical addresses, [`probe`] samples them with
//! Prime+Probe, [`regions`] maps operations to the sets they touch,
//! [`covert`] runs a cross-process channel over the LLC and [`classify`]
//! turns memorygrams into activity episodes.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod classify;
pub mod covert;
pub mod error;
pub mod evset;
pub mod memsim;
pub mod probe;
pub mod regions;
pub mod workload;

pub use error::Error;
