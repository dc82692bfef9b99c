#![no_std]
//! Simulation core: quantum states, port-based teleportation, remote state
//! preparation, protocol transformations, Bell-style certification and exact
//! communication complexity.

// `!(x > y)` comparisons are used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bellkit;
pub mod ccoracle;
pub mod linalg;
pub mod pbt;
pub mod proto;
pub mod qstate;
pub mod rsp;
pub mod truth;
