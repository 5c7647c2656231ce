//! Per-thread counters for operations that touch full-dimension (length 2N) data.
//!
//! Model evaluations and offline routines bump these counters. The online loop
//! samples them before and after stepping so tests can assert that no
//! full-dimension work happened inside it.

use std::cell::Cell;

thread_local! {
    static FULL_DIM_OPS: Cell<u64> = const { Cell::new(0) };
    static OFFLINE_OPS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn record_full_dim() {
    FULL_DIM_OPS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_offline() {
    OFFLINE_OPS.with(|c| c.set(c.get() + 1));
    record_full_dim();
}

/// Number of full-dimension operations executed on this thread so far.
pub fn full_dim_ops() -> u64 {
    FULL_DIM_OPS.with(Cell::get)
}

/// Number of offline dictionary routines executed on this thread so far.
pub fn offline_ops() -> u64 {
    OFFLINE_OPS.with(Cell::get)
}
