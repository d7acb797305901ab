//! Thread-local tally of floating-point work done by forward operations.
//!
//! Counting convention: one multiply-accumulate is 2 FLOPs; elementwise
//! arithmetic is 1 FLOP per output element; softmax and layer norm cost
//! [`SOFTMAX_COST`] and [`NORM_COST`] per element; GELU costs [`GELU_COST`].
//! Copies, slices and concatenations are free. Backward work is not counted.

use std::cell::Cell;

pub const SOFTMAX_COST: u64 = 5;
pub const NORM_COST: u64 = 5;
pub const GELU_COST: u64 = 8;

thread_local! {
    static TALLY: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add(n: u64) {
    TALLY.with(|t| t.set(t.get() + n));
}

pub fn reset() {
    TALLY.with(|t| t.set(0));
}

pub fn read() -> u64 {
    TALLY.with(|t| t.get())
}

/// Runs `f` and returns its result together with the FLOPs it tallied on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = read();
    let out = f();
    (out, read() - before)
}
