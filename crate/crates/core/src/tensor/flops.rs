//! Thread-local floating-point operation counter fed by every forward op.
//!
//! Matrix products count two operations per multiply-accumulate. Fused
//! normalization ops use the per-element constants below, which the
//! analytic cost model shares.

use std::cell::Cell;

/// Per-element cost of a layer normalization (mean, variance, scale, affine).
pub const LAYER_NORM_PER_ELEM: u64 = 8;
/// Per-element cost of a softmax (max, exp, sum, divide).
pub const SOFTMAX_PER_ELEM: u64 = 4;
/// Per-element cost of GELU.
pub const GELU_PER_ELEM: u64 = 8;

thread_local! {
    static ACTIVE: Cell<bool> = const { Cell::new(false) };
    static MATMUL: Cell<u64> = const { Cell::new(0) };
    static OTHER: Cell<u64> = const { Cell::new(0) };
}

/// Operation counts collected by [`count_flops`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCount {
    pub matmul: u64,
    pub other: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.matmul + self.other
    }
}

/// Runs `f` and reports the operations its forward ops performed.
pub fn count_flops<R>(f: impl FnOnce() -> R) -> (R, FlopCount) {
    let was_active = ACTIVE.with(|a| a.replace(true));
    let m0 = MATMUL.with(Cell::get);
    let o0 = OTHER.with(Cell::get);
    let out = f();
    let count = FlopCount {
        matmul: MATMUL.with(Cell::get) - m0,
        other: OTHER.with(Cell::get) - o0,
    };
    ACTIVE.with(|a| a.set(was_active));
    (out, count)
}

pub(crate) fn add_matmul(n: u64) {
    if ACTIVE.with(Cell::get) {
        MATMUL.with(|c| c.set(c.get() + n));
    }
}

pub(crate) fn add_other(n: u64) {
    if ACTIVE.with(Cell::get) {
        OTHER.with(|c| c.set(c.get() + n));
    }
}
