//! Stable scalar kernels and the fixed-order reduction behind every
//! sample average in the crate.
//!
//! All `1/n Σ` reductions go through [`tree_reduce`]: a blocked pairwise
//! tree whose shape depends only on the input length. Subtrees above
//! [`PARALLEL_MIN`] elements are evaluated with `rayon::join`, but the tree
//! itself never changes, so results are bit-identical for any thread count.

use crate::error::{Error, Result};

/// Leaves of the reduction tree are summed left to right.
pub const LEAF: usize = 16;
/// Subtrees at least this large are split across the rayon pool.
pub const PARALLEL_MIN: usize = 1 << 14;

const STACK_WIDTH: usize = 32;

/// `log(e^a + e^b)` without overflow.
pub fn logsumexp2(a: f64, b: f64) -> Result<f64> {
    if a.is_nan() || b.is_nan() {
        return Err(Error::NonFinite("logsumexp2 input"));
    }
    Ok(lse2(a, b))
}

#[inline]
pub(crate) fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m.is_infinite() {
        return m;
    }
    m + (-(a - b).abs()).exp().ln_1p()
}

/// `log cosh(x)`, accurate both near zero and for large `|x|`.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    if a < 0.5 {
        let s = (0.5 * a).sinh();
        (2.0 * s * s).ln_1p()
    } else {
        a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }
}

/// `(log(e^w + e^{-w}), tanh(w))` from a single `expm1`.
#[inline]
pub(crate) fn lse_tanh(w: f64) -> (f64, f64) {
    let a = w.abs();
    let em1 = (-2.0 * a).exp_m1();
    let lse = a + (1.0 + em1).ln_1p();
    let t = -em1 / (2.0 + em1);
    (lse, t.copysign(w))
}

/// `1 / (1 + e^{-z})` without overflow in either tail.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn sech2(x: f64) -> f64 {
    let a = x.abs();
    if a > 350.0 {
        return 0.0;
    }
    let e = (-2.0 * a).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Fixed-order pairwise sum. `[] -> 0`.
pub fn deterministic_sum(values: &[f64]) -> f64 {
    let mut out = [0.0];
    tree_reduce(values.len(), &|i, acc: &mut [f64]| acc[0] += values[i], &mut out);
    out[0]
}

/// Reduce `len` per-item contributions of width `out.len()` into `out`.
///
/// `leaf(i, acc)` must *add* item `i`'s contribution into `acc`.
pub fn tree_reduce<F>(len: usize, leaf: &F, out: &mut [f64])
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    reduce_range(0, len, leaf, out);
}

fn reduce_range<F>(lo: usize, hi: usize, leaf: &F, out: &mut [f64])
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    out.fill(0.0);
    if hi - lo <= LEAF {
        for i in lo..hi {
            leaf(i, out);
        }
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let width = out.len();
    let mut stack = [0.0; STACK_WIDTH];
    let mut heap;
    let right: &mut [f64] = if width <= STACK_WIDTH {
        &mut stack[..width]
    } else {
        heap = vec![0.0; width];
        &mut heap[..]
    };
    if hi - lo >= PARALLEL_MIN {
        rayon::join(
            || reduce_range(lo, mid, leaf, out),
            || reduce_range(mid, hi, leaf, right),
        );
    } else {
        reduce_range(lo, mid, leaf, out);
        reduce_range(mid, hi, leaf, right);
    }
    for (o, r) in out.iter_mut().zip(right.iter()) {
        *o += *r;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// SplitMix64 finalizer; used to derive independent child seeds.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for cell `(a, b)` under `master`; independent of every other cell.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(master ^ mix64(a)) ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
