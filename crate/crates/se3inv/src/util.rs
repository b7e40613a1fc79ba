//! Small numeric helpers shared across modules: deterministic summation,
//! log-factorials, and binomial coefficients.

use std::sync::LazyLock;

/// Largest `n` for which `ln_factorial(n)` is tabulated.
pub const LN_FACTORIAL_MAX: usize = 256;

static LN_FACTORIALS: LazyLock<Vec<f64>> = LazyLock::new(|| {
    let mut table = Vec::with_capacity(LN_FACTORIAL_MAX + 1);
    table.push(0.0);
    for n in 1..=LN_FACTORIAL_MAX {
        table.push(table[n - 1] + (n as f64).ln());
    }
    table
});

/// ln(n!) from a precomputed table.
///
/// Panics if `n` exceeds [`LN_FACTORIAL_MAX`]; every caller in this crate is
/// bounded far below that by the degree caps.
pub fn ln_factorial(n: usize) -> f64 {
    LN_FACTORIALS[n]
}

/// n! as a float; exact for n ≤ 22, otherwise via the log table.
pub fn factorial(n: usize) -> f64 {
    if n <= 22 {
        let mut acc = 1.0_f64;
        for k in 2..=n {
            acc *= k as f64;
        }
        acc
    } else {
        ln_factorial(n).exp()
    }
}

/// Binomial coefficient as a float (exact for the small arguments used here).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// Sums a slice by recursive pairwise reduction.
///
/// Used wherever a parallel computation must stay bit-for-bit reproducible:
/// the summation tree depends only on the slice length, never on thread
/// scheduling, and the O(log n) error growth beats naive accumulation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}
