//! Shifted log-sum-exp kernels.
//!
//! Every reduction shifts by the extreme element before exponentiating, so
//! the largest exponent evaluated is `exp(0)`. Results are exact up to
//! rounding for any finite input, including `|a * f|` far beyond the
//! `exp` overflow threshold.

/// `ln(sum(exp(v)))` over `values`.
///
/// Returns `-inf` for an empty iterator.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = iter.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Soft minimum `-(1/a) ln(sum(exp(-a v)))`. Never exceeds `min(v)`.
pub fn soft_min<I>(values: I, a: f64) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    -log_sum_exp(values.into_iter().map(move |v| -a * v)) / a
}

/// Soft maximum `(1/a) ln(sum(exp(a v)))`. Never below `max(v)`.
pub fn soft_max<I>(values: I, a: f64) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    log_sum_exp(values.into_iter().map(move |v| a * v)) / a
}

/// Stable softmax over logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
