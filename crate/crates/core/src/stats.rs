//! Small order-stable reductions shared by the metric and loss code.

/// Pairwise (cascade) summation. The reduction tree only depends on the
/// slice length, so results are reproducible bit-for-bit.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub(crate) fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(pairwise_sum(values) / values.len() as f64)
    }
}

/// Median of an unsorted sample; even counts average the two middle values.
pub(crate) fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Percentile with linear interpolation between order statistics
/// (rank = p/100 * (n - 1)).
pub(crate) fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(percentile_sorted(&sorted, p))
}

pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Coefficient of determination of `predicted` against `observed`.
/// `None` when the observed values have zero variance.
pub(crate) fn r_squared(observed: &[f64], predicted: &[f64]) -> Option<f64> {
    let obs_mean = mean(observed)?;
    let res: Vec<f64> = observed
        .iter()
        .zip(predicted)
        .map(|(o, p)| (o - p) * (o - p))
        .collect();
    let tot: Vec<f64> = observed
        .iter()
        .map(|o| (o - obs_mean) * (o - obs_mean))
        .collect();
    let ss_tot = pairwise_sum(&tot);
    if ss_tot == 0.0 {
        return None;
    }
    Some(1.0 - pairwise_sum(&res) / ss_tot)
}
