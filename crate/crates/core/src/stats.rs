//! Small numerical helpers shared across modules.

use rand::Rng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Density of `N(mean, variance)` at `x`.
pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / variance - 0.5 * variance.ln() - LN_SQRT_2PI).exp()
}

/// Log-density of `Gamma(shape, rate)` at `h`; `-inf` for `h <= 0`.
pub fn gamma_ln_pdf(h: f64, shape: f64, rate: f64) -> f64 {
    if h <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - statrs::function::gamma::ln_gamma(shape) + (shape - 1.0) * h.ln() - rate * h
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman & Fan type 7). Reorders `values`.
pub fn quantile_in_place(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let n = values.len();
    let pos = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return lo_val;
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo_val + frac * (hi_val - lo_val)
}

/// Lower and upper pointwise quantiles of a set of equally long replicate
/// curves at central probability `level`.
pub fn pointwise_band<R: AsRef<[f64]>>(replicates: &[R], level: f64) -> (Vec<f64>, Vec<f64>) {
    let n_cells = replicates.first().map_or(0, |r| r.as_ref().len());
    let tail = (1.0 - level) / 2.0;
    let mut column = vec![0.0; replicates.len()];
    let mut lower = Vec::with_capacity(n_cells);
    let mut upper = Vec::with_capacity(n_cells);
    for j in 0..n_cells {
        for (slot, rep) in column.iter_mut().zip(replicates) {
            *slot = rep.as_ref()[j];
        }
        lower.push(quantile_in_place(&mut column, tail));
        upper.push(quantile_in_place(&mut column, 1.0 - tail));
    }
    (lower, upper)
}

/// Draw an index from the discrete distribution with the given cumulative
/// (unnormalised, non-decreasing) weights. Returns `None` if the total is zero.
pub fn draw_from_cumulative<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> Option<usize> {
    let total = *cumulative.last()?;
    if !(total > 0.0) {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let idx = cumulative.partition_point(|&c| c <= target);
    Some(idx.min(cumulative.len() - 1))
}

/// Running sum of `values`, same length.
pub fn cumulative_sum(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}
