//! Summaries of posterior rate realisations.
//!
//! Changepoints and intervals are reported oldest first: index 1 is the
//! changepoint with the largest cal BP value, and interval 1 is the oldest
//! constant piece.

use std::collections::BTreeMap;
use std::io::Write;

use crate::calibration::CalendarGrid;
use crate::error::{Error, Result};
use crate::ppmodel::RateFunction;
use crate::sampler::PosteriorSamples;
use crate::stats::quantile_in_place;

pub const DEFAULT_BIN_WIDTH: f64 = 5.0;

/// Pointwise posterior mean and central credible band of the rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RateSummary {
    pub grid: CalendarGrid,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub n_samples: usize,
}

impl RateSummary {
    /// `∫` of the mean rate over the grid: the expected number of events.
    pub fn expected_count(&self) -> f64 {
        self.mean.iter().sum::<f64>() * self.grid.step
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cal_age,mean,lower,upper")?;
        for (j, c) in self.grid.centres().enumerate() {
            writeln!(w, "{c},{},{},{}", self.mean[j], self.lower[j], self.upper[j])?;
        }
        Ok(())
    }
}

/// Mean and `level` band of `rates` at every cell centre.
pub fn summarize_rates(rates: &[&RateFunction], grid: &CalendarGrid, level: f64) -> Result<RateSummary> {
    if rates.is_empty() {
        return Err(Error::Empty("posterior sample set"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("level", format!("must lie in (0, 1), got {level}")));
    }
    let tail = (1.0 - level) / 2.0;
    let n = rates.len();
    let mut cursor = vec![0usize; n];
    let mut column = vec![0.0; n];
    let mut mean = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for c in grid.centres() {
        for ((slot, rate), cur) in column.iter_mut().zip(rates).zip(cursor.iter_mut()) {
            *slot = if c < rate.t_a() || c >= rate.t_b() {
                0.0
            } else {
                let s = rate.changepoints();
                while *cur < s.len() && s[*cur] <= c {
                    *cur += 1;
                }
                rate.heights()[*cur]
            };
        }
        mean.push(column.iter().sum::<f64>() / n as f64);
        lower.push(quantile_in_place(&mut column, tail));
        upper.push(quantile_in_place(&mut column, 1.0 - tail));
    }
    Ok(RateSummary {
        grid: *grid,
        mean,
        lower,
        upper,
        level,
        n_samples: n,
    })
}

pub fn mean_rate(samples: &PosteriorSamples, grid: &CalendarGrid, level: f64) -> Result<RateSummary> {
    let rates: Vec<&RateFunction> = samples.rates().collect();
    summarize_rates(&rates, grid, level)
}

/// Posterior probability of each observed changepoint count.
pub fn changepoint_count_histogram(samples: &PosteriorSamples) -> Result<BTreeMap<usize, f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("posterior sample set"));
    }
    let mut counts = BTreeMap::new();
    for r in samples.rates() {
        *counts.entry(r.k()).or_insert(0usize) += 1;
    }
    let n = samples.len() as f64;
    Ok(counts.into_iter().map(|(k, c)| (k, c as f64 / n)).collect())
}

pub fn write_count_histogram_csv<W: Write>(hist: &BTreeMap<usize, f64>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "k,probability")?;
    for (k, p) in hist {
        writeln!(w, "{k},{p}")?;
    }
    Ok(())
}

/// Normalised histogram (density per unit) for one changepoint or interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// 1-based, oldest first.
    pub index: usize,
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    fn from_values(index: usize, values: &[f64], lo: f64, hi: f64, bin_width: f64) -> Self {
        let n_bins = (((hi - lo) / bin_width).ceil() as usize).max(1);
        let edges: Vec<f64> = (0..=n_bins).map(|b| lo + b as f64 * bin_width).collect();
        let mut counts = vec![0usize; n_bins];
        for &v in values {
            let b = (((v - lo) / bin_width).floor().max(0.0) as usize).min(n_bins - 1);
            counts[b] += 1;
        }
        let norm = values.len() as f64 * bin_width;
        Histogram {
            index,
            edges,
            density: counts.iter().map(|&c| c as f64 / norm).collect(),
        }
    }

    pub fn bins(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.density
            .iter()
            .enumerate()
            .map(move |(b, &d)| (self.edges[b], self.edges[b + 1], d))
    }

    /// Probability mass in bins overlapping `[lo, hi]`, counting partial
    /// bins proportionally.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.bins()
            .map(|(a, b, d)| {
                let overlap = (b.min(hi) - a.max(lo)).max(0.0);
                overlap * d
            })
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.bins().map(|(a, b, d)| (b - a) * d).sum()
    }

    /// Central `level` interval of the histogram distribution.
    pub fn central_interval(&self, level: f64) -> (f64, f64) {
        let tail = (1.0 - level) / 2.0;
        (self.quantile(tail), self.quantile(1.0 - tail))
    }

    pub fn quantile(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (a, b, d) in self.bins() {
            let m = (b - a) * d;
            if acc + m >= q && m > 0.0 {
                return a + (q - acc) / m * (b - a);
            }
            acc += m;
        }
        *self.edges.last().unwrap()
    }
}

pub fn write_histograms_csv<W: Write>(hists: &[Histogram], mut w: W) -> std::io::Result<()> {
    writeln!(w, "index,bin_start,bin_end,density")?;
    for h in hists {
        for (a, b, d) in h.bins() {
            writeln!(w, "{},{a},{b},{d}", h.index)?;
        }
    }
    Ok(())
}

fn with_k(samples: &PosteriorSamples, k: usize) -> Result<Vec<&RateFunction>> {
    let subset: Vec<_> = samples.rates().filter(|r| r.k() == k).collect();
    if subset.is_empty() {
        Err(Error::NoRealisations { k })
    } else {
        Ok(subset)
    }
}

/// Location densities of each changepoint among states with exactly
/// `k_cond` changepoints, binned at `bin_width` over `[t_a, t_b]`.
pub fn changepoint_locations(samples: &PosteriorSamples, k_cond: usize, bin_width: f64) -> Result<Vec<Histogram>> {
    if !(bin_width > 0.0) {
        return Err(Error::invalid("bin width", "must be positive"));
    }
    let subset = with_k(samples, k_cond)?;
    let (lo, hi) = (subset[0].t_a(), subset[0].t_b());
    Ok((1..=k_cond)
        .map(|index| {
            let values: Vec<f64> = subset.iter().map(|r| r.changepoints()[k_cond - index]).collect();
            Histogram::from_values(index, &values, lo, hi, bin_width)
        })
        .collect())
}

/// Height densities of each interval among states with exactly `k_cond`
/// changepoints, on `bins` equal bins from 0 to the largest sampled height.
pub fn conditional_heights(samples: &PosteriorSamples, k_cond: usize, bins: usize) -> Result<Vec<Histogram>> {
    if bins == 0 {
        return Err(Error::invalid("bins", "need at least one bin"));
    }
    let subset = with_k(samples, k_cond)?;
    let max_h = subset
        .iter()
        .flat_map(|r| r.heights().iter().copied())
        .fold(0.0, f64::max);
    let width = if max_h > 0.0 { max_h * (1.0 + 1e-12) / bins as f64 } else { 1.0 };
    Ok((1..=k_cond + 1)
        .map(|index| {
            let values: Vec<f64> = subset.iter().map(|r| r.heights()[k_cond + 1 - index]).collect();
            Histogram::from_values(index, &values, 0.0, width * bins as f64, width)
        })
        .collect())
}

pub fn conditional_mean_rate(
    samples: &PosteriorSamples,
    grid: &CalendarGrid,
    k_cond: usize,
    level: f64,
) -> Result<RateSummary> {
    let subset = with_k(samples, k_cond)?;
    summarize_rates(&subset, grid, level)
}

/// `count` evenly spaced stored realisations (always including the last),
/// each evaluated at the grid centres.
pub fn export_realisations(samples: &PosteriorSamples, count: usize, grid: &CalendarGrid) -> Result<Vec<Vec<f64>>> {
    let n = samples.len();
    if count > n {
        return Err(Error::invalid(
            "realisation count",
            format!("asked for {count} of {n} stored states"),
        ));
    }
    let mut idx: Vec<usize> = (0..count).map(|i| n - 1 - i * n / count).collect();
    idx.reverse();
    Ok(idx.into_iter().map(|i| samples.states[i].rate.on_grid(grid)).collect())
}
