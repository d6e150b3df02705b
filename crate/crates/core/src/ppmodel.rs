//! The Poisson-process model: a piecewise-constant occurrence rate on a
//! calendar window `[t_a, t_b]`, its priors, and the event log-likelihood.
//!
//! Intervals are half-open and left-closed in increasing cal BP:
//! `heights[j]` applies on `[s_j, s_{j+1})` with `s_0 = t_a` and
//! `s_{k+1} = t_b`, so `heights[0]` is the most recent interval.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::calibration::{likelihood_weights, CalendarGrid, CalibrationCurve, Determination};
use crate::error::{Error, Result};
use crate::stats::gamma_ln_pdf;

/// Piecewise-constant rate (events per calendar year).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFunction {
    pub(crate) t_a: f64,
    pub(crate) t_b: f64,
    #[serde(rename = "s")]
    pub(crate) changepoints: Vec<f64>,
    #[serde(rename = "h")]
    pub(crate) heights: Vec<f64>,
}

impl RateFunction {
    pub fn new(t_a: f64, t_b: f64, changepoints: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        let rate = RateFunction {
            t_a,
            t_b,
            changepoints,
            heights,
        };
        rate.validate()?;
        Ok(rate)
    }

    pub fn constant(t_a: f64, t_b: f64, height: f64) -> Result<Self> {
        Self::new(t_a, t_b, Vec::new(), vec![height])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_a < self.t_b) || !self.t_a.is_finite() || !self.t_b.is_finite() {
            return Err(Error::invalid(
                "rate",
                format!("need t_a < t_b (got {} and {})", self.t_a, self.t_b),
            ));
        }
        if self.heights.len() != self.changepoints.len() + 1 {
            return Err(Error::invalid(
                "rate",
                format!(
                    "{} heights for {} changepoints",
                    self.heights.len(),
                    self.changepoints.len()
                ),
            ));
        }
        let mut prev = self.t_a;
        for &s in self.changepoints.iter().chain(std::iter::once(&self.t_b)) {
            if !(s > prev) {
                return Err(Error::invalid(
                    "rate",
                    "changepoints must be strictly increasing inside (t_a, t_b)",
                ));
            }
            prev = s;
        }
        if let Some(h) = self.heights.iter().find(|h| !(**h >= 0.0) || !h.is_finite()) {
            return Err(Error::invalid("rate", format!("height {h} is not a finite non-negative rate")));
        }
        Ok(())
    }

    pub fn t_a(&self) -> f64 {
        self.t_a
    }

    pub fn t_b(&self) -> f64 {
        self.t_b
    }

    /// Window length `t_b − t_a`.
    pub fn span(&self) -> f64 {
        self.t_b - self.t_a
    }

    /// Number of changepoints `k`.
    pub fn k(&self) -> usize {
        self.changepoints.len()
    }

    pub fn changepoints(&self) -> &[f64] {
        &self.changepoints
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// Boundary `s_j` for `j` in `0..=k+1`.
    pub fn boundary(&self, j: usize) -> f64 {
        if j == 0 {
            self.t_a
        } else if j <= self.changepoints.len() {
            self.changepoints[j - 1]
        } else {
            self.t_b
        }
    }

    /// Interval lengths `s_{j+1} − s_j`.
    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.heights.len()).map(move |j| self.boundary(j + 1) - self.boundary(j))
    }

    /// Index of the interval `[s_j, s_{j+1})` containing `theta`, if any.
    pub fn interval_of(&self, theta: f64) -> Option<usize> {
        if !(theta >= self.t_a && theta < self.t_b) {
            return None;
        }
        Some(self.changepoints.partition_point(|&s| s <= theta))
    }

    pub fn rate_at(&self, theta: f64) -> f64 {
        self.interval_of(theta).map_or(0.0, |j| self.heights[j])
    }

    /// `∫ λ` over the window, in closed form.
    pub fn integral(&self) -> f64 {
        self.heights.iter().zip(self.widths()).map(|(h, w)| h * w).sum()
    }

    /// Rate at every cell centre of `grid`.
    pub fn on_grid(&self, grid: &CalendarGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        let mut j = 0;
        for c in grid.centres() {
            if c < self.t_a || c >= self.t_b {
                out.push(0.0);
                continue;
            }
            while j < self.changepoints.len() && self.changepoints[j] <= c {
                j += 1;
            }
            out.push(self.heights[j]);
        }
        out
    }
}

pub fn rate_at(rate: &RateFunction, theta: f64) -> f64 {
    rate.rate_at(theta)
}

pub fn rate_integral(rate: &RateFunction) -> f64 {
    rate.integral()
}

/// Hyperparameters for `k`, the changepoint locations and the heights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Prior mean number of changepoints.
    pub n_lambda: f64,
    pub k_max: usize,
    /// Gamma shape for the heights.
    pub alpha: f64,
    /// Gamma rate for the heights, in calendar years.
    pub beta: f64,
}

pub const DEFAULT_N_LAMBDA: f64 = 3.0;
pub const DEFAULT_K_MAX: usize = 30;

impl PriorSpec {
    pub fn new(n_lambda: f64, k_max: usize, alpha: f64, beta: f64) -> Result<Self> {
        let p = PriorSpec {
            n_lambda,
            k_max,
            alpha,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.n_lambda > 0.0) || self.k_max < 1 || !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::invalid(
                "prior",
                format!(
                    "need n_lambda > 0, k_max >= 1, alpha > 0, beta > 0 (got {self:?})"
                ),
            ));
        }
        Ok(())
    }

    /// Log of the Poisson(`n_lambda`) pmf truncated to `0..=k_max`.
    pub fn ln_k_pmf(&self, k: usize) -> f64 {
        if k > self.k_max {
            return f64::NEG_INFINITY;
        }
        self.ln_poisson_term(k) - self.ln_truncation_mass()
    }

    pub fn k_pmf(&self) -> Vec<f64> {
        (0..=self.k_max).map(|k| self.ln_k_pmf(k).exp()).collect()
    }

    fn ln_poisson_term(&self, k: usize) -> f64 {
        -self.n_lambda + k as f64 * self.n_lambda.ln() - ln_gamma(k as f64 + 1.0)
    }

    fn ln_truncation_mass(&self) -> f64 {
        let terms: Vec<f64> = (0..=self.k_max).map(|k| self.ln_poisson_term(k)).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }
}

/// Library defaults: `n_λ = 3`, `α = 1`, `β = (t_b − t_a)/n`, so the prior
/// mean height is `n / (t_b − t_a)`.
pub fn default_prior(n: usize, t_a: f64, t_b: f64) -> Result<PriorSpec> {
    if n == 0 || !(t_a < t_b) {
        return Err(Error::invalid(
            "prior",
            format!("need n >= 1 and t_a < t_b (got n = {n}, [{t_a}, {t_b}])"),
        ));
    }
    PriorSpec::new(DEFAULT_N_LAMBDA, DEFAULT_K_MAX, 1.0, (t_b - t_a) / n as f64)
}

/// Joint log prior density of `(k, s, h)`: truncated Poisson on `k`, the
/// even order statistics of `2k + 1` uniforms for the locations, and
/// independent Gamma heights.
pub fn log_prior(rate: &RateFunction, prior: &PriorSpec) -> Result<f64> {
    let k = rate.k();
    if k > prior.k_max {
        return Err(Error::invalid(
            "rate",
            format!("k = {k} exceeds k_max = {}", prior.k_max),
        ));
    }
    let l = rate.span();
    let n_pts = (2 * k + 1) as f64;
    let ln_locations = ln_gamma(n_pts + 1.0) - n_pts * l.ln() + rate.widths().map(f64::ln).sum::<f64>();
    let ln_heights: f64 = rate
        .heights()
        .iter()
        .map(|&h| gamma_ln_pdf(h, prior.alpha, prior.beta))
        .sum();
    Ok(prior.ln_k_pmf(k) + ln_locations + ln_heights)
}

/// Calendar ages of events, all inside a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    ages: Vec<f64>,
}

impl EventSet {
    pub fn new(mut ages: Vec<f64>, t_a: f64, t_b: f64) -> Result<Self> {
        if let Some(a) = ages.iter().find(|&&a| !(a >= t_a && a <= t_b)) {
            return Err(Error::invalid(
                "event set",
                format!("age {a} outside [{t_a}, {t_b}]"),
            ));
        }
        ages.sort_by(f64::total_cmp);
        Ok(EventSet { ages })
    }

    /// Ages in ascending order.
    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    /// `N(s, t)`: number of ages in `(s, t]`.
    pub fn count(&self, s: f64, t: f64) -> usize {
        count_sorted(&self.ages, s, t)
    }
}

pub(crate) fn count_sorted(sorted: &[f64], s: f64, t: f64) -> usize {
    if t <= s {
        return 0;
    }
    sorted.partition_point(|&a| a <= t) - sorted.partition_point(|&a| a <= s)
}

pub fn count_events(events: &EventSet, s: f64, t: f64) -> usize {
    events.count(s, t)
}

/// `Σ log λ(θ_i) − ∫ λ` for ascending ages. An age equal to `t_b` counts
/// toward the last interval.
pub(crate) fn log_likelihood_sorted(rate: &RateFunction, sorted: &[f64]) -> f64 {
    let mut ll = -rate.integral();
    let mut lo = sorted.partition_point(|&a| a < rate.t_a);
    if lo > 0 {
        return f64::NEG_INFINITY;
    }
    let last = rate.heights.len() - 1;
    for (j, &h) in rate.heights.iter().enumerate() {
        let hi = if j == last {
            sorted.partition_point(|&a| a <= rate.t_b)
        } else {
            sorted.partition_point(|&a| a < rate.changepoints[j])
        };
        let n = hi - lo;
        if n > 0 {
            if h <= 0.0 {
                return f64::NEG_INFINITY;
            }
            ll += n as f64 * h.ln();
        }
        lo = hi;
    }
    if lo < sorted.len() {
        return f64::NEG_INFINITY;
    }
    ll
}

pub fn log_likelihood(rate: &RateFunction, events: &EventSet) -> f64 {
    log_likelihood_sorted(rate, events.ages())
}

/// Default analysis window: calibrate each determination independently over
/// the whole curve and take the outermost 0.05% / 99.95% quantiles, rounded
/// outward to whole years.
pub fn default_bounds(dets: &[Determination], curve: &CalibrationCurve) -> Result<(f64, f64)> {
    if dets.is_empty() {
        return Err(Error::Empty("determination set"));
    }
    let (min, max) = curve.cal_range();
    let grid = CalendarGrid::new(min.ceil(), max.floor(), 1.0)?;
    let on_grid = curve.on_grid(&grid)?;
    let mut t_a = f64::INFINITY;
    let mut t_b = f64::NEG_INFINITY;
    for det in dets {
        let w = likelihood_weights(det, &on_grid);
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(Error::NoMass { id: det.id.clone() });
        }
        let lo = grid_quantile(&grid, &w, total, 0.0005);
        let hi = grid_quantile(&grid, &w, total, 0.9995);
        t_a = t_a.min(lo.floor());
        t_b = t_b.max(hi.ceil());
    }
    Ok((t_a, t_b))
}

/// Quantile of the piecewise-uniform density defined by cell weights.
fn grid_quantile(grid: &CalendarGrid, weights: &[f64], total: f64, q: f64) -> f64 {
    let target = q * total;
    let mut acc = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        if acc + w >= target && w > 0.0 {
            let lo = grid.start + j as f64 * grid.step;
            return lo + (target - acc) / w * grid.step;
        }
        acc += w;
    }
    grid.end
}
