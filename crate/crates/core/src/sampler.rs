//! Metropolis-within-Gibbs sampler for the rate and the calendar ages.
//!
//! Each iteration first redraws every calendar age exactly from its
//! discrete full conditional on the grid (weights `φ_i(θ_j)·λ(θ_j)`), then
//! makes one reversible-jump update of the rate: a height change, a
//! changepoint move, a birth or a death, following Green's coal-mining
//! sampler.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::calibration::{check_grid_in_curve, likelihood_weights, CalendarGrid, CalibrationCurve, Determination};
use crate::error::{Error, Result};
use crate::ppmodel::{log_likelihood_sorted, PriorSpec, RateFunction};
use crate::rng::{seeded, ChainRng};
use crate::stats::cumulative_sum;

pub const SAMPLES_FORMAT: &str = "carbonpp-samples";
pub const SAMPLES_VERSION: u32 = 1;

/// Heights outside this range are rejected outright to keep the arithmetic finite.
pub const MIN_HEIGHT: f64 = 1e-12;
pub const MAX_HEIGHT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub grid: CalendarGrid,
    pub prior: PriorSpec,
    /// Scale `c` of the birth/death probabilities.
    pub move_constant: f64,
    /// Height proposals are `h·e^u` with `u ~ U(−w/2, w/2)`.
    pub height_step: f64,
}

impl ChainOptions {
    pub const DEFAULT_ITERATIONS: usize = 100_000;
    pub const DEFAULT_BURN_IN: usize = 50_000;
    pub const DEFAULT_THIN: usize = 10;
    pub const DEFAULT_MOVE_CONSTANT: f64 = 0.4;
    pub const DEFAULT_HEIGHT_STEP: f64 = 1.0;

    pub fn new(grid: CalendarGrid, prior: PriorSpec, seed: u64) -> Self {
        ChainOptions {
            iterations: Self::DEFAULT_ITERATIONS,
            burn_in: Self::DEFAULT_BURN_IN,
            thin: Self::DEFAULT_THIN,
            seed,
            grid,
            prior,
            move_constant: Self::DEFAULT_MOVE_CONSTANT,
            height_step: Self::DEFAULT_HEIGHT_STEP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations && self.iterations > 0 {
            return Err(Error::invalid(
                "chain options",
                format!("burn_in {} must be below iterations {}", self.burn_in, self.iterations),
            ));
        }
        if self.thin == 0 {
            return Err(Error::invalid("chain options", "thin must be at least 1"));
        }
        if !(self.move_constant > 0.0 && self.move_constant <= 0.45) {
            return Err(Error::invalid(
                "chain options",
                format!("move_constant must lie in (0, 0.45], got {}", self.move_constant),
            ));
        }
        if !(self.height_step > 0.0) {
            return Err(Error::invalid("chain options", "height_step must be positive"));
        }
        self.prior.validate()
    }

    /// Number of states kept after burn-in and thinning.
    pub fn kept(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Height,
    Position,
    Birth,
    Death,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Height, MoveKind::Position, MoveKind::Birth, MoveKind::Death];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounts {
    pub proposed: u64,
    pub accepted: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub height: MoveCounts,
    pub position: MoveCounts,
    pub birth: MoveCounts,
    pub death: MoveCounts,
}

impl AcceptanceStats {
    fn slot(&mut self, kind: MoveKind) -> &mut MoveCounts {
        match kind {
            MoveKind::Height => &mut self.height,
            MoveKind::Position => &mut self.position,
            MoveKind::Birth => &mut self.birth,
            MoveKind::Death => &mut self.death,
        }
    }

    pub fn get(&self, kind: MoveKind) -> MoveCounts {
        [self.height, self.position, self.birth, self.death][kind.index()]
    }

    pub fn record(&mut self, kind: MoveKind, accepted: bool) {
        let s = self.slot(kind);
        s.proposed += 1;
        s.accepted += accepted as u64;
    }
}

/// Probabilities of the four move types when the current state has `k`
/// changepoints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoveProbabilities {
    pub height: f64,
    pub position: f64,
    pub birth: f64,
    pub death: f64,
}

/// `b_k = c·min(1, p(k+1)/p(k))`, `d_k = c·min(1, p(k−1)/p(k))` for the
/// truncated Poisson `p`; the remainder is split between height and position
/// moves, all of it going to height moves when `k = 0`.
pub fn move_probabilities(k: usize, prior: &PriorSpec, c: f64) -> MoveProbabilities {
    let birth = if k >= prior.k_max {
        0.0
    } else {
        c * (prior.n_lambda / (k as f64 + 1.0)).min(1.0)
    };
    let death = if k == 0 {
        0.0
    } else {
        c * (k as f64 / prior.n_lambda).min(1.0)
    };
    let rest = 1.0 - birth - death;
    if k == 0 {
        MoveProbabilities {
            height: rest,
            position: 0.0,
            birth,
            death,
        }
    } else {
        MoveProbabilities {
            height: rest / 2.0,
            position: rest / 2.0,
            birth,
            death,
        }
    }
}

/// How the rate update sees the calendar ages.
#[derive(Clone, Copy, Debug)]
pub enum Likelihood<'a> {
    /// Target the prior alone.
    Off,
    /// Events at the given (ascending) ages.
    Events(&'a [f64]),
}

impl Likelihood<'_> {
    fn eval(&self, rate: &RateFunction) -> f64 {
        match self {
            Likelihood::Off => 0.0,
            Likelihood::Events(ages) => log_likelihood_sorted(rate, ages),
        }
    }
}

/// A proposed rate with its log acceptance ratio (`-inf` means reject).
#[derive(Clone, Debug)]
pub struct Proposal {
    pub kind: MoveKind,
    pub rate: RateFunction,
    pub log_ratio: f64,
}

impl Proposal {
    fn rejected(kind: MoveKind, rate: &RateFunction) -> Self {
        Proposal {
            kind,
            rate: rate.clone(),
            log_ratio: f64::NEG_INFINITY,
        }
    }

    pub fn acceptance_probability(&self) -> f64 {
        if self.log_ratio >= 0.0 {
            1.0
        } else {
            self.log_ratio.exp()
        }
    }
}

fn height_ok(h: f64) -> bool {
    h > MIN_HEIGHT && h < MAX_HEIGHT
}

/// Multiply height `j` by `e^u`.
///
/// The log ratio is `ΔLL + α·u − β(h' − h)`: the Gamma prior ratio times the
/// Jacobian `h'/h` of the log-scale walk.
pub fn height_proposal(
    rate: &RateFunction,
    lik: Likelihood<'_>,
    current_ll: f64,
    prior: &PriorSpec,
    j: usize,
    u: f64,
) -> Proposal {
    let h = rate.heights[j];
    let h_new = h * u.exp();
    if !height_ok(h_new) {
        return Proposal::rejected(MoveKind::Height, rate);
    }
    let mut next = rate.clone();
    next.heights[j] = h_new;
    let ll = lik.eval(&next);
    let log_ratio = ll - current_ll + prior.alpha * (h_new / h).ln() - prior.beta * (h_new - h);
    Proposal {
        kind: MoveKind::Height,
        rate: next,
        log_ratio,
    }
}

/// Move changepoint `s_j` (1-based) to `s_new ∈ (s_{j−1}, s_{j+1})`.
pub fn position_proposal(
    rate: &RateFunction,
    lik: Likelihood<'_>,
    current_ll: f64,
    j: usize,
    s_new: f64,
) -> Proposal {
    let left = rate.boundary(j - 1);
    let right = rate.boundary(j + 1);
    let s_old = rate.boundary(j);
    if !(s_new > left && s_new < right) {
        return Proposal::rejected(MoveKind::Position, rate);
    }
    let mut next = rate.clone();
    next.changepoints[j - 1] = s_new;
    let ll = lik.eval(&next);
    let prior_ratio = ((s_new - left) * (right - s_new)).ln() - ((s_old - left) * (right - s_old)).ln();
    Proposal {
        kind: MoveKind::Position,
        rate: next,
        log_ratio: ll - current_ll + prior_ratio,
    }
}

/// Log of the birth acceptance ratio `A` for splitting one interval of a
/// `k`-changepoint rate, excluding the likelihood ratio.
///
/// `w1`/`w2` are the lengths of the new lower/upper pieces, `h` the old height
/// and `h1`/`h2` the new ones.
#[allow(clippy::too_many_arguments)]
pub fn ln_birth_ratio_without_likelihood(
    k: usize,
    span: f64,
    prior: &PriorSpec,
    c: f64,
    w1: f64,
    w2: f64,
    h: f64,
    h1: f64,
    h2: f64,
) -> f64 {
    let kf = k as f64;
    let ln_k_ratio = (prior.n_lambda / (kf + 1.0)).ln();
    let ln_locations = ((2.0 * kf + 3.0) * (2.0 * kf + 2.0)).ln() - 2.0 * span.ln() + (w1 * w2 / (w1 + w2)).ln();
    let ln_heights = prior.alpha * prior.beta.ln() - ln_gamma(prior.alpha)
        + (prior.alpha - 1.0) * (h1 * h2 / h).ln()
        - prior.beta * (h1 + h2 - h);
    let from = move_probabilities(k, prior, c);
    let to = move_probabilities(k + 1, prior, c);
    let ln_proposal = (to.death * span / (from.birth * (kf + 1.0))).ln();
    let ln_jacobian = ((h1 + h2) * (h1 + h2) / h).ln();
    ln_k_ratio + ln_locations + ln_heights + ln_proposal + ln_jacobian
}

/// Split the interval containing `s_star` with split variable `u ∈ (0, 1)`.
///
/// New heights keep the length-weighted geometric mean:
/// `h' = h·R^{−w₂/W}`, `h'' = h·R^{w₁/W}`, `R = (1−u)/u`.
pub fn birth_proposal(
    rate: &RateFunction,
    lik: Likelihood<'_>,
    current_ll: f64,
    prior: &PriorSpec,
    c: f64,
    s_star: f64,
    u: f64,
) -> Proposal {
    let k = rate.k();
    if k >= prior.k_max || !(u > 0.0 && u < 1.0) || !(s_star > rate.t_a && s_star < rate.t_b) {
        return Proposal::rejected(MoveKind::Birth, rate);
    }
    let j = rate.changepoints.partition_point(|&s| s < s_star);
    if rate.changepoints.get(j) == Some(&s_star) {
        return Proposal::rejected(MoveKind::Birth, rate);
    }
    let lo = rate.boundary(j);
    let hi = rate.boundary(j + 1);
    let (w1, w2) = (s_star - lo, hi - s_star);
    let w = w1 + w2;
    let h = rate.heights[j];
    let ln_r = ((1.0 - u) / u).ln();
    let h1 = h * (-w2 / w * ln_r).exp();
    let h2 = h * (w1 / w * ln_r).exp();
    if !height_ok(h1) || !height_ok(h2) {
        return Proposal::rejected(MoveKind::Birth, rate);
    }
    let mut next = rate.clone();
    next.changepoints.insert(j, s_star);
    next.heights[j] = h1;
    next.heights.insert(j + 1, h2);
    let ll = lik.eval(&next);
    let log_ratio = ll - current_ll + ln_birth_ratio_without_likelihood(k, rate.span(), prior, c, w1, w2, h, h1, h2);
    Proposal {
        kind: MoveKind::Birth,
        rate: next,
        log_ratio,
    }
}

/// Remove changepoint `s_j` (1-based), merging its two neighbouring heights
/// by their length-weighted geometric mean. Exact reverse of a birth.
pub fn death_proposal(
    rate: &RateFunction,
    lik: Likelihood<'_>,
    current_ll: f64,
    prior: &PriorSpec,
    c: f64,
    j: usize,
) -> Proposal {
    let k = rate.k();
    if k == 0 || j == 0 || j > k {
        return Proposal::rejected(MoveKind::Death, rate);
    }
    let lo = rate.boundary(j - 1);
    let s = rate.boundary(j);
    let hi = rate.boundary(j + 1);
    let (w1, w2) = (s - lo, hi - s);
    let w = w1 + w2;
    let h1 = rate.heights[j - 1];
    let h2 = rate.heights[j];
    let h = ((w1 * h1.ln() + w2 * h2.ln()) / w).exp();
    if !height_ok(h) {
        return Proposal::rejected(MoveKind::Death, rate);
    }
    let mut next = rate.clone();
    next.changepoints.remove(j - 1);
    next.heights[j - 1] = h;
    next.heights.remove(j);
    let ll = lik.eval(&next);
    let ln_birth = ln_birth_ratio_without_likelihood(k - 1, rate.span(), prior, c, w1, w2, h, h1, h2);
    Proposal {
        kind: MoveKind::Death,
        rate: next,
        log_ratio: ll - current_ll - ln_birth,
    }
}

/// One reversible-jump update of a rate function.
#[derive(Clone, Copy, Debug)]
pub struct RateUpdater {
    pub prior: PriorSpec,
    pub move_constant: f64,
    pub height_step: f64,
    /// When false only height and position moves are made (fixed `k`).
    pub vary_dimension: bool,
}

impl RateUpdater {
    pub fn new(prior: PriorSpec, move_constant: f64, height_step: f64) -> Self {
        RateUpdater {
            prior,
            move_constant,
            height_step,
            vary_dimension: true,
        }
    }

    pub fn from_options(opts: &ChainOptions) -> Self {
        Self::new(opts.prior, opts.move_constant, opts.height_step)
    }

    pub fn move_probabilities(&self, k: usize) -> MoveProbabilities {
        if !self.vary_dimension {
            return if k == 0 {
                MoveProbabilities { height: 1.0, position: 0.0, birth: 0.0, death: 0.0 }
            } else {
                MoveProbabilities { height: 0.5, position: 0.5, birth: 0.0, death: 0.0 }
            };
        }
        move_probabilities(k, &self.prior, self.move_constant)
    }

    /// Draw a move, propose it and accept or reject. `current_ll` must be the
    /// log-likelihood of `rate` under `lik`; the returned value is the
    /// log-likelihood of the (possibly new) state.
    pub fn step<R: Rng + ?Sized>(
        &self,
        rate: &mut RateFunction,
        lik: Likelihood<'_>,
        current_ll: f64,
        rng: &mut R,
        stats: &mut AcceptanceStats,
    ) -> f64 {
        let k = rate.k();
        let probs = self.move_probabilities(k);
        let v: f64 = rng.random();
        let prior = &self.prior;
        let c = self.move_constant;
        let proposal = if v < probs.birth {
            let s_star = rng.random_range(rate.t_a..rate.t_b);
            let u: f64 = rng.random();
            birth_proposal(rate, lik, current_ll, prior, c, s_star, u)
        } else if v < probs.birth + probs.death {
            let j = rng.random_range(1..=k);
            death_proposal(rate, lik, current_ll, prior, c, j)
        } else if v < probs.birth + probs.death + probs.height {
            let j = rng.random_range(0..=k);
            let u = (rng.random::<f64>() - 0.5) * self.height_step;
            height_proposal(rate, lik, current_ll, prior, j, u)
        } else {
            let j = rng.random_range(1..=k);
            let s_new = rng.random_range(rate.boundary(j - 1)..rate.boundary(j + 1));
            position_proposal(rate, lik, current_ll, j, s_new)
        };
        let accept = proposal.log_ratio >= 0.0
            || (proposal.log_ratio > f64::NEG_INFINITY && rng.random::<f64>().ln() < proposal.log_ratio);
        stats.record(proposal.kind, accept);
        if accept {
            *rate = proposal.rate;
            lik.eval(rate)
        } else {
            current_ll
        }
    }
}

/// Draw `k`, locations and heights from the prior.
pub fn draw_from_prior<R: Rng + ?Sized>(t_a: f64, t_b: f64, prior: &PriorSpec, rng: &mut R) -> RateFunction {
    let pmf_cum = cumulative_sum(&prior.k_pmf());
    let k = crate::stats::draw_from_cumulative(&pmf_cum, rng).unwrap_or(0);
    let mut changepoints;
    loop {
        let mut pts: Vec<f64> = (0..2 * k + 1).map(|_| rng.random_range(t_a..t_b)).collect();
        pts.sort_by(f64::total_cmp);
        changepoints = pts.iter().skip(1).step_by(2).copied().collect::<Vec<_>>();
        let strictly_inside = changepoints.iter().all(|&s| s > t_a && s < t_b);
        if strictly_inside && changepoints.windows(2).all(|w| w[0] < w[1]) {
            break;
        }
    }
    let gamma = Gamma::new(prior.alpha, 1.0 / prior.beta).expect("valid gamma prior");
    let heights = (0..=k)
        .map(|_| gamma.sample(rng).clamp(2.0 * MIN_HEIGHT, 0.5 * MAX_HEIGHT))
        .collect();
    RateFunction {
        t_a,
        t_b,
        changepoints,
        heights,
    }
}

/// Per-determination likelihood values on the grid, with running sums for
/// fast interval-wise categorical draws. Immutable for a chain's lifetime.
#[derive(Clone, Debug)]
pub struct CalibrationCache {
    grid: CalendarGrid,
    ids: Vec<String>,
    weights: Vec<Vec<f64>>,
    /// `prefix[i][j] = Σ_{m<j} weights[i][m]`, length `cells + 1`.
    prefix: Vec<Vec<f64>>,
}

impl CalibrationCache {
    pub fn new(dets: &[Determination], curve: &CalibrationCurve, grid: &CalendarGrid) -> Result<Self> {
        if dets.is_empty() {
            return Err(Error::Empty("determination set"));
        }
        check_grid_in_curve(curve, grid)?;
        let on_grid = curve.on_grid(grid)?;
        let mut weights = Vec::with_capacity(dets.len());
        let mut prefix = Vec::with_capacity(dets.len());
        for det in dets {
            let w = likelihood_weights(det, &on_grid);
            let mut p = Vec::with_capacity(w.len() + 1);
            p.push(0.0);
            p.extend(cumulative_sum(&w));
            if !(p[p.len() - 1] > 0.0) {
                return Err(Error::NoMass { id: det.id.clone() });
            }
            weights.push(w);
            prefix.push(p);
        }
        Ok(CalibrationCache {
            grid: *grid,
            ids: dets.iter().map(|d| d.id.clone()).collect(),
            weights,
            prefix,
        })
    }

    pub fn grid(&self) -> &CalendarGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `φ(X_i; μ(θ_j), σ_i² + τ(θ_j)²)` at every cell of the grid.
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }
}

/// Current rate and calendar ages (cell centres, one per determination).
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub rate: RateFunction,
    pub ages: Vec<f64>,
}

/// Redraw every calendar age from its exact discrete full conditional on
/// the grid, `P(θ_i = c_j) ∝ φ_i(c_j)·λ(c_j)`.
pub fn update_calendar_ages<R: Rng + ?Sized>(
    cache: &CalibrationCache,
    rate: &RateFunction,
    ages: &mut [f64],
    rng: &mut R,
) -> Result<()> {
    let grid = &cache.grid;
    let n_int = rate.heights.len();
    // cell index ranges of the rate's constant pieces
    let mut bounds = Vec::with_capacity(n_int + 1);
    bounds.push(grid.cells_below(rate.t_a));
    for &s in &rate.changepoints {
        bounds.push(grid.cells_below(s));
    }
    bounds.push(grid.cells_below(rate.t_b));
    let mut masses = vec![0.0; n_int];
    for (i, age) in ages.iter_mut().enumerate() {
        let p = &cache.prefix[i];
        let mut total = 0.0;
        for (m, mass) in masses.iter_mut().enumerate() {
            let piece = (p[bounds[m + 1]] - p[bounds[m]]).max(0.0);
            total += rate.heights[m] * piece;
            *mass = total;
        }
        if !(total > 0.0) {
            return Err(Error::NoMass { id: cache.ids[i].clone() });
        }
        let target = rng.random::<f64>() * total;
        let m = masses.partition_point(|&c| c <= target).min(n_int - 1);
        let (lo, hi) = (bounds[m], bounds[m + 1]);
        let t = p[lo] + rng.random::<f64>() * (p[hi] - p[lo]);
        // the cell c with p[c] <= t < p[c + 1] has positive weight
        let cell = (lo + p[lo + 1..=hi].partition_point(|&x| x <= t)).min(hi - 1);
        *age = grid.centre(cell);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleState {
    pub iter: usize,
    pub rate: RateFunction,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSamples {
    pub options: ChainOptions,
    pub states: Vec<SampleState>,
    pub acceptance: AcceptanceStats,
}

impl PosteriorSamples {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn rates(&self) -> impl Iterator<Item = &RateFunction> + '_ {
        self.states.iter().map(|s| &s.rate)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = SamplesHeader {
            format: SAMPLES_FORMAT.to_owned(),
            version: SAMPLES_VERSION,
            tool_version: crate::VERSION.to_owned(),
            kept: self.states.len(),
            options: self.options.clone(),
        };
        let io = |e| Error::io("<samples>", e);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(io)?;
        for st in &self.states {
            let rec = SampleRecord {
                iter: st.iter,
                k: st.rate.k(),
                t_a: st.rate.t_a,
                t_b: st.rate.t_b,
                s: st.rate.changepoints.clone(),
                h: st.rate.heights.clone(),
                theta: st.theta.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    /// Read samples written by [`write_jsonl`](Self::write_jsonl). Acceptance
    /// statistics live in a sidecar and are not restored.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, msg: String| Error::Parse {
            source_name: "samples".into(),
            line,
            msg,
        };
        let (_, first) = lines.next().ok_or(Error::Empty("samples file"))?;
        let first = first.map_err(|e| Error::io("<samples>", e))?;
        let header: SamplesHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e.to_string()))?;
        if header.format != SAMPLES_FORMAT {
            return Err(parse_err(1, format!("not a samples file (format {:?})", header.format)));
        }
        if header.version != SAMPLES_VERSION {
            return Err(Error::FormatVersion {
                found: header.version,
                expected: SAMPLES_VERSION,
            });
        }
        let mut states = Vec::new();
        for (idx, line) in lines {
            let line = line.map_err(|e| Error::io("<samples>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| parse_err(idx + 1, e.to_string()))?;
            if rec.k != rec.s.len() {
                return Err(parse_err(idx + 1, format!("k = {} but {} changepoints", rec.k, rec.s.len())));
            }
            let rate = RateFunction::new(rec.t_a, rec.t_b, rec.s, rec.h).map_err(|e| parse_err(idx + 1, e.to_string()))?;
            states.push(SampleState {
                iter: rec.iter,
                rate,
                theta: rec.theta,
            });
        }
        Ok(PosteriorSamples {
            options: header.options,
            states,
            acceptance: AcceptanceStats::default(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SamplesHeader {
    format: String,
    version: u32,
    tool_version: String,
    kept: usize,
    options: ChainOptions,
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    iter: usize,
    k: usize,
    t_a: f64,
    t_b: f64,
    s: Vec<f64>,
    h: Vec<f64>,
    theta: Vec<f64>,
}

/// Run the full sampler. The rate window is the grid's `[start, end]`.
pub fn run_chain(dets: &[Determination], curve: &CalibrationCurve, options: &ChainOptions) -> Result<PosteriorSamples> {
    options.validate()?;
    let cache = CalibrationCache::new(dets, curve, &options.grid)?;
    run_chain_cached(&cache, options)
}

pub fn run_chain_cached(cache: &CalibrationCache, options: &ChainOptions) -> Result<PosteriorSamples> {
    options.validate()?;
    let grid = options.grid;
    if cache.grid != grid {
        return Err(Error::invalid("chain options", "cache was built on a different grid"));
    }
    let mut rng: ChainRng = seeded(options.seed);
    let updater = RateUpdater::from_options(options);

    let mut rate = draw_from_prior(grid.start, grid.end, &options.prior, &mut rng);
    let flat = RateFunction::constant(grid.start, grid.end, 1.0)?;
    let mut ages = vec![0.0; cache.len()];
    update_calendar_ages(cache, &flat, &mut ages, &mut rng)?;
    let mut sorted = ages.clone();

    let mut states = Vec::with_capacity(options.kept());
    let mut stats = AcceptanceStats::default();
    for it in 0..options.iterations {
        update_calendar_ages(cache, &rate, &mut ages, &mut rng)?;
        sorted.copy_from_slice(&ages);
        sorted.sort_unstable_by(f64::total_cmp);
        let lik = Likelihood::Events(&sorted);
        let ll = lik.eval(&rate);
        if !ll.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite log-likelihood {ll} at iteration {it}; rate = {rate:?}; ages = {ages:?}"
            )));
        }
        updater.step(&mut rate, lik, ll, &mut rng, &mut stats);
        if it >= options.burn_in && (it + 1 - options.burn_in).is_multiple_of(options.thin) {
            states.push(SampleState {
                iter: it + 1,
                rate: rate.clone(),
                theta: ages.clone(),
            });
        }
    }
    Ok(PosteriorSamples {
        options: options.clone(),
        states,
        acceptance: stats,
    })
}

/// Run only the rate update against fixed events (or the prior alone),
/// returning the thinned rates after burn-in.
pub fn sample_rate<R: Rng + ?Sized>(
    updater: &RateUpdater,
    mut rate: RateFunction,
    lik: Likelihood<'_>,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut R,
) -> (Vec<RateFunction>, AcceptanceStats) {
    let mut stats = AcceptanceStats::default();
    let mut ll = lik.eval(&rate);
    let mut out = Vec::with_capacity(iterations.saturating_sub(burn_in) / thin.max(1));
    for it in 0..iterations {
        ll = updater.step(&mut rate, lik, ll, rng, &mut stats);
        if it >= burn_in && (it + 1 - burn_in).is_multiple_of(thin) {
            out.push(rate.clone());
        }
    }
    (out, stats)
}
