//! Summed probability distributions (SPDs), bootstrap bands and Monte-Carlo
//! null-model envelopes.
//!
//! These are the baseline the Poisson-process summary is compared against;
//! they are implemented as commonly practised, pathologies included.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::calibration::{
    calibrate_on_grid, check_grid_in_curve, CalendarGrid, CalibrationCurve, DensityGrid, Determination,
};
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::stats::{cumulative_sum, draw_from_cumulative, pointwise_band};

pub const DEFAULT_REPLICATES: usize = 500;
pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_SIGMA_OBS: f64 = 25.0;

/// Pointwise lower/upper quantiles of a set of replicate densities.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileBand {
    pub grid: CalendarGrid,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub replicates: usize,
}

impl QuantileBand {
    pub fn from_replicates<R: AsRef<[f64]>>(grid: CalendarGrid, replicates: &[R], level: f64) -> Result<Self> {
        check_level(level)?;
        if replicates.len() < 2 {
            return Err(Error::invalid("replicates", format!("need at least 2, got {}", replicates.len())));
        }
        let (lower, upper) = pointwise_band(replicates, level);
        Ok(QuantileBand {
            grid,
            lower,
            upper,
            level,
            replicates: replicates.len(),
        })
    }

    /// Whether `values[j]` lies within the band at cell `j`.
    pub fn contains(&self, j: usize, value: f64) -> bool {
        value >= self.lower[j] && value <= self.upper[j]
    }

    /// Fraction of cells where `density` leaves the band.
    pub fn exit_fraction(&self, density: &[f64]) -> f64 {
        let out = density
            .iter()
            .enumerate()
            .filter(|&(j, &v)| !self.contains(j, v))
            .count();
        out as f64 / density.len() as f64
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("level", format!("must lie in (0, 1), got {level}")))
    }
}

/// Pointwise mean of the independently calibrated densities.
pub fn spd(dets: &[Determination], curve: &CalibrationCurve, grid: &CalendarGrid) -> Result<DensityGrid> {
    check_grid_in_curve(curve, grid)?;
    let on_grid = curve.on_grid(grid)?;
    spd_on_grid(dets, &on_grid, grid)
}

fn spd_on_grid(dets: &[Determination], on_grid: &[(f64, f64)], grid: &CalendarGrid) -> Result<DensityGrid> {
    if dets.is_empty() {
        return Err(Error::Empty("determination set"));
    }
    let mut values = vec![0.0; grid.len()];
    for det in dets {
        let d = calibrate_on_grid(det, on_grid, grid)?;
        values.iter_mut().zip(&d.values).for_each(|(acc, v)| *acc += v);
    }
    let n = dets.len() as f64;
    values.iter_mut().for_each(|v| *v /= n);
    Ok(DensityGrid { grid: *grid, values })
}

/// Draw `n` cell centres from a density on the grid.
fn draw_ages<R: Rng + ?Sized>(density: &DensityGrid, cumulative: &[f64], n: usize, rng: &mut R) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| {
            draw_from_cumulative(cumulative, rng)
                .map(|j| density.grid.centre(j))
                .ok_or(Error::NoMass { id: "resampling density".into() })
        })
        .collect()
}

/// Simulate one determination per age; `sigmas` is cycled.
fn simulate_determinations<R: Rng + ?Sized>(
    ages: &[f64],
    sigmas: &[f64],
    curve: &CalibrationCurve,
    rng: &mut R,
) -> Result<Vec<Determination>> {
    ages.iter()
        .enumerate()
        .map(|(i, &theta)| {
            let (mu, tau) = curve.at(theta)?;
            let sigma = sigmas[i % sigmas.len()];
            let sd = (sigma * sigma + tau * tau).sqrt();
            let x = if sd > 0.0 {
                Normal::new(mu, sd).expect("finite sd").sample(rng)
            } else {
                mu
            };
            Ok(Determination {
                id: format!("rep{i}"),
                c14_age: x,
                sigma,
            })
        })
        .collect()
}

/// Bootstrap replicate SPDs: resample calendar ages from the initial SPD,
/// simulate determinations with the original σ_i, and recompute the SPD.
/// Replicate `r` uses random stream `r` of `seed`.
pub fn spd_bootstrap_replicates(
    dets: &[Determination],
    curve: &CalibrationCurve,
    grid: &CalendarGrid,
    replicates: usize,
    seed: u64,
) -> Result<(DensityGrid, Vec<Vec<f64>>)> {
    check_grid_in_curve(curve, grid)?;
    let on_grid = curve.on_grid(grid)?;
    let initial = spd_on_grid(dets, &on_grid, grid)?;
    let cumulative = cumulative_sum(&initial.values);
    let sigmas: Vec<f64> = dets.iter().map(|d| d.sigma).collect();
    let reps = (0..replicates)
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let ages = draw_ages(&initial, &cumulative, dets.len(), &mut rng)?;
            let sim = simulate_determinations(&ages, &sigmas, curve, &mut rng)?;
            Ok(spd_on_grid(&sim, &on_grid, grid)?.values)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((initial, reps))
}

pub fn spd_bootstrap(
    dets: &[Determination],
    curve: &CalibrationCurve,
    grid: &CalendarGrid,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<QuantileBand> {
    check_level(level)?;
    if replicates < 2 {
        return Err(Error::invalid("replicates", format!("need at least 2, got {replicates}")));
    }
    let (_, reps) = spd_bootstrap_replicates(dets, curve, grid, replicates, seed)?;
    QuantileBand::from_replicates(*grid, &reps, level)
}

/// Monte-Carlo envelope of SPDs simulated under a null calendar model.
#[derive(Clone, Debug, PartialEq)]
pub struct McEnvelope {
    pub band: QuantileBand,
    /// Fraction of cells where the observed SPD leaves the envelope. Only a
    /// whole-model statistic: individual excursions are not interpretable.
    pub exit_fraction: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn spd_mc_replicates(
    null_model: &DensityGrid,
    n: usize,
    curve: &CalibrationCurve,
    grid: &CalendarGrid,
    replicates: usize,
    sigma_obs: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::invalid("sample size", "need n >= 1"));
    }
    if (null_model.integral() - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(
            "null model",
            format!("must be normalised (integral {})", null_model.integral()),
        ));
    }
    check_grid_in_curve(curve, &null_model.grid)?;
    check_grid_in_curve(curve, grid)?;
    let on_grid = curve.on_grid(grid)?;
    let cumulative = cumulative_sum(&null_model.values);
    (0..replicates)
        .map(|r| {
            let mut rng = substream(seed, r as u64);
            let ages = draw_ages(null_model, &cumulative, n, &mut rng)?;
            let sim = simulate_determinations(&ages, &[sigma_obs], curve, &mut rng)?;
            Ok(spd_on_grid(&sim, &on_grid, grid)?.values)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn spd_mc_envelope(
    null_model: &DensityGrid,
    n: usize,
    curve: &CalibrationCurve,
    grid: &CalendarGrid,
    replicates: usize,
    level: f64,
    sigma_obs: f64,
    observed: Option<&DensityGrid>,
    seed: u64,
) -> Result<McEnvelope> {
    check_level(level)?;
    if replicates < 2 {
        return Err(Error::invalid("replicates", format!("need at least 2, got {replicates}")));
    }
    let reps = spd_mc_replicates(null_model, n, curve, grid, replicates, sigma_obs, seed)?;
    let band = QuantileBand::from_replicates(*grid, &reps, level)?;
    let exit_fraction = match observed {
        Some(obs) if obs.grid != *grid => {
            return Err(Error::invalid("observed SPD", "grid differs from the envelope grid"));
        }
        Some(obs) => Some(band.exit_fraction(&obs.values)),
        None => None,
    };
    Ok(McEnvelope { band, exit_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::calibrate_one;

    fn wiggly() -> CalibrationCurve {
        let text: String = (0..=60)
            .map(|i| {
                let t = i as f64 * 50.0;
                format!("{t},{},{}\n", t + 80.0 * (t / 300.0).sin(), 15.0)
            })
            .collect();
        CalibrationCurve::parse("wiggly", &text).unwrap()
    }

    #[test]
    fn single_determination_spd_is_its_calibration() {
        let c = wiggly();
        let g = CalendarGrid::new(500.0, 2500.0, 1.0).unwrap();
        let d = Determination::new("a", 1500.0, 30.0).unwrap();
        let s = spd(std::slice::from_ref(&d), &c, &g).unwrap();
        let cal = calibrate_one(&d, &c, &g).unwrap();
        assert_eq!(s.values, cal.values);
    }

    #[test]
    fn two_identical_determinations() {
        let c = wiggly();
        let g = CalendarGrid::new(500.0, 2500.0, 1.0).unwrap();
        let d = Determination::new("a", 1400.0, 25.0).unwrap();
        let s = spd(&[d.clone(), d.clone()], &c, &g).unwrap();
        let cal = calibrate_one(&d, &c, &g).unwrap();
        for (a, b) in s.values.iter().zip(&cal.values) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300));
        }
    }

    #[test]
    fn empty_set_rejected() {
        let c = wiggly();
        let g = CalendarGrid::new(500.0, 2500.0, 1.0).unwrap();
        assert!(matches!(spd(&[], &c, &g), Err(Error::Empty(_))));
    }

    #[test]
    fn constant_replicates_give_degenerate_band() {
        let g = CalendarGrid::new(0.0, 4.0, 1.0).unwrap();
        let v = vec![0.1, 0.4, 0.3, 0.2];
        let band = QuantileBand::from_replicates(g, &[v.clone(), v.clone(), v.clone()], 0.95).unwrap();
        assert_eq!(band.lower, v);
        assert_eq!(band.upper, v);
    }

    #[test]
    fn band_matches_sort_and_pick() {
        let g = CalendarGrid::new(0.0, 3.0, 1.0).unwrap();
        let reps = vec![vec![0.2, 0.5, 0.3], vec![0.6, 0.1, 0.3], vec![0.4, 0.2, 0.4]];
        let band = QuantileBand::from_replicates(g, &reps, 0.5).unwrap();
        // n = 3, p = 0.25 → h = 0.5; p = 0.75 → h = 1.5
        for j in 0..3 {
            let mut col: Vec<f64> = reps.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            let lo = col[0] + 0.5 * (col[1] - col[0]);
            let hi = col[1] + 0.5 * (col[2] - col[1]);
            assert!((band.lower[j] - lo).abs() < 1e-15);
            assert!((band.upper[j] - hi).abs() < 1e-15);
        }
    }

    #[test]
    fn argument_checks() {
        let c = wiggly();
        let g = CalendarGrid::new(500.0, 2500.0, 1.0).unwrap();
        let d = vec![Determination::new("a", 1400.0, 25.0).unwrap()];
        assert!(spd_bootstrap(&d, &c, &g, 1, 0.95, 0).is_err());
        assert!(spd_bootstrap(&d, &c, &g, 10, 1.0, 0).is_err());
        assert!(spd_bootstrap(&d, &c, &g, 10, 0.0, 0).is_err());
        let null = spd(&d, &c, &g).unwrap();
        assert!(spd_mc_envelope(&null, 0, &c, &g, 10, 0.95, 25.0, None, 0).is_err());
        let mut bad = null.clone();
        bad.values[0] += 1.0;
        assert!(spd_mc_envelope(&bad, 5, &c, &g, 10, 0.95, 25.0, None, 0).is_err());
    }

    #[test]
    fn bootstrap_is_seed_deterministic_and_ordered() {
        let c = wiggly();
        let g = CalendarGrid::new(500.0, 2500.0, 1.0).unwrap();
        let dets: Vec<_> = [1300.0, 1350.0, 1500.0]
            .iter()
            .enumerate()
            .map(|(i, &x)| Determination::new(format!("d{i}"), x, 25.0).unwrap())
            .collect();
        let a = spd_bootstrap(&dets, &c, &g, 40, 0.9, 11).unwrap();
        let b = spd_bootstrap(&dets, &c, &g, 40, 0.9, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.lower.iter().zip(&a.upper).all(|(l, u)| l <= u));
        let (_, reps) = spd_bootstrap_replicates(&dets, &c, &g, 40, 11).unwrap();
        for r in &reps {
            let total: f64 = r.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
