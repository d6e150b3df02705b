//! Calibration curves, calendar grids and single-determination calibration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::normal_pdf;

/// The IntCal20 Northern Hemisphere atmospheric curve, as distributed in
/// `.14c` format.
pub const INTCAL20_14C: &str = include_str!("../data/intcal20.14c");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    /// Calendar age, cal yr BP.
    pub cal_age: f64,
    /// Curve mean, ¹⁴C yr BP.
    pub c14_age: f64,
    /// Curve standard deviation, ¹⁴C yr.
    pub c14_sigma: f64,
}

/// A calibration curve `θ ↦ (μ(θ), τ(θ))`, stored ascending in calendar age
/// and interpolated piecewise-linearly in both mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationCurve {
    name: String,
    records: Vec<CurveRecord>,
}

impl CalibrationCurve {
    /// Build a curve from records in any order.
    pub fn new(name: impl Into<String>, mut records: Vec<CurveRecord>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::TooFewRecords(records.len()));
        }
        for r in &records {
            if !(r.c14_sigma > 0.0) || !r.cal_age.is_finite() || !r.c14_age.is_finite() {
                return Err(Error::invalid(
                    "curve record",
                    format!("cal_age {} has non-positive or non-finite values", r.cal_age),
                ));
            }
        }
        records.sort_by(|a, b| a.cal_age.total_cmp(&b.cal_age));
        if let Some(w) = records.windows(2).find(|w| w[0].cal_age == w[1].cal_age) {
            return Err(Error::DuplicateCalAge(w[0].cal_age));
        }
        Ok(CalibrationCurve {
            name: name.into(),
            records,
        })
    }

    /// Parse IntCal `.14c` text: `#` comment lines, then comma-separated rows
    /// `calBP,c14age,error[,...]`. Extra columns are ignored.
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let name = name.into();
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() < 3 {
                return Err(Error::Parse {
                    source_name: name.clone(),
                    line: idx + 1,
                    msg: format!("expected at least 3 columns, found {}", fields.len()),
                });
            }
            let mut nums = [0.0; 3];
            for (slot, field) in nums.iter_mut().zip(&fields) {
                *slot = field.parse().map_err(|_| Error::Parse {
                    source_name: name.clone(),
                    line: idx + 1,
                    msg: format!("malformed number {field:?}"),
                })?;
            }
            records.push(CurveRecord {
                cal_age: nums[0],
                c14_age: nums[1],
                c14_sigma: nums[2],
            });
        }
        Self::new(name, records)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Self::parse(name, &text)
    }

    /// The bundled IntCal20 curve.
    pub fn intcal20() -> Self {
        Self::parse("intcal20", INTCAL20_14C).expect("bundled IntCal20 parses")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[CurveRecord] {
        &self.records
    }

    /// `(min cal_age, max cal_age)`.
    pub fn cal_range(&self) -> (f64, f64) {
        (
            self.records[0].cal_age,
            self.records[self.records.len() - 1].cal_age,
        )
    }

    /// `(μ(θ), τ(θ))` by linear interpolation; exact at knots.
    pub fn at(&self, theta: f64) -> Result<(f64, f64)> {
        let (min, max) = self.cal_range();
        if !(theta >= min && theta <= max) {
            return Err(Error::OutOfCurveRange { theta, min, max });
        }
        // first record with cal_age > theta
        let upper = self.records.partition_point(|r| r.cal_age <= theta);
        if upper == 0 {
            let r = self.records[0];
            return Ok((r.c14_age, r.c14_sigma));
        }
        let left = self.records[upper - 1];
        if left.cal_age == theta || upper == self.records.len() {
            return Ok((left.c14_age, left.c14_sigma));
        }
        let right = self.records[upper];
        let w = (theta - left.cal_age) / (right.cal_age - left.cal_age);
        Ok((
            left.c14_age + w * (right.c14_age - left.c14_age),
            left.c14_sigma + w * (right.c14_sigma - left.c14_sigma),
        ))
    }

    /// Curve mean and standard deviation at every cell centre of `grid`.
    pub fn on_grid(&self, grid: &CalendarGrid) -> Result<Vec<(f64, f64)>> {
        grid.centres().map(|c| self.at(c)).collect()
    }
}

pub fn load_curve(path: impl AsRef<Path>) -> Result<CalibrationCurve> {
    CalibrationCurve::load(path)
}

pub fn curve_at(curve: &CalibrationCurve, theta: f64) -> Result<(f64, f64)> {
    curve.at(theta)
}

/// One radiocarbon determination `X ± σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Determination {
    pub id: String,
    pub c14_age: f64,
    pub sigma: f64,
}

impl Determination {
    pub fn new(id: impl Into<String>, c14_age: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !c14_age.is_finite() {
            return Err(Error::invalid(
                "determination",
                format!("sigma must be positive and age finite (got {c14_age} ± {sigma})"),
            ));
        }
        Ok(Determination {
            id: id.into(),
            c14_age,
            sigma,
        })
    }
}

/// Read a determination table with header `id,c14_age,sigma`. Lines starting
/// with `#` are skipped.
pub fn read_determinations<R: std::io::Read>(reader: R) -> Result<Vec<Determination>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize::<Determination>().enumerate() {
        let det = rec?;
        if !(det.sigma > 0.0) {
            return Err(Error::Parse {
                source_name: "determinations".into(),
                line: row + 2,
                msg: format!("sigma must be positive, got {}", det.sigma),
            });
        }
        out.push(det);
    }
    Ok(out)
}

pub fn load_determinations(path: impl AsRef<Path>) -> Result<Vec<Determination>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_determinations(file)
}

pub fn write_determinations<W: std::io::Write>(writer: W, dets: &[Determination]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for d in dets {
        wtr.serialize(d)?;
    }
    wtr.flush().map_err(|e| Error::io("<determinations>", e))?;
    Ok(())
}

/// A regular calendar grid on `[start, end]` (cal yr BP) with cells of width
/// `step`; cell `j` is centred at `start + (j + ½)·step`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalendarGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl CalendarGrid {
    /// The span must be a whole number of steps.
    pub fn new(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(start < end) || !(step > 0.0) || !start.is_finite() || !end.is_finite() {
            return Err(Error::invalid(
                "calendar grid",
                format!("need start < end and step > 0 (got [{start}, {end}] step {step})"),
            ));
        }
        let cells = (end - start) / step;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) {
            return Err(Error::invalid(
                "calendar grid",
                format!("span {} is not a whole number of {step}-year steps", end - start),
            ));
        }
        Ok(CalendarGrid { start, end, step })
    }

    pub fn len(&self) -> usize {
        ((self.end - self.start) / self.step).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centre(&self, j: usize) -> f64 {
        self.start + (j as f64 + 0.5) * self.step
    }

    pub fn centres(&self) -> impl DoubleEndedIterator<Item = f64> + ExactSizeIterator + '_ {
        (0..self.len()).map(move |j| self.centre(j))
    }

    /// Index of the cell containing `theta`; `end` itself belongs to the last cell.
    pub fn cell_of(&self, theta: f64) -> Option<usize> {
        if !(theta >= self.start && theta <= self.end) {
            return None;
        }
        let j = ((theta - self.start) / self.step).floor() as usize;
        Some(j.min(self.len() - 1))
    }

    /// Number of cells whose centre lies strictly below `theta`.
    pub fn cells_below(&self, theta: f64) -> usize {
        let x = (theta - self.start) / self.step - 0.5;
        if x <= 0.0 {
            0
        } else {
            (x.ceil() as usize).min(self.len())
        }
    }
}

/// Density values (per calendar year) at the cells of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityGrid {
    pub grid: CalendarGrid,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.step
    }

    /// Integral over the cells whose centres lie in `[lo, hi)`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        let a = self.grid.cells_below(lo);
        let b = self.grid.cells_below(hi);
        self.values[a..b].iter().sum::<f64>() * self.grid.step
    }

    /// Scale so that the grid integral is one; errors if the total is zero.
    pub fn normalised(mut self, id: &str) -> Result<Self> {
        let total = self.integral();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::NoMass { id: id.to_owned() });
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(self)
    }

    /// Centre of the cell with the largest density.
    pub fn argmax(&self) -> f64 {
        let (j, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (j, &v)| if v > best.1 { (j, v) } else { best });
        self.grid.centre(j)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, column: &str) -> std::io::Result<()> {
        writeln!(w, "cal_age,{column}")?;
        for (c, v) in self.grid.centres().zip(&self.values) {
            writeln!(w, "{c},{v}")?;
        }
        Ok(())
    }
}

/// Checks that every cell centre of `grid` lies within the curve.
pub(crate) fn check_grid_in_curve(curve: &CalibrationCurve, grid: &CalendarGrid) -> Result<()> {
    let (min, max) = curve.cal_range();
    for theta in [grid.centre(0), grid.centre(grid.len() - 1)] {
        if !(theta >= min && theta <= max) {
            return Err(Error::OutOfCurveRange { theta, min, max });
        }
    }
    Ok(())
}

/// Unnormalised likelihood weights `φ(X; μ(θ_j), σ² + τ(θ_j)²)` for each cell
/// of a grid, given the curve already evaluated on that grid.
pub fn likelihood_weights(det: &Determination, curve_on_grid: &[(f64, f64)]) -> Vec<f64> {
    let s2 = det.sigma * det.sigma;
    curve_on_grid
        .iter()
        .map(|&(mu, tau)| normal_pdf(det.c14_age, mu, s2 + tau * tau))
        .collect()
}

/// Calibrate one determination under a uniform calendar prior: the returned
/// density integrates to one over `grid`.
pub fn calibrate_one(
    det: &Determination,
    curve: &CalibrationCurve,
    grid: &CalendarGrid,
) -> Result<DensityGrid> {
    check_grid_in_curve(curve, grid)?;
    let on_grid = curve.on_grid(grid)?;
    calibrate_on_grid(det, &on_grid, grid)
}

pub(crate) fn calibrate_on_grid(
    det: &Determination,
    curve_on_grid: &[(f64, f64)],
    grid: &CalendarGrid,
) -> Result<DensityGrid> {
    DensityGrid {
        grid: *grid,
        values: likelihood_weights(det, curve_on_grid),
    }
    .normalised(&det.id)
}
