//! Summarise collections of radiocarbon determinations by fitting an
//! inhomogeneous Poisson process whose rate is piecewise constant with an
//! unknown number of changepoints.
//!
//! The crate is organised bottom-up:
//!
//! * [`calibration`] ingests IntCal-format curves and calibrates single
//!   determinations on a calendar grid.
//! * [`spd`] builds summed probability distributions together with their
//!   bootstrap bands and Monte-Carlo null-model envelopes.
//! * [`ppmodel`] holds the piecewise-constant rate, its priors and the event
//!   likelihood.
//! * [`sampler`] is the Metropolis-within-Gibbs chain: exact categorical
//!   updates of the calendar ages followed by reversible-jump moves on the
//!   rate.
//! * [`posterior`] turns stored realisations into rate summaries, changepoint
//!   histograms and plots.
//! * [`sim`] simulates events and determinations, including the three
//!   preset experiments.
//!
//! Calendar ages are always in cal yr BP (larger is older), radiocarbon ages
//! in ¹⁴C yr BP, and rates in events per calendar year.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod error;
pub mod plot;
pub mod posterior;
pub mod ppmodel;
pub mod rng;
pub mod sampler;
pub mod sim;
pub mod spd;
pub mod stats;

pub use calibration::{
    calibrate_one, curve_at, load_curve, CalendarGrid, CalibrationCurve, CurveRecord,
    DensityGrid, Determination,
};
pub use error::{Error, Result};
pub use posterior::RateSummary;
pub use ppmodel::{EventSet, PriorSpec, RateFunction};
pub use sampler::{ChainOptions, PosteriorSamples};
pub use spd::QuantileBand;

/// Version string written into every output file header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
