//! Browser bindings for a handful of carbonpp operations. Each exported
//! function returns a complete SVG document as a string.
//!
//! The `demo` module holds plain Rust versions of the same operations so they
//! can be tested natively; the `#[wasm_bindgen]` wrappers only convert errors
//! into JavaScript exceptions.

use wasm_bindgen::prelude::*;

pub mod demo;

fn js(e: carbonpp::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Calibrate the determinations in `text` against IntCal20 and draw their
/// SPD over [ta, tb] cal BP. `text` has one date per line, written as
/// `age sigma`, `age,sigma` or `age±sigma`.
#[wasm_bindgen]
pub fn calibrate_svg(text: &str, ta: f64, tb: f64) -> Result<String, JsError> {
    demo::calibrate_svg(text, ta, tb).map_err(js)
}

/// Simulate `n` dates from a 50-year uniform phase at 2050–2100 cal BP and
/// draw the SPD with its bootstrap band against the true rate.
#[wasm_bindgen]
pub fn bootstrap_svg(n: usize, replicates: usize, seed: u64) -> Result<String, JsError> {
    demo::bootstrap_svg(n, replicates, seed).map_err(js)
}

/// Simulate a preset dataset and fit the changepoint model with a short
/// chain; draws the posterior mean rate, its band and the true rate.
#[wasm_bindgen]
pub fn fit_svg(preset: &str, iterations: usize, seed: u64) -> Result<String, JsError> {
    demo::fit_svg(preset, iterations, seed).map_err(js)
}
