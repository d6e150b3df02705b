use carbonpp::plot::{render_svg, Panel};
use carbonpp::posterior::mean_rate;
use carbonpp::ppmodel::default_prior;
use carbonpp::sampler::{run_chain_cached, CalibrationCache, ChainOptions};
use carbonpp::sim::{simulate_preset, ForwardModelSpec, Preset};
use carbonpp::spd::{spd, spd_bootstrap, DEFAULT_LEVEL};
use carbonpp::{CalendarGrid, CalibrationCurve, Determination, Error, Result};

/// Longest chain the page will run; the browser tab blocks while it works.
pub const MAX_ITERATIONS: usize = 200_000;
pub const MAX_REPLICATES: usize = 2_000;
pub const MAX_DATES: usize = 2_000;

fn invalid(what: &'static str, msg: impl Into<String>) -> Error {
    Error::Invalid { what, msg: msg.into() }
}

/// Parse one date per line. Blank lines and lines starting with `#` are
/// skipped; the age and sigma may be separated by whitespace, a comma or `±`.
pub fn parse_dates(text: &str) -> Result<Vec<Determination>> {
    let mut dets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',' || c == '±')
            .filter(|f| !f.is_empty())
            .collect();
        let bad = || Error::Parse {
            source_name: "input".into(),
            line: i + 1,
            msg: format!("expected `age sigma`, got {line:?}"),
        };
        let [age, sigma] = fields[..] else {
            return Err(bad());
        };
        let age: f64 = age.parse().map_err(|_| bad())?;
        let sigma: f64 = sigma.parse().map_err(|_| bad())?;
        dets.push(Determination::new(format!("date {}", dets.len() + 1), age, sigma)?);
    }
    if dets.is_empty() {
        return Err(Error::Empty("determination set"));
    }
    if dets.len() > MAX_DATES {
        return Err(invalid("dates", format!("at most {MAX_DATES} in the demo")));
    }
    Ok(dets)
}

pub fn calibrate_svg(text: &str, ta: f64, tb: f64) -> Result<String> {
    let dets = parse_dates(text)?;
    let curve = CalibrationCurve::intcal20();
    let grid = CalendarGrid::new(ta, tb, 1.0)?;
    let density = spd(&dets, &curve, &grid)?;
    let title = if dets.len() == 1 {
        format!(
            "{:.0} ± {:.0} BP calibrated, mode {:.0} cal BP",
            dets[0].c14_age,
            dets[0].sigma,
            density.argmax()
        )
    } else {
        format!("SPD of {} determinations", dets.len())
    };
    Ok(render_svg(&Panel {
        title,
        spd: Some(&density),
        density_scale: 1.0,
        curve: Some(&curve),
        determinations: &dets,
        y_label: Some("probability density".into()),
        ..Default::default()
    }))
}

pub fn bootstrap_svg(n: usize, replicates: usize, seed: u64) -> Result<String> {
    if !(1..=MAX_DATES).contains(&n) {
        return Err(invalid("n", format!("need 1..={MAX_DATES}, got {n}")));
    }
    if replicates > MAX_REPLICATES {
        return Err(invalid("replicates", format!("at most {MAX_REPLICATES} in the demo")));
    }
    let curve = CalibrationCurve::intcal20();
    let preset = Preset::UniformPhase { n };
    let data = simulate_preset(&preset, &curve, &ForwardModelSpec::default(), seed)?;
    let (ta, tb) = preset.bounds();
    let grid = CalendarGrid::new(ta, tb, 1.0)?;
    let density = spd(&data.determinations, &curve, &grid)?;
    let band = spd_bootstrap(&data.determinations, &curve, &grid, replicates, DEFAULT_LEVEL, seed)?;
    let truth: Vec<f64> = grid.centres().map(|c| data.truth.rate_at(c)).collect();

    // compare on the density scale, where the true phase density is 1/50
    let inside: Vec<usize> = (0..grid.len()).filter(|&j| truth[j] > 0.0).collect();
    let missed = inside.iter().filter(|&&j| !band.contains(j, truth[j] / n as f64)).count();
    Ok(render_svg(&Panel {
        title: format!(
            "{n} dates from a uniform phase: the {:.0}% bootstrap band misses the truth on {missed} of {} phase years",
            DEFAULT_LEVEL * 100.0,
            inside.len()
        ),
        truth: Some(truth),
        spd: Some(&density),
        spd_band: Some(&band),
        density_scale: n as f64,
        curve: Some(&curve),
        determinations: &data.determinations,
        y_label: Some("events per year".into()),
        ..Default::default()
    }))
}

pub fn fit_svg(preset: &str, iterations: usize, seed: u64) -> Result<String> {
    if !(100..=MAX_ITERATIONS).contains(&iterations) {
        return Err(invalid(
            "iterations",
            format!("need 100..={MAX_ITERATIONS}, got {iterations}"),
        ));
    }
    let preset: Preset = preset.parse()?;
    let curve = CalibrationCurve::intcal20();
    let data = simulate_preset(&preset, &curve, &ForwardModelSpec::default(), seed)?;
    let (ta, tb) = preset.bounds();
    let grid = CalendarGrid::new(ta, tb, 1.0)?;
    let prior = default_prior(data.determinations.len(), ta, tb)?;
    let mut options = ChainOptions::new(grid, prior, seed);
    options.iterations = iterations;
    options.burn_in = iterations / 2;
    options.thin = (iterations / 2000).max(1);

    let cache = CalibrationCache::new(&data.determinations, &curve, &grid)?;
    let samples = run_chain_cached(&cache, &options)?;
    let summary = mean_rate(&samples, &grid, DEFAULT_LEVEL)?;
    let truth = grid.centres().map(|c| data.truth.rate_at(c)).collect();
    Ok(render_svg(&Panel {
        title: format!(
            "{}: {} dates, {} iterations, {} kept states",
            preset.name(),
            data.determinations.len(),
            iterations,
            samples.len()
        ),
        summary: Some(&summary),
        truth: Some(truth),
        density_scale: 1.0,
        curve: Some(&curve),
        determinations: &data.determinations,
        y_label: Some("events per year".into()),
        ..Default::default()
    }))
}
