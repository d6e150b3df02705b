use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::thread;

use carbonpp::calibration::{calibrate_one, load_determinations, write_determinations};
use carbonpp::plot::{render_svg, Panel};
use carbonpp::posterior::{
    changepoint_count_histogram, changepoint_locations, conditional_heights, conditional_mean_rate,
    export_realisations, mean_rate, write_count_histogram_csv, write_histograms_csv, RateSummary,
};
use carbonpp::ppmodel::{default_bounds, DEFAULT_K_MAX, DEFAULT_N_LAMBDA};
use carbonpp::sampler::{run_chain_cached, AcceptanceStats, CalibrationCache, ChainOptions, MoveKind};
use carbonpp::sim::{simulate_preset, simulate_rate, ForwardModelSpec, Preset};
use carbonpp::spd::{spd, spd_bootstrap, spd_mc_envelope, DEFAULT_LEVEL, DEFAULT_REPLICATES, DEFAULT_SIGMA_OBS};
use carbonpp::{CalendarGrid, CalibrationCurve, DensityGrid, Determination, PosteriorSamples, PriorSpec, RateFunction};

use crate::args::{CalibrateArgs, CommonArgs, PpFitArgs, SimulateArgs, SpdArgs, SummarizeArgs};
use crate::error::{CliError, Result};
use crate::output::{safe_name, write_path, Header, OutDir};

pub const CURVE_DIR_ENV: &str = "CARBONPP_CURVE_DIR";

/// Resolve `--curve`: an existing path, else a name inside
/// `$CARBONPP_CURVE_DIR` (with or without `.14c`), else the bundled IntCal20.
pub fn load_curve(spec: Option<&str>) -> Result<CalibrationCurve> {
    let dir = std::env::var_os(CURVE_DIR_ENV).map(PathBuf::from);
    let name = spec.unwrap_or("intcal20");
    if spec.is_some() && Path::new(name).is_file() {
        return Ok(CalibrationCurve::load(name)?);
    }
    if let Some(dir) = &dir {
        for candidate in [dir.join(name), dir.join(format!("{name}.14c"))] {
            if candidate.is_file() {
                return Ok(CalibrationCurve::load(candidate)?);
            }
        }
    }
    if name.eq_ignore_ascii_case("intcal20") {
        return Ok(CalibrationCurve::intcal20());
    }
    let looked = match &dir {
        Some(d) => format!("not a file, and not found in {}", d.display()),
        None => format!("not a file, and {CURVE_DIR_ENV} is not set"),
    };
    Err(CliError::Data(format!("calibration curve {name:?}: {looked}")))
}

fn load_dates(path: Option<&PathBuf>) -> Result<(PathBuf, Vec<Determination>)> {
    let path = path.ok_or_else(|| CliError::usage("--dates FILE is required"))?;
    let dets = load_determinations(path)?;
    if dets.is_empty() {
        return Err(CliError::Data(format!("{} holds no determinations", path.display())));
    }
    Ok((path.clone(), dets))
}

fn require_seed(seed: Option<u64>, why: &str) -> Result<u64> {
    seed.ok_or_else(|| CliError::usage(format!("--seed is required {why}")))
}

fn check_level(level: f64) -> Result<f64> {
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(CliError::usage(format!("--level must lie in (0, 1), got {level}")))
    }
}

/// The analysis grid: explicit edges when given, otherwise the distant tails
/// of the calibrated dates widened to a whole number of steps.
fn resolve_grid(
    ta: Option<f64>,
    tb: Option<f64>,
    step: Option<f64>,
    dets: &[Determination],
    curve: &CalibrationCurve,
) -> Result<CalendarGrid> {
    let step = step.unwrap_or(1.0);
    if !(step > 0.0) {
        return Err(CliError::usage(format!("--grid-step must be positive, got {step}")));
    }
    let (ta, tb) = match (ta, tb) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let (lo, hi) = default_bounds(dets, curve)?;
            let a = a.unwrap_or(lo);
            let b = b.unwrap_or(hi);
            if a >= b {
                return Err(CliError::usage(format!("window [{a}, {b}] is empty")));
            }
            let cells = ((b - a) / step - 1e-9).ceil().max(1.0);
            (a, a + cells * step)
        }
    };
    Ok(CalendarGrid::new(ta, tb, step)?)
}

fn grid_text(g: &CalendarGrid) -> String {
    format!("[{}, {}] step {}", g.start, g.end, g.step)
}

pub fn calibrate(common: &CommonArgs, args: &CalibrateArgs) -> Result<()> {
    let curve = load_curve(common.curve.as_deref())?;
    let (dates_path, dets) = load_dates(args.dates.as_ref())?;
    let grid = resolve_grid(args.ta, args.tb, args.grid_step, &dets, &curve)?;
    let mut out = OutDir::create(common.out.as_deref())?;
    let mut names = HashSet::new();
    for det in &dets {
        let name = format!("calibrated_{}.csv", safe_name(&det.id));
        if !names.insert(name.clone()) {
            return Err(CliError::Data(format!("two determinations map to the file name {name}")));
        }
        let density = calibrate_one(det, &curve, &grid)?;
        let header = Header::new("calibrate")
            .with("dates", dates_path.display())
            .with("id", &det.id)
            .with("c14_age", det.c14_age)
            .with("sigma", det.sigma)
            .with("curve", curve.name())
            .with("grid", grid_text(&grid))
            .with("mode", density.argmax());
        let mut text = header.render();
        let mut body = Vec::new();
        density.write_csv(&mut body, "density").expect("in-memory write");
        text.push_str(std::str::from_utf8(&body).expect("utf-8 csv"));
        out.write(&name, &text)?;
    }
    println!("calibrated {} determinations on {}", dets.len(), grid_text(&grid));
    for p in out.written() {
        println!("  {}", p.display());
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct NullRow {
    cal_age: f64,
    density: f64,
}

/// Read a `cal_age,density` table and interpolate it linearly onto `grid`,
/// zero outside the tabulated range, renormalised to integrate to one.
fn load_null_model(path: &Path, grid: &CalendarGrid) -> Result<DensityGrid> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let file = fs::File::open(path).map_err(|e| data_err(e.to_string()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<(f64, f64)> = Vec::new();
    for (i, rec) in rdr.deserialize::<NullRow>().enumerate() {
        let r = rec.map_err(|e| data_err(e.to_string()))?;
        if !(r.density >= 0.0) || !r.cal_age.is_finite() {
            return Err(data_err(format!("row {}: density must be non-negative", i + 1)));
        }
        rows.push((r.cal_age, r.density));
    }
    if rows.len() < 2 {
        return Err(data_err("need at least two rows".into()));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values: Vec<f64> = grid
        .centres()
        .map(|c| {
            let i = rows.partition_point(|r| r.0 <= c);
            if i == 0 || i == rows.len() {
                if i == rows.len() && rows[i - 1].0 == c {
                    rows[i - 1].1
                } else {
                    0.0
                }
            } else {
                let (x0, y0) = rows[i - 1];
                let (x1, y1) = rows[i];
                y0 + (c - x0) / (x1 - x0) * (y1 - y0)
            }
        })
        .collect();
    let total: f64 = values.iter().sum::<f64>() * grid.step;
    if !(total > 0.0) {
        return Err(data_err("null model has no mass on the analysis grid".into()));
    }
    Ok(DensityGrid {
        grid: *grid,
        values: values.into_iter().map(|v| v / total).collect(),
    })
}

pub fn spd_cmd(common: &CommonArgs, args: &SpdArgs) -> Result<()> {
    let curve = load_curve(common.curve.as_deref())?;
    let (dates_path, dets) = load_dates(args.dates.as_ref())?;
    let grid = resolve_grid(args.ta, args.tb, args.grid_step, &dets, &curve)?;
    let level = check_level(args.level.unwrap_or(DEFAULT_LEVEL))?;
    if args.replicates.is_some() && args.mc_null.is_none() {
        return Err(CliError::usage("--replicates applies to --mc-null; use --bootstrap B for the bootstrap"));
    }
    if args.bootstrap.is_some() && args.mc_null.is_some() {
        return Err(CliError::usage("--bootstrap and --mc-null are alternatives"));
    }
    let observed = spd(&dets, &curve, &grid)?;
    let mut header = Header::new("spd")
        .with("dates", dates_path.display())
        .with("n", dets.len())
        .with("curve", curve.name())
        .with("grid", grid_text(&grid));

    let mut text = String::new();
    let band = if let Some(b) = args.bootstrap {
        let seed = require_seed(args.seed, "with --bootstrap")?;
        header.push("method", "bootstrap");
        header.push("replicates", b);
        header.push("level", level);
        header.push("seed", seed);
        Some(spd_bootstrap(&dets, &curve, &grid, b, level, seed)?)
    } else if let Some(null_path) = &args.mc_null {
        let seed = require_seed(args.seed, "with --mc-null")?;
        let reps = args.replicates.unwrap_or(DEFAULT_REPLICATES);
        let sigma = args
            .sigma_obs
            .unwrap_or_else(|| dets.iter().map(|d| d.sigma).sum::<f64>() / dets.len() as f64);
        let null = load_null_model(null_path, &grid)?;
        let env = spd_mc_envelope(&null, dets.len(), &curve, &grid, reps, level, sigma, Some(&observed), seed)?;
        let exit = env.exit_fraction.expect("observed SPD supplied");
        header.push("method", "monte-carlo envelope");
        header.push("null_model", null_path.display());
        header.push("replicates", reps);
        header.push("sigma_obs", sigma);
        header.push("level", level);
        header.push("seed", seed);
        header.push("exit_fraction", exit);
        println!("fraction of cells where the SPD leaves the {level} envelope: {exit:.4}");
        Some(env.band)
    } else {
        None
    };

    text.push_str(&header.render());
    match &band {
        Some(b) => {
            text.push_str("cal_age,spd,lower,upper\n");
            for (j, c) in grid.centres().enumerate() {
                let _ = writeln!(text, "{c},{},{},{}", observed.values[j], b.lower[j], b.upper[j]);
            }
        }
        None => {
            text.push_str("cal_age,spd\n");
            for (c, v) in grid.centres().zip(&observed.values) {
                let _ = writeln!(text, "{c},{v}");
            }
        }
    }
    let mut out = OutDir::create(common.out.as_deref())?;
    let path = out.write("spd.csv", &text)?;
    println!("SPD of {} determinations on {} -> {}", dets.len(), grid_text(&grid), path.display());
    Ok(())
}

fn acceptance_json(stats: &AcceptanceStats) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for kind in MoveKind::ALL {
        let c = stats.get(kind);
        let rate = if c.proposed > 0 { c.accepted as f64 / c.proposed as f64 } else { 0.0 };
        map.insert(
            format!("{kind:?}").to_lowercase(),
            serde_json::json!({ "proposed": c.proposed, "accepted": c.accepted, "rate": rate }),
        );
    }
    serde_json::Value::Object(map)
}

pub fn pp_fit(common: &CommonArgs, args: &PpFitArgs) -> Result<()> {
    let seed = require_seed(args.seed, "for pp-fit")?;
    let curve = load_curve(common.curve.as_deref())?;
    let (dates_path, dets) = load_dates(args.dates.as_ref())?;
    let grid = resolve_grid(args.ta, args.tb, args.grid_step, &dets, &curve)?;
    let span = grid.end - grid.start;
    let alpha = args.alpha.unwrap_or(1.0);
    let prior = PriorSpec::new(
        args.n_lambda.unwrap_or(DEFAULT_N_LAMBDA),
        args.k_max.unwrap_or(DEFAULT_K_MAX),
        alpha,
        args.beta.unwrap_or(alpha * span / dets.len() as f64),
    )?;
    let chains = args.chains.unwrap_or(1);
    if chains == 0 {
        return Err(CliError::usage("--chains must be at least 1"));
    }
    let mut base = ChainOptions::new(grid, prior, seed);
    base.iterations = args.iters.unwrap_or(ChainOptions::DEFAULT_ITERATIONS);
    base.burn_in = args.burn.unwrap_or(ChainOptions::DEFAULT_BURN_IN);
    base.thin = args.thin.unwrap_or(ChainOptions::DEFAULT_THIN);
    base.validate()?;

    let cache = CalibrationCache::new(&dets, &curve, &grid)?;
    let options: Vec<ChainOptions> = (0..chains)
        .map(|i| ChainOptions {
            seed: seed.wrapping_add(i as u64),
            ..base.clone()
        })
        .collect();
    let results: Vec<carbonpp::Result<PosteriorSamples>> = thread::scope(|scope| {
        let handles: Vec<_> = options
            .iter()
            .map(|opts| {
                let cache = &cache;
                scope.spawn(move || run_chain_cached(cache, opts))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });

    let mut out = OutDir::create(common.out.as_deref())?;
    for (i, result) in results.into_iter().enumerate() {
        let samples = result?;
        let suffix = if chains == 1 { String::new() } else { format!("_chain{}", i + 1) };
        let mut buf = Vec::new();
        samples.write_jsonl(&mut buf)?;
        let samples_path = out.write(&format!("samples{suffix}.jsonl"), std::str::from_utf8(&buf).expect("utf-8"))?;

        let mut sidecar = Header::new("pp-fit")
            .with("dates", dates_path.display())
            .with("curve", curve.name())
            .with("samples", samples_path.display())
            .to_json();
        let obj = sidecar.as_object_mut().expect("object");
        obj.insert("seed".into(), samples.options.seed.into());
        obj.insert("chain".into(), (i + 1).into());
        obj.insert("kept".into(), samples.len().into());
        obj.insert("acceptance".into(), acceptance_json(&samples.acceptance));
        let text = serde_json::to_string_pretty(&sidecar).expect("json") + "\n";
        out.write(&format!("acceptance{suffix}.json"), &text)?;

        let hist = changepoint_count_histogram(&samples)?;
        let (mode, p) = hist
            .iter()
            .fold((0, 0.0), |best, (&k, &p)| if p > best.1 { (k, p) } else { best });
        println!(
            "chain {} (seed {}): {} states kept, most probable k = {mode} (p = {p:.3})",
            i + 1,
            samples.options.seed,
            samples.len()
        );
        for kind in MoveKind::ALL {
            let c = samples.acceptance.get(kind);
            if c.proposed > 0 {
                println!(
                    "  {:<8} accepted {:>6.2}% of {}",
                    format!("{kind:?}").to_lowercase(),
                    100.0 * c.accepted as f64 / c.proposed as f64,
                    c.proposed
                );
            }
        }
    }
    for p in out.written() {
        println!("  {}", p.display());
    }
    Ok(())
}

fn summary_csv(header: &Header, summary: &RateSummary) -> String {
    let mut text = header.render();
    let mut body = Vec::new();
    summary.write_csv(&mut body).expect("in-memory write");
    text.push_str(std::str::from_utf8(&body).expect("utf-8"));
    text
}

pub fn summarize(common: &CommonArgs, args: &SummarizeArgs) -> Result<()> {
    let path = args
        .samples
        .as_ref()
        .ok_or_else(|| CliError::usage("--samples FILE is required"))?;
    let file = fs::File::open(path).map_err(|e| carbonpp::Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let samples = PosteriorSamples::read_jsonl(BufReader::new(file))?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("{} holds no posterior states", path.display())));
    }
    let fit_grid = samples.options.grid;
    let grid = match args.grid_step {
        Some(step) => CalendarGrid::new(fit_grid.start, fit_grid.end, step)?,
        None => fit_grid,
    };
    let level = check_level(args.level.unwrap_or(DEFAULT_LEVEL))?;
    let base = Header::new("summarize")
        .with("samples", path.display())
        .with("states", samples.len())
        .with("fit_seed", samples.options.seed)
        .with("grid", grid_text(&grid))
        .with("level", level);

    let mut out = OutDir::create(common.out.as_deref())?;
    let summary = mean_rate(&samples, &grid, level)?;
    out.write("mean_rate.csv", &summary_csv(&base, &summary))?;

    let hist = changepoint_count_histogram(&samples)?;
    let mut body = Vec::new();
    write_count_histogram_csv(&hist, &mut body).expect("in-memory write");
    out.write(
        "k_posterior.csv",
        &(base.render() + std::str::from_utf8(&body).expect("utf-8")),
    )?;
    println!("{} posterior states; expected events in window {:.2}", samples.len(), summary.expected_count());
    println!("posterior probability of the number of changepoints:");
    for (k, p) in &hist {
        println!("  k = {k:>2}: {p:.4}");
    }

    if let Some(n) = args.realisations {
        let reals = export_realisations(&samples, n, &grid)?;
        let mut text = base.clone().with("realisations", n).render();
        text.push_str("cal_age");
        for i in 1..=n {
            let _ = write!(text, ",r{i}");
        }
        text.push('\n');
        for (j, c) in grid.centres().enumerate() {
            let _ = write!(text, "{c}");
            for r in &reals {
                let _ = write!(text, ",{}", r[j]);
            }
            text.push('\n');
        }
        out.write("realisations.csv", &text)?;
    }

    if let Some(path) = &args.plot {
        let curve = load_curve(common.curve.as_deref())?;
        let dets = match &args.dates {
            Some(p) => load_determinations(p)?,
            None => Vec::new(),
        };
        let panel = Panel {
            title: format!("Posterior mean rate, {} states, {:.0}% band", samples.len(), level * 100.0),
            summary: Some(&summary),
            curve: Some(&curve),
            determinations: &dets,
            density_scale: 1.0,
            ..Default::default()
        };
        write_path(path, &render_svg(&panel))?;
        println!("  {}", path.display());
    }

    // written last: a missing k is reported after the unconditional outputs
    if let Some(k) = args.cond_k {
        let bin_width = args.bin_width.unwrap_or(carbonpp::posterior::DEFAULT_BIN_WIDTH);
        let bins = args.height_bins.unwrap_or(50);
        let cond = conditional_mean_rate(&samples, &grid, k, level)?;
        let header = base.clone().with("cond_k", k).with("states_with_k", cond.n_samples);
        out.write(&format!("rate_k{k}.csv"), &summary_csv(&header, &cond))?;

        let locs = changepoint_locations(&samples, k, bin_width)?;
        let mut body = Vec::new();
        write_histograms_csv(&locs, &mut body).expect("in-memory write");
        let h = header.clone().with("bin_width", bin_width).with("order", "index 1 is the oldest changepoint");
        out.write(&format!("changepoints_k{k}.csv"), &(h.render() + std::str::from_utf8(&body).expect("utf-8")))?;

        let heights = conditional_heights(&samples, k, bins)?;
        let mut body = Vec::new();
        write_histograms_csv(&heights, &mut body).expect("in-memory write");
        let h = header.clone().with("bins", bins).with("order", "index 1 is the oldest interval");
        out.write(&format!("heights_k{k}.csv"), &(h.render() + std::str::from_utf8(&body).expect("utf-8")))?;

        println!("given k = {k} ({} states):", cond.n_samples);
        for hgm in &locs {
            let (lo, hi) = hgm.central_interval(level);
            println!("  changepoint {}: {:.0}% interval {lo:.0} to {hi:.0} cal BP", hgm.index, level * 100.0);
        }
        for hgm in &heights {
            let (lo, hi) = hgm.central_interval(level);
            println!("  interval {} height: {:.0}% interval {lo:.4} to {hi:.4} per yr", hgm.index, level * 100.0);
        }
    }
    for p in out.written() {
        println!("  {}", p.display());
    }
    Ok(())
}

pub fn simulate(common: &CommonArgs, args: &SimulateArgs) -> Result<()> {
    let seed = require_seed(args.seed, "for simulate")?;
    let sigma_obs = args.sigma_obs.unwrap_or(DEFAULT_SIGMA_OBS);
    if !(sigma_obs > 0.0) {
        return Err(CliError::usage(format!("--sigma-obs must be positive, got {sigma_obs}")));
    }
    let forward = ForwardModelSpec {
        sigma_obs,
        include_curve_error: !args.no_curve_error.unwrap_or(false),
    };
    let curve = load_curve(common.curve.as_deref())?;
    let sim = match (&args.preset, &args.rate) {
        (Some(name), None) => {
            let mut preset: Preset = name.parse()?;
            match (&mut preset, args.n, args.r) {
                (Preset::UniformPhase { n }, Some(v), None) => *n = v,
                (Preset::ExpGrowth { r }, None, Some(v)) => *r = v,
                (_, None, None) => {}
                _ => {
                    return Err(CliError::usage(
                        "--n applies only to uniform-phase and --r only to exp-growth",
                    ))
                }
            }
            if let Preset::UniformPhase { n: 0 } = preset {
                return Err(CliError::usage("--n must be at least 1"));
            }
            if let Preset::ExpGrowth { r } = preset {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(CliError::usage(format!("--r must be positive, got {r}")));
                }
            }
            simulate_preset(&preset, &curve, &forward, seed)?
        }
        (None, Some(path)) => {
            if args.n.is_some() || args.r.is_some() {
                return Err(CliError::usage("--n and --r apply only to presets"));
            }
            let text = fs::read_to_string(path).map_err(|e| carbonpp::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let rate: RateFunction = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: malformed rate file: {e}", path.display())))?;
            rate.validate()
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            simulate_rate(&rate, &curve, &forward, seed)?
        }
        _ => return Err(CliError::usage("give exactly one of --preset NAME or --rate FILE")),
    };

    let header = Header::new("simulate")
        .with("source", sim.preset.map_or_else(|| "rate file".to_owned(), |p| p.name().to_owned()))
        .with("description", &sim.description)
        .with("seed", seed)
        .with("sigma_obs", forward.sigma_obs)
        .with("include_curve_error", forward.include_curve_error)
        .with("curve", curve.name())
        .with("window", format!("[{}, {}]", sim.t_a, sim.t_b))
        .with("events", sim.ages.len());
    let mut body = Vec::new();
    write_determinations(&mut body, &sim.determinations)?;
    let mut out = OutDir::create(common.out.as_deref())?;
    out.write(
        "determinations.csv",
        &(header.render() + std::str::from_utf8(&body).expect("utf-8")),
    )?;

    let mut truth = serde_json::to_value(&sim).expect("serialisable");
    let obj = truth.as_object_mut().expect("object");
    obj.insert("format".into(), "carbonpp-truth".into());
    obj.insert("tool_version".into(), carbonpp::VERSION.into());
    obj.insert("curve".into(), curve.name().into());
    obj.insert("expected_events".into(), sim.truth.integral().into());
    out.write("truth.json", &(serde_json::to_string_pretty(&truth).expect("json") + "\n"))?;

    println!(
        "simulated {} determinations ({} expected) in [{}, {}] cal BP",
        sim.determinations.len(),
        sim.truth.integral(),
        sim.t_a,
        sim.t_b
    );
    for p in out.written() {
        println!("  {}", p.display());
    }
    Ok(())
}
