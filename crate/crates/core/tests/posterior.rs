use carbonpp::calibration::CalendarGrid;
use carbonpp::posterior::{
    changepoint_count_histogram, changepoint_locations, conditional_heights, conditional_mean_rate,
    export_realisations, mean_rate, summarize_rates,
};
use carbonpp::ppmodel::{PriorSpec, RateFunction};
use carbonpp::rng::seeded;
use carbonpp::sampler::{draw_from_prior, ChainOptions, PosteriorSamples, SampleState};
use carbonpp::Error;
use rand::Rng;

const T_A: f64 = 1000.0;
const T_B: f64 = 1500.0;

fn grid() -> CalendarGrid {
    CalendarGrid::new(T_A, T_B, 2.0).unwrap()
}

fn samples_from(rates: Vec<RateFunction>) -> PosteriorSamples {
    let prior = PriorSpec::new(3.0, 30, 1.0, 100.0).unwrap();
    PosteriorSamples {
        options: ChainOptions::new(grid(), prior, 0),
        states: rates
            .into_iter()
            .enumerate()
            .map(|(i, rate)| SampleState {
                iter: i + 1,
                rate,
                theta: vec![],
            })
            .collect(),
        acceptance: Default::default(),
    }
}

fn prior_samples(n: usize, seed: u64) -> PosteriorSamples {
    let prior = PriorSpec::new(2.0, 6, 2.0, 50.0).unwrap();
    let mut rng = seeded(seed);
    samples_from((0..n).map(|_| draw_from_prior(T_A, T_B, &prior, &mut rng)).collect())
}

fn sorted_quantile(mut v: Vec<f64>, p: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Height of a step function read straight from its changepoints.
fn step_value(s: &[f64], h: &[f64], x: f64) -> f64 {
    h[s.iter().filter(|&&c| c <= x).count()]
}

#[test]
fn mean_rate_is_the_mixture_of_conditional_means() {
    let samples = prior_samples(2000, 1);
    let g = grid();
    let overall = mean_rate(&samples, &g, 0.95).unwrap();
    let pk = changepoint_count_histogram(&samples).unwrap();
    let mut mixture = vec![0.0; g.len()];
    for (&k, &p) in &pk {
        let cond = conditional_mean_rate(&samples, &g, k, 0.95).unwrap();
        for (m, c) in mixture.iter_mut().zip(&cond.mean) {
            *m += p * c;
        }
    }
    for (a, b) in overall.mean.iter().zip(&mixture) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert!((pk.values().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn summary_quantiles_match_a_sort_per_cell() {
    let samples = prior_samples(100, 2);
    let g = grid();
    let summary = mean_rate(&samples, &g, 0.9).unwrap();
    assert_eq!(summary.n_samples, 100);
    for (j, c) in g.centres().enumerate() {
        let column: Vec<f64> = samples.rates().map(|r| step_value(r.changepoints(), r.heights(), c)).collect();
        let mean = column.iter().sum::<f64>() / 100.0;
        assert!((summary.mean[j] - mean).abs() < 1e-12);
        let (lo, hi) = (sorted_quantile(column.clone(), 0.05), sorted_quantile(column, 0.95));
        assert!((summary.lower[j] - lo).abs() <= 1e-12 * lo);
        assert!((summary.upper[j] - hi).abs() <= 1e-12 * hi);
    }
}

#[test]
fn expected_count_is_the_mean_integral() {
    let samples = prior_samples(500, 3);
    let summary = mean_rate(&samples, &grid(), 0.95).unwrap();
    // changepoints fall between cell centres, so allow one cell of slack per jump
    let mean_integral = samples.rates().map(|r| r.integral()).sum::<f64>() / 500.0;
    let slack = samples.rates().map(|r| r.k() as f64 * r.heights().iter().fold(0.0f64, |a, &b| a.max(b)) * 2.0).sum::<f64>() / 500.0;
    assert!((summary.expected_count() - mean_integral).abs() <= slack);
}

#[test]
fn shared_k_makes_conditional_and_overall_means_equal() {
    let mut rng = seeded(4);
    let rates = (0..50)
        .map(|_| {
            let mut s = vec![rng.random_range(T_A..T_B), rng.random_range(T_A..T_B)];
            s.sort_by(f64::total_cmp);
            RateFunction::new(T_A, T_B, s, (0..3).map(|_| rng.random_range(0.01..1.0)).collect()).unwrap()
        })
        .collect();
    let samples = samples_from(rates);
    let g = grid();
    assert_eq!(
        mean_rate(&samples, &g, 0.8).unwrap(),
        conditional_mean_rate(&samples, &g, 2, 0.8).unwrap()
    );
    assert!(matches!(
        conditional_mean_rate(&samples, &g, 3, 0.8),
        Err(Error::NoRealisations { k: 3 })
    ));
}

#[test]
fn histograms_are_normalised_and_oldest_first() {
    let samples = samples_from(vec![
        RateFunction::new(T_A, T_B, vec![1100.0, 1400.0], vec![0.1, 0.5, 0.9]).unwrap(),
        RateFunction::new(T_A, T_B, vec![1120.0, 1410.0], vec![0.2, 0.4, 0.8]).unwrap(),
        RateFunction::new(T_A, T_B, vec![1300.0], vec![0.3, 0.3]).unwrap(),
    ]);
    let locs = changepoint_locations(&samples, 2, 5.0).unwrap();
    assert_eq!(locs.len(), 2);
    assert_eq!(locs[0].index, 1);
    for h in &locs {
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
    }
    // changepoint 1 is the oldest
    assert!(locs[0].mass_between(1400.0, 1415.0) > 0.999);
    assert!(locs[1].mass_between(1100.0, 1125.0) > 0.999);

    let heights = conditional_heights(&samples, 2, 9).unwrap();
    assert_eq!(heights.len(), 3);
    for h in &heights {
        assert!((h.total_mass() - 1.0).abs() < 1e-12);
    }
    // interval 1 is the oldest piece, with heights 0.9 and 0.8
    assert!(heights[0].mass_between(0.7, 1.0) > 0.999);
    assert!(heights[2].mass_between(0.0, 0.25) > 0.999);

    let counts = changepoint_count_histogram(&samples).unwrap();
    assert!((counts[&2] - 2.0 / 3.0).abs() < 1e-12);
    assert!((counts[&1] - 1.0 / 3.0).abs() < 1e-12);
    assert!(changepoint_locations(&samples, 2, 0.0).is_err());
    assert!(conditional_heights(&samples, 2, 0).is_err());
}

#[test]
fn histogram_quantiles_interpolate_within_bins() {
    let rates = (0..100)
        .map(|i| RateFunction::new(T_A, T_B, vec![1200.0 + i as f64 + 0.5], vec![1.0, 1.0]).unwrap())
        .collect();
    let samples = samples_from(rates);
    let h = &changepoint_locations(&samples, 1, 10.0).unwrap()[0];
    let (lo, hi) = h.central_interval(0.9);
    assert!((lo - 1205.0).abs() < 1e-9, "{lo}");
    assert!((hi - 1295.0).abs() < 1e-9, "{hi}");
    assert!((h.quantile(0.5) - 1250.0).abs() < 1e-9);
}

#[test]
fn exported_realisations_match_the_persisted_samples() {
    let samples = prior_samples(60, 5);
    let mut buf = Vec::new();
    samples.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let reread = PosteriorSamples::read_jsonl(buf.as_slice()).unwrap();
    let g = grid();
    let exported = export_realisations(&reread, 7, &g).unwrap();
    assert_eq!(exported.len(), 7);

    let records: Vec<serde_json::Value> = text.lines().skip(1).map(|l| serde_json::from_str(l).unwrap()).collect();
    let to_vec = |v: &serde_json::Value| -> Vec<f64> { v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect() };
    // the last state is always among the exported ones
    let last = records.last().unwrap();
    let (s, h) = (to_vec(&last["s"]), to_vec(&last["h"]));
    for (j, c) in g.centres().enumerate() {
        assert_eq!(exported[6][j], step_value(&s, &h, c));
    }
    // every exported curve is one of the persisted states
    for curve in &exported {
        assert!(records.iter().any(|r| {
            let (s, h) = (to_vec(&r["s"]), to_vec(&r["h"]));
            g.centres().zip(curve).all(|(c, &v)| v == step_value(&s, &h, c))
        }));
    }
    assert!(export_realisations(&reread, 61, &g).is_err());
    assert_eq!(export_realisations(&reread, 0, &g).unwrap().len(), 0);
}

#[test]
fn summaries_reject_empty_input_and_bad_levels() {
    let g = grid();
    assert!(matches!(summarize_rates(&[], &g, 0.9), Err(Error::Empty(_))));
    let r = RateFunction::constant(T_A, T_B, 1.0).unwrap();
    assert!(summarize_rates(&[&r], &g, 1.5).is_err());
    assert!(changepoint_count_histogram(&samples_from(vec![])).is_err());
}
