use nimh_core::detector::{run_detector, DetectorConfig};
use nimh_core::simulator::{add_noise, simulate_charge, ChargeProfile};
use nimh_core::DischargeCurve;

fn raw_dt(cfg: &DetectorConfig) -> f64 {
    cfg.sample_period / cfg.avg_len as f64
}

#[test]
fn noisy_charge_terminates_shortly_after_peak() {
    let cfg = DetectorConfig::default();
    let profile = ChargeProfile::new(1.5, 1.7, 3600.0, 2.0);
    let clean = simulate_charge(&profile, raw_dt(&cfg), 5400.0).unwrap();
    let rep = run_detector(&add_noise(&clean, 1e-3, 42).unwrap(), &cfg).unwrap();
    let t = rep.terminated_at.expect("terminates");
    assert!(t >= 3600.0 && t <= 3600.0 + 20.0 * cfg.sample_period, "{t}");
    assert_eq!(rep.resume_at, Some(t + 1800.0));
}

#[test]
fn flat_plateau_never_terminates() {
    let cfg = DetectorConfig::default();
    let profile = ChargeProfile::new(1.5, 1.7, 3600.0, 0.0);
    let c = simulate_charge(&profile, raw_dt(&cfg), 7200.0).unwrap();
    assert_eq!(run_detector(&c, &cfg).unwrap().terminated_at, None);
}

#[test]
fn below_gate_never_terminates() {
    let cfg = DetectorConfig::default();
    // Falls steadily but never reaches 1600 mV.
    let c = DischargeCurve::from_tv((0..4000).map(|k| {
        let t = k as f64 * raw_dt(&cfg);
        (t, 1.55 - 1e-6 * t)
    }))
    .unwrap();
    assert_eq!(run_detector(&c, &cfg).unwrap().terminated_at, None);
}

/// Fraction of seeds that terminate on a rising ramp of `slope_mv` per
/// decision sample under raw noise `sigma_mv`.
fn false_terminations(slope_mv: f64, sigma_mv: f64, seeds: u64) -> f64 {
    let cfg = DetectorConfig::default();
    let dt = raw_dt(&cfg);
    let per_raw = slope_mv / 1000.0 / cfg.avg_len as f64;
    let ramp = DischargeCurve::from_tv((0..16 * 300).map(|k| (k as f64 * dt, 1.65 + per_raw * k as f64))).unwrap();
    let hits = (0..seeds)
        .filter(|&s| {
            let noisy = add_noise(&ramp, sigma_mv / 1000.0, s).unwrap();
            run_detector(&noisy, &cfg).unwrap().terminated_at.is_some()
        })
        .count();
    hits as f64 / seeds as f64
}

#[test]
fn false_termination_falls_with_slope_to_noise_ratio() {
    // Same seeds at every ratio, so the comparison is free of sampling noise.
    let sigma = 1.0;
    let rates: Vec<f64> = [0.0, 0.05, 0.1, 0.2, 0.4]
        .iter()
        .map(|&s| false_terminations(s * sigma, sigma, 60))
        .collect();
    assert!(rates.windows(2).all(|w| w[1] <= w[0]), "{rates:?}");
    assert!(rates[0] > rates[rates.len() - 1], "{rates:?}");
}
