//! Synthetic discharge and charge transients.
//!
//! Pulsed-load traces ride between two model curves: the upper envelope is
//! the fully recovered (idle) voltage and the lower envelope is the voltage
//! the cell settles to under load. Each load switch produces an instantaneous
//! `I·r_int` step followed by a hyperbolic relaxation `κ/(τ+κ)` toward the
//! envelope of the new state. The baseline state is elapsed time, not state
//! of charge.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::curve::{CurveMeta, DischargeCurve, Sample};
use crate::error::{Error, Result};
use crate::model::{time_to_cutoff, validate_params, ModelParams};
use crate::program::{LoadProgram, LoadUnit};

/// Post-cutoff voltage rebound: an immediate `jump`, then a hyperbolic rise
/// of `rise` volts with time constant `kappa`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryConfig {
    pub jump: f64,
    pub rise: f64,
    pub kappa: f64,
    pub duration: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            jump: 0.1,
            rise: 0.1,
            kappa: 60.0,
            duration: 600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantOptions {
    pub dt: f64,
    pub v_cutoff: f64,
    /// Load current in amperes written to the current column.
    pub current: Option<f64>,
    pub recovery: Option<RecoveryConfig>,
}

impl ConstantOptions {
    pub fn new(dt: f64, v_cutoff: f64) -> Self {
        Self {
            dt,
            v_cutoff,
            current: None,
            recovery: None,
        }
    }
}

/// Samples the model at `0, dt, 2dt, …` up to and including the first sample
/// at or below the cutoff, optionally followed by a recovery tail.
pub fn simulate_constant(params: &ModelParams, opts: &ConstantOptions) -> Result<DischargeCurve> {
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt = {} must be > 0", opts.dt)));
    }
    let t_c = time_to_cutoff(params, opts.v_cutoff)?;
    let mut samples = Vec::with_capacity((t_c / opts.dt) as usize + 2);
    let mut k = 0u64;
    loop {
        let t = k as f64 * opts.dt;
        let v = params.eval_unchecked(t).max(0.0);
        samples.push(Sample {
            t,
            v,
            i: opts.current,
        });
        if v <= opts.v_cutoff {
            break;
        }
        if t > t_c + opts.dt {
            // Rounding pushed the crossing past the grid; close at the crossing.
            break;
        }
        k += 1;
    }
    if let Some(rec) = opts.recovery {
        let last = *samples.last().expect("at least one sample");
        let steps = (rec.duration / opts.dt).floor() as u64;
        for j in 1..=steps {
            let tau = j as f64 * opts.dt;
            samples.push(Sample {
                t: last.t + tau,
                v: last.v + rec.jump + rec.rise * tau / (tau + rec.kappa),
                i: opts.current.map(|_| 0.0),
            });
        }
    }
    DischargeCurve::new(samples)
}

/// Internal resistance flat at `r0` until `knee` of the lifetime, then rising
/// linearly to `r_end` at the end of life.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InternalResistance {
    pub r0: f64,
    pub r_end: f64,
    pub knee: f64,
}

impl Default for InternalResistance {
    fn default() -> Self {
        Self {
            r0: 0.100,
            r_end: 0.300,
            knee: 0.95,
        }
    }
}

impl InternalResistance {
    pub fn validate(&self) -> Result<()> {
        if !(self.r0 > 0.0 && self.r_end >= self.r0 && self.knee > 0.0 && self.knee < 1.0) {
            return Err(Error::InvalidParams(format!(
                "internal resistance needs r0 > 0, r_end >= r0, 0 < knee < 1 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Resistance at lifetime fraction `x`.
    pub fn at(&self, x: f64) -> f64 {
        if x <= self.knee {
            self.r0
        } else {
            let w = ((x - self.knee) / (1.0 - self.knee)).min(1.0);
            self.r0 + (self.r_end - self.r0) * w
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeModel {
    pub upper: ModelParams,
    pub lower: ModelParams,
    pub r_int: InternalResistance,
    /// Relaxation constant after switch-on, seconds.
    pub kappa_on: f64,
    /// Relaxation constant after switch-off, seconds.
    pub kappa_off: f64,
}

impl EnvelopeModel {
    pub fn new(upper: ModelParams, lower: ModelParams) -> Self {
        Self {
            upper,
            lower,
            r_int: InternalResistance::default(),
            kappa_on: 5.0,
            kappa_off: 5.0,
        }
    }

    /// Lifetime used to scale the internal-resistance knee: the time the
    /// lower envelope reaches `v_cutoff`.
    pub fn lifetime(&self, v_cutoff: f64) -> Result<f64> {
        time_to_cutoff(&self.lower, v_cutoff)
    }

    pub fn validate(&self, v_cutoff: f64) -> Result<f64> {
        self.r_int.validate()?;
        if !(self.kappa_on > 0.0 && self.kappa_off > 0.0) {
            return Err(Error::InvalidParams(
                "relaxation constants must be > 0".into(),
            ));
        }
        let life = self.lifetime(v_cutoff)?;
        for (name, p) in [("upper", &self.upper), ("lower", &self.lower)] {
            let rep = validate_params(p, life);
            if !rep.is_valid() {
                return Err(Error::InvalidParams(format!("{name} envelope: {rep}")));
            }
        }
        Ok(life)
    }
}

/// Which side of a load switch the cell is on.
#[derive(Debug, Clone, Copy)]
enum Segment {
    /// Loaded since `t_s` at current `i`; `deficit` is how far the start
    /// voltage sat below a fully recovered cell.
    On { t_s: f64, i: f64, deficit: f64 },
    /// Idle since `t_s`; `deficit` is how far below the upper envelope the
    /// recovery started.
    Off { t_s: f64, deficit: f64 },
}

/// Pulsed-load discharge. Stops at the first sample at or below `v_cutoff`.
///
/// While loaded for `τ` seconds: `v = Lo(t) + (U(t) − I·r − δ − Lo(t))·κ_on/(τ+κ_on)`,
/// which starts one `I·r` step below the pre-switch voltage and settles onto
/// the lower envelope. `δ` is the unrecovered deficit at switch-on (zero for a
/// fully rested cell). While idle for `τ` seconds:
/// `v = U(t) − (U(t_s) − v_s)·κ_off/(τ+κ_off)` with `v_s` one `I·r` step above
/// the last loaded voltage. Both branches relax a deficit measured against the
/// drifting envelope, so the trace never leaves the band between them.
pub fn simulate_pulsing(
    env: &EnvelopeModel,
    program: &LoadProgram,
    dt: f64,
    v_cutoff: f64,
) -> Result<DischargeCurve> {
    let shortest = program.shortest_step_ms() as f64 / 1000.0;
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt = {dt} must be > 0")));
    }
    if dt > shortest {
        return Err(Error::DtTooCoarse { dt, step: shortest });
    }
    let life = env.validate(v_cutoff)?;
    let horizon = (-env.upper.d).min(-env.lower.d);

    let upper = |t: f64| env.upper.eval_unchecked(t);
    let lower = |t: f64| env.lower.eval_unchecked(t);
    let r_at = |t: f64| env.r_int.at(t / life);

    let mut samples: Vec<Sample> = Vec::new();
    // A cell that was never loaded is fully relaxed and sits on the upper curve.
    let mut seg = Segment::Off {
        t_s: 0.0,
        deficit: 0.0,
    };
    let mut prev_v = upper(0.0);
    let mut prev_i = 0.0;
    let mut k = 0u64;
    loop {
        let t = k as f64 * dt;
        if t >= horizon {
            return Err(Error::NoCrossing { v_cutoff });
        }
        let (u, lo, r) = (upper(t), lower(t), r_at(t));
        if u < lo {
            return Err(Error::EnvelopeOrdering {
                t,
                msg: format!("upper {u} V below lower {lo} V"),
            });
        }
        let level = program.level_at_secs(t) as f64;
        let i = match program.unit() {
            LoadUnit::Milliampere => level / 1000.0,
            LoadUnit::Milliwatt => level / 1000.0 / prev_v.max(1e-3),
        };
        if i > 0.0 && u - lo < i * r {
            return Err(Error::EnvelopeOrdering {
                t,
                msg: format!(
                    "IR drop {} V exceeds the envelope gap {} V",
                    i * r,
                    u - lo
                ),
            });
        }

        let switched = match seg {
            Segment::On { i: cur, .. } => (i - cur).abs() > 0.0,
            Segment::Off { .. } => i > 0.0,
        };
        if switched {
            seg = if i > 0.0 {
                let v_s = prev_v - (i - prev_i) * r;
                Segment::On {
                    t_s: t,
                    i,
                    deficit: u - i * r - v_s,
                }
            } else {
                // Capped at U: with a steep envelope the one-sample lag can
                // otherwise start the recovery above the open-circuit curve.
                Segment::Off {
                    t_s: t,
                    deficit: (u - prev_v - prev_i * r).max(0.0),
                }
            };
        }

        let v = match seg {
            Segment::On { t_s, i, deficit } => {
                let w = env.kappa_on / (t - t_s + env.kappa_on);
                lo + (u - i * r - deficit - lo) * w
            }
            Segment::Off { t_s, deficit } => {
                let w = env.kappa_off / (t - t_s + env.kappa_off);
                u - deficit * w
            }
        }
        .max(0.0);

        samples.push(Sample { t, v, i: Some(i) });
        if v <= v_cutoff {
            break;
        }
        prev_v = v;
        prev_i = i;
        k += 1;
    }
    let stats = program.cycle_stats();
    DischargeCurve::new(samples).map(|c| {
        c.with_meta(CurveMeta {
            label: None,
            load: Some(program.steps().iter().map(|s| s.level).max().unwrap_or(0) as f64),
            period: Some(program.period_s()),
            duty: Some(stats.duty),
            temperature: None,
        })
    })
}

/// Constant-current charge transient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChargeProfile {
    pub v_start: f64,
    pub v_peak: f64,
    pub t_peak: f64,
    /// Post-peak decline in V/s.
    pub decline: f64,
    /// Curvature of the rise; larger values concentrate the rise near the peak.
    pub knee_sharpness: f64,
}

impl ChargeProfile {
    pub fn new(v_start: f64, v_peak: f64, t_peak: f64, decline_mv_per_min: f64) -> Self {
        Self {
            v_start,
            v_peak,
            t_peak,
            decline: decline_mv_per_min / 1000.0 / 60.0,
            knee_sharpness: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_start < self.v_peak) {
            return Err(Error::InvalidParams("v_start must be below v_peak".into()));
        }
        if !(self.t_peak > 0.0 && self.decline >= 0.0 && self.knee_sharpness > 0.0) {
            return Err(Error::InvalidParams(
                "t_peak and knee_sharpness must be > 0, decline >= 0".into(),
            ));
        }
        Ok(())
    }

    /// True for the usual Ni-MH figures: peak between 1.6 and 1.8 V and a
    /// decline of at most 3 mV/min.
    pub fn is_typical(&self) -> bool {
        (1.6..=1.8).contains(&self.v_peak) && self.decline <= 3e-3 / 60.0
    }

    pub fn voltage_at(&self, t: f64) -> f64 {
        if t <= self.t_peak {
            let k = self.knee_sharpness;
            let u = (t / self.t_peak).max(0.0);
            let g = (k * u).exp_m1() / k.exp_m1();
            self.v_start + (self.v_peak - self.v_start) * g
        } else {
            self.v_peak - self.decline * (t - self.t_peak)
        }
    }
}

pub fn simulate_charge(profile: &ChargeProfile, dt: f64, t_total: f64) -> Result<DischargeCurve> {
    profile.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt = {dt} must be > 0")));
    }
    if !(t_total > profile.t_peak) {
        return Err(Error::InvalidParams(format!(
            "t_total = {t_total} must exceed t_peak = {}",
            profile.t_peak
        )));
    }
    let n = (t_total / dt * (1.0 + 1e-12)).floor() as u64;
    DischargeCurve::new(
        (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                Sample::new(t, profile.voltage_at(t).max(0.0))
            })
            .collect(),
    )
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` volts.
/// Deterministic for a given seed; `sigma = 0` returns the input unchanged.
pub fn add_noise(curve: &DischargeCurve, sigma: f64, seed: u64) -> Result<DischargeCurve> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParams(format!("sigma = {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(curve.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParams(e.to_string()))?;
    let samples = curve
        .samples()
        .iter()
        .map(|s| Sample {
            v: (s.v + normal.sample(&mut rng)).max(0.0),
            ..*s
        })
        .collect();
    Ok(DischargeCurve::new(samples)?.with_meta(curve.meta.clone()))
}

/// A synthetic cell whose constant-current lifetime is `capacity / current`.
/// Curves at different loads are time-scaled copies of one shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCell {
    pub shape: ModelParams,
    pub capacity_mah: f64,
    pub v_cutoff: f64,
}

impl SyntheticCell {
    pub fn params_at(&self, current_ma: f64) -> Result<ModelParams> {
        if !(current_ma > 0.0) {
            return Err(Error::InvalidParams("current must be > 0".into()));
        }
        let base = time_to_cutoff(&self.shape, self.v_cutoff)?;
        let target = self.capacity_mah / current_ma * 3600.0;
        Ok(self.shape.time_scaled(target / base))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::parse_program;

    const REF_CELL: ModelParams = ModelParams::new(6.0, 60.0, 60.0, -6000.0, -1e-5, 1.25);

    #[test]
    fn constant_ends_at_cutoff() {
        let c = simulate_constant(&REF_CELL, &ConstantOptions::new(1.0, 0.9)).unwrap();
        let last = c.last().unwrap();
        assert!(last.t >= 5795.0 && last.t <= 5796.0, "{}", last.t);
        assert!(last.v <= 0.9);
        assert!(c.samples()[c.len() - 2].v > 0.9);
    }

    #[test]
    fn constant_linear_case() {
        let p = ModelParams::new(0.0, 0.0, 0.0, 0.0, -0.001, 1.0);
        let c = simulate_constant(&p, &ConstantOptions::new(10.0, 0.9)).unwrap();
        assert_eq!(c.len(), 11);
        assert_eq!(c.last().unwrap().t, 100.0);
    }

    #[test]
    fn constant_without_crossing_fails() {
        let p = ModelParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            simulate_constant(&p, &ConstantOptions::new(1.0, 0.9)),
            Err(Error::NoCrossing { .. })
        ));
    }

    #[test]
    fn constant_with_recovery_tail() {
        let opts = ConstantOptions {
            recovery: Some(RecoveryConfig::default()),
            current: Some(0.25),
            ..ConstantOptions::new(1.0, 0.9)
        };
        let c = simulate_constant(&REF_CELL, &opts).unwrap();
        let s = c.samples();
        let k = s.iter().position(|x| x.v <= 0.9).unwrap();
        assert_eq!(s.len() - k - 1, 600);
        assert!(s[k + 1..].windows(2).all(|w| w[1].v > w[0].v));
        assert_eq!(s[k + 1].i, Some(0.0));
        assert_eq!(s[k].i, Some(0.25));
    }

    fn pulsed_env() -> EnvelopeModel {
        let upper = ModelParams::new(6.0, 60.0, 60.0, -6100.0, -1e-5, 1.33);
        EnvelopeModel::new(upper, REF_CELL)
    }

    #[test]
    fn zero_program_follows_upper_envelope() {
        let env = pulsed_env();
        let prog = parse_program("unit ma\nstep 1000 0\n").unwrap();
        // Upper envelope never reaches 0.9 V before its pole here, so use a
        // higher cutoff to terminate.
        let c = simulate_pulsing(&env, &prog, 1.0, 1.2).unwrap();
        for s in c.samples() {
            assert_eq!(s.v, env.upper.eval(s.t).unwrap().max(0.0));
            assert_eq!(s.i, Some(0.0));
        }
    }

    #[test]
    fn switch_steps_equal_ir_drop() {
        let mut env = pulsed_env();
        env.r_int = InternalResistance {
            r0: 0.1,
            r_end: 0.1,
            knee: 0.5,
        };
        let prog = parse_program("unit ma\nstep 20000 250\nstep 20000 0\n").unwrap();
        let c = simulate_pulsing(&env, &prog, 1.0, 0.9).unwrap();
        let s = c.samples();
        let mut switches = 0;
        for w in s.windows(2).skip(1) {
            let (a, b) = (w[0], w[1]);
            if a.i != b.i {
                let di = b.i.unwrap() - a.i.unwrap();
                assert!((b.v - a.v + di * 0.1).abs() < 1e-12, "t = {}", b.t);
                switches += 1;
            }
        }
        assert!(switches > 100);
    }

    #[test]
    fn dt_must_resolve_steps() {
        let prog = parse_program("unit ma\nstep 500 250\nstep 500 0\n").unwrap();
        assert!(matches!(
            simulate_pulsing(&pulsed_env(), &prog, 1.0, 0.9),
            Err(Error::DtTooCoarse { .. })
        ));
    }

    #[test]
    fn inverted_envelopes_are_rejected() {
        let env = EnvelopeModel::new(REF_CELL, pulsed_env().upper);
        let prog = parse_program("unit ma\nstep 1000 250\nstep 1000 0\n").unwrap();
        assert!(matches!(
            simulate_pulsing(&env, &prog, 1.0, 0.9),
            Err(Error::EnvelopeOrdering { .. })
        ));
    }

    #[test]
    fn milliwatt_program_draws_power_over_voltage() {
        let prog = parse_program("unit mw\nstep 10000 200\nstep 10000 0\n").unwrap();
        let c = simulate_pulsing(&pulsed_env(), &prog, 1.0, 0.9).unwrap();
        let s = c.samples();
        for w in s.windows(2) {
            if let (Some(i), true) = (w[1].i, w[1].i.unwrap() > 0.0) {
                assert!((i - 0.2 / w[0].v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn charge_endpoint_and_plateau() {
        let p = ChargeProfile::new(1.5, 1.7, 3600.0, 2.0);
        let c = simulate_charge(&p, 1.0, 5400.0).unwrap();
        assert!((c.last().unwrap().v - 1.64).abs() < 1e-12);
        assert!((c.samples()[3600].v - 1.7).abs() < 1e-12);

        let flat = ChargeProfile::new(1.5, 1.7, 3600.0, 0.0);
        let c = simulate_charge(&flat, 1.0, 5400.0).unwrap();
        assert!(c.samples()[3600..].iter().all(|s| (s.v - 1.7).abs() < 1e-12));

        assert!(simulate_charge(&p, 1.0, 3600.0).is_err());
    }

    #[test]
    fn charge_has_single_maximum() {
        let p = ChargeProfile::new(1.5, 1.7, 3600.0, 2.0);
        let c = simulate_charge(&p, 5.0, 5400.0).unwrap();
        let v: Vec<f64> = c.voltages().collect();
        let maxima = (1..v.len() - 1)
            .filter(|&k| v[k] > v[k - 1] && v[k] >= v[k + 1])
            .count();
        assert_eq!(maxima, 1);
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let base = DischargeCurve::from_tv((0..10_000).map(|k| (k as f64, 1.2))).unwrap();
        assert_eq!(add_noise(&base, 0.0, 1).unwrap(), base);
        let a = add_noise(&base, 1e-3, 42).unwrap();
        let b = add_noise(&base, 1e-3, 42).unwrap();
        assert_eq!(a, b);
        let n = a.len() as f64;
        let mean = a.voltages().sum::<f64>() / n;
        let sd = (a.voltages().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 1e-3).abs() <= 0.05e-3, "sd {sd}");
        assert_ne!(add_noise(&base, 1e-3, 43).unwrap(), a);
    }

    #[test]
    fn synthetic_cell_lifetime() {
        let cell = SyntheticCell {
            shape: REF_CELL,
            capacity_mah: 850.0,
            v_cutoff: 0.9,
        };
        let p = cell.params_at(480.0).unwrap();
        let t = time_to_cutoff(&p, 0.9).unwrap();
        assert!((t - 850.0 / 480.0 * 3600.0).abs() < 1e-6);
    }
}
