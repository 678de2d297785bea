use crate::curve::DischargeCurve;
use crate::error::{Error, Result};
use crate::program::LoadProgram;

/// End-of-idle peaks (`upper`) and end-of-pulse troughs (`lower`), one of
/// each per whole program cycle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnvelopePair {
    pub upper: Vec<(f64, f64)>,
    pub lower: Vec<(f64, f64)>,
}

impl EnvelopePair {
    pub fn upper_curve(&self) -> Result<DischargeCurve> {
        DischargeCurve::from_tv(self.upper.iter().copied())
    }

    pub fn lower_curve(&self) -> Result<DischargeCurve> {
        DischargeCurve::from_tv(self.lower.iter().copied())
    }
}

fn median_interval(curve: &DischargeCurve) -> f64 {
    let mut d: Vec<f64> = curve
        .samples()
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

/// Picks, for each whole cycle of `program`, the voltage at the last sample
/// inside the final idle span and the last sample inside the final loaded
/// span. The first sample marks the start of cycle 0.
pub fn extract_envelopes(curve: &DischargeCurve, program: &LoadProgram) -> Result<EnvelopePair> {
    if curve.len() < 2 {
        return Err(Error::Degenerate("curve needs at least two samples".into()));
    }
    let offsets = program.step_offsets();
    let last_idle = offsets
        .iter()
        .rev()
        .find(|(_, s)| s.level == 0)
        .ok_or_else(|| Error::PeriodMismatch("program has no idle span".into()))?;
    let last_load = offsets
        .iter()
        .rev()
        .find(|(_, s)| s.level > 0)
        .ok_or_else(|| Error::PeriodMismatch("program never loads the cell".into()))?;

    let period = program.period_s();
    let dt = median_interval(curve);
    if period < 4.0 * dt {
        return Err(Error::PeriodMismatch(format!(
            "period {period} s is sampled fewer than 4 times (interval {dt} s)"
        )));
    }

    let samples = curve.samples();
    let t0 = samples[0].t;
    let t_last = samples[samples.len() - 1].t;
    // Each sample stands for the interval up to the next one.
    let whole = ((t_last - t0 + dt) / period + 1e-9).floor() as usize;
    if whole == 0 {
        return Err(Error::PeriodMismatch(format!(
            "curve span {} s is shorter than one {period} s cycle",
            t_last - t0
        )));
    }

    let span_end = |(start, step): &(u64, crate::program::Step)| {
        (
            *start as f64 / 1000.0,
            (*start + step.duration_ms) as f64 / 1000.0,
        )
    };
    let (idle_start, idle_end) = span_end(last_idle);
    let (load_start, load_end) = span_end(last_load);

    let last_in = |from: f64, to: f64| -> Option<(f64, f64)> {
        // Last sample with from <= t < to, with a half-nanosecond guard.
        let k = samples.partition_point(|s| s.t < to - 1e-9);
        if k == 0 {
            return None;
        }
        let s = &samples[k - 1];
        (s.t >= from - 1e-9).then_some((s.t, s.v))
    };

    let mut pair = EnvelopePair::default();
    for k in 0..whole {
        let base = t0 + k as f64 * period;
        let up = last_in(base + idle_start, base + idle_end).ok_or_else(|| {
            Error::PeriodMismatch(format!("no sample inside the idle span of cycle {k}"))
        })?;
        let lo = last_in(base + load_start, base + load_end).ok_or_else(|| {
            Error::PeriodMismatch(format!("no sample inside the loaded span of cycle {k}"))
        })?;
        pair.upper.push(up);
        pair.lower.push(lo);
    }
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{parse_program, LoadUnit};

    fn square_curve(n: usize, on: f64, off: f64) -> DischargeCurve {
        // Synthetic trace: idle level 1.3 V, loaded level 1.2 V.
        let period = on + off;
        DischargeCurve::from_tv((0..n).map(|k| {
            let t = k as f64;
            let phase = t % period;
            (t, if phase < on { 1.2 } else { 1.3 })
        }))
        .unwrap()
    }

    #[test]
    fn single_cycle_gives_one_pair() {
        let p = parse_program("unit ma\nstep 180000 250\nstep 180000 0\n").unwrap();
        let c = square_curve(360, 180.0, 180.0);
        let env = extract_envelopes(&c, &p).unwrap();
        assert_eq!(env.upper, vec![(359.0, 1.3)]);
        assert_eq!(env.lower, vec![(179.0, 1.2)]);
    }

    #[test]
    fn partial_final_cycle_is_dropped() {
        let p = parse_program("unit ma\nstep 180000 250\nstep 180000 0\n").unwrap();
        let c = square_curve(1000, 180.0, 180.0);
        let env = extract_envelopes(&c, &p).unwrap();
        assert_eq!(env.upper.len(), 2);
        assert_eq!(env.lower.len(), 2);
    }

    #[test]
    fn never_idle_program_is_rejected() {
        let p = LoadProgram::square(LoadUnit::Milliampere, 250, 360_000, 0).unwrap();
        let c = square_curve(1000, 180.0, 180.0);
        assert!(matches!(
            extract_envelopes(&c, &p),
            Err(Error::PeriodMismatch(_))
        ));
    }

    #[test]
    fn undersampled_curve_is_rejected() {
        let p = parse_program("unit ma\nstep 1000 250\nstep 1000 0\n").unwrap();
        let c = square_curve(100, 1.0, 1.0);
        assert!(matches!(
            extract_envelopes(&c, &p),
            Err(Error::PeriodMismatch(_))
        ));
    }
}
