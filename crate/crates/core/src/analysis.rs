//! Derived quantities: drawn capacity and time-derivative curves.

use crate::curve::DischargeCurve;
use crate::error::{Error, Result};
use crate::model::DEFAULT_CUTOFF_V;
use crate::phases::{moving_average, slope};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityReport {
    pub charge_drawn_mah: f64,
    /// Time of the last sample, seconds.
    pub duration: f64,
    /// Last voltage is at or below 0.9 V.
    pub cutoff_reached: bool,
}

/// Trapezoidal integral of the current column, in mAh.
pub fn capacity(curve: &DischargeCurve) -> Result<CapacityReport> {
    if !curve.has_current() {
        return Err(Error::MissingCurrent);
    }
    let s = curve.samples();
    let amp_seconds: f64 = s
        .windows(2)
        .map(|w| 0.5 * (w[0].i.unwrap() + w[1].i.unwrap()) * (w[1].t - w[0].t))
        .sum();
    let last = s[s.len() - 1];
    Ok(CapacityReport {
        charge_drawn_mah: amp_seconds / 3.6,
        duration: last.t,
        cutoff_reached: last.v <= DEFAULT_CUTOFF_V,
    })
}

/// `(t, dV/dt)` pairs in V/s.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSeries {
    pub points: Vec<(f64, f64)>,
}

/// Centered differences (one-sided at the ends) smoothed by a centered
/// moving average of `window` points.
pub fn derivative_curve(curve: &DischargeCurve, window: usize) -> Result<DerivativeSeries> {
    if curve.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{} samples; the derivative needs at least 3",
            curve.len()
        )));
    }
    if window.is_multiple_of(2) {
        return Err(Error::Degenerate(format!(
            "smoothing window {window} must be odd and >= 1"
        )));
    }
    let t: Vec<f64> = curve.times().collect();
    let v: Vec<f64> = curve.voltages().collect();
    let d = moving_average(&slope(&t, &v), window);
    Ok(DerivativeSeries {
        points: t.into_iter().zip(d).collect(),
    })
}

pub fn format_derivative(series: &DerivativeSeries) -> String {
    let mut out = String::from("time_s,dvdt_mv_per_s\n");
    for (t, d) in &series.points {
        out.push_str(&format!("{t},{:.6}\n", d * 1000.0));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Sample;
    use crate::model::ModelParams;

    fn constant_current(ma: f64, seconds: usize, dt: f64) -> DischargeCurve {
        DischargeCurve::new(
            (0..=seconds)
                .map(|k| Sample::with_current(k as f64 * dt, 1.2, ma / 1000.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rectangle() {
        let r = capacity(&constant_current(250.0, 7200, 1.0)).unwrap();
        assert!((r.charge_drawn_mah - 500.0).abs() < 1e-9);
        assert_eq!(r.duration, 7200.0);
        assert!(!r.cutoff_reached);
    }

    #[test]
    fn zero_current_and_missing_current() {
        let r = capacity(&constant_current(0.0, 100, 1.0)).unwrap();
        assert_eq!(r.charge_drawn_mah, 0.0);
        let c = DischargeCurve::from_tv([(0.0, 1.2), (1.0, 1.1)]).unwrap();
        assert_eq!(capacity(&c), Err(Error::MissingCurrent));
    }

    #[test]
    fn additive_over_concatenation() {
        let s: Vec<Sample> = (0..=200)
            .map(|k| Sample::with_current(k as f64, 1.2, 0.1 + 0.001 * (k % 7) as f64))
            .collect();
        let whole = capacity(&DischargeCurve::new(s.clone()).unwrap()).unwrap();
        let a = capacity(&DischargeCurve::new(s[..=120].to_vec()).unwrap()).unwrap();
        let b = capacity(&DischargeCurve::new(s[120..].to_vec()).unwrap()).unwrap();
        assert!((whole.charge_drawn_mah - a.charge_drawn_mah - b.charge_drawn_mah).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_a_line() {
        let c = DischargeCurve::from_tv((0..50).map(|k| (k as f64, 1.0 - 0.001 * k as f64))).unwrap();
        for window in [1, 3, 9] {
            let d = derivative_curve(&c, window).unwrap();
            assert!(d.points.iter().all(|(_, x)| (x + 0.001).abs() < 1e-12));
        }
    }

    #[test]
    fn derivative_matches_analytic() {
        let p = ModelParams::new(6.0, 60.0, 60.0, -6000.0, -1e-5, 1.25);
        let c = DischargeCurve::from_tv((0..=5795).map(|k| (k as f64, p.eval(k as f64).unwrap()))).unwrap();
        let d = derivative_curve(&c, 1).unwrap();
        for &(t, x) in &d.points[1..d.points.len() - 1] {
            assert!((x - p.derivative(t)).abs() <= 1e-5, "t = {t}");
        }
    }

    #[test]
    fn derivative_error_shrinks_with_step() {
        let p = ModelParams::new(6.0, 60.0, 60.0, -6000.0, -1e-5, 1.25);
        let worst = |dt: f64| {
            let n = (5700.0 / dt) as usize;
            let c = DischargeCurve::from_tv((0..=n).map(|k| {
                let t = k as f64 * dt;
                (t, p.eval(t).unwrap())
            }))
            .unwrap();
            let d = derivative_curve(&c, 1).unwrap();
            d.points[1..d.points.len() - 1]
                .iter()
                .map(|&(t, x)| (x - p.derivative(t)).abs())
                .fold(0.0, f64::max)
        };
        let (e4, e2, e1) = (worst(4.0), worst(2.0), worst(1.0));
        assert!(e4 > e2 && e2 > e1, "{e4} {e2} {e1}");
        // Centered differences are second order.
        assert!(e4 / e1 > 10.0);
    }

    #[test]
    fn derivative_preconditions() {
        let c = DischargeCurve::from_tv([(0.0, 1.2), (1.0, 1.1)]).unwrap();
        assert!(derivative_curve(&c, 1).is_err());
        let c = DischargeCurve::from_tv([(0.0, 1.2), (1.0, 1.1), (2.0, 1.0)]).unwrap();
        assert!(derivative_curve(&c, 2).is_err());
    }
}
