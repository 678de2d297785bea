//! Four-phase segmentation of a discharge curve: initial transient, hold
//! period, exhausting transient and post-cutoff recovery.

use crate::curve::DischargeCurve;
use crate::error::{Error, Result};

pub const MIN_SEGMENT_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseBoundaries {
    pub t_init_end: f64,
    pub t_hold_end: f64,
    pub t_cutoff: f64,
    pub t_recovery_end: Option<f64>,
}

/// Result of a segmentation. Curves without an initial transient or without
/// an exhausting drop have no well-defined hold period and are reported as
/// degenerate instead of failing.
#[derive(Debug, Clone, PartialEq)]
pub enum Phases {
    Full(PhaseBoundaries),
    Degenerate {
        t_init_end: f64,
        t_cutoff: f64,
        t_recovery_end: Option<f64>,
        reason: String,
    },
}

impl Phases {
    pub fn boundaries(&self) -> Option<&PhaseBoundaries> {
        match self {
            Phases::Full(b) => Some(b),
            Phases::Degenerate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    /// Centered moving-average length applied to the slope.
    pub smoothing: usize,
    /// Initial transient ends when |slope| drops below this multiple of the
    /// hold-period median.
    pub init_factor: f64,
    /// Exhausting transient starts when |slope| exceeds this multiple.
    pub exhaust_factor: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            smoothing: 9,
            init_factor: 3.0,
            exhaust_factor: 10.0,
        }
    }
}

/// Finite-difference slope (centered inside, one-sided at the ends).
pub(crate) fn slope(t: &[f64], v: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|k| {
            let (a, b) = match k {
                0 => (0, 1),
                k if k == n - 1 => (n - 2, n - 1),
                k => (k - 1, k + 1),
            };
            (v[b] - v[a]) / (t[b] - t[a])
        })
        .collect()
}

/// Centered moving average; the window shrinks symmetrically at the ends.
pub(crate) fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + x[k];
    }
    (0..n)
        .map(|k| {
            let h = half.min(k).min(n - 1 - k);
            let (lo, hi) = (k - h, k + h + 1);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

pub(crate) fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

pub fn segment_phases(curve: &DischargeCurve) -> Result<Phases> {
    segment_phases_with(curve, &PhaseConfig::default())
}

pub fn segment_phases_with(curve: &DischargeCurve, cfg: &PhaseConfig) -> Result<Phases> {
    let n = curve.len();
    if n < MIN_SEGMENT_SAMPLES {
        return Err(Error::SegmentationFailed(format!(
            "{n} samples; at least {MIN_SEGMENT_SAMPLES} are required"
        )));
    }
    let t: Vec<f64> = curve.times().collect();
    let v: Vec<f64> = curve.voltages().collect();

    // Load-off point: the voltage minimum (first occurrence).
    let i_cut = v
        .iter()
        .enumerate()
        .fold(0, |best, (k, &x)| if x < v[best] { k } else { best });
    let t_cutoff = t[i_cut];
    let t_recovery_end = (i_cut + 1 < n && v[n - 1] > v[i_cut]).then(|| t[n - 1]);

    if i_cut + 1 < MIN_SEGMENT_SAMPLES {
        return Err(Error::SegmentationFailed(format!(
            "only {} samples before the voltage minimum",
            i_cut + 1
        )));
    }
    let td = &t[..=i_cut];
    let vd = &v[..=i_cut];
    let mag: Vec<f64> = moving_average(&slope(td, vd), cfg.smoothing)
        .into_iter()
        .map(f64::abs)
        .collect();
    let m = mag.len();
    let reference = median(mag[m / 4..(3 * m / 4).max(m / 4 + 1)].to_vec());
    if !(reference > 0.0) {
        return Err(Error::SegmentationFailed(
            "the hold period has zero slope; thresholds are undefined".into(),
        ));
    }
    let theta_init = cfg.init_factor * reference;
    let theta_exhaust = cfg.exhaust_factor * reference;

    let i_init = mag.iter().position(|&s| s < theta_init).ok_or_else(|| {
        Error::SegmentationFailed("slope never settles below the initial-transient threshold".into())
    })?;
    let t_init_end = t[i_init];
    let degenerate = |reason: &str| {
        Ok(Phases::Degenerate {
            t_init_end,
            t_cutoff,
            t_recovery_end,
            reason: reason.into(),
        })
    };
    if i_init == 0 {
        return degenerate("no initial transient");
    }
    let Some(j) = (i_init + 1..m).find(|&k| mag[k] > theta_exhaust) else {
        return degenerate("no exhausting transient");
    };
    let t_hold_end = t[j - 1];

    if !(t[0] <= t_init_end && t_init_end < t_hold_end && t_hold_end < t_cutoff) {
        return Err(Error::SegmentationFailed(format!(
            "non-monotone boundaries: init {t_init_end}, hold {t_hold_end}, cutoff {t_cutoff}"
        )));
    }
    Ok(Phases::Full(PhaseBoundaries {
        t_init_end,
        t_hold_end,
        t_cutoff,
        t_recovery_end,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{time_to_cutoff, ModelParams};

    const REF_CELL: ModelParams = ModelParams::new(6.0, 60.0, 60.0, -6000.0, -1e-5, 1.25);

    fn discharge(p: &ModelParams, tail: usize) -> DischargeCurve {
        let tc = time_to_cutoff(p, 0.9).unwrap().floor() as usize + 1;
        let mut pts: Vec<(f64, f64)> = (0..=tc).map(|k| (k as f64, p.eval(k as f64).unwrap())).collect();
        let (t_c, v_c) = *pts.last().unwrap();
        for k in 1..=tail {
            let tau = k as f64;
            pts.push((t_c + tau, v_c + 0.1 + 0.1 * tau / (tau + 60.0)));
        }
        DischargeCurve::from_tv(pts).unwrap()
    }

    /// Same threshold rules applied to the analytic derivative.
    fn analytic_oracle(p: &ModelParams, t: &[f64]) -> (f64, f64) {
        let mag: Vec<f64> = t.iter().map(|&x| p.derivative(x).abs()).collect();
        let m = mag.len();
        let reference = median(mag[m / 4..3 * m / 4].to_vec());
        let i = mag.iter().position(|&s| s < 3.0 * reference).unwrap();
        let j = (i + 1..m).find(|&k| mag[k] > 10.0 * reference).unwrap();
        (t[i], t[j - 1])
    }

    #[test]
    fn matches_analytic_oracle() {
        let c = discharge(&REF_CELL, 0);
        let ph = segment_phases(&c).unwrap();
        let b = ph.boundaries().expect("full segmentation");
        let ts: Vec<f64> = c.times().collect();
        let (oi, oh) = analytic_oracle(&REF_CELL, &ts);
        let tc = time_to_cutoff(&REF_CELL, 0.9).unwrap();
        assert!(((b.t_init_end - oi) / oi).abs() <= 0.05, "{} vs {oi}", b.t_init_end);
        assert!(((b.t_hold_end - oh) / oh).abs() <= 0.05, "{} vs {oh}", b.t_hold_end);
        assert!(((b.t_cutoff - tc) / tc).abs() <= 0.05);
        assert_eq!(b.t_recovery_end, None);
    }

    #[test]
    fn recovery_tail_is_detected() {
        let c = discharge(&REF_CELL, 600);
        let ph = segment_phases(&c).unwrap();
        let b = ph.boundaries().unwrap();
        assert_eq!(b.t_recovery_end, Some(c.last().unwrap().t));
        assert!(b.t_init_end < b.t_hold_end && b.t_hold_end < b.t_cutoff);
    }

    #[test]
    fn linear_curve_is_degenerate() {
        let c = DischargeCurve::from_tv((0..200).map(|k| (k as f64, 1.2 - 0.001 * k as f64))).unwrap();
        match segment_phases(&c).unwrap() {
            Phases::Degenerate { t_init_end, .. } => assert_eq!(t_init_end, 0.0),
            other => panic!("expected degenerate, got {other:?}"),
        }
    }

    #[test]
    fn flat_curve_fails() {
        let c = DischargeCurve::from_tv((0..50).map(|k| (k as f64, 1.2))).unwrap();
        assert!(matches!(
            segment_phases(&c),
            Err(Error::SegmentationFailed(_))
        ));
    }

    #[test]
    fn moving_average_shrinks_at_edges() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(moving_average(&x, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(moving_average(&[0.0, 3.0, 0.0], 3), vec![0.0, 1.0, 0.0]);
    }
}
