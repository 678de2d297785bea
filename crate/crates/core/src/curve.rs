//! Time/voltage(/current) sample records shared by measurement, simulation and analysis.

use crate::error::{Error, Result};

/// One sample of a transient. Voltage in volts, current in amperes
/// (positive = current out of the cell).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
    pub i: Option<f64>,
}

impl Sample {
    pub fn new(t: f64, v: f64) -> Self {
        Self { t, v, i: None }
    }

    pub fn with_current(t: f64, v: f64, i: f64) -> Self {
        Self { t, v, i: Some(i) }
    }
}

/// Condition tags attached to a curve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveMeta {
    pub label: Option<String>,
    /// Load in mA.
    pub load: Option<f64>,
    /// Pulse period in seconds.
    pub period: Option<f64>,
    /// Duty cycle as a fraction.
    pub duty: Option<f64>,
    /// Temperature in degrees Celsius.
    pub temperature: Option<f64>,
}

/// An ordered, validated list of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct DischargeCurve {
    samples: Vec<Sample>,
    pub meta: CurveMeta,
}

impl DischargeCurve {
    /// Builds a curve, checking that time strictly increases, voltages are
    /// finite and non-negative and currents (when present) are non-negative.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        for (k, s) in samples.iter().enumerate() {
            if !s.t.is_finite() {
                return Err(Error::InvalidCurve(format!("sample {k}: non-finite time")));
            }
            if !s.v.is_finite() || s.v < 0.0 {
                return Err(Error::InvalidCurve(format!(
                    "sample {k}: voltage {} must be finite and >= 0",
                    s.v
                )));
            }
            if let Some(i) = s.i {
                if !i.is_finite() || i < 0.0 {
                    return Err(Error::InvalidCurve(format!(
                        "sample {k}: current {i} must be finite and >= 0"
                    )));
                }
            }
            if k > 0 && s.t <= samples[k - 1].t {
                return Err(Error::InvalidCurve(format!(
                    "sample {k}: time {} does not increase (previous {})",
                    s.t,
                    samples[k - 1].t
                )));
            }
        }
        Ok(Self {
            samples,
            meta: CurveMeta::default(),
        })
    }

    pub fn from_tv(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        Self::new(points.into_iter().map(|(t, v)| Sample::new(t, v)).collect())
    }

    pub fn with_meta(mut self, meta: CurveMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.t)
    }

    pub fn voltages(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.v)
    }

    /// True when every sample carries a current value.
    pub fn has_current(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.i.is_some())
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Linear interpolation of the voltage at `t`; `None` outside the sampled range.
    pub fn voltage_at(&self, t: f64) -> Option<f64> {
        let s = &self.samples;
        if s.is_empty() || t < s[0].t || t > s[s.len() - 1].t {
            return None;
        }
        let k = s.partition_point(|p| p.t <= t);
        if k == 0 {
            return Some(s[0].v);
        }
        if k == s.len() {
            return Some(s[k - 1].v);
        }
        let (a, b) = (&s[k - 1], &s[k]);
        let w = (t - a.t) / (b.t - a.t);
        Some(a.v + w * (b.v - a.v))
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_increasing_time() {
        let err = DischargeCurve::from_tv([(0.0, 1.2), (1.0, 1.1), (1.0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::InvalidCurve(_)));
    }

    #[test]
    fn rejects_negative_voltage_and_current() {
        assert!(DischargeCurve::from_tv([(0.0, -0.1)]).is_err());
        assert!(DischargeCurve::new(vec![Sample::with_current(0.0, 1.0, -0.2)]).is_err());
    }

    #[test]
    fn interpolates_voltage() {
        let c = DischargeCurve::from_tv([(0.0, 1.0), (2.0, 2.0)]).unwrap();
        assert_eq!(c.voltage_at(1.0), Some(1.5));
        assert_eq!(c.voltage_at(2.0), Some(2.0));
        assert_eq!(c.voltage_at(3.0), None);
    }
}
