//! Sliding-window -ΔV full-charge detector.
//!
//! Averaged voltage samples are compared with their predecessor once the cell
//! has passed the voltage gate. Each comparison shifts one bit into a
//! register (1 = strict decrease). Charging terminates once the window is full
//! and holds at least `ones_required` ones.

use std::fmt;
use std::str::FromStr;

use crate::curve::DischargeCurve;
use crate::error::{Error, Result};
use crate::model::strip_comment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub gate_mv: f64,
    pub window_bits: u32,
    pub ones_required: u32,
    /// Raw samples averaged into one decision sample.
    pub avg_len: usize,
    /// Spacing of decision samples, seconds.
    pub sample_period: f64,
    /// Rest period after termination, seconds.
    pub idle_after: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            gate_mv: 1600.0,
            window_bits: 16,
            ones_required: 12,
            avg_len: 16,
            sample_period: 15.0,
            idle_after: 1800.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.ones_required
            && self.ones_required <= self.window_bits
            && self.window_bits <= 64)
        {
            return Err(Error::InvalidParams(format!(
                "need 0 < ones_required ({}) <= window_bits ({}) <= 64",
                self.ones_required, self.window_bits
            )));
        }
        if self.avg_len < 1 || !(self.sample_period > 0.0) {
            return Err(Error::InvalidParams(
                "avg_len must be >= 1 and sample_period > 0".into(),
            ));
        }
        Ok(())
    }

    fn mask(&self) -> u64 {
        if self.window_bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.window_bits) - 1
        }
    }

    /// The termination predicate on a full register.
    pub fn register_terminates(&self, register: u64) -> bool {
        (register & self.mask()).count_ones() >= self.ones_required
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectorState {
    /// Newest bit at position 0.
    pub register: u64,
    /// Previous averaged sample, in millivolts.
    pub prev_avg: Option<OrderedMv>,
    pub gate_passed: bool,
    /// Bits shifted in so far.
    pub filled: u32,
}

/// Millivolt value stored bit-exactly so the state stays `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderedMv(u64);

impl OrderedMv {
    pub fn new(mv: f64) -> Self {
        Self(mv.to_bits())
    }

    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Terminate,
}

/// Feeds one averaged sample (mV) into the detector.
pub fn detector_step(
    state: DetectorState,
    avg_sample: f64,
    cfg: &DetectorConfig,
) -> (DetectorState, Decision) {
    let mut next = state;
    next.prev_avg = Some(OrderedMv::new(avg_sample));
    if !state.gate_passed && avg_sample < cfg.gate_mv {
        return (next, Decision::Continue);
    }
    next.gate_passed = true;
    let Some(prev) = state.prev_avg else {
        return (next, Decision::Continue);
    };
    let bit = u64::from(avg_sample < prev.get());
    next.register = ((state.register << 1) | bit) & cfg.mask();
    next.filled = state.filled.saturating_add(1);
    let decision = if next.filled >= cfg.window_bits && cfg.register_terminates(next.register) {
        Decision::Terminate
    } else {
        Decision::Continue
    };
    (next, decision)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionReport {
    /// Time of the decision sample that triggered termination.
    pub terminated_at: Option<f64>,
    /// `terminated_at + idle_after`.
    pub resume_at: Option<f64>,
    pub decision_samples: usize,
}

/// Runs the detector over a raw-rate curve. Consecutive blocks of `avg_len`
/// raw samples are averaged; each block is timestamped by its last sample.
/// A trailing partial block is ignored.
pub fn run_detector(curve: &DischargeCurve, cfg: &DetectorConfig) -> Result<DetectionReport> {
    cfg.validate()?;
    if curve.len() < cfg.avg_len {
        return Err(Error::Degenerate(format!(
            "{} raw samples; at least avg_len = {} are required",
            curve.len(),
            cfg.avg_len
        )));
    }
    let mut state = DetectorState::default();
    let mut count = 0;
    for block in curve.samples().chunks_exact(cfg.avg_len) {
        let avg_mv = block.iter().map(|s| s.v).sum::<f64>() / block.len() as f64 * 1000.0;
        let t = block[block.len() - 1].t;
        count += 1;
        let (next, decision) = detector_step(state, avg_mv, cfg);
        state = next;
        if decision == Decision::Terminate {
            return Ok(DetectionReport {
                terminated_at: Some(t),
                resume_at: Some(t + cfg.idle_after),
                decision_samples: count,
            });
        }
    }
    Ok(DetectionReport {
        terminated_at: None,
        resume_at: None,
        decision_samples: count,
    })
}

const CONFIG_KEYS: [&str; 6] = [
    "gate_mv",
    "window_bits",
    "ones_required",
    "avg_len",
    "sample_period",
    "idle_after",
];

impl FromStr for DetectorConfig {
    type Err = Error;

    /// `key=value` lines; missing keys keep their defaults.
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = DetectorConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: String| Error::Syntax { line: line_no, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax(format!("expected key=value, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let float = || {
                value
                    .parse::<f64>()
                    .map_err(|_| syntax(format!("`{value}` is not a number")))
            };
            let int = || {
                value
                    .parse::<u32>()
                    .map_err(|_| syntax(format!("`{value}` is not a non-negative integer")))
            };
            match key {
                "gate_mv" => cfg.gate_mv = float()?,
                "window_bits" => cfg.window_bits = int()?,
                "ones_required" => cfg.ones_required = int()?,
                "avg_len" => cfg.avg_len = int()? as usize,
                "sample_period" => cfg.sample_period = float()?,
                "idle_after" => cfg.idle_after = float()?,
                other => {
                    return Err(syntax(format!(
                        "unknown key `{other}` (expected one of {})",
                        CONFIG_KEYS.join(", ")
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for DetectorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gate_mv={}", self.gate_mv)?;
        writeln!(f, "window_bits={}", self.window_bits)?;
        writeln!(f, "ones_required={}", self.ones_required)?;
        writeln!(f, "avg_len={}", self.avg_len)?;
        writeln!(f, "sample_period={}", self.sample_period)?;
        writeln!(f, "idle_after={}", self.idle_after)
    }
}
