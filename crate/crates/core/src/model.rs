//! The two-hyperbola-plus-line discharge approximation
//! `f(t) = A/(B+t) + C/(D+t) + E·t + F`.
//!
//! The first hyperbola's pole sits at negative time (`B > 0`) so its right
//! branch shapes the initial transient. The second pole sits beyond the end of
//! discharge (`D < 0`, `|D| > t_end`) so its left branch produces the
//! exhausting drop. The linear term carries the hold period. This sign
//! convention is an interpretation: the model itself accepts any finite values
//! and [`validate_params`] reports whether a vector honours it.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Six coefficients of the discharge approximation, in volts and seconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelParams {
    /// V·s
    pub a: f64,
    /// s
    pub b: f64,
    /// V·s
    pub c: f64,
    /// s
    pub d: f64,
    /// V/s
    pub e: f64,
    /// V
    pub f: f64,
}

pub const PARAM_NAMES: [&str; 6] = ["A", "B", "C", "D", "E", "F"];

/// Voltage at which a cell counts as fully discharged.
pub const DEFAULT_CUTOFF_V: f64 = 0.9;

impl ModelParams {
    pub const fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    pub fn from_array(p: [f64; 6]) -> Self {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5])
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|k| self.to_array()[k])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Evaluates the model at `t`, refusing to evaluate at a pole.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if near(t, -self.b) && self.a != 0.0 {
            return Err(Error::PoleHit { t });
        }
        if near(t, -self.d) && self.c != 0.0 {
            return Err(Error::PoleHit { t });
        }
        Ok(self.eval_unchecked(t))
    }

    /// Evaluates the model without the pole check. Terms with a zero numerator
    /// contribute nothing regardless of the pole position.
    #[inline]
    pub fn eval_unchecked(&self, t: f64) -> f64 {
        let h1 = if self.a == 0.0 { 0.0 } else { self.a / (self.b + t) };
        let h2 = if self.c == 0.0 { 0.0 } else { self.c / (self.d + t) };
        h1 + h2 + self.e * t + self.f
    }

    /// Analytic time derivative `-A/(B+t)² - C/(D+t)² + E`.
    pub fn derivative(&self, t: f64) -> f64 {
        let h1 = if self.a == 0.0 { 0.0 } else { -self.a / (self.b + t).powi(2) };
        let h2 = if self.c == 0.0 { 0.0 } else { -self.c / (self.d + t).powi(2) };
        h1 + h2 + self.e
    }

    /// Returns the model stretched in time by `factor`: `g(t) = f(t / factor)`.
    /// The curve keeps its shape and voltages; every feature moves to
    /// `factor` times its original time.
    pub fn time_scaled(&self, factor: f64) -> Self {
        Self::new(
            self.a * factor,
            self.b * factor,
            self.c * factor,
            self.d * factor,
            self.e / factor,
            self.f,
        )
    }
}

fn near(t: f64, pole: f64) -> bool {
    (t - pole).abs() <= 1e-12 * pole.abs().max(1.0)
}

/// Evaluates `params` at `t`.
pub fn eval_model(params: &ModelParams, t: f64) -> Result<f64> {
    params.eval(t)
}

/// A single failed validity check.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite,
    /// `B <= 0`: the initial-transient pole lies inside the time domain.
    InitialPoleInDomain { b: f64 },
    /// `D >= 0`: the exhausting hyperbola uses the wrong branch.
    ExhaustPoleSign { d: f64 },
    /// `|D| <= t_end`: the exhausting pole lies inside `[0, t_end]`.
    ExhaustPoleInDomain { d: f64, t_end: f64 },
    /// `f` is not finite somewhere on the domain.
    NotFiniteOnDomain { t: f64 },
    NonPositiveDomain { t_end: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonFinite => write!(f, "a parameter is not finite"),
            Violation::InitialPoleInDomain { b } => write!(f, "B = {b} must be > 0"),
            Violation::ExhaustPoleSign { d } => write!(f, "D = {d} must be < 0"),
            Violation::ExhaustPoleInDomain { d, t_end } => {
                write!(f, "|D| = {} must exceed t_end = {t_end}", d.abs())
            }
            Violation::NotFiniteOnDomain { t } => write!(f, "f({t}) is not finite"),
            Violation::NonPositiveDomain { t_end } => write!(f, "t_end = {t_end} must be > 0"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidityReport {
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Checks the pole placement convention on `[0, t_end]`.
pub fn validate_params(params: &ModelParams, t_end: f64) -> ValidityReport {
    let mut violations = Vec::new();
    if !(t_end > 0.0 && t_end.is_finite()) {
        violations.push(Violation::NonPositiveDomain { t_end });
    }
    if !params.is_finite() {
        violations.push(Violation::NonFinite);
        return ValidityReport { violations };
    }
    if params.b <= 0.0 {
        violations.push(Violation::InitialPoleInDomain { b: params.b });
    }
    if params.d >= 0.0 {
        violations.push(Violation::ExhaustPoleSign { d: params.d });
    } else if params.d.abs() <= t_end {
        violations.push(Violation::ExhaustPoleInDomain {
            d: params.d,
            t_end,
        });
    }
    if violations.is_empty() {
        const N: usize = 1000;
        for k in 0..N {
            let t = t_end * k as f64 / (N - 1) as f64;
            let v = params.eval_unchecked(t);
            if !v.is_finite() {
                violations.push(Violation::NotFiniteOnDomain { t });
                break;
            }
        }
    }
    ValidityReport { violations }
}

const SCAN_POINTS: usize = 64;
const MAX_HORIZON: f64 = 1e12;

/// Smallest `t >= 0` with `f(t) = v_cutoff`.
///
/// The search interval ends just before the exhausting pole when one lies
/// ahead, otherwise it grows geometrically. A 64-point scan brackets the first
/// crossing, which is then bisected to machine precision (well inside 1e-3 s).
pub fn time_to_cutoff(params: &ModelParams, v_cutoff: f64) -> Result<f64> {
    if !params.is_finite() {
        return Err(Error::InvalidParams("non-finite parameter".into()));
    }
    if params.a != 0.0 && params.b <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "B = {} puts the initial pole inside t >= 0",
            params.b
        )));
    }
    let f = |t: f64| params.eval_unchecked(t);
    let f0 = f(0.0);
    if f0 <= v_cutoff {
        return Err(Error::InvalidParams(format!(
            "f(0) = {f0} V is not above the cutoff {v_cutoff} V"
        )));
    }

    let pole_ahead = params.c != 0.0 && params.d < 0.0;
    let t_hi = if pole_ahead {
        -params.d * (1.0 - 1e-12)
    } else {
        let mut t = 1.0;
        loop {
            if f(t) <= v_cutoff {
                break t;
            }
            t *= 2.0;
            if t > MAX_HORIZON {
                return Err(Error::NoCrossing { v_cutoff });
            }
        }
    };

    let mut lo = 0.0;
    let mut hi = None;
    for k in 1..=SCAN_POINTS {
        let t = t_hi * k as f64 / SCAN_POINTS as f64;
        if f(t) <= v_cutoff {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = hi.ok_or(Error::NoCrossing { v_cutoff })?;

    // f(lo) > v_cutoff >= f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= v_cutoff {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (flo, fhi) = (f(lo) - v_cutoff, f(hi) - v_cutoff);
    Ok(if flo.abs() < fhi.abs() { lo } else { hi })
}

impl fmt::Display for ModelParams {
    /// `NAME=value` lines in plain decimal notation, shortest round-trip form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, value) in PARAM_NAMES.iter().zip(self.to_array()) {
            writeln!(f, "{name}={value}")?;
        }
        Ok(())
    }
}

impl FromStr for ModelParams {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut values: [Option<f64>; 6] = [None; 6];
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Syntax {
                line: line_no,
                msg: format!("expected NAME=value, got `{line}`"),
            })?;
            let key = key.trim();
            let slot = PARAM_NAMES
                .iter()
                .position(|n| *n == key)
                .ok_or_else(|| Error::Syntax {
                    line: line_no,
                    msg: format!("unknown parameter `{key}`"),
                })?;
            if values[slot].is_some() {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: format!("duplicate parameter `{key}`"),
                });
            }
            let v: f64 = value.trim().parse().map_err(|_| Error::Syntax {
                line: line_no,
                msg: format!("`{}` is not a number", value.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Syntax {
                    line: line_no,
                    msg: format!("`{key}` must be finite"),
                });
            }
            values[slot] = Some(v);
        }
        let mut out = [0.0; 6];
        for (k, v) in values.iter().enumerate() {
            out[k] = v.ok_or_else(|| Error::Syntax {
                line: text.lines().count(),
                msg: format!("missing parameter `{}`", PARAM_NAMES[k]),
            })?;
        }
        Ok(Self::from_array(out))
    }
}

pub(crate) fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(k) => &line[..k],
        None => line,
    }
}
