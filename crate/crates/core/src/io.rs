//! Curve CSV files: header `time_s,voltage_mv[,current_ma]`, LF newlines,
//! voltages and currents written with three decimals.

use std::fs;
use std::path::Path;

use crate::curve::{DischargeCurve, Sample};
use crate::error::{Error, Result};

pub const HEADER_TV: &str = "time_s,voltage_mv";
pub const HEADER_TVI: &str = "time_s,voltage_mv,current_ma";

pub fn format_curve(curve: &DischargeCurve) -> String {
    let with_current = curve.has_current();
    let mut out = String::with_capacity(curve.len() * 32);
    out.push_str(if with_current { HEADER_TVI } else { HEADER_TV });
    out.push('\n');
    for s in curve.samples() {
        out.push_str(&format!("{},{:.3}", s.t, s.v * 1000.0));
        if with_current {
            out.push_str(&format!(",{:.3}", s.i.unwrap_or(0.0) * 1000.0));
        }
        out.push('\n');
    }
    out
}

pub fn parse_curve(text: &str) -> Result<DischargeCurve> {
    let mut lines = text.lines().enumerate();
    let with_current = match lines.next() {
        Some((_, h)) if h.trim() == HEADER_TVI => true,
        Some((_, h)) if h.trim() == HEADER_TV => false,
        Some((_, h)) => {
            return Err(Error::Syntax {
                line: 1,
                msg: format!("expected header `{HEADER_TV}[,current_ma]`, got `{h}`"),
            })
        }
        None => {
            return Err(Error::Syntax {
                line: 1,
                msg: "empty curve file".into(),
            })
        }
    };
    let width = if with_current { 3 } else { 2 };
    let mut samples: Vec<Sample> = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(Error::Syntax {
                line,
                msg: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            let v: f64 = s.parse().map_err(|_| Error::Syntax {
                line,
                msg: format!("`{s}` is not a number"),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Syntax {
                    line,
                    msg: format!("`{s}` is not finite"),
                })
            }
        };
        let t = num(fields[0])?;
        let v = num(fields[1])? / 1000.0;
        let i = if with_current {
            Some(num(fields[2])? / 1000.0)
        } else {
            None
        };
        if samples.last().is_some_and(|p| t <= p.t) {
            return Err(Error::NonMonotoneTime { line, t });
        }
        if v < 0.0 || i.is_some_and(|i| i < 0.0) {
            return Err(Error::Syntax {
                line,
                msg: "voltage and current must be non-negative".into(),
            });
        }
        samples.push(Sample { t, v, i });
    }
    DischargeCurve::new(samples)
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<DischargeCurve> {
    parse_curve(&fs::read_to_string(path)?)
}

pub fn write_curve(curve: &DischargeCurve, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_curve(curve))?;
    Ok(())
}
