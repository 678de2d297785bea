//! Repeating pulse-load programs at millisecond resolution.
//!
//! Text format (UTF-8, LF or CRLF, `#` starts a comment):
//!
//! ```text
//! unit ma
//! step 180000 250
//! step 180000 0
//! ```
//!
//! The first non-comment line selects the unit; each `step` gives a duration
//! in milliseconds (>= 1) and a level in 0..=255. The step list repeats.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::strip_comment;

pub const MAX_LEVEL: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadUnit {
    Milliwatt,
    Milliampere,
}

impl LoadUnit {
    fn token(self) -> &'static str {
        match self {
            LoadUnit::Milliwatt => "mw",
            LoadUnit::Milliampere => "ma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub duration_ms: u64,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadProgram {
    unit: LoadUnit,
    steps: Vec<Step>,
    cycle_ms: u64,
}

/// Per-cycle bookkeeping of a program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleStats {
    /// Fraction of the cycle spent at a nonzero level.
    pub duty: f64,
    /// Time-weighted mean level (mA or mW).
    pub mean_level: f64,
    /// Σ level·duration over one cycle, in level·ms (mA·ms or mW·ms).
    pub per_cycle: u64,
}

impl CycleStats {
    /// Charge per cycle in mAh (milliampere programs) or energy in mWh.
    pub fn per_cycle_hours(&self) -> f64 {
        self.per_cycle as f64 / 3.6e6
    }
}

impl LoadProgram {
    pub fn new(unit: LoadUnit, steps: Vec<Step>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::EmptyProgram);
        }
        if let Some(k) = steps.iter().position(|s| s.duration_ms == 0) {
            return Err(Error::Range {
                line: k + 1,
                msg: "step duration must be >= 1 ms".into(),
            });
        }
        let cycle_ms = steps.iter().map(|s| s.duration_ms).sum();
        Ok(Self {
            unit,
            steps,
            cycle_ms,
        })
    }

    /// Two-step program: `on_ms` at `level`, then `off_ms` idle.
    pub fn square(unit: LoadUnit, level: u8, on_ms: u64, off_ms: u64) -> Result<Self> {
        let mut steps = vec![Step {
            duration_ms: on_ms,
            level,
        }];
        if off_ms > 0 {
            steps.push(Step {
                duration_ms: off_ms,
                level: 0,
            });
        }
        Self::new(unit, steps)
    }

    pub fn unit(&self) -> LoadUnit {
        self.unit
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn cycle_ms(&self) -> u64 {
        self.cycle_ms
    }

    pub fn period_s(&self) -> f64 {
        self.cycle_ms as f64 / 1000.0
    }

    pub fn shortest_step_ms(&self) -> u64 {
        self.steps.iter().map(|s| s.duration_ms).min().unwrap_or(0)
    }

    /// Level active at `t_ms` (periodic).
    pub fn level_at(&self, t_ms: u64) -> u8 {
        self.step_index_at(t_ms).1.level
    }

    /// Level active at `t_s` seconds. Times within 1 ns below a millisecond
    /// boundary count as the boundary itself.
    pub fn level_at_secs(&self, t_s: f64) -> u8 {
        self.level_at(secs_to_ms(t_s))
    }

    fn step_index_at(&self, t_ms: u64) -> (usize, &Step) {
        let mut phase = t_ms % self.cycle_ms;
        for (k, s) in self.steps.iter().enumerate() {
            if phase < s.duration_ms {
                return (k, s);
            }
            phase -= s.duration_ms;
        }
        unreachable!("phase is always inside the cycle")
    }

    /// Start offsets (ms within the cycle) of every step.
    pub fn step_offsets(&self) -> Vec<(u64, Step)> {
        let mut at = 0;
        self.steps
            .iter()
            .map(|s| {
                let o = at;
                at += s.duration_ms;
                (o, *s)
            })
            .collect()
    }

    pub fn duty(&self) -> f64 {
        let on: u64 = self
            .steps
            .iter()
            .filter(|s| s.level > 0)
            .map(|s| s.duration_ms)
            .sum();
        on as f64 / self.cycle_ms as f64
    }

    pub fn cycle_stats(&self) -> CycleStats {
        let per_cycle: u64 = self
            .steps
            .iter()
            .map(|s| s.level as u64 * s.duration_ms)
            .sum();
        CycleStats {
            duty: self.duty(),
            mean_level: per_cycle as f64 / self.cycle_ms as f64,
            per_cycle,
        }
    }
}

pub(crate) fn secs_to_ms(t_s: f64) -> u64 {
    if t_s <= 0.0 {
        return 0;
    }
    (t_s * 1000.0 + 1e-6).floor() as u64
}

pub fn parse_program(text: &str) -> Result<LoadProgram> {
    text.parse()
}

pub fn serialize_program(program: &LoadProgram) -> String {
    program.to_string()
}

impl FromStr for LoadProgram {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut unit = None;
        let mut steps = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            match (unit, tokens.as_slice()) {
                (None, ["unit", u]) => {
                    unit = Some(match *u {
                        "mw" => LoadUnit::Milliwatt,
                        "ma" => LoadUnit::Milliampere,
                        other => {
                            return Err(Error::Syntax {
                                line: line_no,
                                msg: format!("unknown unit `{other}` (expected mw or ma)"),
                            })
                        }
                    })
                }
                (None, _) => {
                    return Err(Error::Syntax {
                        line: line_no,
                        msg: "first line must be `unit mw` or `unit ma`".into(),
                    })
                }
                (Some(_), ["step", dur, level]) => {
                    let dur = parse_int(dur, line_no)?;
                    let level = parse_int(level, line_no)?;
                    if dur < 1 {
                        return Err(Error::Range {
                            line: line_no,
                            msg: format!("duration {dur} ms must be >= 1"),
                        });
                    }
                    if !(0..=MAX_LEVEL as i64).contains(&level) {
                        return Err(Error::Range {
                            line: line_no,
                            msg: format!("level {level} must be within 0..=255"),
                        });
                    }
                    steps.push(Step {
                        duration_ms: dur as u64,
                        level: level as u8,
                    });
                }
                (Some(_), _) => {
                    return Err(Error::Syntax {
                        line: line_no,
                        msg: format!("expected `step <duration_ms> <level>`, got `{line}`"),
                    })
                }
            }
        }
        let unit = unit.ok_or(Error::EmptyProgram)?;
        if steps.is_empty() {
            return Err(Error::EmptyProgram);
        }
        LoadProgram::new(unit, steps)
    }
}

fn parse_int(tok: &str, line: usize) -> Result<i64> {
    let digits = tok.strip_prefix('-').unwrap_or(tok);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Syntax {
            line,
            msg: format!("`{tok}` is not an integer"),
        });
    }
    tok.parse().map_err(|_| Error::Range {
        line,
        msg: format!("`{tok}` does not fit in 64 bits"),
    })
}

impl fmt::Display for LoadProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "unit {}", self.unit.token())?;
        for s in &self.steps {
            writeln!(f, "step {} {}", s.duration_ms, s.level)?;
        }
        Ok(())
    }
}
