//! Regression of model parameters against operating conditions.
//!
//! Each parameter gets one univariate fit per varying condition axis, taken
//! along the sweep through a reference point. Axes are combined
//! multiplicatively around that point:
//!
//! `P(L,p,d,T) = P_ref · Π g_axis(x) / g_axis(x_ref)`
//!
//! The dependence class per axis is fixed for temperature (linear) and load
//! (linear for E and F, hyperbolic for A..D). For period and duty both
//! classes are fitted and the lower-RMSE one is kept.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fitting::regression::{fit_hyperbolic, fit_linear, rmse_of, HypCoef, LinCoef};
use crate::model::{
    strip_comment, time_to_cutoff, validate_params, ModelParams, ValidityReport, DEFAULT_CUTOFF_V,
    PARAM_NAMES,
};

pub const FILE_HEADER: &str = "NIMH-DEP v1";
const MIN_SWEEP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Load,
    Period,
    Duty,
    Temperature,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Load, Axis::Period, Axis::Duty, Axis::Temperature];

    pub fn tag(self) -> &'static str {
        match self {
            Axis::Load => "L",
            Axis::Period => "p",
            Axis::Duty => "d",
            Axis::Temperature => "T",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        Axis::ALL.into_iter().find(|a| a.tag() == tag)
    }
}

/// Operating conditions of one measurement: load in mA, period in s, duty as
/// a fraction, temperature in °C.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Conditions {
    pub load: f64,
    pub period: Option<f64>,
    pub duty: Option<f64>,
    pub temperature: Option<f64>,
}

impl Conditions {
    pub fn load(load: f64) -> Self {
        Self {
            load,
            ..Self::default()
        }
    }

    pub fn get(&self, axis: Axis) -> Option<f64> {
        match axis {
            Axis::Load => Some(self.load),
            Axis::Period => self.period,
            Axis::Duty => self.duty,
            Axis::Temperature => self.temperature,
        }
    }

    fn set(&mut self, axis: Axis, value: Option<f64>) {
        match axis {
            Axis::Load => self.load = value.unwrap_or(0.0),
            Axis::Period => self.period = value,
            Axis::Duty => self.duty = value,
            Axis::Temperature => self.temperature = value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DependenceClass {
    Linear,
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AxisFit {
    Linear(LinCoef),
    Hyperbolic(HypCoef),
}

impl AxisFit {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            AxisFit::Linear(c) => c.eval(x),
            AxisFit::Hyperbolic(c) => c.eval(x),
        }
    }

    pub fn class(&self) -> DependenceClass {
        match self {
            AxisFit::Linear(_) => DependenceClass::Linear,
            AxisFit::Hyperbolic(_) => DependenceClass::Hyperbolic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisDependence {
    pub axis: Axis,
    pub fit: AxisFit,
    pub rmse: f64,
    /// Range of the sweep the fit was made on.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamDependence {
    /// Parameter value at the reference conditions.
    pub ref_value: f64,
    pub axes: Vec<AxisDependence>,
    /// Axes whose fit failed; they contribute a factor of 1.
    pub failures: Vec<(Axis, String)>,
}

impl ParamDependence {
    pub fn axis(&self, axis: Axis) -> Option<&AxisDependence> {
        self.axes.iter().find(|a| a.axis == axis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceModel {
    pub reference: Conditions,
    /// One entry per parameter, in A..F order.
    pub params: Vec<ParamDependence>,
}

/// Class used for `param` (0..6 = A..F) on `axis`; `None` means data-driven.
pub fn declared_class(param: usize, axis: Axis) -> Option<DependenceClass> {
    match axis {
        Axis::Temperature => Some(DependenceClass::Linear),
        Axis::Load if param >= 4 => Some(DependenceClass::Linear),
        Axis::Load => Some(DependenceClass::Hyperbolic),
        Axis::Period | Axis::Duty => None,
    }
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x == y,
        (None, None) => true,
        _ => false,
    }
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn fit_axis(points: &[(f64, f64)], class: Option<DependenceClass>) -> Result<(AxisFit, f64)> {
    let linear = || -> Result<(AxisFit, f64)> {
        let c = fit_linear(points)?;
        Ok((AxisFit::Linear(c), rmse_of(points, |x| c.eval(x))))
    };
    let hyperbolic = || -> Result<(AxisFit, f64)> {
        let h = fit_hyperbolic(points)?;
        if !h.converged {
            return Err(Error::Degenerate(format!(
                "hyperbolic fit did not converge (rmse {})",
                h.rmse
            )));
        }
        Ok((AxisFit::Hyperbolic(h.coef), h.rmse))
    };
    match class {
        Some(DependenceClass::Linear) => linear(),
        Some(DependenceClass::Hyperbolic) => hyperbolic(),
        None => match (linear(), hyperbolic()) {
            (Ok(l), Ok(h)) => Ok(if h.1 < l.1 { h } else { l }),
            (Ok(l), Err(_)) => Ok(l),
            (Err(_), Ok(h)) => Ok(h),
            (Err(e), Err(_)) => Err(e),
        },
    }
}

/// Builds the separable dependence model from per-condition parameter fits.
pub fn build_dependence_model(fits: &[(Conditions, ModelParams)]) -> Result<DependenceModel> {
    if fits.len() < 2 {
        return Err(Error::InsufficientGrid(format!(
            "{} condition point(s); need sweeps of at least {MIN_SWEEP}",
            fits.len()
        )));
    }
    for axis in Axis::ALL {
        let present = fits.iter().filter(|(c, _)| c.get(axis).is_some()).count();
        if present != 0 && present != fits.len() {
            return Err(Error::InsufficientGrid(format!(
                "axis {} is set on only {present} of {} points",
                axis.tag(),
                fits.len()
            )));
        }
        if fits.iter().any(|(c, _)| c.get(axis).is_some_and(|x| !x.is_finite())) {
            return Err(Error::InsufficientGrid(format!(
                "axis {} has a non-finite value",
                axis.tag()
            )));
        }
    }
    let varying: Vec<Axis> = Axis::ALL
        .into_iter()
        .filter(|&a| distinct(fits.iter().filter_map(|(c, _)| c.get(a))).len() > 1)
        .collect();
    if varying.is_empty() {
        return Err(Error::InsufficientGrid(
            "all points share the same conditions".into(),
        ));
    }

    let sweep = |r: &Conditions, axis: Axis| -> Vec<usize> {
        (0..fits.len())
            .filter(|&j| {
                Axis::ALL
                    .iter()
                    .filter(|&&o| o != axis)
                    .all(|&o| same(fits[j].0.get(o), r.get(o)))
            })
            .collect()
    };

    // Reference: the point whose axis sweeps are all long enough and cover
    // the most data. Ties go to the point nearest the middle of its sweeps
    // (lower median rank).
    let mut best: Option<((usize, usize), Conditions)> = None;
    for (r, _) in fits {
        let mut total = 0;
        let mut off_center = 0;
        let mut ok = true;
        for &axis in &varying {
            let idx = sweep(r, axis);
            let vals = distinct(idx.iter().filter_map(|&j| fits[j].0.get(axis)));
            if vals.len() < MIN_SWEEP {
                ok = false;
                break;
            }
            total += idx.len();
            let x = r.get(axis).unwrap();
            let rank = vals.iter().filter(|&&v| v < x).count();
            off_center += rank.abs_diff((vals.len() - 1) / 2);
        }
        let better = |(t, o): &(usize, usize)| total > *t || (total == *t && off_center < *o);
        if ok && best.as_ref().is_none_or(|(k, _)| better(k)) {
            best = Some(((total, off_center), *r));
        }
    }
    let (_, reference) = best.ok_or_else(|| {
        Error::InsufficientGrid(format!(
            "no reference point has sweeps of >= {MIN_SWEEP} distinct values along every varying axis ({})",
            varying.iter().map(|a| a.tag()).collect::<Vec<_>>().join(",")
        ))
    })?;

    let at_ref: Vec<&ModelParams> = fits
        .iter()
        .filter(|(c, _)| Axis::ALL.iter().all(|&a| same(c.get(a), reference.get(a))))
        .map(|(_, p)| p)
        .collect();

    let mut params = Vec::with_capacity(6);
    for k in 0..6 {
        let ref_value = at_ref.iter().map(|p| p.to_array()[k]).sum::<f64>() / at_ref.len() as f64;
        let mut dep = ParamDependence {
            ref_value,
            ..ParamDependence::default()
        };
        for &axis in &varying {
            let pts: Vec<(f64, f64)> = sweep(&reference, axis)
                .into_iter()
                .map(|j| (fits[j].0.get(axis).unwrap(), fits[j].1.to_array()[k]))
                .collect();
            let x_ref = reference.get(axis).unwrap();
            match fit_axis(&pts, declared_class(k, axis)) {
                Ok((fit, rmse)) => {
                    let g_ref = fit.eval(x_ref);
                    if !g_ref.is_finite() || g_ref.abs() < 1e-300 {
                        dep.failures
                            .push((axis, format!("fit vanishes at the reference ({g_ref})")));
                        continue;
                    }
                    let xs = pts.iter().map(|p| p.0);
                    dep.axes.push(AxisDependence {
                        axis,
                        fit,
                        rmse,
                        min: xs.clone().fold(f64::INFINITY, f64::min),
                        max: xs.fold(f64::NEG_INFINITY, f64::max),
                    });
                }
                Err(e) => dep.failures.push((axis, e.to_string())),
            }
        }
        params.push(dep);
    }
    Ok(DependenceModel { reference, params })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub params: ModelParams,
    /// Some coordinate lies outside the fitted range of its axis.
    pub extrapolated: bool,
    /// Time at which the predicted curve reaches 0.9 V, when it does.
    pub t_end: Option<f64>,
    pub validity: ValidityReport,
}

impl Prediction {
    pub fn is_valid(&self) -> bool {
        self.t_end.is_some() && self.validity.is_valid()
    }
}

/// Evaluates every parameter's dependence surface at `query`. Unset optional
/// coordinates default to the reference conditions.
pub fn predict_params(model: &DependenceModel, query: &Conditions) -> Prediction {
    let mut q = *query;
    for axis in Axis::ALL {
        if q.get(axis).is_none() {
            q.set(axis, model.reference.get(axis));
        }
    }
    let mut extrapolated = false;
    let mut values = [0.0; 6];
    for (k, dep) in model.params.iter().enumerate() {
        let mut value = dep.ref_value;
        for ad in &dep.axes {
            let x = q.get(ad.axis).unwrap_or(f64::NAN);
            let x_ref = model.reference.get(ad.axis).unwrap_or(f64::NAN);
            let span = (ad.max - ad.min).abs();
            if !(x >= ad.min - 1e-9 * span && x <= ad.max + 1e-9 * span) {
                extrapolated = true;
            }
            value *= ad.fit.eval(x) / ad.fit.eval(x_ref);
        }
        values[k] = value;
    }
    // Coordinates along axes that were never varied must match the reference.
    for axis in Axis::ALL {
        let modeled = model
            .params
            .iter()
            .any(|d| d.axes.iter().any(|a| a.axis == axis) || d.failures.iter().any(|f| f.0 == axis));
        if !modeled && !same(q.get(axis), model.reference.get(axis)) {
            extrapolated = true;
        }
    }
    let params = ModelParams::from_array(values);
    let t_end = time_to_cutoff(&params, DEFAULT_CUTOFF_V).ok();
    let validity = match t_end {
        Some(t) => validate_params(&params, t),
        None => validate_params(&params, f64::NAN),
    };
    Prediction {
        params,
        extrapolated,
        t_end,
        validity,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

impl fmt::Display for DependenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{FILE_HEADER}")?;
        let r = &self.reference;
        writeln!(
            f,
            "ref L={} p={} d={} T={}",
            r.load,
            opt(r.period),
            opt(r.duty),
            opt(r.temperature)
        )?;
        for (name, dep) in PARAM_NAMES.iter().zip(&self.params) {
            writeln!(f, "param {name} ref={}", dep.ref_value)?;
            for ad in &dep.axes {
                let mut line = format!("axis {} ", ad.axis.tag());
                match ad.fit {
                    AxisFit::Linear(c) => write!(line, "linear a={} b={}", c.a, c.b)?,
                    AxisFit::Hyperbolic(c) => {
                        write!(line, "hyperbolic a={} b={} c={}", c.a, c.b, c.c)?
                    }
                }
                write!(line, " rmse={} min={} max={}", ad.rmse, ad.min, ad.max)?;
                writeln!(f, "{line}")?;
            }
            for (axis, msg) in &dep.failures {
                writeln!(f, "fail {} {}", axis.tag(), msg.replace('\n', " "))?;
            }
            writeln!(f, "end")?;
        }
        Ok(())
    }
}

fn syntax(line: usize, msg: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        msg: msg.into(),
    }
}

fn kv<'a>(tok: &'a str, key: &str, line: usize) -> Result<&'a str> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| syntax(line, format!("expected `{key}=...`, got `{tok}`")))
}

fn num(tok: &str, key: &str, line: usize) -> Result<f64> {
    let v = kv(tok, key, line)?;
    v.parse()
        .map_err(|_| syntax(line, format!("`{v}` is not a number")))
}

fn opt_num(tok: &str, key: &str, line: usize) -> Result<Option<f64>> {
    let v = kv(tok, key, line)?;
    if v == "-" {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| syntax(line, format!("`{v}` is not a number")))
}

impl FromStr for DependenceModel {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, strip_comment(l).trim()))
            .filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == FILE_HEADER => {}
            Some((n, l)) => return Err(syntax(n, format!("expected `{FILE_HEADER}`, got `{l}`"))),
            None => return Err(syntax(1, "empty dependence model file")),
        }
        let (n, l) = lines.next().ok_or_else(|| syntax(2, "missing `ref` line"))?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 5 || t[0] != "ref" {
            return Err(syntax(n, "expected `ref L=.. p=.. d=.. T=..`"));
        }
        let reference = Conditions {
            load: num(t[1], "L", n)?,
            period: opt_num(t[2], "p", n)?,
            duty: opt_num(t[3], "d", n)?,
            temperature: opt_num(t[4], "T", n)?,
        };

        let mut params: Vec<ParamDependence> = Vec::new();
        let mut current: Option<ParamDependence> = None;
        let mut last_line = n;
        for (n, l) in lines {
            last_line = n;
            let t: Vec<&str> = l.split_whitespace().collect();
            match t.as_slice() {
                ["param", name, r] => {
                    if current.is_some() {
                        return Err(syntax(n, "`param` before `end`"));
                    }
                    if PARAM_NAMES.get(params.len()) != Some(name) {
                        return Err(syntax(n, format!("unexpected parameter `{name}`")));
                    }
                    current = Some(ParamDependence {
                        ref_value: num(r, "ref", n)?,
                        ..ParamDependence::default()
                    });
                }
                ["axis", tag, class, rest @ ..] => {
                    let dep = current
                        .as_mut()
                        .ok_or_else(|| syntax(n, "`axis` outside a param block"))?;
                    let axis = Axis::from_tag(tag)
                        .ok_or_else(|| syntax(n, format!("unknown axis `{tag}`")))?;
                    let (fit, tail) = match (*class, rest) {
                        ("linear", [a, b, tail @ ..]) => (
                            AxisFit::Linear(LinCoef {
                                a: num(a, "a", n)?,
                                b: num(b, "b", n)?,
                            }),
                            tail,
                        ),
                        ("hyperbolic", [a, b, c, tail @ ..]) => (
                            AxisFit::Hyperbolic(HypCoef {
                                a: num(a, "a", n)?,
                                b: num(b, "b", n)?,
                                c: num(c, "c", n)?,
                            }),
                            tail,
                        ),
                        _ => return Err(syntax(n, format!("bad axis line `{l}`"))),
                    };
                    let [rmse, min, max] = tail else {
                        return Err(syntax(n, "expected `rmse=.. min=.. max=..`"));
                    };
                    dep.axes.push(AxisDependence {
                        axis,
                        fit,
                        rmse: num(rmse, "rmse", n)?,
                        min: num(min, "min", n)?,
                        max: num(max, "max", n)?,
                    });
                }
                ["fail", tag, ..] => {
                    let dep = current
                        .as_mut()
                        .ok_or_else(|| syntax(n, "`fail` outside a param block"))?;
                    let axis = Axis::from_tag(tag)
                        .ok_or_else(|| syntax(n, format!("unknown axis `{tag}`")))?;
                    let msg = l.splitn(3, ' ').nth(2).unwrap_or("").trim().to_string();
                    dep.failures.push((axis, msg));
                }
                ["end"] => {
                    params.push(
                        current
                            .take()
                            .ok_or_else(|| syntax(n, "`end` without `param`"))?,
                    );
                }
                _ => return Err(syntax(n, format!("unrecognized line `{l}`"))),
            }
        }
        if current.is_some() || params.len() != 6 {
            return Err(syntax(last_line, "expected six complete param blocks (A..F)"));
        }
        Ok(DependenceModel { reference, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: ModelParams = ModelParams::new(6.0, 60.0, 60.0, -6000.0, -1e-5, 1.25);

    /// Linear-in-temperature generator around 20 °C.
    fn temperature_sweep() -> Vec<(Conditions, ModelParams)> {
        let slopes = [0.01, 0.005, -0.004, -0.002, 0.003, 0.001];
        [1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
            .iter()
            .map(|&t| {
                let mut a = BASE.to_array();
                for (v, s) in a.iter_mut().zip(slopes) {
                    *v *= 1.0 + s * (t - 20.0);
                }
                (
                    Conditions {
                        load: 480.0,
                        temperature: Some(t),
                        ..Conditions::default()
                    },
                    ModelParams::from_array(a),
                )
            })
            .collect()
    }

    #[test]
    fn recovers_temperature_slopes() {
        let data = temperature_sweep();
        let model = build_dependence_model(&data).unwrap();
        assert_eq!(model.reference.temperature, Some(20.0));
        let slopes = [0.01, 0.005, -0.004, -0.002, 0.003, 0.001];
        for (k, dep) in model.params.iter().enumerate() {
            let ad = dep.axis(Axis::Temperature).unwrap();
            let AxisFit::Linear(c) = ad.fit else {
                panic!("temperature must be linear")
            };
            let expected = BASE.to_array()[k] * slopes[k];
            assert!(((c.a - expected) / expected).abs() < 0.01, "param {k}: {} vs {expected}", c.a);
        }
    }

    #[test]
    fn single_point_is_insufficient() {
        let err = build_dependence_model(&[(Conditions::load(100.0), BASE)]).unwrap_err();
        assert!(matches!(err, Error::InsufficientGrid(_)));
    }

    #[test]
    fn two_point_sweep_is_insufficient() {
        let data = vec![
            (Conditions::load(100.0), BASE),
            (Conditions::load(200.0), BASE.time_scaled(0.5)),
        ];
        assert!(matches!(
            build_dependence_model(&data),
            Err(Error::InsufficientGrid(_))
        ));
    }

    #[test]
    fn predicts_training_points_and_flags_extrapolation() {
        let data = temperature_sweep();
        let model = build_dependence_model(&data).unwrap();
        for (c, p) in &data {
            let pred = predict_params(&model, c);
            assert!(!pred.extrapolated);
            for k in 0..6 {
                let ad = model.params[k].axis(Axis::Temperature).unwrap();
                let (got, want) = (pred.params.to_array()[k], p.to_array()[k]);
                assert!((got - want).abs() <= ad.rmse + 1e-9 * want.abs());
            }
        }
        let outside = Conditions {
            load: 480.0,
            temperature: Some(80.0),
            ..Conditions::default()
        };
        assert!(predict_params(&model, &outside).extrapolated);
        let other_load = Conditions {
            load: 100.0,
            temperature: Some(20.0),
            ..Conditions::default()
        };
        assert!(predict_params(&model, &other_load).extrapolated);
    }

    #[test]
    fn file_round_trip() {
        let model = build_dependence_model(&temperature_sweep()).unwrap();
        let text = model.to_string();
        assert!(text.starts_with("NIMH-DEP v1\n"));
        let back: DependenceModel = text.parse().unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn file_rejects_bad_header() {
        assert!(matches!(
            "NIMH-DEP v2\n".parse::<DependenceModel>(),
            Err(Error::Syntax { line: 1, .. })
        ));
    }
}
