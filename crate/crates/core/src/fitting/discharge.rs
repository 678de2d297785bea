use nalgebra::{DMatrix, DVector};

use crate::curve::DischargeCurve;
use crate::error::{Error, Result};
use crate::lm::{self, LmConfig, Residuals};
use crate::model::ModelParams;

pub const MIN_FIT_SAMPLES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitResult {
    pub params: ModelParams,
    /// Root-mean-square residual in volts.
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Discharge model in normalized time `s = t / T`, with parameters
/// `(A/T, B/T, C/T, D/T, E·T, F)`. Steps that move a pole into the data
/// domain are rejected.
struct ScaledModel<'a> {
    s: &'a [f64],
    v: &'a [f64],
}

impl Residuals for ScaledModel<'_> {
    fn num_params(&self) -> usize {
        6
    }

    fn num_residuals(&self) -> usize {
        self.s.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        if p[1] <= 0.0 || p[3] >= -1.0 {
            return false;
        }
        for ((o, s), v) in out.iter_mut().zip(self.s).zip(self.v) {
            *o = p[0] / (p[1] + s) + p[2] / (p[3] + s) + p[4] * s + p[5] - v;
        }
        true
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for (k, s) in self.s.iter().enumerate() {
            let u = 1.0 / (p[1] + s);
            let w = 1.0 / (p[3] + s);
            jac[(k, 0)] = u;
            jac[(k, 1)] = -p[0] * u * u;
            jac[(k, 2)] = w;
            jac[(k, 3)] = -p[2] * w * w;
            jac[(k, 4)] = *s;
            jac[(k, 5)] = 1.0;
        }
    }
}

fn to_scaled(p: &ModelParams, scale: f64) -> [f64; 6] {
    [
        p.a / scale,
        p.b / scale,
        p.c / scale,
        p.d / scale,
        p.e * scale,
        p.f,
    ]
}

fn from_scaled(p: &[f64], scale: f64) -> ModelParams {
    ModelParams::new(
        p[0] * scale,
        p[1] * scale,
        p[2] * scale,
        p[3] * scale,
        p[4] / scale,
        p[5],
    )
}

/// Phase-anchored starting point: `F` from the hold-period median, `E` from
/// its least-squares slope, `B` at 5% of the span, `D` at -1.2 spans, and the
/// numerators chosen so each hyperbola reproduces the residual voltage at its
/// own end of the curve.
pub fn initial_guess(curve: &DischargeCurve) -> ModelParams {
    let s = curve.samples();
    let n = s.len();
    let t0 = s[0].t;
    let t_end = s[n - 1].t;
    let span = t_end - t0;

    let mid = &s[n / 4..(3 * n / 4).max(n / 4 + 2).min(n)];
    let mut mid_v: Vec<f64> = mid.iter().map(|x| x.v).collect();
    mid_v.sort_by(f64::total_cmp);
    let f = mid_v[mid_v.len() / 2];
    let e = {
        let tm = mid.iter().map(|x| x.t).sum::<f64>() / mid.len() as f64;
        let vm = mid.iter().map(|x| x.v).sum::<f64>() / mid.len() as f64;
        let sxy: f64 = mid.iter().map(|x| (x.t - tm) * (x.v - vm)).sum();
        let sxx: f64 = mid.iter().map(|x| (x.t - tm).powi(2)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    };
    let b = 0.05 * span;
    let d = (-1.2 * span).min(-1.05 * t_end);
    let a = (s[0].v - f) * b;
    let c = (s[n - 1].v - f - e * t_end) * (d + t_end);
    ModelParams::new(a, b, c, d, e, f)
}

/// Best starting point over a grid of pole positions; for fixed poles the
/// remaining four coefficients are linear and solved exactly.
fn projected_start(s: &[f64], v: &[f64]) -> Option<[f64; 6]> {
    const B_GRID: [f64; 8] = [0.001, 0.003, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
    const D_GRID: [f64; 12] = [
        -1.0005, -1.002, -1.005, -1.01, -1.02, -1.05, -1.1, -1.2, -1.4, -1.8, -2.5, -4.0,
    ];
    let m = s.len();
    let rhs = DVector::from_column_slice(v);
    let mut best: Option<(f64, [f64; 6])> = None;
    let mut basis = DMatrix::zeros(m, 4);
    for &b in &B_GRID {
        for &d in &D_GRID {
            for (k, x) in s.iter().enumerate() {
                basis[(k, 0)] = 1.0 / (b + x);
                basis[(k, 1)] = 1.0 / (d + x);
                basis[(k, 2)] = *x;
                basis[(k, 3)] = 1.0;
            }
            let Ok(coef) = basis.clone().svd(true, true).solve(&rhs, 1e-13) else {
                continue;
            };
            let cost = (&basis * &coef - &rhs).norm_squared();
            if !cost.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, [coef[0], b, coef[1], d, coef[2], coef[3]]));
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Damped least-squares fit of the six-parameter model to `curve`.
///
/// Without `init`, the solver starts from [`initial_guess`] and from the best
/// pole-grid start, keeping the lower-cost result. Divergence is reported
/// through `converged = false`.
pub fn fit_discharge_curve(curve: &DischargeCurve, init: Option<&ModelParams>) -> Result<FitResult> {
    fit_discharge_curve_with(curve, init, &LmConfig::default())
}

pub fn fit_discharge_curve_with(
    curve: &DischargeCurve,
    init: Option<&ModelParams>,
    cfg: &LmConfig,
) -> Result<FitResult> {
    let n = curve.len();
    if n < MIN_FIT_SAMPLES {
        return Err(Error::Degenerate(format!(
            "{n} samples; at least {MIN_FIT_SAMPLES} are required"
        )));
    }
    let samples = curve.samples();
    let scale = samples[n - 1].t.abs().max(1.0);
    let s: Vec<f64> = samples.iter().map(|x| x.t / scale).collect();
    let v: Vec<f64> = samples.iter().map(|x| x.v).collect();
    let problem = ScaledModel { s: &s, v: &v };

    let mut starts: Vec<[f64; 6]> = Vec::new();
    match init {
        Some(p) => starts.push(to_scaled(p, scale)),
        None => {
            starts.push(to_scaled(&initial_guess(curve), scale));
            if let Some(p) = projected_start(&s, &v) {
                starts.push(p);
            }
        }
    }

    let mut best: Option<lm::LmReport> = None;
    let mut iterations = 0;
    for start in starts {
        let rep = lm::minimize(&problem, &start, cfg);
        iterations += rep.iterations;
        let better = match &best {
            None => true,
            Some(b) => rep.cost < b.cost,
        };
        if better {
            best = Some(rep);
        }
    }
    let best = best.expect("at least one start");
    let rmse = (best.cost / n as f64).sqrt();
    Ok(FitResult {
        params: from_scaled(&best.params, scale),
        rmse,
        iterations,
        converged: best.converged && rmse.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_params;

    const REF_CELL: ModelParams = ModelParams::new(6.0, 60.0, 60.0, -6000.0, -1e-5, 1.25);

    fn sampled(p: &ModelParams, t_end: f64) -> DischargeCurve {
        DischargeCurve::from_tv((0..=t_end as usize).map(|k| {
            let t = k as f64;
            (t, p.eval(t).unwrap())
        }))
        .unwrap()
    }

    #[test]
    fn too_few_samples() {
        let c = DischargeCurve::from_tv((0..5).map(|k| (k as f64, 1.2))).unwrap();
        assert!(matches!(
            fit_discharge_curve(&c, None),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn initial_guess_satisfies_pole_convention() {
        let c = sampled(&REF_CELL, 5795.0);
        let g = initial_guess(&c);
        assert!(validate_params(&g, 5795.0).is_valid(), "{g:?}");
        assert!(g.a > 0.0 && g.c > 0.0);
    }

    #[test]
    fn noiseless_curve_is_reproduced() {
        let c = sampled(&REF_CELL, 5795.0);
        let fit = fit_discharge_curve(&c, None).unwrap();
        assert!(fit.rmse <= 1e-6, "rmse {}", fit.rmse);
        let worst = c
            .samples()
            .iter()
            .map(|s| (fit.params.eval(s.t).unwrap() - s.v).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "max error {worst}");
        assert!(validate_params(&fit.params, 5795.0).is_valid());
    }

    #[test]
    fn explicit_init_is_used() {
        let c = sampled(&REF_CELL, 5795.0);
        let fit = fit_discharge_curve(&c, Some(&REF_CELL)).unwrap();
        assert!(fit.converged);
        assert!(fit.rmse < 1e-12);
    }
}
