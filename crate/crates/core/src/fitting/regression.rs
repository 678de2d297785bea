use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lm::{self, LmConfig, Residuals};

/// `y = a·x + b`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinCoef {
    pub a: f64,
    pub b: f64,
}

impl LinCoef {
    pub fn eval(&self, x: f64) -> f64 {
        self.a * x + self.b
    }
}

/// `y = a/(b + x) + c`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypCoef {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HypCoef {
    pub fn eval(&self, x: f64) -> f64 {
        if self.a == 0.0 {
            self.c
        } else {
            self.a / (self.b + x) + self.c
        }
    }

    /// True when the pole `x = -b` lies strictly outside `[lo, hi]`.
    pub fn pole_outside(&self, lo: f64, hi: f64) -> bool {
        self.a == 0.0 || -self.b < lo || -self.b > hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypFit {
    pub coef: HypCoef,
    pub rmse: f64,
    pub converged: bool,
}

fn distinct_x(points: &[(f64, f64)]) -> usize {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.len()
}

/// Ordinary least squares line through `points`.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinCoef> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Degenerate("non-finite point".into()));
    }
    if distinct_x(points) < 2 {
        return Err(Error::Degenerate(
            "linear fit needs at least two distinct x values".into(),
        ));
    }
    let n = points.len() as f64;
    let xm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - xm).powi(2)).sum();
    let a = sxy / sxx;
    Ok(LinCoef { a, b: ym - a * xm })
}

pub fn rmse_of(points: &[(f64, f64)], f: impl Fn(f64) -> f64) -> f64 {
    let ss: f64 = points.iter().map(|(x, y)| (f(*x) - y).powi(2)).sum();
    (ss / points.len() as f64).sqrt()
}

/// Hyperbola in normalized coordinates `x' = x/xs`, `y' = y/ys`.
struct Hyperbola<'a> {
    x: &'a [f64],
    y: &'a [f64],
    lo: f64,
    hi: f64,
}

impl Residuals for Hyperbola<'_> {
    fn num_params(&self) -> usize {
        3
    }

    fn num_residuals(&self) -> usize {
        self.x.len()
    }

    fn residuals(&self, p: &[f64], out: &mut [f64]) -> bool {
        let pole = -p[1];
        if pole >= self.lo && pole <= self.hi {
            return false;
        }
        for ((o, x), y) in out.iter_mut().zip(self.x).zip(self.y) {
            *o = p[0] / (p[1] + x) + p[2] - y;
        }
        true
    }

    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for (k, x) in self.x.iter().enumerate() {
            let u = 1.0 / (p[1] + x);
            jac[(k, 0)] = u;
            jac[(k, 1)] = -p[0] * u * u;
            jac[(k, 2)] = 1.0;
        }
    }
}

/// For a fixed pole, `a` and `c` follow from a 2×2 linear solve.
fn linear_given_pole(x: &[f64], y: &[f64], b: f64) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    let u: Vec<f64> = x.iter().map(|x| 1.0 / (b + x)).collect();
    let um = u.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let suu: f64 = u.iter().map(|u| (u - um).powi(2)).sum();
    let suy: f64 = u.iter().zip(y).map(|(u, y)| (u - um) * (y - ym)).sum();
    let a = if suu > 0.0 { suy / suu } else { 0.0 };
    let c = ym - a * um;
    let cost: f64 = u
        .iter()
        .zip(y)
        .map(|(u, y)| (a * u + c - y).powi(2))
        .sum();
    cost.is_finite().then_some((a, c, cost))
}

/// Least-squares fit of `y = a/(b+x) + c` with the pole kept outside the
/// x-range of the data.
pub fn fit_hyperbolic(points: &[(f64, f64)]) -> Result<HypFit> {
    if points.len() < 3 || distinct_x(points) < 3 {
        return Err(Error::Degenerate(
            "hyperbolic fit needs at least three distinct x values".into(),
        ));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Degenerate("non-finite point".into()));
    }
    let xs = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let ys = {
        let m = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        if m > 0.0 {
            m
        } else {
            1.0
        }
    };
    let x: Vec<f64> = points.iter().map(|p| p.0 / xs).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1 / ys).collect();
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;

    let mut best: Option<(f64, [f64; 3])> = None;
    for k in -40..=40 {
        let gap = width * 10f64.powf(k as f64 / 10.0);
        for b in [-lo + gap, -hi - gap] {
            if let Some((a, c, cost)) = linear_given_pole(&x, &y, b) {
                if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
                    best = Some((cost, [a, b, c]));
                }
            }
        }
    }
    let (_, start) = best.ok_or_else(|| Error::Degenerate("no admissible pole".into()))?;

    let problem = Hyperbola {
        x: &x,
        y: &y,
        lo,
        hi,
    };
    let rep = lm::minimize(&problem, &start, &LmConfig::default());
    let coef = HypCoef {
        a: rep.params[0] * xs * ys,
        b: rep.params[1] * xs,
        c: rep.params[2] * ys,
    };
    let rmse = rmse_of(points, |x| coef.eval(x));
    Ok(HypFit {
        coef,
        rmse,
        converged: rep.converged && rmse.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_lines() {
        let c = fit_linear(&[(1.0, 3.0), (2.0, 5.0), (3.0, 7.0)]).unwrap();
        assert_eq!((c.a, c.b), (2.0, 1.0));
        let c = fit_linear(&[(0.0, 1.0), (1.0, 1.0)]).unwrap();
        assert_eq!((c.a, c.b), (0.0, 1.0));
    }

    #[test]
    fn linear_rejects_equal_x() {
        assert!(matches!(
            fit_linear(&[(2.0, 1.0), (2.0, 3.0), (2.0, 4.0)]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn noisy_line_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<(f64, f64)> = (0..100)
            .map(|k| {
                let x = k as f64 / 10.0;
                (x, -0.5 * x + 2.0 + noise.sample(&mut rng))
            })
            .collect();
        let c = fit_linear(&pts).unwrap();
        assert!((c.a + 0.5).abs() <= 0.01, "slope {}", c.a);
    }

    #[test]
    fn exact_hyperbola() {
        let fit = fit_hyperbolic(&[(0.0, 2.0), (1.0, 1.0), (3.0, 0.5)]).unwrap();
        assert!(fit.rmse <= 1e-9, "rmse {}", fit.rmse);
        assert!((fit.coef.a - 2.0).abs() < 1e-6, "{:?}", fit.coef);
        assert!((fit.coef.b - 1.0).abs() < 1e-6);
        assert!(fit.coef.c.abs() < 1e-6);
    }

    #[test]
    fn constant_data_gives_flat_hyperbola() {
        let fit = fit_hyperbolic(&[(0.0, 5.0), (1.0, 5.0), (2.0, 5.0)]).unwrap();
        assert!(fit.rmse <= 1e-9);
        for x in [0.0, 0.5, 1.0, 2.0] {
            assert!((fit.coef.eval(x) - 5.0).abs() < 1e-9);
        }
        assert!(fit.coef.pole_outside(0.0, 2.0));
    }

    #[test]
    fn hyperbola_needs_three_points() {
        assert!(matches!(
            fit_hyperbolic(&[(0.0, 1.0), (1.0, 2.0)]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn hyperbola_with_pole_to_the_right() {
        let truth = HypCoef {
            a: 1200.0,
            b: -1000.0,
            c: 3.0,
        };
        let pts: Vec<(f64, f64)> = [40.0, 80.0, 160.0, 320.0, 480.0, 640.0, 800.0]
            .iter()
            .map(|&x| (x, truth.eval(x)))
            .collect();
        let fit = fit_hyperbolic(&pts).unwrap();
        assert!(fit.rmse < 1e-9 * 3.0, "{fit:?}");
        assert!(fit.coef.pole_outside(40.0, 800.0));
    }
}
