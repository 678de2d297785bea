//! Model fitting: single curves, pulsed-load envelopes and the dependence of
//! parameters on operating conditions.

mod dependence;
mod discharge;
mod envelope;
mod regression;

pub use dependence::{
    build_dependence_model, declared_class, predict_params, Axis, AxisDependence, AxisFit,
    Conditions, DependenceClass, DependenceModel, ParamDependence, Prediction, FILE_HEADER,
};
pub use discharge::{
    fit_discharge_curve, fit_discharge_curve_with, initial_guess, FitResult, MIN_FIT_SAMPLES,
};
pub use envelope::{extract_envelopes, EnvelopePair};
pub use regression::{fit_hyperbolic, fit_linear, rmse_of, HypCoef, HypFit, LinCoef};
