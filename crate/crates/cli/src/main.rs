use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use nimh_core::analysis::{capacity, derivative_curve, format_derivative};
use nimh_core::detector::{run_detector, DetectorConfig};
use nimh_core::fitting::{
    build_dependence_model, extract_envelopes, fit_discharge_curve, predict_params, Conditions,
    DependenceModel,
};
use nimh_core::io::{read_curve, write_curve};
use nimh_core::phases::{segment_phases, Phases};
use nimh_core::plot::emit_plot;
use nimh_core::simulator::{
    add_noise, simulate_charge, simulate_constant, simulate_pulsing, ChargeProfile,
    ConstantOptions, EnvelopeModel, InternalResistance, RecoveryConfig,
};
use nimh_core::{parse_program, CurveMeta, DischargeCurve, ModelParams};

#[derive(Parser)]
#[command(name = "nimh", version, about = "Ni-MH discharge model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the six-parameter model to a discharge curve.
    Fit {
        #[arg(long)]
        curve: PathBuf,
        /// Optional starting parameters.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Parameter file to write; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Constant-load discharge from a parameter file.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 900.0)]
        cutoff_mv: f64,
        /// Load current written to the current column.
        #[arg(long)]
        current_ma: Option<f64>,
        /// Append a post-cutoff recovery tail.
        #[arg(long)]
        recovery: bool,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pulsed-load discharge between an upper and a lower envelope.
    PulseSim {
        #[arg(long)]
        upper: PathBuf,
        #[arg(long)]
        lower: PathBuf,
        #[arg(long)]
        program: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 900.0)]
        cutoff_mv: f64,
        #[arg(long, default_value_t = 5.0)]
        kappa_on: f64,
        #[arg(long, default_value_t = 5.0)]
        kappa_off: f64,
        /// Internal resistance in ohms before the knee.
        #[arg(long, default_value_t = 0.1)]
        r0: f64,
        /// Internal resistance in ohms at end of life.
        #[arg(long, default_value_t = 0.3)]
        r_end: f64,
        /// Lifetime fraction where the resistance starts rising.
        #[arg(long, default_value_t = 0.95)]
        knee: f64,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Constant-current charge transient.
    ChargeSim {
        #[arg(long, default_value_t = 1500.0)]
        v_start_mv: f64,
        #[arg(long, default_value_t = 1700.0)]
        v_peak_mv: f64,
        #[arg(long, default_value_t = 3600.0)]
        t_peak: f64,
        #[arg(long, default_value_t = 2.0)]
        decline_mv_per_min: f64,
        #[arg(long, default_value_t = 5.0)]
        knee_sharpness: f64,
        #[arg(long)]
        t_total: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the -dV full-charge detector over a raw-rate charge curve.
    Detect {
        #[arg(long)]
        curve: PathBuf,
        /// `key=value` detector configuration; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Extract upper and lower envelopes from a pulsed-load trace.
    Envelope {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        upper_out: PathBuf,
        #[arg(long)]
        lower_out: PathBuf,
    },
    /// Regress fitted parameters against load, period, duty and temperature.
    DependFit {
        /// List file: one `<path> load=<mA> [period=<s>] [duty=<0..1>] [temp=<C>]`
        /// per line. Paths ending in `.csv` are fitted first; anything else is
        /// read as a parameter file.
        #[arg(long)]
        fits: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict parameters at new operating conditions.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        load: f64,
        #[arg(long)]
        period: Option<f64>,
        #[arg(long)]
        duty: Option<f64>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drawn charge in mAh from the current column.
    Capacity {
        #[arg(long)]
        curve: PathBuf,
    },
    /// Smoothed dV/dt series.
    Derivative {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long, default_value_t = 1)]
        window: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Locate the four discharge phases.
    Phases {
        #[arg(long)]
        curve: PathBuf,
    },
    /// SVG plot of one or more curves.
    Plot {
        #[arg(long = "curve", required = true)]
        curves: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct NoiseArgs {
    /// Gaussian voltage noise, mV standard deviation.
    #[arg(long, requires = "seed")]
    noise_mv: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

impl NoiseArgs {
    fn apply(&self, curve: DischargeCurve) -> nimh_core::Result<DischargeCurve> {
        match (self.noise_mv, self.seed) {
            (Some(mv), Some(seed)) => add_noise(&curve, mv / 1000.0, seed),
            _ => Ok(curve),
        }
    }
}

fn read_params(path: &Path) -> anyhow::Result<ModelParams> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<ModelParams>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn write_or_print(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_fit_list(path: &Path) -> anyhow::Result<Vec<(Conditions, ModelParams)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let file = base.join(tokens.next().unwrap());
        let mut cond = Conditions::default();
        let mut has_load = false;
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got `{tok}`", n + 1))?;
            let v: f64 = v
                .parse()
                .map_err(|_| anyhow!("line {}: `{v}` is not a number", n + 1))?;
            match k {
                "load" => {
                    cond.load = v;
                    has_load = true;
                }
                "period" => cond.period = Some(v),
                "duty" => cond.duty = Some(v),
                "temp" => cond.temperature = Some(v),
                _ => return Err(anyhow!("line {}: unknown key `{k}`", n + 1)),
            }
        }
        if !has_load {
            return Err(anyhow!("line {}: load= is required", n + 1));
        }
        let params = if file.extension().is_some_and(|e| e == "csv") {
            fit_discharge_curve(&read_curve(&file)?, None)?.params
        } else {
            read_params(&file)?
        };
        out.push((cond, params));
    }
    Ok(out)
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Fit { curve, init, out } => {
            let c = read_curve(&curve)?;
            let init = init.as_deref().map(read_params).transpose()?;
            let fit = fit_discharge_curve(&c, init.as_ref())?;
            write_or_print(out.as_deref(), &fit.params.to_string())?;
            eprintln!(
                "rmse_mv={:.4} iterations={} converged={}",
                fit.rmse * 1000.0,
                fit.iterations,
                fit.converged
            );
        }
        Command::Simulate {
            params,
            dt,
            cutoff_mv,
            current_ma,
            recovery,
            noise,
            out,
        } => {
            let p = read_params(&params)?;
            let opts = ConstantOptions {
                current: current_ma.map(|i| i / 1000.0),
                recovery: recovery.then(RecoveryConfig::default),
                ..ConstantOptions::new(dt, cutoff_mv / 1000.0)
            };
            write_curve(&noise.apply(simulate_constant(&p, &opts)?)?, &out)?;
        }
        Command::PulseSim {
            upper,
            lower,
            program,
            dt,
            cutoff_mv,
            kappa_on,
            kappa_off,
            r0,
            r_end,
            knee,
            noise,
            out,
        } => {
            let env = EnvelopeModel {
                r_int: InternalResistance { r0, r_end, knee },
                kappa_on,
                kappa_off,
                ..EnvelopeModel::new(read_params(&upper)?, read_params(&lower)?)
            };
            let prog = parse_program(&fs::read_to_string(&program)?)?;
            let c = simulate_pulsing(&env, &prog, dt, cutoff_mv / 1000.0)?;
            write_curve(&noise.apply(c)?, &out)?;
        }
        Command::ChargeSim {
            v_start_mv,
            v_peak_mv,
            t_peak,
            decline_mv_per_min,
            knee_sharpness,
            t_total,
            dt,
            noise,
            out,
        } => {
            let profile = ChargeProfile {
                knee_sharpness,
                ..ChargeProfile::new(
                    v_start_mv / 1000.0,
                    v_peak_mv / 1000.0,
                    t_peak,
                    decline_mv_per_min,
                )
            };
            if !profile.is_typical() {
                eprintln!("warning: peak voltage or decline outside the usual Ni-MH range");
            }
            write_curve(&noise.apply(simulate_charge(&profile, dt, t_total)?)?, &out)?;
        }
        Command::Detect { curve, config } => {
            let cfg = match config {
                Some(p) => fs::read_to_string(&p)?.parse::<DetectorConfig>()?,
                None => DetectorConfig::default(),
            };
            let report = run_detector(&read_curve(&curve)?, &cfg)?;
            match report.terminated_at {
                Some(t) => {
                    println!("{t}");
                    eprintln!("resume_at={}", report.resume_at.unwrap_or(t));
                }
                None => println!("none"),
            }
        }
        Command::Envelope {
            curve,
            program,
            upper_out,
            lower_out,
        } => {
            let prog = parse_program(&fs::read_to_string(&program)?)?;
            let env = extract_envelopes(&read_curve(&curve)?, &prog)?;
            write_curve(&env.upper_curve()?, &upper_out)?;
            write_curve(&env.lower_curve()?, &lower_out)?;
            println!("cycles={}", env.upper.len());
        }
        Command::DependFit { fits, out } => {
            let data = parse_fit_list(&fits)?;
            let model = build_dependence_model(&data)?;
            fs::write(&out, model.to_string())?;
            for (dep, name) in model.params.iter().zip(nimh_core::model::PARAM_NAMES) {
                for (axis, msg) in &dep.failures {
                    eprintln!("warning: {name} along {}: {msg}", axis.tag());
                }
            }
        }
        Command::Predict {
            model,
            load,
            period,
            duty,
            temperature,
            out,
        } => {
            let m: DependenceModel = fs::read_to_string(&model)?.parse()?;
            let q = Conditions {
                load,
                period,
                duty,
                temperature,
            };
            let pred = predict_params(&m, &q);
            write_or_print(out.as_deref(), &pred.params.to_string())?;
            if pred.extrapolated {
                eprintln!("warning: query lies outside the fitted range");
            }
            match pred.t_end {
                Some(t) if pred.validity.is_valid() => eprintln!("t_end={t}"),
                _ => return Err(anyhow!(nimh_core::Error::InvalidParams(format!(
                    "predicted parameters are not a valid discharge curve: {}",
                    pred.validity
                )))),
            }
        }
        Command::Capacity { curve } => {
            let r = capacity(&read_curve(&curve)?)?;
            println!("charge_drawn_mah={:.3}", r.charge_drawn_mah);
            println!("duration_s={}", r.duration);
            println!("cutoff_reached={}", r.cutoff_reached);
        }
        Command::Derivative { curve, window, out } => {
            let d = derivative_curve(&read_curve(&curve)?, window)?;
            fs::write(&out, format_derivative(&d))?;
        }
        Command::Phases { curve } => match segment_phases(&read_curve(&curve)?)? {
            Phases::Full(b) => {
                println!("status=full");
                println!("t_init_end={}", b.t_init_end);
                println!("t_hold_end={}", b.t_hold_end);
                println!("t_cutoff={}", b.t_cutoff);
                if let Some(t) = b.t_recovery_end {
                    println!("t_recovery_end={t}");
                }
            }
            Phases::Degenerate {
                t_init_end,
                t_cutoff,
                t_recovery_end,
                reason,
            } => {
                println!("status=degenerate");
                println!("reason={reason}");
                println!("t_init_end={t_init_end}");
                println!("t_cutoff={t_cutoff}");
                if let Some(t) = t_recovery_end {
                    println!("t_recovery_end={t}");
                }
            }
        },
        Command::Plot { curves, out } => {
            let loaded = curves
                .iter()
                .map(|p| {
                    let c = read_curve(p)?;
                    let label = p.file_stem().map(|s| s.to_string_lossy().into_owned());
                    Ok(c.with_meta(CurveMeta {
                        label,
                        ..CurveMeta::default()
                    }))
                })
                .collect::<nimh_core::Result<Vec<_>>>()?;
            emit_plot(&loaded, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
