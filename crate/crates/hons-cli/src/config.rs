//! Flat key=value run configuration.
//!
//! One key per model parameter, `#` comments, strict parsing: unknown or
//! duplicated keys are rejected with their line number.  Presets pin the
//! constraint sets under which the various statements hold and are
//! validated at parse time, after explicit overrides are applied.

use std::collections::HashSet;
use std::fmt::Write as _;

use hons_core::PhysicsParams;
use num_complex::Complex64;

use crate::CliError;

/// Named constraint presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Restricted nonlinearity (β+μ) = βσ_β.
    Theorem16,
    /// σ's = 1, μ = 0, nonresonant q — the conserved-energy regime.
    Theorem18,
    /// σ_α = σ_β, qβ = 3γα, q/(3γ) ∈ ℤ — the shift-and-modulate gauge.
    RlConditions,
}

impl Preset {
    fn parse(v: &str, line: usize) -> Result<Self, CliError> {
        match v {
            "theorem16" => Ok(Preset::Theorem16),
            "theorem18" => Ok(Preset::Theorem18),
            "rl_conditions" => Ok(Preset::RlConditions),
            other => Err(CliError::Config {
                line,
                msg: format!("unknown preset {other:?} (expected theorem16, theorem18 or rl_conditions)"),
            }),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Preset::Theorem16 => "theorem16",
            Preset::Theorem18 => "theorem18",
            Preset::RlConditions => "rl_conditions",
        }
    }

    /// Parameter values the preset starts from (explicit keys override).
    fn base_params(&self) -> PhysicsParams {
        match self {
            Preset::Theorem16 => PhysicsParams::new(1.0, 2.0, 1.0, 0.0, 1.0),
            Preset::Theorem18 => PhysicsParams::new(1.0, 2.0, 1.0, 0.0, 0.5),
            Preset::RlConditions => PhysicsParams::new(6.0, 2.0, 1.0, 0.0, 1.0),
        }
    }

    fn check(&self, p: &PhysicsParams) -> Result<(), String> {
        match self {
            Preset::Theorem16 => {
                if !p.is_restricted() {
                    return Err(format!(
                        "preset theorem16 needs (beta+mu) = beta*sigma_beta, got {} vs {}",
                        p.beta + p.mu,
                        p.beta * p.sigma_beta
                    ));
                }
                if !p.is_nonresonant() {
                    return Err(format!("preset theorem16 needs q/3 not an integer, got q = {}", p.q));
                }
            }
            Preset::Theorem18 => {
                if !p.symmetric_sigmas() {
                    return Err("preset theorem18 needs all sigma's equal to 1".into());
                }
                if p.mu != 0.0 {
                    return Err(format!("preset theorem18 needs mu = 0, got {}", p.mu));
                }
                if !p.is_nonresonant() {
                    return Err(format!("preset theorem18 needs q/3 not an integer, got q = {}", p.q));
                }
            }
            Preset::RlConditions => {
                if (p.sigma_alpha - p.sigma_beta).abs() > 1e-12 {
                    return Err("preset rl_conditions needs sigma_alpha = sigma_beta".into());
                }
                let scale = 1.0 + p.q.abs() + p.gamma.abs();
                if (p.q * p.beta - 3.0 * p.gamma * p.alpha).abs() > 1e-12 * scale {
                    return Err(format!(
                        "preset rl_conditions needs q*beta = 3*gamma*alpha, got {} vs {}",
                        p.q * p.beta,
                        3.0 * p.gamma * p.alpha
                    ));
                }
                let m0 = p.q / (3.0 * p.gamma);
                if (m0 - m0.round()).abs() > 1e-9 {
                    return Err(format!("preset rl_conditions needs q/(3*gamma) integer, got {m0}"));
                }
            }
        }
        Ok(())
    }
}

/// Initial condition selector.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    /// Single mode `init_mode` with amplitude `init_amplitude` in u, w = 0.
    PlaneWave { mode: i64, amplitude: f64 },
    /// Fixed smooth two-mode pair scaled by `init_amplitude`.
    TwoMode { amplitude: f64 },
    /// Explicit coefficient lists `init_u` / `init_w` of n:re:im entries.
    Coeffs {
        u: Vec<(i64, Complex64)>,
        w: Vec<(i64, Complex64)>,
    },
    /// Binary snapshot file.
    File { path: String },
}

/// Experiment selector for `estimate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Linear,
    Trilinear,
    Both,
}

/// Everything a run needs, independent of the subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub params: PhysicsParams,
    pub n: usize,
    pub t_final: f64,
    pub dt: f64,
    pub save_every: usize,
    pub init: InitSpec,
    pub seed: u64,
    pub s: f64,
    pub theta: f64,
    pub ensemble_size: usize,
    pub experiment: ExperimentKind,
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            params: PhysicsParams::new(1.0, 2.0, 1.0, 0.0, 1.0),
            n: 128,
            t_final: 1.0,
            dt: 1e-3,
            save_every: 100,
            init: InitSpec::TwoMode { amplitude: 0.5 },
            seed: 0,
            s: 0.5,
            theta: 1.0 / 24.0,
            ensemble_size: 200,
            experiment: ExperimentKind::Both,
            out: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str, line: usize) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config {
        line,
        msg: format!("value {v:?} for key {key} is not valid"),
    })
}

fn parse_coeff_list(v: &str, key: &str, line: usize) -> Result<Vec<(i64, Complex64)>, CliError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|entry| {
            let parts: Vec<&str> = entry.split(':').collect();
            if parts.len() != 3 {
                return Err(CliError::Config {
                    line,
                    msg: format!("{key}: entry {entry:?} is not of the form n:re:im"),
                });
            }
            Ok((
                parse_num::<i64>(parts[0], key, line)?,
                Complex64::new(
                    parse_num::<f64>(parts[1], key, line)?,
                    parse_num::<f64>(parts[2], key, line)?,
                ),
            ))
        })
        .collect()
}

/// Strict parse of the flat key=value format.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    let mut seen: HashSet<String> = HashSet::new();
    let mut explicit_params: HashSet<&'static str> = HashSet::new();
    let mut init_kind: Option<(String, usize)> = None;
    let mut init_mode: Option<i64> = None;
    let mut init_amplitude: Option<f64> = None;
    let mut init_file: Option<String> = None;
    let mut init_u: Vec<(i64, Complex64)> = Vec::new();
    let mut init_w: Vec<(i64, Complex64)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| CliError::Config {
            line,
            msg: format!("expected key=value, got {content:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(CliError::Config {
                line,
                msg: format!("duplicate key {key:?}"),
            });
        }
        match key {
            "preset" => cfg.preset = Some(Preset::parse(value, line)?),
            "q" => {
                cfg.params.q = parse_num(value, key, line)?;
                explicit_params.insert("q");
            }
            "gamma" => {
                cfg.params.gamma = parse_num(value, key, line)?;
                explicit_params.insert("gamma");
            }
            "beta" => {
                cfg.params.beta = parse_num(value, key, line)?;
                explicit_params.insert("beta");
            }
            "mu" => {
                cfg.params.mu = parse_num(value, key, line)?;
                explicit_params.insert("mu");
            }
            "alpha" => {
                cfg.params.alpha = parse_num(value, key, line)?;
                explicit_params.insert("alpha");
            }
            "sigma_alpha" => {
                cfg.params.sigma_alpha = parse_num(value, key, line)?;
                explicit_params.insert("sigma_alpha");
            }
            "sigma_beta" => {
                cfg.params.sigma_beta = parse_num(value, key, line)?;
                explicit_params.insert("sigma_beta");
            }
            "sigma_mu" => {
                cfg.params.sigma_mu = parse_num(value, key, line)?;
                explicit_params.insert("sigma_mu");
            }
            "n" => cfg.n = parse_num(value, key, line)?,
            "t_final" => cfg.t_final = parse_num(value, key, line)?,
            "dt" => cfg.dt = parse_num(value, key, line)?,
            "save_every" => cfg.save_every = parse_num(value, key, line)?,
            "seed" => cfg.seed = parse_num(value, key, line)?,
            "s" => cfg.s = parse_num(value, key, line)?,
            "theta" => cfg.theta = parse_num(value, key, line)?,
            "ensemble_size" => cfg.ensemble_size = parse_num(value, key, line)?,
            "experiment" => {
                cfg.experiment = match value {
                    "linear" => ExperimentKind::Linear,
                    "trilinear" => ExperimentKind::Trilinear,
                    "both" => ExperimentKind::Both,
                    other => {
                        return Err(CliError::Config {
                            line,
                            msg: format!("unknown experiment {other:?}"),
                        })
                    }
                };
            }
            "init" => init_kind = Some((value.to_string(), line)),
            "init_mode" => init_mode = Some(parse_num(value, key, line)?),
            "init_amplitude" => init_amplitude = Some(parse_num(value, key, line)?),
            "init_file" => init_file = Some(value.to_string()),
            "init_u" => init_u = parse_coeff_list(value, key, line)?,
            "init_w" => init_w = parse_coeff_list(value, key, line)?,
            "out" => cfg.out = Some(value.to_string()),
            other => {
                return Err(CliError::Config {
                    line,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
    }

    // Preset base values apply only where no explicit key was given.
    if let Some(preset) = cfg.preset {
        let base = preset.base_params();
        let d = &mut cfg.params;
        if !explicit_params.contains("q") {
            d.q = base.q;
        }
        if !explicit_params.contains("gamma") {
            d.gamma = base.gamma;
        }
        if !explicit_params.contains("beta") {
            d.beta = base.beta;
        }
        if !explicit_params.contains("mu") {
            d.mu = base.mu;
        }
        if !explicit_params.contains("alpha") {
            d.alpha = base.alpha;
        }
        if !explicit_params.contains("sigma_alpha") {
            d.sigma_alpha = base.sigma_alpha;
        }
        if !explicit_params.contains("sigma_beta") {
            d.sigma_beta = base.sigma_beta;
        }
        if !explicit_params.contains("sigma_mu") {
            d.sigma_mu = base.sigma_mu;
        }
        preset.check(&cfg.params).map_err(|msg| CliError::Config { line: 0, msg })?;
    }

    let amplitude = init_amplitude.unwrap_or(0.5);
    cfg.init = match init_kind.as_ref().map(|(v, l)| (v.as_str(), *l)) {
        None | Some(("two_mode", _)) => InitSpec::TwoMode { amplitude },
        Some(("plane_wave", _)) => InitSpec::PlaneWave {
            mode: init_mode.unwrap_or(1),
            amplitude: init_amplitude.unwrap_or(1.0),
        },
        Some(("coeffs", _)) => InitSpec::Coeffs {
            u: init_u,
            w: init_w,
        },
        Some(("file", line)) => {
            let path = init_file.ok_or(CliError::Config {
                line,
                msg: "init = file needs init_file = <path>".into(),
            })?;
            if !std::path::Path::new(&path).exists() {
                return Err(CliError::Config {
                    line,
                    msg: format!("init_file {path:?} does not exist"),
                });
            }
            InitSpec::File { path }
        }
        Some((other, line)) => {
            return Err(CliError::Config {
                line,
                msg: format!("unknown init {other:?}"),
            })
        }
    };

    if cfg.n < 8 || cfg.n % 2 != 0 {
        return Err(CliError::Config {
            line: 0,
            msg: format!("n must be even and at least 8, got {}", cfg.n),
        });
    }
    if !(cfg.dt > 0.0) || !(cfg.t_final > 0.0) || cfg.save_every == 0 {
        return Err(CliError::Config {
            line: 0,
            msg: "dt, t_final must be positive and save_every at least 1".into(),
        });
    }
    Ok(cfg)
}

/// Inverse of [`parse_config`] up to formatting: the output parses back to
/// an equal config.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    if let Some(p) = cfg.preset {
        let _ = writeln!(s, "preset = {}", p.name());
    }
    let p = &cfg.params;
    let _ = writeln!(s, "q = {:e}", p.q);
    let _ = writeln!(s, "gamma = {:e}", p.gamma);
    let _ = writeln!(s, "beta = {:e}", p.beta);
    let _ = writeln!(s, "mu = {:e}", p.mu);
    let _ = writeln!(s, "alpha = {:e}", p.alpha);
    let _ = writeln!(s, "sigma_alpha = {:e}", p.sigma_alpha);
    let _ = writeln!(s, "sigma_beta = {:e}", p.sigma_beta);
    let _ = writeln!(s, "sigma_mu = {:e}", p.sigma_mu);
    let _ = writeln!(s, "n = {}", cfg.n);
    let _ = writeln!(s, "t_final = {:e}", cfg.t_final);
    let _ = writeln!(s, "dt = {:e}", cfg.dt);
    let _ = writeln!(s, "save_every = {}", cfg.save_every);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "s = {:e}", cfg.s);
    let _ = writeln!(s, "theta = {:e}", cfg.theta);
    let _ = writeln!(s, "ensemble_size = {}", cfg.ensemble_size);
    let _ = writeln!(
        s,
        "experiment = {}",
        match cfg.experiment {
            ExperimentKind::Linear => "linear",
            ExperimentKind::Trilinear => "trilinear",
            ExperimentKind::Both => "both",
        }
    );
    match &cfg.init {
        InitSpec::TwoMode { amplitude } => {
            let _ = writeln!(s, "init = two_mode");
            let _ = writeln!(s, "init_amplitude = {amplitude:e}");
        }
        InitSpec::PlaneWave { mode, amplitude } => {
            let _ = writeln!(s, "init = plane_wave");
            let _ = writeln!(s, "init_mode = {mode}");
            let _ = writeln!(s, "init_amplitude = {amplitude:e}");
        }
        InitSpec::Coeffs { u, w } => {
            let _ = writeln!(s, "init = coeffs");
            let fmt = |list: &[(i64, Complex64)]| {
                list.iter()
                    .map(|(n, c)| format!("{n}:{:e}:{:e}", c.re, c.im))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let _ = writeln!(s, "init_u = {}", fmt(u));
            let _ = writeln!(s, "init_w = {}", fmt(w));
        }
        InitSpec::File { path } => {
            let _ = writeln!(s, "init = file");
            let _ = writeln!(s, "init_file = {path}");
        }
    }
    if let Some(out) = &cfg.out {
        let _ = writeln!(s, "out = {out}");
    }
    s
}
