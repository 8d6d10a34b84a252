//! Subcommand implementations and artifact writers.

use std::fs;
use std::path::{Path, PathBuf};

use hons_core::bourgain::{
    self, linear_bound_experiment, spacetime_transform, trilinear_ratio_experiment,
    EstimateConfig, MemberRecord, WindowSpec,
};
use hons_core::dynamics::{evolve, picard_solve, EvolveError, Trajectory};
use hons_core::invariants::{
    self, compute_i1, compute_i2, compute_i2_variant, relative_drift, verify_identities,
};
use hons_core::reference::single_equation_evolve;
use hons_core::{PairState, PeriodicGrid, SpectralField};
use num_complex::Complex64;

use crate::config::{ExperimentKind, InitSpec, RunConfig};
use crate::snapshot::{read_snapshot, write_snapshot};
use crate::CliError;

/// Build the initial pair from the config.
pub fn initial_state(cfg: &RunConfig) -> Result<PairState, CliError> {
    let grid = PeriodicGrid::new(cfg.n)?;
    let state = match &cfg.init {
        InitSpec::PlaneWave { mode, amplitude } => {
            let u = SpectralField::single_mode(grid, *mode, (*amplitude).into())?;
            PairState::new(u, SpectralField::zero(grid), 0.0)?
        }
        InitSpec::TwoMode { amplitude } => {
            let a = *amplitude;
            let mut u = SpectralField::zero(grid);
            let mut w = SpectralField::zero(grid);
            let set = |f: &mut SpectralField, n: i64, c: Complex64| {
                let idx = grid.index_of(n).expect("low modes exist on every grid");
                f.coeffs_mut()[idx] = c;
            };
            set(&mut u, 1, Complex64::from(a));
            set(&mut u, -2, Complex64::new(0.0, 0.5 * a));
            set(&mut w, -1, Complex64::from(0.8 * a));
            set(&mut w, 0, Complex64::new(0.3 * a, 0.0));
            PairState::new(u, w, 0.0)?
        }
        InitSpec::Coeffs { u, w } => {
            let build = |list: &[(i64, Complex64)]| -> Result<SpectralField, CliError> {
                let mut f = SpectralField::zero(grid);
                for (n, c) in list {
                    let idx = grid.index_of(*n).ok_or_else(|| CliError::Config {
                        line: 0,
                        msg: format!("mode {n} does not fit on an N = {} grid", cfg.n),
                    })?;
                    f.coeffs_mut()[idx] = *c;
                }
                Ok(f)
            };
            PairState::new(build(u)?, build(w)?, 0.0)?
        }
        InitSpec::File { path } => {
            let state = read_snapshot(Path::new(path))?;
            if state.grid().n_modes() != cfg.n {
                return Err(CliError::Config {
                    line: 0,
                    msg: format!(
                        "snapshot grid N = {} does not match configured n = {}",
                        state.grid().n_modes(),
                        cfg.n
                    ),
                });
            }
            state
        }
    };
    Ok(state)
}

fn csv_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

/// Fixed-schema diagnostics CSV.
fn diagnostics_csv(traj: &Trajectory) -> Result<String, CliError> {
    let mut out = String::from("t,I1,I2,H0,H1,H2,H3,h1_u,h1_w\n");
    for state in &traj.states {
        let row = invariants::sample(state, &traj.params)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            csv_f(row.time),
            csv_f(row.i1),
            csv_f(row.i2),
            csv_f(row.h[0]),
            csv_f(row.h[1]),
            csv_f(row.h[2]),
            csv_f(row.h[3]),
            csv_f(row.h1_u),
            csv_f(row.h1_w),
        ));
    }
    Ok(out)
}

pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let state0 = initial_state(cfg)?;
    let params = cfg.params.with_c0_from(&state0.u, &state0.w);
    match evolve(&state0, cfg.t_final, cfg.dt, &params, cfg.save_every) {
        Ok(traj) => {
            write_text(out_dir, "diagnostics.csv", &diagnostics_csv(&traj)?)?;
            write_snapshot(traj.last(), &out_dir.join("final.hnls"))?;
            Ok(())
        }
        Err(EvolveError::BlowUp(info)) => {
            // keep what we have, then report the failure
            write_text(out_dir, "diagnostics.csv", &diagnostics_csv(&info.partial)?)?;
            if let Some(last) = info.partial.states.last() {
                write_snapshot(last, &out_dir.join("partial.hnls"))?;
            }
            Err(CliError::BlowUp { time: info.time })
        }
        Err(EvolveError::Other(e)) => Err(e.into()),
    }
}

pub fn cmd_picard(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let state0 = initial_state(cfg)?;
    let params = cfg.params.with_c0_from(&state0.u, &state0.w);
    let n_steps = (cfg.t_final / cfg.dt).round() as usize;
    let nodes = (n_steps + 1).clamp(9, 129);
    let report = picard_solve(&state0, cfg.t_final, nodes, 30, 1e-10, &params)?;
    let mut csv = String::from("iter,contraction_ratio\n");
    for (k, r) in report.contraction_ratios.iter().enumerate() {
        csv.push_str(&format!("{k},{}\n", csv_f(*r)));
    }
    write_text(out_dir, "picard.csv", &csv)?;
    write_text(
        out_dir,
        "picard_summary.txt",
        &format!(
            "converged = {}\nfinal_error = {}\niterations = {}\nnodes = {nodes}\n",
            report.converged,
            csv_f(report.final_error),
            report.iterates.len()
        ),
    )?;
    if !report.converged {
        return Err(CliError::CheckFailed(format!(
            "fixed-point iteration did not contract (final error {:.3e})",
            report.final_error
        )));
    }
    Ok(())
}

pub fn cmd_norms(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let state0 = initial_state(cfg)?;
    let params = cfg.params.with_c0_from(&state0.u, &state0.w);
    let traj = evolve(&state0, cfg.t_final, cfg.dt, &params, cfg.save_every)
        .map_err(evolve_err)?;
    let (su, sw) = spacetime_transform(&traj, WindowSpec::default_tukey(), &params)?;
    let mut csv = String::from("component,x_s_half,z_s_0,y_s,h_s_final\n");
    for (name, spec, field) in [("u", &su, &traj.last().u), ("w", &sw, &traj.last().w)] {
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            csv_f(bourgain::xsb_norm(spec, cfg.s, 0.5)),
            csv_f(bourgain::zs_norm(spec, cfg.s)),
            csv_f(bourgain::ys_norm(spec, cfg.s)),
            csv_f(field.hs_norm(cfg.s)),
        ));
    }
    write_text(out_dir, "norms.csv", &csv)?;
    Ok(())
}

fn evolve_err(e: EvolveError) -> CliError {
    match e {
        EvolveError::BlowUp(info) => CliError::BlowUp { time: info.time },
        EvolveError::Other(err) => err.into(),
    }
}

struct CheckTable {
    rows: Vec<(String, f64, Option<f64>, bool)>,
}

impl CheckTable {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn check(&mut self, name: &str, value: f64, threshold: f64) {
        self.rows
            .push((name.to_string(), value, Some(threshold), value <= threshold));
    }

    fn info(&mut self, name: &str, value: f64) {
        self.rows.push((name.to_string(), value, None, true));
    }

    fn csv(&self) -> String {
        let mut out = String::from("check,value,threshold,status\n");
        for (name, value, threshold, ok) in &self.rows {
            let status = match (threshold, ok) {
                (None, _) => "info",
                (Some(_), true) => "pass",
                (Some(_), false) => "fail",
            };
            out.push_str(&format!(
                "{name},{},{},{status}\n",
                csv_f(*value),
                threshold.map(csv_f).unwrap_or_default(),
            ));
        }
        out
    }

    fn failures(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter(|(_, _, t, ok)| t.is_some() && !ok)
            .map(|(name, value, _, _)| format!("{name} = {value:.3e}"))
            .collect()
    }
}

/// Invariant / identity / oracle audit of one run.
pub fn cmd_verify(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let state0 = initial_state(cfg)?;
    let params = cfg.params.with_c0_from(&state0.u, &state0.w);
    let traj = evolve(&state0, cfg.t_final, cfg.dt, &params, cfg.save_every)
        .map_err(evolve_err)?;
    let mut table = CheckTable::new();

    let i1: Vec<f64> = traj.states.iter().map(compute_i1).collect();
    table.check("i1_drift", relative_drift(&i1, 1.0), 1e-9);

    let mut i2 = Vec::new();
    for s in &traj.states {
        i2.push(compute_i2(s, &params)?); // errors if the residue blows the contract
    }
    table.info("i2_drift", relative_drift(&i2, 1.0));

    if params.symmetric_sigmas() {
        let variant: Vec<f64> = traj
            .states
            .iter()
            .map(|s| compute_i2_variant(s, &params))
            .collect::<Result<_, _>>()?;
        // the variant is a constant of motion for mu != 0; at mu = 0 only
        // under q*beta = 3*gamma*alpha
        let variant_conserved = params.mu != 0.0
            || (params.q * params.beta - 3.0 * params.gamma * params.alpha).abs()
                <= 1e-12 * (1.0 + params.q.abs() + params.gamma.abs());
        if variant_conserved {
            table.check("i2_variant_drift", relative_drift(&variant, 1.0), 1e-8);
        } else {
            table.info("i2_variant_drift", relative_drift(&variant, 1.0));
        }

        // balance identities need dense snapshots: rerun a short window
        let short = evolve(&state0, (20.0 * cfg.dt).min(cfg.t_final), cfg.dt, &params, 1)
            .map_err(evolve_err)?;
        let report = verify_identities(&short, &params)?;
        for (i, r) in report.residuals.iter().enumerate() {
            table.check(&format!("identity_residual_{i}"), *r, 1e-3);
        }
        table.info("identity_combination_residual", report.combination_residual);
    }

    if state0.w.max_coeff_abs() == 0.0 {
        let oracle = single_equation_evolve(&state0.u, cfg.t_final, cfg.dt, &params)?;
        let diff = traj.last().u.sub(&oracle)?.hs_norm(0.0);
        table.check("scalar_reduction_mismatch", diff, 1e-9);
        table.check("w_stays_zero", traj.last().w.max_coeff_abs(), 1e-14);
    }

    write_text(out_dir, "verify.csv", &table.csv())?;
    let failures = table.failures();
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(failures.join("; ")))
    }
}

fn records_csv(records: &[MemberRecord]) -> String {
    let mut out = String::from("member_id,lhs,rhs,ratio\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.member_id,
            csv_f(r.lhs),
            csv_f(r.rhs),
            csv_f(r.ratio)
        ));
    }
    out
}

pub fn cmd_estimate(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let econf = EstimateConfig::new(cfg.s, cfg.theta, cfg.ensemble_size, cfg.seed);
    let mut summary = String::from("experiment,n_modes,max_ratio,median_ratio,skipped\n");

    if matches!(cfg.experiment, ExperimentKind::Linear | ExperimentKind::Both) {
        let report = linear_bound_experiment(&econf, &cfg.params)?;
        for stats in &report.per_resolution {
            write_text(
                out_dir,
                &format!("linear_n{}.csv", stats.n_modes),
                &records_csv(&stats.records),
            )?;
            summary.push_str(&format!(
                "linear,{},{},{},{}\n",
                stats.n_modes,
                csv_f(stats.max_ratio),
                csv_f(stats.median_ratio),
                stats.skipped
            ));
        }
    }

    if matches!(cfg.experiment, ExperimentKind::Trilinear | ExperimentKind::Both) {
        for n_modes in [32usize, 64] {
            let stats = trilinear_ratio_experiment(&econf, &cfg.params, n_modes)?;
            write_text(
                out_dir,
                &format!("trilinear_n{n_modes}.csv"),
                &records_csv(&stats.records),
            )?;
            summary.push_str(&format!(
                "trilinear,{n_modes},{},{},{}\n",
                csv_f(stats.max_ratio),
                csv_f(stats.median_ratio),
                stats.skipped
            ));
        }
    }

    write_text(out_dir, "summary.csv", &summary)?;
    Ok(())
}
