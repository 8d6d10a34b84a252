//! Space-time restriction norms and empirical estimate experiments.
//!
//! A trajectory on a finite time window is mapped to coefficients
//! f̃(n, τ) by a windowed DFT in t on top of the spatial Fourier series.
//! On those coefficients we evaluate
//!
//! ```text
//! X_{s,b}:  ( Σ_n ∫ |⟨n⟩^s ⟨q_+(n,τ)⟩^b f̃(n,τ)|² dτ )^{1/2}
//! Z_{s,0}:  ( Σ_n ( ⟨n⟩^s ∫ |f̃(n,τ)| dτ )² )^{1/2}
//! Y_s:      X_{s,1/2} + Z_{s,0}
//! ```
//!
//! with q_+(n,τ) = τ - (γ/2)n³ + (q/2)n² + c0 n, the modulation distance
//! to the dispersion curve.  τ-integrals are trapezoid sums over the
//! window's discrete dual frequencies; the window is fixed (Tukey, flat
//! on the central half) so values are comparable across runs.
//!
//! The two experiment drivers measure, over seeded random ensembles, the
//! ratios behind the linear bound ‖windowed free evolution‖_{Y_s} ≤
//! c‖u0‖_{H^s} and the trilinear bound ‖G1(u,w)‖ ≤ c·f(u,w).  They
//! report statistics; the only assertions made downstream are about
//! boundedness under resolution doubling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dispersion::{bracket, phase, q_plus, require_nonresonant, require_restricted};
use crate::dynamics::{eval_g, Trajectory};
use crate::grid::{fft_in_place, PairState, PeriodicGrid, SpectralField, TWO_PI};
use crate::{Error, PhysicsParams, Result};

/// H^s norm of a spatial field (free-function form of
/// [`SpectralField::hs_norm`]).
pub fn hs_norm(field: &SpectralField, s: f64) -> f64 {
    field.hs_norm(s)
}

/// Time window applied before the DFT in t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WindowSpec {
    Rectangular,
    /// Raised-cosine tapers; `flat_fraction` of the window is identically 1.
    Tukey { flat_fraction: f64 },
}

impl WindowSpec {
    /// The default window used by every experiment here.
    pub fn default_tukey() -> Self {
        WindowSpec::Tukey { flat_fraction: 0.5 }
    }

    /// Pointwise weights for a window of `m` samples.
    pub fn weights(&self, m: usize) -> Vec<f64> {
        match *self {
            WindowSpec::Rectangular => vec![1.0; m],
            WindowSpec::Tukey { flat_fraction } => {
                let alpha = (1.0 - flat_fraction).clamp(0.0, 1.0);
                let edge = alpha * (m as f64 - 1.0) / 2.0;
                (0..m)
                    .map(|j| {
                        let j = j as f64;
                        let d = j.min(m as f64 - 1.0 - j);
                        if d >= edge || alpha == 0.0 {
                            1.0
                        } else {
                            0.5 * (1.0 + (std::f64::consts::PI * (d / edge - 1.0)).cos())
                        }
                    })
                    .collect()
            }
        }
    }
}

/// Windowed space-time Fourier coefficients of one component,
/// `coeffs[n_index][m_index]` with centered wavenumbers and centered
/// uniform τ bins of spacing `dtau` = 2π / (window length).
#[derive(Debug, Clone)]
pub struct SpaceTimeSpectrum {
    pub params: PhysicsParams,
    pub window: WindowSpec,
    pub grid: PeriodicGrid,
    pub tau_values: Vec<f64>,
    pub dtau: f64,
    pub coeffs: Vec<Vec<Complex64>>,
}

impl SpaceTimeSpectrum {
    fn zero(
        grid: PeriodicGrid,
        n_tau: usize,
        dtau: f64,
        window: WindowSpec,
        params: PhysicsParams,
    ) -> Self {
        let half = (n_tau / 2) as f64;
        Self {
            params,
            window,
            grid,
            tau_values: (0..n_tau).map(|m| (m as f64 - half) * dtau).collect(),
            dtau,
            coeffs: vec![vec![Complex64::default(); n_tau]; grid.n_modes()],
        }
    }

    pub fn n_tau(&self) -> usize {
        self.tau_values.len()
    }

    /// Multiply every coefficient by `factor` (homogeneity checks).
    pub fn scaled(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        for row in &mut out.coeffs {
            for c in row.iter_mut() {
                *c *= factor;
            }
        }
        out
    }
}

/// Trapezoid rule over the uniform τ bins.
fn trapz(values: &[f64], dtau: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    dtau * (inner + 0.5 * (values[0] + values[values.len() - 1]))
}

/// Windowed DFT in time of both trajectory components.
///
/// f̃(n, τ_m) = dt Σ_j window_j û(n, t_j) e^{-i τ_m t_j}, the Riemann-sum
/// discretization of the continuous transform on the window.
pub fn spacetime_transform(
    traj: &Trajectory,
    window: WindowSpec,
    params: &PhysicsParams,
) -> Result<(SpaceTimeSpectrum, SpaceTimeSpectrum)> {
    let m = traj.states.len();
    if m < 8 {
        return Err(Error::InvalidArgument(format!(
            "trajectory has {m} snapshots; the time window needs at least 8"
        )));
    }
    let grid = traj.grid();
    let dt = traj.dt();
    let dtau = TWO_PI / (m as f64 * dt);
    let weights = window.weights(m);
    let t0 = traj.times[0];

    let mut out_u = SpaceTimeSpectrum::zero(grid, m, dtau, window, *params);
    let mut out_w = SpaceTimeSpectrum::zero(grid, m, dtau, window, *params);
    let mut buf = vec![Complex64::default(); m];
    for (which, out) in [&mut out_u, &mut out_w].into_iter().enumerate() {
        for i in 0..grid.n_modes() {
            for (j, state) in traj.states.iter().enumerate() {
                let field = if which == 0 { &state.u } else { &state.w };
                buf[j] = weights[j] * field.coeffs()[i];
            }
            fft_in_place(&mut buf, true);
            // FFT bin k holds τ index k mod m; reorder to centered and
            // restore the t0 reference phase.
            for m_idx in 0..m {
                let k = (m_idx + m / 2) % m;
                let tau = out.tau_values[m_idx];
                out.coeffs[i][m_idx] = dt * buf[k] * (-Complex64::i() * tau * t0).exp();
            }
        }
    }
    Ok((out_u, out_w))
}

/// ‖⟨n⟩^s ⟨q_+⟩^b f̃‖ in ℓ²_n L²_τ.
pub fn xsb_norm(spec: &SpaceTimeSpectrum, s: f64, b: f64) -> f64 {
    let mut total = 0.0;
    let mut row = vec![0.0; spec.n_tau()];
    for i in 0..spec.grid.n_modes() {
        let n = spec.grid.wavenumber_at(i);
        let ns = bracket(n as f64).powf(2.0 * s);
        for (m_idx, tau) in spec.tau_values.iter().enumerate() {
            let w = bracket(q_plus(n, *tau, &spec.params)).powf(2.0 * b);
            row[m_idx] = w * spec.coeffs[i][m_idx].norm_sqr();
        }
        total += ns * trapz(&row, spec.dtau);
    }
    total.sqrt()
}

/// ‖⟨n⟩^s f̃‖ in ℓ²_n L¹_τ.
pub fn zs_norm(spec: &SpaceTimeSpectrum, s: f64) -> f64 {
    let mut total = 0.0;
    let mut row = vec![0.0; spec.n_tau()];
    for i in 0..spec.grid.n_modes() {
        let n = spec.grid.wavenumber_at(i);
        let ns = bracket(n as f64).powf(s);
        for (m_idx, c) in spec.coeffs[i].iter().enumerate() {
            row[m_idx] = c.norm();
        }
        let l1 = ns * trapz(&row, spec.dtau);
        total += l1 * l1;
    }
    total.sqrt()
}

/// Y_s = X_{s,1/2} + Z_{s,0}.
pub fn ys_norm(spec: &SpaceTimeSpectrum, s: f64) -> f64 {
    xsb_norm(spec, s, 0.5) + zs_norm(spec, s)
}

/// The (1, s, -1/2) norm, ( Σ_n ⟨n⟩^{2s} ∫ |f̃|²/⟨q_+⟩ dτ )^{1/2}.
pub fn neg_half_norm(spec: &SpaceTimeSpectrum, s: f64) -> f64 {
    let mut total = 0.0;
    let mut row = vec![0.0; spec.n_tau()];
    for i in 0..spec.grid.n_modes() {
        let n = spec.grid.wavenumber_at(i);
        let ns = bracket(n as f64).powf(2.0 * s);
        for (m_idx, tau) in spec.tau_values.iter().enumerate() {
            row[m_idx] =
                spec.coeffs[i][m_idx].norm_sqr() / bracket(q_plus(n, *tau, &spec.params));
        }
        total += ns * trapz(&row, spec.dtau);
    }
    total.sqrt()
}

/// The ⟨q_+⟩^{-1}-weighted L¹_τ left-hand side,
/// ( Σ_n ⟨n⟩^{2s} ( ∫ |f̃|/⟨q_+⟩ dτ )² )^{1/2}.
pub fn l1_weighted_lhs(spec: &SpaceTimeSpectrum, s: f64) -> f64 {
    let mut total = 0.0;
    let mut row = vec![0.0; spec.n_tau()];
    for i in 0..spec.grid.n_modes() {
        let n = spec.grid.wavenumber_at(i);
        let ns = bracket(n as f64).powf(2.0 * s);
        for (m_idx, tau) in spec.tau_values.iter().enumerate() {
            row[m_idx] = spec.coeffs[i][m_idx].norm() / bracket(q_plus(n, *tau, &spec.params));
        }
        let l1 = trapz(&row, spec.dtau);
        total += ns * l1 * l1;
    }
    total.sqrt()
}

/// Parameters of the estimate experiments.
#[derive(Debug, Clone, Copy)]
pub struct EstimateConfig {
    pub s: f64,
    pub b: f64,
    /// Modulation loss in the trilinear bound; must lie in (0, 1/12).
    pub theta: f64,
    pub ensemble_size: usize,
    pub seed: u64,
}

impl EstimateConfig {
    pub fn new(s: f64, theta: f64, ensemble_size: usize, seed: u64) -> Self {
        Self {
            s,
            b: 0.5,
            theta,
            ensemble_size,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s >= 0.5) {
            return Err(Error::InvalidArgument(format!("s = {} < 1/2", self.s)));
        }
        if !(self.theta > 0.0 && self.theta < 1.0 / 12.0) {
            return Err(Error::InvalidArgument(format!(
                "theta = {} outside (0, 1/12)",
                self.theta
            )));
        }
        if self.ensemble_size == 0 {
            return Err(Error::InvalidArgument("empty ensemble".into()));
        }
        Ok(())
    }
}

/// One ensemble member's measurement.
#[derive(Debug, Clone, Copy)]
pub struct MemberRecord {
    pub member_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Ratio statistics at one spatial resolution.
#[derive(Debug, Clone)]
pub struct ResolutionStats {
    pub n_modes: usize,
    pub records: Vec<MemberRecord>,
    pub skipped: usize,
    pub max_ratio: f64,
    pub median_ratio: f64,
}

fn stats_from(n_modes: usize, records: Vec<MemberRecord>, skipped: usize) -> ResolutionStats {
    let mut ratios: Vec<f64> = records.iter().map(|r| r.ratio).collect();
    ratios.sort_by(|a, b| a.total_cmp(b));
    let max_ratio = ratios.last().copied().unwrap_or(0.0);
    let median_ratio = if ratios.is_empty() {
        0.0
    } else {
        ratios[ratios.len() / 2]
    };
    ResolutionStats {
        n_modes,
        records,
        skipped,
        max_ratio,
        median_ratio,
    }
}

/// Deterministic per-(seed, member, mode) stream selector.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Rayon pool sized by the `HONS_THREADS` environment variable when set.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("HONS_THREADS") {
        let n: usize = v.parse().map_err(|_| {
            Error::InvalidArgument(format!("HONS_THREADS = {v:?} is not a positive integer"))
        })?;
        if n == 0 {
            return Err(Error::InvalidArgument("HONS_THREADS must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::Inconsistency(format!("thread pool: {e}")))
}

/// Report of [`linear_bound_experiment`].
#[derive(Debug, Clone)]
pub struct LinearBoundReport {
    pub per_resolution: Vec<ResolutionStats>,
    /// max-ratio quotients between consecutive resolutions.
    pub growth_factors: Vec<f64>,
}

const LINEAR_RESOLUTIONS: [(usize, usize); 3] = [(32, 512), (64, 4096), (128, 32768)];
const LINEAR_WINDOW_LEN: f64 = 2.0;

/// Ratio ‖windowed free evolution of u0‖_{Y_s} / ‖u0‖_{H^s} over a seeded
/// ensemble of band-limited random data, at N ∈ {32, 64, 128}.
///
/// The free evolution is diagonal in n, so each mode's time series is
/// transformed and accumulated independently; no full space-time array is
/// materialized.
pub fn linear_bound_experiment(
    config: &EstimateConfig,
    params: &PhysicsParams,
) -> Result<LinearBoundReport> {
    config.validate()?;
    let pool = thread_pool()?;
    let window = WindowSpec::default_tukey();
    let mut per_resolution = Vec::new();
    for (n_modes, m) in LINEAR_RESOLUTIONS {
        let grid = PeriodicGrid::new(n_modes)?;
        let dt = LINEAR_WINDOW_LEN / m as f64;
        let dtau = TWO_PI / LINEAR_WINDOW_LEN;
        let weights = window.weights(m);
        let records: Vec<MemberRecord> = pool.install(|| {
            (0..config.ensemble_size)
                .into_par_iter()
                .map(|member| {
                    // Draws are keyed per mode so coarse-resolution data
                    // embeds into fine-resolution data for the same member.
                    let band = n_modes as i64 / 4;
                    let mut hs_sq = 0.0;
                    let mut x_sq = 0.0;
                    let mut z_sq = 0.0;
                    let mut buf = vec![Complex64::default(); m];
                    let mut row = vec![0.0; m];
                    for n in -band..=band {
                        let mut rng =
                            ChaCha8Rng::seed_from_u64(mix(config.seed, member as u64, (n + 512) as u64));
                        let amp = bracket(n as f64).powf(-config.s - 0.5);
                        let theta = TWO_PI * rng.gen::<f64>();
                        let c0 = amp * (Complex64::i() * theta).exp();
                        hs_sq += TWO_PI * bracket(n as f64).powf(2.0 * config.s) * c0.norm_sqr();
                        let ph = phase(n, params);
                        for j in 0..m {
                            let t = j as f64 * dt;
                            buf[j] = weights[j] * c0 * (Complex64::i() * t * ph).exp();
                        }
                        fft_in_place(&mut buf, true);
                        let ns2 = bracket(n as f64).powf(2.0 * config.s);
                        for m_idx in 0..m {
                            let k = (m_idx + m / 2) % m;
                            let tau = (m_idx as f64 - (m / 2) as f64) * dtau;
                            let f_abs = dt * buf[k].norm();
                            row[m_idx] = bracket(q_plus(n, tau, params)) * f_abs * f_abs;
                        }
                        x_sq += ns2 * trapz(&row, dtau);
                        for m_idx in 0..m {
                            let k = (m_idx + m / 2) % m;
                            row[m_idx] = dt * buf[k].norm();
                        }
                        let l1 = bracket(n as f64).powf(config.s) * trapz(&row, dtau);
                        z_sq += l1 * l1;
                    }
                    let lhs = x_sq.sqrt() + z_sq.sqrt();
                    let rhs = hs_sq.sqrt();
                    MemberRecord {
                        member_id: member,
                        lhs,
                        rhs,
                        ratio: lhs / rhs,
                    }
                })
                .collect()
        });
        per_resolution.push(stats_from(grid.n_modes(), records, 0));
    }
    let growth_factors = per_resolution
        .windows(2)
        .map(|w| w[1].max_ratio / w[0].max_ratio)
        .collect();
    Ok(LinearBoundReport {
        per_resolution,
        growth_factors,
    })
}

/// τ-bin count and spacing of the trilinear ensembles.
pub const TRILINEAR_TAU_BINS: usize = 128;
pub const TRILINEAR_DTAU: f64 = 2.0;

/// Random space-time member with |f̃(n,τ)| = ⟨n⟩^{-s-1/2}⟨q_+(n,τ)⟩^{-1}
/// and uniform phases — finite Y_s by construction.  The edge bins
/// (n = -N/2 and the lowest τ bin) stay zero.
pub fn draw_spacetime_member(
    grid: PeriodicGrid,
    config: &EstimateConfig,
    params: &PhysicsParams,
    member: usize,
    component: u64,
) -> SpaceTimeSpectrum {
    let m = TRILINEAR_TAU_BINS;
    let mut spec = SpaceTimeSpectrum::zero(
        grid,
        m,
        TRILINEAR_DTAU,
        WindowSpec::default_tukey(),
        *params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(mix(
        config.seed,
        member as u64,
        component.wrapping_mul(0x3c79ac492ba7b653),
    ));
    for i in 1..grid.n_modes() {
        let n = grid.wavenumber_at(i);
        let ns = bracket(n as f64).powf(-config.s - 0.5);
        for m_idx in 1..m {
            let tau = spec.tau_values[m_idx];
            let amp = ns / bracket(q_plus(n, tau, params));
            let theta = TWO_PI * rng.gen::<f64>();
            spec.coeffs[i][m_idx] = amp * (Complex64::i() * theta).exp();
        }
    }
    spec
}

/// The right-hand side f(u,w) of the trilinear bound:
///
/// ```text
/// f = (X_{s,1/2-θ}(u)² + X_{s,1/2-θ}(w)²) X_{s,1/2}(u)
///   + X_{s,1/2-θ}(u) X_{s,1/2-θ}(w) X_{s,1/2}(u)
///   + (Z_{1/2,0}(u)² + Z_{1/2,0}(w)²) X_{s,0}(u)
///   + Z_{1/2,0}(u) Z_{1/2,0}(w) X_{s,0}(u)
/// ```
pub fn trilinear_rhs(
    spec_u: &SpaceTimeSpectrum,
    spec_w: &SpaceTimeSpectrum,
    config: &EstimateConfig,
) -> f64 {
    let s = config.s;
    let bt = 0.5 - config.theta;
    let xt_u = xsb_norm(spec_u, s, bt);
    let xt_w = xsb_norm(spec_w, s, bt);
    let xh_u = xsb_norm(spec_u, s, 0.5);
    let x0_u = xsb_norm(spec_u, s, 0.0);
    let z_u = zs_norm(spec_u, 0.5);
    let z_w = zs_norm(spec_w, 0.5);
    (xt_u * xt_u + xt_w * xt_w) * xh_u + xt_u * xt_w * xh_u
        + (z_u * z_u + z_w * z_w) * x0_u
        + z_u * z_w * x0_u
}

/// Space-time coefficients of G1(u,w) for a pair of member spectra.
///
/// Inverse τ-DFT onto a doubled time grid (2M samples), slice-wise
/// spatial evaluation of G1 with the usual 2N dealiasing, then a forward
/// DFT truncated back to the central M τ bins.  The doubled sampling
/// keeps every retained bin alias-free for the cubic nonlinearity, since
/// the member's τ band is at most M/2 - 1.
pub fn trilinear_g1_spectrum(
    spec_u: &SpaceTimeSpectrum,
    spec_w: &SpaceTimeSpectrum,
    params: &PhysicsParams,
) -> Result<SpaceTimeSpectrum> {
    let grid = spec_u.grid;
    let m = spec_u.n_tau();
    let m2 = 2 * m;
    // dtau = 2π/(M dt) with dt the notional slice spacing, so the
    // refined spacing is half of 2π/(M dtau).
    let dt2 = TWO_PI / (m as f64 * spec_u.dtau) / 2.0;

    // Inverse transform u(n, t_j) = (dtau/2π) Σ_m f̃(n,τ_m) e^{i τ_m t_j}.
    let inv_scale = spec_u.dtau / TWO_PI;
    let mut samples_u = vec![vec![Complex64::default(); m2]; grid.n_modes()];
    let mut samples_w = vec![vec![Complex64::default(); m2]; grid.n_modes()];
    for (spec, samples) in [(spec_u, &mut samples_u), (spec_w, &mut samples_w)] {
        for i in 0..grid.n_modes() {
            let mut buf = vec![Complex64::default(); m2];
            for m_idx in 0..m {
                let tau_bin = m_idx as i64 - (m / 2) as i64;
                let k = tau_bin.rem_euclid(m2 as i64) as usize;
                buf[k] = spec.coeffs[i][m_idx];
            }
            fft_in_place(&mut buf, false);
            for j in 0..m2 {
                samples[i][j] = inv_scale * buf[j];
            }
        }
    }

    // Slice-wise spatial G1.
    let mut g_rows = vec![vec![Complex64::default(); m2]; grid.n_modes()];
    for j in 0..m2 {
        let u = SpectralField::from_coeffs(
            grid,
            (0..grid.n_modes()).map(|i| samples_u[i][j]).collect(),
        )?;
        let w = SpectralField::from_coeffs(
            grid,
            (0..grid.n_modes()).map(|i| samples_w[i][j]).collect(),
        )?;
        let state = PairState::new(u, w, 0.0)?;
        let (g_u, _) = eval_g(&state, params)?;
        for i in 0..grid.n_modes() {
            g_rows[i][j] = g_u.coeffs()[i];
        }
    }

    // Forward transform with the doubled grid, truncated to M bins.
    let mut out = SpaceTimeSpectrum::zero(grid, m, spec_u.dtau, spec_u.window, *params);
    for i in 0..grid.n_modes() {
        let mut buf = std::mem::take(&mut g_rows[i]);
        fft_in_place(&mut buf, true);
        for m_idx in 0..m {
            let tau_bin = m_idx as i64 - (m / 2) as i64;
            let k = tau_bin.rem_euclid(m2 as i64) as usize;
            out.coeffs[i][m_idx] = dt2 * buf[k];
        }
    }
    Ok(out)
}

/// Left-hand sides and right-hand side for one member pair; `None` when
/// the bound f(u,w) vanishes (degenerate member, skipped and counted).
pub fn trilinear_member(
    spec_u: &SpaceTimeSpectrum,
    spec_w: &SpaceTimeSpectrum,
    config: &EstimateConfig,
    params: &PhysicsParams,
) -> Result<Option<(f64, f64, f64)>> {
    let rhs = trilinear_rhs(spec_u, spec_w, config);
    if rhs == 0.0 {
        return Ok(None);
    }
    let g1 = trilinear_g1_spectrum(spec_u, spec_w, params)?;
    let lhs_l1 = l1_weighted_lhs(&g1, config.s);
    let lhs_half = neg_half_norm(&g1, config.s);
    Ok(Some((lhs_l1, lhs_half, rhs)))
}

/// Report of [`trilinear_ratio_experiment`] at one resolution.
pub type TrilinearReport = ResolutionStats;

/// Ratio ‖G1(u,w)‖ / f(u,w) over a seeded ensemble of random space-time
/// data; the recorded lhs is the larger of the two measured left-hand
/// sides.  Requires the restricted-nonlinearity condition (β+μ) = βσ_β
/// and q/3 ∉ ℤ.
pub fn trilinear_ratio_experiment(
    config: &EstimateConfig,
    params: &PhysicsParams,
    n_modes: usize,
) -> Result<TrilinearReport> {
    config.validate()?;
    require_restricted(params)?;
    require_nonresonant(params)?;
    let grid = PeriodicGrid::new(n_modes)?;
    let pool = thread_pool()?;
    let results: Vec<Result<Option<(f64, f64, f64)>>> = pool.install(|| {
        (0..config.ensemble_size)
            .into_par_iter()
            .map(|member| {
                let spec_u = draw_spacetime_member(grid, config, params, member, 0);
                let spec_w = draw_spacetime_member(grid, config, params, member, 1);
                trilinear_member(&spec_u, &spec_w, config, params)
            })
            .collect()
    });
    let mut records = Vec::new();
    let mut skipped = 0;
    for (member, res) in results.into_iter().enumerate() {
        match res? {
            None => skipped += 1,
            Some((lhs_l1, lhs_half, rhs)) => {
                let lhs = lhs_l1.max(lhs_half);
                records.push(MemberRecord {
                    member_id: member,
                    lhs,
                    rhs,
                    ratio: lhs / rhs,
                });
            }
        }
    }
    Ok(stats_from(grid.n_modes(), records, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::apply_linear;
    use crate::grid::SpectralField;
    use approx::assert_abs_diff_eq;

    fn default_params() -> PhysicsParams {
        PhysicsParams::new(1.0, 2.0, 1.0, 0.0, 1.0)
    }

    fn unit_entry_spectrum(n: i64, tau_target: f64) -> SpaceTimeSpectrum {
        let grid = PeriodicGrid::new(16).unwrap();
        let params = default_params();
        let mut spec = SpaceTimeSpectrum::zero(grid, 32, 0.25, WindowSpec::Rectangular, params);
        let m_idx = spec
            .tau_values
            .iter()
            .position(|t| (t - tau_target).abs() < 0.5 * spec.dtau)
            .unwrap();
        spec.coeffs[grid.index_of(n).unwrap()][m_idx] = Complex64::from(1.0);
        spec
    }

    #[test]
    fn window_shapes() {
        let w = WindowSpec::default_tukey().weights(64);
        assert_abs_diff_eq!(w[32], 1.0, epsilon = 1e-15);
        assert!(w[0] < 1e-10);
        assert!(w[1] < w[8]);
        assert_abs_diff_eq!(w[20], 1.0, epsilon = 1e-15); // flat central half
        let r = WindowSpec::Rectangular.weights(16);
        assert!(r.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn norms_of_single_entry() {
        // unit entry exactly on the dispersion curve at n=1: modulation
        // weight is 1, so X_{s,b} = ⟨1⟩^s sqrt(dtau) for every b.
        let params = default_params();
        let spec = unit_entry_spectrum(1, crate::dispersion::phase(1, &params));
        let expect = 2.0f64.powf(0.25) * spec.dtau.sqrt();
        assert_abs_diff_eq!(xsb_norm(&spec, 0.5, 0.5), expect, epsilon = 1e-10);
        assert_abs_diff_eq!(xsb_norm(&spec, 0.5, 0.0), expect, epsilon = 1e-10);
        assert_abs_diff_eq!(zs_norm(&spec, 0.5), 2.0f64.powf(0.25) * spec.dtau, epsilon = 1e-10);
        assert_abs_diff_eq!(
            ys_norm(&spec, 0.5),
            xsb_norm(&spec, 0.5, 0.5) + zs_norm(&spec, 0.5),
            epsilon = 1e-12
        );
    }

    #[test]
    fn zero_spectrum_has_zero_norms() {
        let grid = PeriodicGrid::new(16).unwrap();
        let spec = SpaceTimeSpectrum::zero(grid, 16, 0.5, WindowSpec::Rectangular, default_params());
        assert_eq!(xsb_norm(&spec, 0.5, 0.5), 0.0);
        assert_eq!(zs_norm(&spec, 0.5), 0.0);
        assert_eq!(neg_half_norm(&spec, 0.5), 0.0);
        assert_eq!(l1_weighted_lhs(&spec, 0.5), 0.0);
    }

    #[test]
    fn modulation_weight_orders_norms() {
        let config = EstimateConfig::new(0.5, 1.0 / 24.0, 1, 7);
        let grid = PeriodicGrid::new(16).unwrap();
        let spec = draw_spacetime_member(grid, &config, &default_params(), 0, 0);
        assert!(xsb_norm(&spec, 0.5, 0.5) >= xsb_norm(&spec, 0.5, 0.0));
        assert!(ys_norm(&spec, 0.5) >= xsb_norm(&spec, 0.5, 0.5));
        assert!(neg_half_norm(&spec, 0.5) <= xsb_norm(&spec, 0.5, 0.0));
    }

    #[test]
    fn frobenius_sanity_for_unit_weights() {
        // with s = b = 0 and no energy in the edge τ bins, the norm is
        // the Frobenius norm scaled by sqrt(dtau)
        let config = EstimateConfig::new(0.5, 1.0 / 24.0, 1, 3);
        let grid = PeriodicGrid::new(16).unwrap();
        let mut spec = draw_spacetime_member(grid, &config, &default_params(), 0, 0);
        let m = spec.n_tau();
        for row in &mut spec.coeffs {
            row[0] = Complex64::default();
            row[m - 1] = Complex64::default();
        }
        let frob_sq: f64 = spec
            .coeffs
            .iter()
            .flat_map(|row| row.iter().map(|c| c.norm_sqr()))
            .sum();
        assert_abs_diff_eq!(
            xsb_norm(&spec, 0.0, 0.0),
            (frob_sq * spec.dtau).sqrt(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn transform_of_constant_single_mode() {
        // rectangular window, constant trajectory: everything sits in the
        // τ = 0 bin with value dt·M = window length
        let grid = PeriodicGrid::new(16).unwrap();
        let params = default_params();
        let u = SpectralField::single_mode(grid, 2, Complex64::new(0.7, 0.1)).unwrap();
        let state = PairState::new(u, SpectralField::zero(grid), 0.0).unwrap();
        let m = 32;
        let dt = 0.1;
        let traj = Trajectory {
            params,
            times: (0..m).map(|j| j as f64 * dt).collect(),
            states: (0..m).map(|_| state.clone()).collect(),
        };
        let (su, sw) = spacetime_transform(&traj, WindowSpec::Rectangular, &params).unwrap();
        let i2 = grid.index_of(2).unwrap();
        for (m_idx, tau) in su.tau_values.iter().enumerate() {
            let expect = if *tau == 0.0 {
                Complex64::new(0.7, 0.1) * (m as f64 * dt)
            } else {
                Complex64::default()
            };
            assert_abs_diff_eq!((su.coeffs[i2][m_idx] - expect).norm(), 0.0, epsilon = 1e-12);
        }
        assert!(sw.coeffs.iter().flatten().all(|c| c.norm() == 0.0));
        // short trajectories are rejected
        let short = Trajectory {
            params,
            times: traj.times[..4].to_vec(),
            states: traj.states[..4].to_vec(),
        };
        assert!(spacetime_transform(&short, WindowSpec::Rectangular, &params).is_err());
    }

    #[test]
    fn free_evolution_concentrates_on_the_dispersion_curve() {
        let grid = PeriodicGrid::new(16).unwrap();
        let params = default_params();
        let mut u = SpectralField::zero(grid);
        *u.coeffs_mut().get_mut(grid.index_of(1).unwrap()).unwrap() = Complex64::from(1.0);
        *u.coeffs_mut().get_mut(grid.index_of(3).unwrap()).unwrap() = Complex64::from(0.5);
        let state0 = PairState::new(u, SpectralField::zero(grid), 0.0).unwrap();
        let m = 64;
        let dt = 0.05;
        let mut states = vec![state0.clone()];
        for j in 1..m {
            let mut s = apply_linear(&state0, j as f64 * dt, &params);
            s.time = j as f64 * dt;
            states.push(s);
        }
        let traj = Trajectory {
            params,
            times: (0..m).map(|j| j as f64 * dt).collect(),
            states,
        };
        let (su, _) = spacetime_transform(&traj, WindowSpec::default_tukey(), &params).unwrap();
        for n in [1i64, 3] {
            let i = grid.index_of(n).unwrap();
            let center = crate::dispersion::phase(n, &params);
            let total: f64 = su.coeffs[i].iter().map(|c| c.norm_sqr()).sum();
            let near: f64 = su.coeffs[i]
                .iter()
                .zip(&su.tau_values)
                .filter(|(_, tau)| (**tau - center).abs() <= 3.0 * su.dtau)
                .map(|(c, _)| c.norm_sqr())
                .sum();
            assert!(near / total >= 0.9, "mode {n}: fraction {}", near / total);
        }
    }

    #[test]
    fn ensemble_draws_are_reproducible() {
        let config = EstimateConfig::new(0.5, 1.0 / 24.0, 4, 42);
        let grid = PeriodicGrid::new(16).unwrap();
        let a = draw_spacetime_member(grid, &config, &default_params(), 2, 0);
        let b = draw_spacetime_member(grid, &config, &default_params(), 2, 0);
        let c = draw_spacetime_member(grid, &config, &default_params(), 3, 0);
        assert_eq!(a.coeffs, b.coeffs);
        assert_ne!(a.coeffs, c.coeffs);
    }

    #[test]
    fn config_validation() {
        assert!(EstimateConfig::new(0.5, 1.0 / 24.0, 8, 1).validate().is_ok());
        assert!(EstimateConfig::new(0.4, 1.0 / 24.0, 8, 1).validate().is_err());
        assert!(EstimateConfig::new(0.5, 0.1, 8, 1).validate().is_err());
        assert!(EstimateConfig::new(0.5, 1.0 / 24.0, 0, 1).validate().is_err());
    }

    #[test]
    fn degenerate_member_is_skipped() {
        let grid = PeriodicGrid::new(16).unwrap();
        let params = default_params();
        let config = EstimateConfig::new(0.5, 1.0 / 24.0, 1, 1);
        let zero = SpaceTimeSpectrum::zero(
            grid,
            TRILINEAR_TAU_BINS,
            TRILINEAR_DTAU,
            WindowSpec::default_tukey(),
            params,
        );
        assert!(trilinear_member(&zero, &zero, &config, &params)
            .unwrap()
            .is_none());
    }

    #[test]
    fn trilinear_ratio_is_scale_invariant() {
        let grid = PeriodicGrid::new(16).unwrap();
        let params = default_params();
        let config = EstimateConfig::new(0.5, 1.0 / 24.0, 1, 11);
        let su = draw_spacetime_member(grid, &config, &params, 0, 0);
        let sw = draw_spacetime_member(grid, &config, &params, 0, 1);
        let (l1a, lha, ra) = trilinear_member(&su, &sw, &config, &params).unwrap().unwrap();
        let lam = Complex64::from(3.0);
        let (l1b, lhb, rb) = trilinear_member(&su.scaled(lam), &sw.scaled(lam), &config, &params)
            .unwrap()
            .unwrap();
        assert_abs_diff_eq!(l1a / ra, l1b / rb, epsilon = 1e-10 * (l1a / ra));
        assert_abs_diff_eq!(lha / ra, lhb / rb, epsilon = 1e-10 * (lha / ra));
    }
}
