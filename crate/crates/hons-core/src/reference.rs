//! Independent reference solutions used as oracles: exact plane waves,
//! the shift-and-modulate change of variables that removes the second
//! derivative and the cubic potential, and standalone integrators for the
//! scalar reduction and the complex mKdV limit.
//!
//! Everything here deliberately avoids the ETDRK4 machinery so that
//! cross-checks against [`crate::dynamics`] exercise disjoint code paths.

use num_complex::Complex64;

use crate::dynamics::eval_f;
use crate::grid::{dealiased_triple_product, spectral_derivative, PairState, PeriodicGrid, SpectralField};
use crate::{Error, PhysicsParams, Result};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Exact plane wave u = A e^{i(kx - ωt)}.
#[derive(Debug, Clone, Copy)]
pub struct PlaneWaveSpec {
    pub amplitude: Complex64,
    pub wavenumber: i64,
    pub omega: f64,
}

impl PlaneWaveSpec {
    /// Uncoupled wave (w = 0).
    pub fn new(amplitude: Complex64, wavenumber: i64, params: &PhysicsParams) -> Self {
        Self {
            amplitude,
            wavenumber,
            omega: plane_wave_omega(amplitude, wavenumber, params, None),
        }
    }

    /// First component of an equal-wavenumber coupled pair with second
    /// amplitude `b`.
    pub fn new_coupled(
        amplitude: Complex64,
        b: Complex64,
        wavenumber: i64,
        params: &PhysicsParams,
    ) -> Self {
        Self {
            amplitude,
            wavenumber,
            omega: plane_wave_omega(amplitude, wavenumber, params, Some(b)),
        }
    }

    /// Spectral snapshot at time `t`: one coefficient A e^{-iωt} at mode k.
    pub fn field_at(&self, grid: PeriodicGrid, t: f64) -> Result<SpectralField> {
        SpectralField::single_mode(
            grid,
            self.wavenumber,
            self.amplitude * (-I * self.omega * t).exp(),
        )
    }
}

/// Temporal frequency of the plane wave u = A e^{i(kx - ωt)}:
///
/// ```text
/// ω = (q/2)k² - (γ/2)k³ + βk(|A|² + σ_β|B|²) - α(|A|² + σ_α|B|²)
/// ```
///
/// with B = 0 for the uncoupled wave and B the second amplitude of an
/// equal-wavenumber pair (the μ terms cancel: the densities |u|², |w|²
/// are constant in x).  The relation is pinned by the residual tests in
/// this module, which substitute the closed form into the equations of
/// motion; it is derived here, not quoted.
pub fn plane_wave_omega(
    amplitude: Complex64,
    k: i64,
    params: &PhysicsParams,
    coupled: Option<Complex64>,
) -> f64 {
    let a2 = amplitude.norm_sqr();
    let b2 = coupled.map_or(0.0, |b| b.norm_sqr());
    let kf = k as f64;
    0.5 * params.q * kf * kf - 0.5 * params.gamma * kf * kf * kf
        + params.beta * kf * (a2 + params.sigma_beta * b2)
        - params.alpha * (a2 + params.sigma_alpha * b2)
}

/// Max spectral-coefficient magnitude of 2i u_t + q u_xx + iγ u_xxx - F1
/// for the closed-form pair (and its mirror for w), the oracle that pins
/// [`plane_wave_omega`].
pub fn plane_wave_residual(
    u_wave: &PlaneWaveSpec,
    w_wave: Option<&PlaneWaveSpec>,
    grid: PeriodicGrid,
    params: &PhysicsParams,
    t: f64,
) -> Result<f64> {
    let u = u_wave.field_at(grid, t)?;
    let w = match w_wave {
        Some(spec) => spec.field_at(grid, t)?,
        None => SpectralField::zero(grid),
    };
    let state = PairState::new(u, w, t)?;
    let (f_u, f_w) = eval_f(&state, params)?;
    let mut worst = 0.0f64;
    for (field, f_rhs, omega) in [
        (&state.u, &f_u, u_wave.omega),
        (&state.w, &f_w, w_wave.map_or(0.0, |s| s.omega)),
    ] {
        let uxx = spectral_derivative(field, 2)?;
        let uxxx = spectral_derivative(field, 3)?;
        for idx in 0..grid.n_modes() {
            // u_t = -iω u for the closed form.
            let lhs = 2.0 * I * (-I * omega * field.coeffs()[idx])
                + params.q * uxx.coeffs()[idx]
                + I * params.gamma * uxxx.coeffs()[idx];
            worst = worst.max((lhs - f_rhs.coeffs()[idx]).norm());
        }
    }
    Ok(worst)
}

/// Direction of [`rl_transform`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Change of variables u(x,t) = u1(x - q²t/(6γ), t) e^{i(q x/(3γ) - q³t/(27γ²))},
/// mapping solutions of the reduced system (q = 0, α = 0) to solutions of
/// the full one.  Valid under σ_α = σ_β and qβ = 3γα; the modulation
/// wavenumber m0 = q/(3γ) must be an integer to stay 2π-periodic.
///
/// Both operations are exact on the Fourier side: the shift is a phase
/// e^{-i n q² t/(6γ)} and the modulation is an index shift by m0.  Energy
/// pushed past the grid edge by the shift must be negligible (relative
/// 1e-12; it is dropped), so the map is an L² isometry up to roundoff;
/// otherwise invalid-argument.
pub fn rl_transform(state: &PairState, params: &PhysicsParams, direction: Direction) -> Result<PairState> {
    if (params.sigma_alpha - params.sigma_beta).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "transform needs sigma_alpha = sigma_beta, got {} and {}",
            params.sigma_alpha, params.sigma_beta
        )));
    }
    let scale = 1.0 + params.q.abs() + params.gamma.abs();
    if (params.q * params.beta - 3.0 * params.gamma * params.alpha).abs() > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!(
            "transform needs q*beta = 3*gamma*alpha, got {} vs {}",
            params.q * params.beta,
            3.0 * params.gamma * params.alpha
        )));
    }
    let m0f = params.q / (3.0 * params.gamma);
    if (m0f - m0f.round()).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "modulation wavenumber q/(3γ) = {m0f} is not an integer; \
             the modulated field would not be 2π-periodic"
        )));
    }
    let m0 = m0f.round() as i64;
    let v = params.q * params.q / (6.0 * params.gamma);
    let omega0 = params.q.powi(3) / (27.0 * params.gamma * params.gamma);
    let t = state.time;
    let grid = state.grid();

    let map_field = |field: &SpectralField| -> Result<SpectralField> {
        let mut out = vec![Complex64::default(); grid.n_modes()];
        for idx in 0..grid.n_modes() {
            let n = grid.wavenumber_at(idx);
            match direction {
                Direction::Forward => {
                    // û(n) = û1(n - m0) e^{-i((n-m0)v + ω0) t}
                    if let Some(src) = grid.index_of(n - m0) {
                        out[idx] = field.coeffs()[src]
                            * (-I * ((n - m0) as f64 * v + omega0) * t).exp();
                    }
                }
                Direction::Inverse => {
                    // û1(n) = û(n + m0) e^{+i(n v + ω0) t}
                    if let Some(src) = grid.index_of(n + m0) {
                        out[idx] = field.coeffs()[src]
                            * (I * (n as f64 * v + omega0) * t).exp();
                    }
                }
            }
        }
        // Modes shifted off the grid must carry no energy beyond roundoff
        // noise (evolved fields always have a ~1e-16 tail in the top
        // modes); anything larger is a genuine truncation error.
        let threshold = 1e-12 * field.max_coeff_abs();
        for idx in 0..grid.n_modes() {
            let n = grid.wavenumber_at(idx);
            let dest = match direction {
                Direction::Forward => n + m0,
                Direction::Inverse => n - m0,
            };
            if grid.index_of(dest).is_none() && field.coeffs()[idx].norm() > threshold {
                return Err(Error::InvalidArgument(format!(
                    "mode n = {n} would shift to {dest}, outside the grid, \
                     but carries non-negligible amplitude {:.3e}",
                    field.coeffs()[idx].norm()
                )));
            }
        }
        SpectralField::from_coeffs(grid, out)
    };

    PairState::new(map_field(&state.u)?, map_field(&state.w)?, t)
}

const BLOWUP_LIMIT: f64 = 1e12;

fn check_finite(field: &SpectralField, time: f64) -> Result<()> {
    if !field.is_finite() || field.max_coeff_abs() > BLOWUP_LIMIT {
        return Err(Error::BlowUp { time });
    }
    Ok(())
}

/// Nonlinear part of the scalar reduction, in the frame where the linear
/// flow is the diagonal symbol (γ/2)n³ - (q/2)n²:
/// N(u) = iα u|u|² - (β+μ)|u|² u_x - μ u² ū_x.
fn scalar_nonlinear(u: &SpectralField, params: &PhysicsParams) -> Result<SpectralField> {
    let ux = spectral_derivative(u, 1)?;
    let cubic = dealiased_triple_product(u, u, u, [false, false, true])?;
    let advect = dealiased_triple_product(u, u, &ux, [false, true, false])?;
    let conj_advect = dealiased_triple_product(u, u, &ux, [false, false, true])?;
    cubic
        .scaled(I * params.alpha)
        .add(&advect.scaled((-(params.beta + params.mu)).into()))?
        .add(&conj_advect.scaled((-params.mu).into()))
}

/// One integrating-factor RK4 step of the scalar equation
/// i u_t + (q/2)u_xx + i(γ/2)u_xxx + α u|u|² + i(β+μ)|u|² u_x + iμ u² ū_x = 0,
/// the w ≡ 0 reduction of the pair system.  Used only as a cross-method
/// oracle, so it shares no stepping code with [`crate::dynamics`].
pub fn single_equation_step(u: &SpectralField, dt: f64, params: &PhysicsParams) -> Result<SpectralField> {
    let grid = u.grid();
    let symbol: Vec<Complex64> = (0..grid.n_modes())
        .map(|idx| {
            let n = grid.wavenumber_at(idx) as f64;
            I * (0.5 * params.gamma * n * n * n - 0.5 * params.q * n * n)
        })
        .collect();
    let e_full: Vec<Complex64> = symbol.iter().map(|z| (dt * z).exp()).collect();
    let e_half: Vec<Complex64> = symbol.iter().map(|z| (0.5 * dt * z).exp()).collect();

    let mul = |field: &SpectralField, diag: &[Complex64]| -> SpectralField {
        let coeffs = field
            .coeffs()
            .iter()
            .zip(diag)
            .map(|(c, d)| c * d)
            .collect();
        SpectralField::from_coeffs(grid, coeffs).expect("same grid")
    };

    let n_of = |field: &SpectralField| -> Result<SpectralField> {
        Ok(scalar_nonlinear(field, params)?.scaled(dt.into()))
    };

    let k1 = n_of(u)?;
    let k2 = n_of(&mul(&u.add(&k1.scaled(0.5.into()))?, &e_half))?;
    let k3 = n_of(&mul(u, &e_half).add(&k2.scaled(0.5.into()))?)?;
    let k4 = n_of(&mul(u, &e_full).add(&mul(&k3, &e_half))?)?;

    let next = mul(u, &e_full)
        .add(&mul(&k1, &e_full).scaled((1.0 / 6.0).into()))?
        .add(&mul(&k2.add(&k3)?, &e_half).scaled((2.0 / 6.0).into()))?
        .add(&k4.scaled((1.0 / 6.0).into()))?;
    check_finite(&next, f64::NAN)?;
    Ok(next)
}

/// Repeated [`single_equation_step`] with blow-up time tracking.
pub fn single_equation_evolve(
    u0: &SpectralField,
    t_final: f64,
    dt: f64,
    params: &PhysicsParams,
) -> Result<SpectralField> {
    if !(t_final > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidArgument(
            "t_final and dt must be positive".into(),
        ));
    }
    let n_steps = (t_final / dt).round() as usize;
    if ((n_steps as f64 * dt) - t_final).abs() > 1e-6 * dt.abs() {
        return Err(Error::InvalidArgument(format!(
            "t_final = {t_final} is not an integer multiple of dt = {dt}"
        )));
    }
    let mut u = u0.clone();
    for k in 0..n_steps {
        u = single_equation_step(&u, dt, params).map_err(|e| match e {
            Error::BlowUp { .. } => Error::BlowUp {
                time: (k + 1) as f64 * dt,
            },
            other => other,
        })?;
    }
    Ok(u)
}

/// Right-hand side of the complex mKdV limit
/// u_t = -(γ/2)u_xxx - β|u|² u_x - μ u ∂x(|u|²), the q = 0, α = 0 scalar
/// reduction written without an integrating factor.
fn mkdv_rhs(u: &SpectralField, params: &PhysicsParams) -> Result<SpectralField> {
    let ux = spectral_derivative(u, 1)?;
    let uxxx = spectral_derivative(u, 3)?;
    let advect = dealiased_triple_product(u, u, &ux, [false, true, false])?;
    let conj_advect = dealiased_triple_product(u, u, &ux, [false, false, true])?;
    uxxx.scaled((-0.5 * params.gamma).into())
        .add(&advect.scaled((-(params.beta + params.mu)).into()))?
        .add(&conj_advect.scaled((-params.mu).into()))
}

/// One classical RK4 step of the complex mKdV equation.  Fully explicit
/// (no exponential integrator), so it is an independent oracle; the step
/// size must resolve the dispersive stiffness, dt ≲ 2.8/((γ/2)(N/2)³).
pub fn mkdv_step(u: &SpectralField, dt: f64, params: &PhysicsParams) -> Result<SpectralField> {
    let k1 = mkdv_rhs(u, params)?;
    let k2 = mkdv_rhs(&u.add(&k1.scaled((0.5 * dt).into()))?, params)?;
    let k3 = mkdv_rhs(&u.add(&k2.scaled((0.5 * dt).into()))?, params)?;
    let k4 = mkdv_rhs(&u.add(&k3.scaled(dt.into()))?, params)?;
    let next = u.add(
        &k1.add(&k2.scaled(2.0.into()))?
            .add(&k3.scaled(2.0.into()))?
            .add(&k4)?
            .scaled((dt / 6.0).into()),
    )?;
    check_finite(&next, f64::NAN)?;
    Ok(next)
}
