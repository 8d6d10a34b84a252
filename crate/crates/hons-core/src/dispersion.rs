//! Dispersion symbols, modulation weights and the resonance algebra.

use num_rational::Ratio;

use crate::grid::SpectralField;
use crate::{Error, Result};

/// Exact rational scalar used by the resonance identity tests.
pub type Rat = Ratio<i128>;

/// Real model parameters plus the derived transport constant c0.
///
/// c0 = (β+μ)(‖u0‖² + ‖w0‖²) is frozen from the initial data for a whole
/// run; the L² sum is a constant of the motion, so this loses nothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    pub q: f64,
    pub gamma: f64,
    pub beta: f64,
    pub mu: f64,
    pub alpha: f64,
    pub sigma_alpha: f64,
    pub sigma_beta: f64,
    pub sigma_mu: f64,
    pub c0: f64,
}

impl PhysicsParams {
    /// All σ's default to 1 and c0 to 0.
    pub fn new(q: f64, gamma: f64, beta: f64, mu: f64, alpha: f64) -> Self {
        Self {
            q,
            gamma,
            beta,
            mu,
            alpha,
            sigma_alpha: 1.0,
            sigma_beta: 1.0,
            sigma_mu: 1.0,
            c0: 0.0,
        }
    }

    pub fn with_sigmas(mut self, sigma_alpha: f64, sigma_beta: f64, sigma_mu: f64) -> Self {
        self.sigma_alpha = sigma_alpha;
        self.sigma_beta = sigma_beta;
        self.sigma_mu = sigma_mu;
        self
    }

    pub fn with_c0(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    /// Freeze c0 = (β+μ)(‖u0‖² + ‖w0‖²) from initial data.
    pub fn with_c0_from(self, u0: &SpectralField, w0: &SpectralField) -> Self {
        let c0 = c0_from_data(u0, w0, self.beta, self.mu);
        self.with_c0(c0)
    }

    /// True when all three σ's equal 1 (the scope of the conservation laws).
    pub fn symmetric_sigmas(&self) -> bool {
        (self.sigma_alpha - 1.0).abs() <= 1e-12
            && (self.sigma_beta - 1.0).abs() <= 1e-12
            && (self.sigma_mu - 1.0).abs() <= 1e-12
    }

    /// Restricted-nonlinearity condition (β+μ) = β σ_β under which the
    /// grouped form of the gauged nonlinearity is valid.
    pub fn is_restricted(&self) -> bool {
        let scale = 1.0 + self.beta.abs() + self.mu.abs();
        (self.beta + self.mu - self.beta * self.sigma_beta).abs() <= 1e-12 * scale
    }

    /// Nonresonance condition q/3 ∉ ℤ.
    pub fn is_nonresonant(&self) -> bool {
        let t = self.q / 3.0;
        (t - t.round()).abs() > 1e-9
    }
}

/// c0 = (β+μ)·2π Σ (|û0(n)|² + |ŵ0(n)|²).
pub fn c0_from_data(u0: &SpectralField, w0: &SpectralField, beta: f64, mu: f64) -> f64 {
    (beta + mu) * (u0.l2_norm_sq() + w0.l2_norm_sq())
}

/// Dispersion symbol φ(n) = (γ/2)n³ - (q/2)n² - c0·n.
///
/// At the normalization γ = 2 this is the polynomial n³ - (q/2)n² - c0·n
/// generating the linear group; the general-γ coefficient comes from the
/// analytic change of variables x → (γ/2)^{1/3} x, applied to the symbol
/// rather than to the grid so 2π-periodicity is preserved.
pub fn phase(n: i64, params: &PhysicsParams) -> f64 {
    let nf = n as f64;
    0.5 * params.gamma * nf * nf * nf - 0.5 * params.q * nf * nf - params.c0 * nf
}

/// Modulation q_+(n,τ) = τ - (γ/2)n³ + (q/2)n² + c0·n = τ - φ(n).
pub fn q_plus(n: i64, tau: f64, params: &PhysicsParams) -> f64 {
    tau - phase(n, params)
}

/// Modulation q_-(n,τ) = τ - (γ/2)n³ - (q/2)n² + c0·n; it satisfies
/// q_-(n,τ) = -q_+(-n,-τ), the weight seen by conjugated factors.
pub fn q_minus(n: i64, tau: f64, params: &PhysicsParams) -> f64 {
    let nf = n as f64;
    tau - 0.5 * params.gamma * nf * nf * nf - 0.5 * params.q * nf * nf + params.c0 * nf
}

/// Japanese bracket ⟨x⟩ = (1 + x²)^{1/2}.
pub fn bracket(x: f64) -> f64 {
    (1.0 + x * x).sqrt()
}

/// Interacting frequency triple; the fourth index n3 = n - n1 - n2 is
/// always derived, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResonanceTriple {
    pub n: i64,
    pub n1: i64,
    pub n2: i64,
}

impl ResonanceTriple {
    pub fn new(n: i64, n1: i64, n2: i64) -> Self {
        Self { n, n1, n2 }
    }

    pub fn n3(&self) -> i64 {
        self.n - self.n1 - self.n2
    }
}

fn rat(n: i64) -> Rat {
    Rat::from_integer(n as i128)
}

/// Exact rational modulation q_+ at the γ = 2 normalization.
pub fn q_plus_exact(n: i64, tau: Rat, q: Rat, c0: Rat) -> Rat {
    let nr = rat(n);
    tau - nr * nr * nr + q * nr * nr / rat(2) + c0 * nr
}

/// Exact rational modulation q_- at the γ = 2 normalization.
pub fn q_minus_exact(n: i64, tau: Rat, q: Rat, c0: Rat) -> Rat {
    let nr = rat(n);
    tau - nr * nr * nr - q * nr * nr / rat(2) + c0 * nr
}

/// Exact value of -3(n1+n2)(n-n1)(n-n2-q/3).
///
/// For τ3 = τ - τ1 - τ2 this equals
/// q_+(n,τ) - q_+(n1,τ1) - q_-(n2,τ2) - q_+(n3,τ3), the modulation
/// mismatch of an interacting triple; with q/3 irrational-free (q/3 ∉ ℤ)
/// and n ≠ n1, n1 ≠ -n2 it never vanishes.
pub fn resonance_factor(triple: ResonanceTriple, q: Rat) -> Rat {
    let third = q / rat(3);
    rat(-3)
        * rat(triple.n1 + triple.n2)
        * rat(triple.n - triple.n1)
        * (rat(triple.n - triple.n2) - third)
}

/// Max / median / min of {|n-n1|, |n1+n2|, |n-n2|}.
///
/// The middle value L follows the branch order |n-n1|, |n1+n2|, |n-n2|:
/// the first magnitude lying between the other two is returned, which on
/// ties agrees with every other branch in value.
pub fn classify_m1_l_m2(triple: ResonanceTriple) -> (i64, i64, i64) {
    let a = (triple.n - triple.n1).abs();
    let b = (triple.n1 + triple.n2).abs();
    let c = (triple.n - triple.n2).abs();
    let m1 = a.max(b).max(c);
    let m2 = a.min(b).min(c);
    let l = if (a - b) * (a - c) <= 0 {
        a
    } else if (b - a) * (b - c) <= 0 {
        b
    } else {
        c
    };
    (m1, l, m2)
}

/// Reject parameters that violate the restricted-nonlinearity condition.
pub fn require_restricted(params: &PhysicsParams) -> Result<()> {
    if params.is_restricted() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "(beta+mu) = {} does not equal beta*sigma_beta = {}",
            params.beta + params.mu,
            params.beta * params.sigma_beta
        )))
    }
}

/// Reject parameters with q/3 integer (resonant transport).
pub fn require_nonresonant(params: &PhysicsParams) -> Result<()> {
    if params.is_nonresonant() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "q/3 = {} is an integer; the interaction factor can vanish",
            params.q / 3.0
        )))
    }
}
