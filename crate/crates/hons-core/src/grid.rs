//! Discrete periodic Fourier representation shared by all other modules.
//!
//! Conventions: the torus has length 2π with sample points x_j = 2πj/N.
//! Coefficients follow ĝ(n) = (1/2π)∫ e^{-inx} g dx, discretely
//! ĝ(n) = (1/N) Σ_j g(x_j) e^{-in x_j}, and the inverse sum
//! g(x) = Σ_n ĝ(n) e^{inx} carries no prefactor.  The L² norm is the
//! unnormalized integral, ‖g‖² = ∫|g|²dx = 2π Σ_n |ĝ(n)|².

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::{Error, Result};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

thread_local! {
    static FFT_CACHE: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> =
        RefCell::new(HashMap::new());
}

pub(crate) fn fft_in_place(buf: &mut [Complex64], forward: bool) {
    let len = buf.len();
    let fft = FFT_CACHE.with(|c| {
        c.borrow_mut()
            .entry((len, forward))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if forward {
                    planner.plan_fft_forward(len)
                } else {
                    planner.plan_fft_inverse(len)
                }
            })
            .clone()
    });
    fft.process(buf);
}

/// N-mode discrete torus of length 2π with wavenumbers -N/2 .. N/2-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodicGrid {
    n_modes: usize,
}

impl PeriodicGrid {
    /// N must be even and at least 8.  Powers of two are fastest but any
    /// even N is accepted.
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes < 8 || n_modes % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "grid size must be even and >= 8, got {n_modes}"
            )));
        }
        Ok(Self { n_modes })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Wavenumber stored at coefficient index `idx`.
    pub fn wavenumber_at(&self, idx: usize) -> i64 {
        idx as i64 - (self.n_modes / 2) as i64
    }

    /// Coefficient index of wavenumber `n`, if it lies on the grid.
    pub fn index_of(&self, n: i64) -> Option<usize> {
        let half = (self.n_modes / 2) as i64;
        if (-half..half).contains(&n) {
            Some((n + half) as usize)
        } else {
            None
        }
    }

    pub fn wavenumbers(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.n_modes).map(|i| self.wavenumber_at(i))
    }

    /// Physical sample points x_j = 2πj/N.
    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n_modes as f64;
        (0..self.n_modes).map(move |j| TWO_PI * j as f64 / n)
    }
}

/// One complex periodic function stored as centered Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: PeriodicGrid,
    coeffs: Vec<Complex64>,
}

/// Reorder centered coefficients (index i ↔ n = i - N/2) into DFT bin
/// order (bin k ↔ n = k for k < N/2, n = k - N otherwise).
fn centered_to_bins(coeffs: &[Complex64]) -> Vec<Complex64> {
    let n = coeffs.len();
    let half = n / 2;
    let mut bins = vec![Complex64::default(); n];
    for (i, &c) in coeffs.iter().enumerate() {
        let k = (i + half) % n;
        bins[k] = c;
    }
    bins
}

fn bins_to_centered(bins: &[Complex64]) -> Vec<Complex64> {
    let n = bins.len();
    let half = n / 2;
    let mut coeffs = vec![Complex64::default(); n];
    for (k, &c) in bins.iter().enumerate() {
        let i = (k + half) % n;
        coeffs[i] = c;
    }
    coeffs
}

impl SpectralField {
    pub fn zero(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::default(); grid.n_modes()],
        }
    }

    /// Build a field from centered coefficients (index i holds mode i - N/2).
    pub fn from_coeffs(grid: PeriodicGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.n_modes() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                grid.n_modes(),
                coeffs.len()
            )));
        }
        Ok(Self { grid, coeffs })
    }

    /// Field with a single unit mode at wavenumber `n`.
    pub fn single_mode(grid: PeriodicGrid, n: i64, amplitude: Complex64) -> Result<Self> {
        let idx = grid.index_of(n).ok_or_else(|| {
            Error::InvalidArgument(format!("mode {n} not representable on {} modes", grid.n_modes()))
        })?;
        let mut f = Self::zero(grid);
        f.coeffs[idx] = amplitude;
        Ok(f)
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of wavenumber `n` (zero off the grid).
    pub fn coeff(&self, n: i64) -> Complex64 {
        self.grid
            .index_of(n)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    /// ∫|g|²dx = 2π Σ |ĝ(n)|².
    pub fn l2_norm_sq(&self) -> f64 {
        TWO_PI * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// Sobolev norm (2π Σ (1+n²)^s |ĝ(n)|²)^{1/2}.
    pub fn hs_norm(&self, s: f64) -> f64 {
        let sum: f64 = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let n = self.grid.wavenumber_at(i) as f64;
                (1.0 + n * n).powf(s) * c.norm_sqr()
            })
            .sum();
        (TWO_PI * sum).sqrt()
    }

    pub fn max_coeff_abs(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_same_grid(self, other)?;
        Ok(Self {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_same_grid(self, other)?;
        Ok(Self {
            grid: self.grid,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

pub fn check_same_grid(a: &SpectralField, b: &SpectralField) -> Result<()> {
    if a.grid != b.grid {
        Err(Error::GridMismatch(a.grid.n_modes(), b.grid.n_modes()))
    } else {
        Ok(())
    }
}

/// Forward transform of physical samples: ĝ(n) = (1/N) Σ_j g_j e^{-in x_j}.
pub fn to_spectral(samples: &[Complex64], grid: PeriodicGrid) -> Result<SpectralField> {
    if samples.len() != grid.n_modes() {
        return Err(Error::InvalidArgument(format!(
            "expected {} samples, got {}",
            grid.n_modes(),
            samples.len()
        )));
    }
    let mut buf = samples.to_vec();
    fft_in_place(&mut buf, true);
    let scale = 1.0 / grid.n_modes() as f64;
    for c in &mut buf {
        *c *= scale;
    }
    SpectralField::from_coeffs(grid, bins_to_centered(&buf))
}

/// Inverse transform: g(x_j) = Σ_n ĝ(n) e^{in x_j}.
pub fn to_physical(field: &SpectralField) -> Vec<Complex64> {
    let mut buf = centered_to_bins(&field.coeffs);
    fft_in_place(&mut buf, false);
    buf
}

/// Coefficient-wise multiplication by (in)^order, order 1..3.
pub fn spectral_derivative(field: &SpectralField, order: u32) -> Result<SpectralField> {
    if !(1..=3).contains(&order) {
        return Err(Error::InvalidArgument(format!(
            "derivative order must be 1..3, got {order}"
        )));
    }
    let grid = field.grid;
    let coeffs = field
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let mult = (Complex64::new(0.0, grid.wavenumber_at(i) as f64)).powu(order);
            c * mult
        })
        .collect();
    SpectralField::from_coeffs(grid, coeffs)
}

/// Physical samples on a refined grid of `factor * N` points, obtained by
/// zero-padding the spectrum.  Used for alias-free products: a product of
/// d band-limited factors is a trigonometric polynomial of degree < d·N/2,
/// so its integral (and its retained modes) are exact once
/// factor·N exceeds that degree.
pub fn refined_physical(field: &SpectralField, factor: usize) -> Vec<Complex64> {
    let n = field.grid.n_modes();
    let big = n * factor;
    let half = n / 2;
    let big_half = big / 2;
    let mut padded = vec![Complex64::default(); big];
    for (i, &c) in field.coeffs.iter().enumerate() {
        padded[i + big_half - half] = c;
    }
    let mut buf = centered_to_bins(&padded);
    fft_in_place(&mut buf, false);
    buf
}

/// Exact spectral coefficients of a pointwise triple product a·b·c on the
/// retained modes |n| ≤ N/2 - 1.  Each factor may be conjugated first.
/// Products are formed on a 2N grid so no aliased image can land inside
/// the retained band; the leftover -N/2 output mode is zeroed.
pub fn dealiased_triple_product(
    a: &SpectralField,
    b: &SpectralField,
    c: &SpectralField,
    conjugate: [bool; 3],
) -> Result<SpectralField> {
    check_same_grid(a, b)?;
    check_same_grid(a, c)?;
    let n = a.grid.n_modes();
    let mut phys = [
        refined_physical(a, 2),
        refined_physical(b, 2),
        refined_physical(c, 2),
    ];
    for (p, flag) in phys.iter_mut().zip(conjugate) {
        if flag {
            for v in p.iter_mut() {
                *v = v.conj();
            }
        }
    }
    let prod: Vec<Complex64> = (0..2 * n).map(|j| phys[0][j] * phys[1][j] * phys[2][j]).collect();
    let big_grid = PeriodicGrid::new(2 * n)?;
    let big_spec = to_spectral(&prod, big_grid)?;
    let mut coeffs = vec![Complex64::default(); n];
    for (i, slot) in coeffs.iter_mut().enumerate().skip(1) {
        let m = a.grid.wavenumber_at(i);
        *slot = big_spec.coeff(m);
    }
    SpectralField::from_coeffs(a.grid, coeffs)
}

/// The two pulse envelopes at one time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PairState {
    pub u: SpectralField,
    pub w: SpectralField,
    pub time: f64,
}

impl PairState {
    pub fn new(u: SpectralField, w: SpectralField, time: f64) -> Result<Self> {
        check_same_grid(&u, &w)?;
        Ok(Self { u, w, time })
    }

    pub fn zero(grid: PeriodicGrid) -> Self {
        Self {
            u: SpectralField::zero(grid),
            w: SpectralField::zero(grid),
            time: 0.0,
        }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.u.grid()
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.w.is_finite()
    }

    /// sqrt(‖u‖² + ‖w‖²) in H^s of each component.
    pub fn pair_hs_norm(&self, s: f64) -> f64 {
        self.u.hs_norm(s).hypot(self.w.hs_norm(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn field_from_parts(n: usize, parts: &[(f64, f64)]) -> SpectralField {
        let grid = PeriodicGrid::new(n).unwrap();
        let coeffs = parts.iter().map(|&(re, im)| Complex64::new(re, im)).collect();
        SpectralField::from_coeffs(grid, coeffs).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(PeriodicGrid::new(8).is_ok());
        assert!(PeriodicGrid::new(7).is_err());
        assert!(PeriodicGrid::new(4).is_err());
        assert!(PeriodicGrid::new(0).is_err());
    }

    #[test]
    fn wavenumber_layout() {
        let grid = PeriodicGrid::new(8).unwrap();
        let ns: Vec<i64> = grid.wavenumbers().collect();
        assert_eq!(ns, vec![-4, -3, -2, -1, 0, 1, 2, 3]);
        assert_eq!(grid.index_of(-4), Some(0));
        assert_eq!(grid.index_of(3), Some(7));
        assert_eq!(grid.index_of(4), None);
    }

    #[test]
    fn single_mode_norms() {
        let grid = PeriodicGrid::new(16).unwrap();
        let e1 = SpectralField::single_mode(grid, 1, 1.0.into()).unwrap();
        assert_abs_diff_eq!(e1.hs_norm(0.0), TWO_PI.sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(e1.hs_norm(1.0), (2.0 * TWO_PI).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(e1.l2_norm_sq(), TWO_PI, epsilon = 1e-14);
        assert_eq!(SpectralField::zero(grid).hs_norm(0.5), 0.0);
    }

    #[test]
    fn derivative_of_single_mode() {
        let grid = PeriodicGrid::new(16).unwrap();
        let e2 = SpectralField::single_mode(grid, 2, 1.0.into()).unwrap();
        let d = spectral_derivative(&e2, 1).unwrap();
        assert_abs_diff_eq!(d.coeff(2).re, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.coeff(2).im, 2.0, epsilon = 1e-15);
        let d3 = spectral_derivative(&e2, 3).unwrap();
        // (2i)^3 = -8i
        assert_abs_diff_eq!(d3.coeff(2).im, -8.0, epsilon = 1e-13);
        assert!(spectral_derivative(&e2, 4).is_err());
    }

    #[test]
    fn refined_sampling_matches_direct_evaluation() {
        let grid = PeriodicGrid::new(8).unwrap();
        let f = SpectralField::single_mode(grid, 3, Complex64::new(0.4, -0.2)).unwrap();
        let fine = refined_physical(&f, 4);
        assert_eq!(fine.len(), 32);
        for (j, v) in fine.iter().enumerate() {
            let x = TWO_PI * j as f64 / 32.0;
            let expect = Complex64::new(0.4, -0.2) * (Complex64::i() * 3.0 * x).exp();
            assert_abs_diff_eq!((v - expect).norm(), 0.0, epsilon = 1e-13);
        }
    }

    /// Brute-force convolution oracle for the triple product on the
    /// retained band.
    fn oracle_triple(
        a: &SpectralField,
        b: &SpectralField,
        c: &SpectralField,
        conj: [bool; 3],
    ) -> Vec<Complex64> {
        let grid = a.grid();
        let n = grid.n_modes();
        // Conjugation in physical space maps ĝ(m) to conj(ĝ(-m)), so a
        // conjugated factor can carry mode +N/2; enumerate actual modes.
        let entries = |f: &SpectralField, flag: bool| -> Vec<(i64, Complex64)> {
            (0..n)
                .map(|i| {
                    let m = grid.wavenumber_at(i);
                    let c = f.coeffs()[i];
                    if flag {
                        (-m, c.conj())
                    } else {
                        (m, c)
                    }
                })
                .collect()
        };
        let ea = entries(a, conj[0]);
        let eb = entries(b, conj[1]);
        let ec = entries(c, conj[2]);
        let half = n as i64 / 2;
        let mut out = vec![Complex64::default(); n];
        for (i, slot) in out.iter_mut().enumerate() {
            let m = grid.wavenumber_at(i);
            if m == -half {
                continue;
            }
            let mut acc = Complex64::default();
            for &(m1, ca) in &ea {
                for &(m2, cb) in &eb {
                    for &(m3, cc) in &ec {
                        if m1 + m2 + m3 == m {
                            acc += ca * cb * cc;
                        }
                    }
                }
            }
            *slot = acc;
        }
        out
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn physical_round_trip(parts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16)) {
            let f = field_from_parts(16, &parts);
            let back = to_spectral(&to_physical(&f), f.grid()).unwrap();
            for i in 0..16 {
                prop_assert!((f.coeffs()[i] - back.coeffs()[i]).norm() < 1e-13);
            }
        }

        #[test]
        fn parseval(parts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 32)) {
            let f = field_from_parts(32, &parts);
            let phys = to_physical(&f);
            let mean_sq: f64 = phys.iter().map(|v| v.norm_sqr()).sum::<f64>() / 32.0;
            prop_assert!((f.l2_norm_sq() - TWO_PI * mean_sq).abs() < 1e-12 * (1.0 + f.l2_norm_sq()));
        }

        #[test]
        fn triple_product_matches_convolution(
            pa in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16),
            pb in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16),
            pc in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16),
            conj in proptest::array::uniform3(proptest::bool::ANY),
        ) {
            let a = field_from_parts(16, &pa);
            let b = field_from_parts(16, &pb);
            let c = field_from_parts(16, &pc);
            let fast = dealiased_triple_product(&a, &b, &c, conj).unwrap();
            let slow = oracle_triple(&a, &b, &c, conj);
            for i in 0..16 {
                prop_assert!((fast.coeffs()[i] - slow[i]).norm() < 1e-11);
            }
        }

        #[test]
        fn hs_monotone_in_s(parts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 16)) {
            let f = field_from_parts(16, &parts);
            prop_assert!(f.hs_norm(1.0) + 1e-15 >= f.hs_norm(0.5));
            prop_assert!(f.hs_norm(0.5) + 1e-15 >= f.hs_norm(0.0));
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = SpectralField::zero(PeriodicGrid::new(8).unwrap());
        let b = SpectralField::zero(PeriodicGrid::new(16).unwrap());
        assert!(matches!(a.add(&b), Err(Error::GridMismatch(8, 16))));
        assert!(PairState::new(a, b, 0.0).is_err());
    }
}
