//! Matrix families indexed by the angle grid: the discrete form of an
//! operator `A(phi)` acting on the truncated spatial band.
//!
//! Entry `[r][c]` of the matrix at a grid point is the Fourier coefficient
//! `a_hat(phi, xi' - xi, xi)` with `xi' = r - xi_max`, `xi = c - xi_max`.

use crate::error::{Error, Result};
use crate::lattice::{small_divisor, PhaseLattice, DIVISOR_FLOOR};
use crate::linalg::{self, CMat};
use ndarray::Array2;
use num_complex::Complex64 as C64;

#[derive(Debug, Clone)]
pub struct OperatorFamily {
    pub lattice: PhaseLattice,
    pub xi_max: usize,
    pub mats: Vec<CMat>,
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

impl OperatorFamily {
    pub fn from_fn(lattice: &PhaseLattice, xi_max: usize, mut f: impl FnMut(usize) -> CMat) -> Self {
        let mats = (0..lattice.n_points()).map(&mut f).collect();
        OperatorFamily { lattice: lattice.clone(), xi_max, mats }
    }

    pub fn constant(lattice: &PhaseLattice, m: &CMat) -> Self {
        let xi_max = (m.nrows() - 1) / 2;
        Self::from_fn(lattice, xi_max, |_| m.clone())
    }

    pub fn zeros(lattice: &PhaseLattice, xi_max: usize) -> Self {
        let n = 2 * xi_max + 1;
        Self::from_fn(lattice, xi_max, |_| Array2::zeros((n, n)))
    }

    pub fn band_len(&self) -> usize {
        2 * self.xi_max + 1
    }

    pub fn n_points(&self) -> usize {
        self.mats.len()
    }

    pub fn xi(&self, i: usize) -> i64 {
        i as i64 - self.xi_max as i64
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.lattice != other.lattice || self.xi_max != other.xi_max {
            return Err(Error::GridMismatch("operator families live on different grids".into()));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(usize, &CMat) -> CMat) -> Self {
        OperatorFamily {
            lattice: self.lattice.clone(),
            xi_max: self.xi_max,
            mats: self.mats.iter().enumerate().map(|(p, m)| f(p, m)).collect(),
        }
    }

    pub fn try_map(&self, f: impl Fn(usize, &CMat) -> Result<CMat>) -> Result<Self> {
        let mats = self.mats.iter().enumerate().map(|(p, m)| f(p, m)).collect::<Result<_>>()?;
        Ok(OperatorFamily { lattice: self.lattice.clone(), xi_max: self.xi_max, mats })
    }

    pub fn zip(&self, other: &Self, f: impl Fn(&CMat, &CMat) -> CMat) -> Result<Self> {
        self.check(other)?;
        Ok(OperatorFamily {
            lattice: self.lattice.clone(),
            xi_max: self.xi_max,
            mats: self.mats.iter().zip(&other.mats).map(|(a, b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn add_const(&self, m: &CMat) -> Self {
        self.map(|_, a| a + m)
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|_, a| a * c)
    }

    pub fn dot(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a.dot(b))
    }

    pub fn adjoint(&self) -> Self {
        self.map(|_, a| linalg::adjoint(a))
    }

    pub fn sym(&self) -> Self {
        self.map(|_, a| linalg::sym(a))
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.mats.iter().map(linalg::hermitian_defect).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.mats.iter().map(linalg::max_abs).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check(other)?;
        Ok(self
            .mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| linalg::max_abs_diff(a, b))
            .fold(0.0, f64::max))
    }

    /// Average over the angle grid.
    pub fn phi_mean(&self) -> CMat {
        let n = self.band_len();
        let mut acc = Array2::zeros((n, n));
        for m in &self.mats {
            acc += m;
        }
        acc / C64::new(self.n_points() as f64, 0.0)
    }

    /// Diagonal of the angle average: the multiplier part `<a>_{phi,x}(xi)`.
    pub fn mean_multiplier(&self) -> Vec<C64> {
        self.phi_mean().diag().to_vec()
    }

    fn stacked(&self) -> Vec<C64> {
        let n2 = self.band_len() * self.band_len();
        let mut buf = Vec::with_capacity(self.n_points() * n2);
        for m in &self.mats {
            buf.extend(m.as_standard_layout().iter().copied());
        }
        buf
    }

    fn unstack(&self, buf: Vec<C64>) -> Self {
        let n = self.band_len();
        let mats = buf
            .chunks(n * n)
            .map(|c| Array2::from_shape_vec((n, n), c.to_vec()).expect("shape"))
            .collect();
        OperatorFamily { lattice: self.lattice.clone(), xi_max: self.xi_max, mats }
    }

    /// Angle Fourier coefficients (normalized), one matrix per FFT bin.
    pub fn spectrum(&self) -> Vec<CMat> {
        let n2 = self.band_len() * self.band_len();
        let mut buf = self.stacked();
        self.lattice.transform(&mut buf, n2, false);
        self.unstack(buf).mats
    }

    pub fn from_spectrum(lattice: &PhaseLattice, xi_max: usize, spec: Vec<CMat>) -> Self {
        let tmp = OperatorFamily { lattice: lattice.clone(), xi_max, mats: spec };
        let n2 = tmp.band_len() * tmp.band_len();
        let mut buf = tmp.stacked();
        lattice.transform(&mut buf, n2, true);
        tmp.unstack(buf)
    }

    /// Multiply each coefficient of angle mode `m` at entry `(row, col)` by
    /// `f(m, xi_row, xi_col, nyquist)`.
    pub fn map_modes(&self, f: impl Fn(&[i64], i64, i64, bool) -> Result<C64>) -> Result<Self> {
        let mut spec = self.spectrum();
        let n = self.band_len();
        for (p, mat) in spec.iter_mut().enumerate() {
            let (m, nyq) = self.lattice.mode(p);
            for r in 0..n {
                for c in 0..n {
                    let v = mat[[r, c]];
                    if v != zero() {
                        mat[[r, c]] = v * f(&m, self.xi(r), self.xi(c), nyq)?;
                    }
                }
            }
        }
        Ok(Self::from_spectrum(&self.lattice, self.xi_max, spec))
    }

    pub fn omega_dphi(&self, omega_red: &[f64]) -> Self {
        self.map_modes(|m, _, _, nyq| {
            let d: f64 = m.iter().zip(omega_red).map(|(a, w)| *a as f64 * w).sum();
            Ok(if nyq { zero() } else { C64::new(0.0, d) })
        })
        .expect("infallible")
    }

    /// `(omega . d_phi)^{-1}` entrywise; the angle mean maps to zero.
    pub fn invert_omega_dphi(&self, omega_red: &[f64]) -> Result<Self> {
        let lat = self.lattice.clone();
        self.map_modes(|m, _, _, nyq| {
            if nyq || m.iter().all(|&c| c == 0) {
                return Ok(zero());
            }
            let d: f64 = m.iter().zip(omega_red).map(|(a, w)| *a as f64 * w).sum();
            if d.abs() < DIVISOR_FLOOR {
                return Err(small_divisor(&lat, m, None, d));
            }
            Ok(C64::new(0.0, -1.0 / d))
        })
    }

    /// `(omega . d_phi + lambda(xi) d_x)^{-1}` on symbol coefficients, where the
    /// spatial frequency of entry `(xi', xi)` is `k = xi' - xi` and the speed
    /// may depend on the column frequency. The joint mean maps to zero.
    pub fn invert_mixed(&self, omega_red: &[f64], lambda: impl Fn(i64) -> f64) -> Result<Self> {
        let lat = self.lattice.clone();
        self.map_modes(|m, r, c, nyq| {
            let k = r - c;
            if nyq || (k == 0 && m.iter().all(|&v| v == 0)) {
                return Ok(zero());
            }
            let d: f64 = m.iter().zip(omega_red).map(|(a, w)| *a as f64 * w).sum::<f64>() + lambda(c) * k as f64;
            if d.abs() < DIVISOR_FLOOR {
                return Err(small_divisor(&lat, m, Some(k), d));
            }
            Ok(C64::new(0.0, -1.0 / d))
        })
    }

    /// Trigonometric interpolation at an arbitrary point of the quotient torus.
    pub fn interpolate(spec: &[CMat], lattice: &PhaseLattice, theta: &[f64]) -> CMat {
        let w = lattice.interpolation_weights(theta);
        let mut out = spec[0].clone() * w[0];
        for (m, wp) in spec.iter().zip(&w).skip(1) {
            out.scaled_add(*wp, m);
        }
        out
    }

    /// Restrict to the block of rows and columns selected by `keep`.
    pub fn compress(&self, keep: impl Fn(i64) -> bool) -> Self {
        let xm = self.xi_max as i64;
        self.map(|_, a| {
            let mut out = a.clone();
            for ((r, c), v) in out.indexed_iter_mut() {
                if !(keep(r as i64 - xm) && keep(c as i64 - xm)) {
                    *v = zero();
                }
            }
            out
        })
    }
}

/// Sharp projectors onto non-negative and negative frequencies.
pub fn projector_matrices(xi_max: usize) -> (CMat, CMat) {
    let one = |b: bool| C64::new(f64::from(u8::from(b)), 0.0);
    (multiplier_matrix(xi_max, |xi| one(xi >= 0)), multiplier_matrix(xi_max, |xi| one(xi < 0)))
}

/// Diagonal matrix of a multiplier on the band.
pub fn multiplier_matrix(xi_max: usize, f: impl Fn(i64) -> C64) -> CMat {
    let n = 2 * xi_max + 1;
    let d: Vec<C64> = (0..n).map(|i| f(i as i64 - xi_max as i64)).collect();
    linalg::diag(&d)
}
