//! Computational grid in the angle variables.
//!
//! Data that depends on phi only through a sublattice of modes is sampled on
//! the quotient torus: with basis rows `b_i`, a function of `phi` is stored as a
//! function of `theta_i = b_i . phi`. A mode `m` of `theta` is the mode
//! `l = sum_i m_i b_i` of `phi`, with divisor `omega . l = omega' . m` where
//! `omega'_i = omega . b_i`. This is exact, and collapses the worked examples
//! (phases like `phi_1 + phi_2`) to a one-dimensional grid.

use crate::error::{Error, Result};
use crate::fft;
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const DIVISOR_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLattice {
    pub nu: usize,
    pub n_phi: usize,
    pub basis: Vec<Vec<i64>>,
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl PhaseLattice {
    pub fn identity(nu: usize, n_phi: usize) -> Self {
        let basis = (0..nu)
            .map(|i| (0..nu).map(|j| i64::from(i == j)).collect())
            .collect();
        PhaseLattice { nu, n_phi, basis }
    }

    /// Constant-in-phi data: a single sample point.
    pub fn trivial(nu: usize, n_phi: usize) -> Self {
        PhaseLattice { nu, n_phi, basis: Vec::new() }
    }

    /// Smallest supported lattice containing every listed mode: trivial,
    /// generated by one primitive vector, or the full lattice.
    pub fn from_modes(nu: usize, n_phi: usize, modes: &[Vec<i64>]) -> Self {
        let nonzero: Vec<&Vec<i64>> = modes.iter().filter(|l| l.iter().any(|&c| c != 0)).collect();
        let Some(first) = nonzero.first() else {
            return Self::trivial(nu, n_phi);
        };
        let g = first.iter().fold(0, |acc, &c| gcd(acc, c));
        let mut p: Vec<i64> = first.iter().map(|c| c / g).collect();
        if p.iter().find(|&&c| c != 0).copied().unwrap_or(1) < 0 {
            p.iter_mut().for_each(|c| *c = -*c);
        }
        let lat = PhaseLattice { nu, n_phi, basis: vec![p] };
        if nonzero.iter().all(|l| lat.reduce(l).is_some()) {
            lat
        } else {
            Self::identity(nu, n_phi)
        }
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    pub fn n_points(&self) -> usize {
        self.n_phi.pow(self.rank() as u32)
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.n_phi; self.rank()]
    }

    fn digits(&self, mut p: usize) -> Vec<usize> {
        let r = self.rank();
        let mut d = vec![0; r];
        for i in (0..r).rev() {
            d[i] = p % self.n_phi;
            p /= self.n_phi;
        }
        d
    }

    pub fn theta(&self, p: usize) -> Vec<f64> {
        self.digits(p)
            .into_iter()
            .map(|d| 2.0 * PI * d as f64 / self.n_phi as f64)
            .collect()
    }

    /// Mode of flat FFT bin `p` and whether any component sits on a Nyquist bin.
    pub fn mode(&self, p: usize) -> (Vec<i64>, bool) {
        let d = self.digits(p);
        let nyq = d.iter().any(|&j| fft::is_nyquist(j, self.n_phi));
        (d.into_iter().map(|j| fft::signed_index(j, self.n_phi)).collect(), nyq)
    }

    pub fn modes(&self) -> Vec<(Vec<i64>, bool)> {
        (0..self.n_points()).map(|p| self.mode(p)).collect()
    }

    pub fn lift(&self, m: &[i64]) -> Vec<i64> {
        let mut l = vec![0; self.nu];
        for (mi, b) in m.iter().zip(&self.basis) {
            for (lj, bj) in l.iter_mut().zip(b) {
                *lj += mi * bj;
            }
        }
        l
    }

    /// Coordinates of `l` on the basis, if it lies in the lattice.
    pub fn reduce(&self, l: &[i64]) -> Option<Vec<i64>> {
        if l.len() != self.nu {
            return None;
        }
        match self.rank() {
            0 => l.iter().all(|&c| c == 0).then(Vec::new),
            1 => {
                let p = &self.basis[0];
                let (i, &pi) = p.iter().enumerate().find(|(_, c)| **c != 0)?;
                if l[i] % pi != 0 {
                    return None;
                }
                let m = l[i] / pi;
                p.iter().zip(l).all(|(a, b)| a * m == *b).then(|| vec![m])
            }
            r if r == self.nu && *self == Self::identity(self.nu, self.n_phi) => Some(l.to_vec()),
            _ => None,
        }
    }

    pub fn reduced_omega(&self, omega: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.iter().zip(omega).map(|(bi, w)| *bi as f64 * w).sum())
            .collect()
    }

    /// An angle vector `phi` with `b_i . phi = theta_i`, valid for evaluating
    /// any function whose modes lie in the lattice.
    pub fn phi_representative(&self, theta: &[f64]) -> Vec<f64> {
        match self.rank() {
            0 => vec![0.0; self.nu],
            1 => {
                let p = &self.basis[0];
                let n2: i64 = p.iter().map(|c| c * c).sum();
                p.iter().map(|c| theta[0] * *c as f64 / n2 as f64).collect()
            }
            _ => theta.to_vec(),
        }
    }

    /// Point of the quotient torus reached at time `t` along `phi = phi0 + omega t`.
    pub fn theta_at(&self, omega: &[f64], phi0: &[f64], t: f64) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| {
                b.iter()
                    .enumerate()
                    .map(|(j, bj)| *bj as f64 * (phi0.get(j).copied().unwrap_or(0.0) + omega[j] * t))
                    .sum()
            })
            .collect()
    }

    /// Forward (normalized) or inverse transform over the angle axes of a
    /// row-major block `[points, inner]`.
    pub fn transform(&self, data: &mut [C64], inner: usize, inverse: bool) {
        let mut shape = self.shape();
        shape.push(inner);
        for ax in 0..self.rank() {
            fft::along_axis(data, &shape, ax, inverse);
        }
        if !inverse {
            let s = 1.0 / self.n_points() as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Trigonometric interpolation weights `e^{i m . theta}` per bin, with
    /// Nyquist bins split symmetrically so real data interpolates to real values.
    pub fn interpolation_weights(&self, theta: &[f64]) -> Vec<C64> {
        (0..self.n_points())
            .map(|p| {
                let d = self.digits(p);
                let mut w = C64::new(1.0, 0.0);
                for (j, th) in d.iter().zip(theta) {
                    let m = fft::signed_index(*j, self.n_phi) as f64;
                    w *= if fft::is_nyquist(*j, self.n_phi) {
                        C64::new((m * th).cos(), 0.0)
                    } else {
                        C64::from_polar(1.0, m * th)
                    };
                }
                w
            })
            .collect()
    }
}

pub fn small_divisor(lattice: &PhaseLattice, m: &[i64], j: Option<i64>, d: f64) -> Error {
    Error::SmallDivisor { ell: lattice.lift(m), j, divisor: d }
}

/// Samples of a function on (angle lattice) x (spatial grid), row-major
/// `[point, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub lattice: PhaseLattice,
    pub values: Array2<C64>,
}

impl PhaseField {
    pub fn zeros(lattice: &PhaseLattice, n_x: usize) -> Self {
        PhaseField { lattice: lattice.clone(), values: Array2::zeros((lattice.n_points(), n_x)) }
    }

    pub fn from_fn(lattice: &PhaseLattice, n_x: usize, f: impl Fn(&[f64], f64) -> C64) -> Self {
        let mut out = Self::zeros(lattice, n_x);
        for p in 0..lattice.n_points() {
            let th = lattice.theta(p);
            for j in 0..n_x {
                out.values[[p, j]] = f(&th, 2.0 * PI * j as f64 / n_x as f64);
            }
        }
        out
    }

    pub fn n_x(&self) -> usize {
        self.values.ncols()
    }

    /// Normalized joint Fourier coefficients in FFT layout.
    pub fn spectrum(&self) -> Array2<C64> {
        let mut s = self.values.as_standard_layout().to_owned();
        let nx = self.n_x();
        let data = s.as_slice_mut().expect("standard layout");
        self.lattice.transform(data, nx, false);
        for row in data.chunks_mut(nx) {
            fft::forward(row);
            row.iter_mut().for_each(|v| *v /= nx as f64);
        }
        s
    }

    pub fn from_spectrum(lattice: &PhaseLattice, spec: &Array2<C64>) -> Self {
        let mut s = spec.as_standard_layout().to_owned();
        let nx = s.ncols();
        let data = s.as_slice_mut().expect("standard layout");
        for row in data.chunks_mut(nx) {
            fft::backward(row);
        }
        lattice.transform(data, nx, true);
        PhaseField { lattice: lattice.clone(), values: s }
    }

    /// Multiply each joint mode `(m, k)` by `f(m, k, nyquist)`, where
    /// `nyquist = (angle bin is Nyquist, x bin is Nyquist)`.
    pub fn map_modes(&self, mut f: impl FnMut(&[i64], i64, (bool, bool)) -> Result<C64>) -> Result<Self> {
        let mut s = self.spectrum();
        let nx = self.n_x();
        for p in 0..self.lattice.n_points() {
            let (m, nyq) = self.lattice.mode(p);
            for j in 0..nx {
                let k = fft::signed_index(j, nx);
                let c = s[[p, j]];
                s[[p, j]] = c * f(&m, k, (nyq, fft::is_nyquist(j, nx)))?;
            }
        }
        Ok(Self::from_spectrum(&self.lattice, &s))
    }

    pub fn dx(&self) -> Self {
        self.map_modes(|_, k, (_, nyq)| Ok(if nyq { C64::new(0.0, 0.0) } else { C64::new(0.0, k as f64) }))
            .expect("infallible")
    }

    pub fn omega_dphi(&self, omega_red: &[f64]) -> Self {
        self.map_modes(|m, _, (nyq, _)| {
            let d: f64 = m.iter().zip(omega_red).map(|(a, w)| *a as f64 * w).sum();
            Ok(if nyq { C64::new(0.0, 0.0) } else { C64::new(0.0, d) })
        })
        .expect("infallible")
    }

    /// Divide mode `(m, k)` by `i (omega' . m + lambda k)`; the kernel and
    /// Nyquist bins map to zero.
    pub fn invert_mixed(&self, omega_red: &[f64], lambda: f64) -> Result<Self> {
        let lat = self.lattice.clone();
        self.map_modes(|m, k, (an, xn)| {
            let d: f64 = m.iter().zip(omega_red).map(|(a, w)| *a as f64 * w).sum::<f64>() + lambda * k as f64;
            if an || xn || (k == 0 && m.iter().all(|&c| c == 0)) {
                return Ok(C64::new(0.0, 0.0));
            }
            if d.abs() < DIVISOR_FLOOR {
                return Err(small_divisor(&lat, m, Some(k), d));
            }
            Ok(C64::new(0.0, -1.0 / d))
        })
    }

    pub fn invert_omega_dphi(&self, omega_red: &[f64]) -> Result<Self> {
        let lat = self.lattice.clone();
        self.map_modes(|m, _, (nyq, _)| {
            let d: f64 = m.iter().zip(omega_red).map(|(a, w)| *a as f64 * w).sum();
            if nyq || m.iter().all(|&c| c == 0) {
                return Ok(C64::new(0.0, 0.0));
            }
            if d.abs() < DIVISOR_FLOOR {
                return Err(small_divisor(&lat, m, None, d));
            }
            Ok(C64::new(0.0, -1.0 / d))
        })
    }

    pub fn invert_dx(&self) -> Self {
        self.map_modes(|_, k, (_, nyq)| {
            Ok(if nyq || k == 0 { C64::new(0.0, 0.0) } else { C64::new(0.0, -1.0 / k as f64) })
        })
        .expect("infallible")
    }

    /// Average over the angle points, broadcast back to every point.
    pub fn mean_phi(&self) -> Self {
        let np = self.lattice.n_points() as f64;
        let avg = self.values.sum_axis(ndarray::Axis(0)) / np;
        let mut out = self.clone();
        for mut row in out.values.rows_mut() {
            row.assign(&avg);
        }
        out
    }

    pub fn mean_all(&self) -> C64 {
        self.values.mean().unwrap_or_default()
    }

    /// Values at x-points of the first angle point, for phi-independent fields.
    pub fn row(&self, p: usize) -> Vec<C64> {
        self.values.row(p).to_vec()
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Self {
        let mut out = self.clone();
        ndarray::Zip::from(&mut out.values).and(&other.values).for_each(|a, b| *a = f(*a, *b));
        out
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        let mut out = self.clone();
        out.values.mapv_inplace(f);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.im.abs()))
    }

    pub fn real_part(&self) -> Self {
        self.map(|v| C64::new(v.re, 0.0))
    }

    /// Joint modes `(l, k)` with coefficient magnitude above `tol`.
    pub fn support(&self, tol: f64) -> Vec<(Vec<i64>, i64)> {
        let s = self.spectrum();
        let nx = self.n_x();
        let mut out = Vec::new();
        for p in 0..self.lattice.n_points() {
            let (m, _) = self.lattice.mode(p);
            for j in 0..nx {
                if s[[p, j]].norm() > tol {
                    out.push((self.lattice.lift(&m), fft::signed_index(j, nx)));
                }
            }
        }
        out
    }

    /// Band of spatial Fourier coefficients `c[p][k]`, `|k| <= kmax`, at every
    /// angle point (layout `[point, k + kmax]`).
    pub fn x_coefficients(&self, kmax: usize) -> Array2<C64> {
        let nx = self.n_x();
        let mut out = Array2::zeros((self.lattice.n_points(), 2 * kmax + 1));
        let mut buf = vec![C64::new(0.0, 0.0); nx];
        for p in 0..self.lattice.n_points() {
            buf.copy_from_slice(self.values.row(p).as_slice().expect("contiguous row"));
            fft::forward(&mut buf);
            for i in 0..2 * kmax + 1 {
                let k = i as i64 - kmax as i64;
                if (k.unsigned_abs() as usize) * 2 < nx {
                    out[[p, i]] = buf[k.rem_euclid(nx as i64) as usize] / nx as f64;
                }
            }
        }
        out
    }
}
