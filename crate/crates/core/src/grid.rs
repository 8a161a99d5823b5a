//! Discretization of the angle torus and the spatial circle, plus the
//! Fourier/Sobolev layer on the truncated spatial band.

use crate::error::{Error, Result};
use crate::fft;
use ndarray::Array1;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Japanese bracket `(1 + xi^2)^{1/2}`.
pub fn japanese(xi: f64) -> f64 {
    (1.0 + xi * xi).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub nu: usize,
    pub n_phi: usize,
    pub xi_max: usize,
    pub n_x: usize,
}

impl TorusGrid {
    pub fn new(nu: usize, n_phi: usize, xi_max: usize, n_x: usize) -> Result<Self> {
        let g = TorusGrid { nu, n_phi, xi_max, n_x };
        g.validate()?;
        Ok(g)
    }

    /// Grid with the smallest admissible spatial sample count.
    pub fn with_band(nu: usize, n_phi: usize, xi_max: usize) -> Result<Self> {
        Self::new(nu, n_phi, xi_max, 2 * xi_max + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 || self.n_phi == 0 || self.xi_max == 0 || self.n_x == 0 {
            return Err(Error::InvalidInput("grid counts must be positive".into()));
        }
        if self.n_phi < 4 {
            return Err(Error::InvalidInput(format!("n_phi = {} < 4", self.n_phi)));
        }
        if self.n_x < 2 * self.xi_max + 2 {
            return Err(Error::InvalidInput(format!(
                "n_x = {} aliases the band |xi| <= {}",
                self.n_x, self.xi_max
            )));
        }
        Ok(())
    }

    pub fn band_len(&self) -> usize {
        2 * self.xi_max + 1
    }

    pub fn xi(&self, i: usize) -> i64 {
        i as i64 - self.xi_max as i64
    }

    pub fn index(&self, xi: i64) -> Option<usize> {
        let i = xi + self.xi_max as i64;
        (i >= 0 && (i as usize) < self.band_len()).then_some(i as usize)
    }

    pub fn x_points(&self) -> Vec<f64> {
        (0..self.n_x).map(|j| 2.0 * PI * j as f64 / self.n_x as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevIndex(f64);

impl SobolevIndex {
    pub fn new(s: f64) -> Result<Self> {
        if !(s >= 0.0) || !s.is_finite() {
            return Err(Error::InvalidInput(format!("Sobolev index {s} must be >= 0")));
        }
        Ok(SobolevIndex(s))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Truncated Fourier coefficients `coeffs[xi + xi_max]` for `|xi| <= xi_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierState {
    pub xi_max: usize,
    pub coeffs: Array1<C64>,
}

impl FourierState {
    pub fn zeros(xi_max: usize) -> Self {
        FourierState { xi_max, coeffs: Array1::zeros(2 * xi_max + 1) }
    }

    pub fn from_coeffs(xi_max: usize, coeffs: Array1<C64>) -> Result<Self> {
        if coeffs.len() != 2 * xi_max + 1 {
            return Err(Error::GridMismatch(format!(
                "{} coefficients for band {}",
                coeffs.len(),
                xi_max
            )));
        }
        let s = FourierState { xi_max, coeffs };
        s.check_finite()?;
        Ok(s)
    }

    pub fn mode(xi_max: usize, xi: i64) -> Self {
        let mut s = Self::zeros(xi_max);
        s.coeffs[(xi + xi_max as i64) as usize] = C64::new(1.0, 0.0);
        s
    }

    pub fn get(&self, xi: i64) -> C64 {
        let i = xi + self.xi_max as i64;
        if i < 0 || i as usize >= self.coeffs.len() {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[i as usize]
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidInput("non-finite Fourier coefficient".into()))
        }
    }
}

/// Trapezoidal Fourier analysis, `coeffs[xi] = (1/2pi) int u e^{-i x xi}`.
pub fn analyze(grid: &TorusGrid, samples: &[C64]) -> Result<FourierState> {
    if samples.len() != grid.n_x {
        return Err(Error::GridMismatch(format!(
            "{} samples on a grid of {}",
            samples.len(),
            grid.n_x
        )));
    }
    if !samples.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
        return Err(Error::InvalidInput("non-finite sample".into()));
    }
    let mut buf = samples.to_vec();
    fft::forward(&mut buf);
    let n = grid.n_x as i64;
    let scale = 1.0 / grid.n_x as f64;
    let coeffs = (0..grid.band_len())
        .map(|i| buf[grid.xi(i).rem_euclid(n) as usize] * scale)
        .collect();
    Ok(FourierState { xi_max: grid.xi_max, coeffs })
}

/// `u(x_j) = sum_xi coeffs[xi] e^{i x_j xi}`.
pub fn synthesize(grid: &TorusGrid, state: &FourierState) -> Result<Vec<C64>> {
    if state.xi_max != grid.xi_max {
        return Err(Error::GridMismatch(format!(
            "state band {} vs grid band {}",
            state.xi_max, grid.xi_max
        )));
    }
    state.check_finite()?;
    let n = grid.n_x as i64;
    let mut buf = vec![C64::new(0.0, 0.0); grid.n_x];
    for (i, c) in state.coeffs.iter().enumerate() {
        buf[grid.xi(i).rem_euclid(n) as usize] += *c;
    }
    fft::backward(&mut buf);
    Ok(buf)
}

pub fn sobolev_norm(state: &FourierState, s: SobolevIndex) -> f64 {
    let xm = state.xi_max as i64;
    state
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| japanese((i as i64 - xm) as f64).powf(2.0 * s.value()) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `<u, v> = int u conj(v) dx = 2 pi sum u[xi] conj(v[xi])`.
pub fn l2_inner(u: &FourierState, v: &FourierState) -> Result<C64> {
    if u.xi_max != v.xi_max {
        return Err(Error::GridMismatch(format!("bands {} and {}", u.xi_max, v.xi_max)));
    }
    let sum: C64 = u.coeffs.iter().zip(v.coeffs.iter()).map(|(a, b)| a * b.conj()).sum();
    Ok(sum * 2.0 * PI)
}

/// Sobolev norm of a raw coefficient vector on the band.
pub fn hs_norm(coeffs: &[C64], xi_max: usize, s: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| japanese(i as f64 - xi_max as f64).powf(2.0 * s) * c.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> TorusGrid {
        TorusGrid::with_band(2, 8, 16).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(TorusGrid::new(2, 3, 8, 18).is_err());
        assert!(TorusGrid::new(2, 8, 8, 17).is_err());
        assert!(TorusGrid::new(0, 8, 8, 18).is_err());
        let g = TorusGrid::new(2, 8, 8, 18).unwrap();
        assert_eq!(g.band_len(), 17);
        assert_eq!(g.index(-8), Some(0));
        assert_eq!(g.index(9), None);
    }

    #[test]
    fn constant_has_single_mode() {
        let g = grid();
        let s = analyze(&g, &vec![C64::new(1.0, 0.0); g.n_x]).unwrap();
        for xi in -16..=16 {
            let want = if xi == 0 { 1.0 } else { 0.0 };
            assert!((s.get(xi) - want).norm() < 1e-14);
        }
    }

    #[test]
    fn plane_wave_coefficient() {
        let g = grid();
        let u: Vec<C64> = g.x_points().iter().map(|x| C64::from_polar(1.0, 3.0 * x)).collect();
        let s = analyze(&g, &u).unwrap();
        assert!((s.get(3) - 1.0).norm() < 1e-14);
        assert!(s.coeffs.iter().map(|c| c.norm()).sum::<f64>() - 1.0 < 1e-12);
    }

    #[test]
    fn synthesize_unit_modes() {
        let g = grid();
        let u = synthesize(&g, &FourierState::mode(16, 0)).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).norm() < 1e-14));
        let u = synthesize(&g, &FourierState::mode(16, -2)).unwrap();
        for (v, x) in u.iter().zip(g.x_points()) {
            assert!((v - C64::from_polar(1.0, -2.0 * x)).norm() < 1e-13);
        }
    }

    #[test]
    fn rejects_bad_samples() {
        let g = grid();
        assert!(analyze(&g, &vec![C64::new(0.0, 0.0); 5]).is_err());
        let mut u = vec![C64::new(0.0, 0.0); g.n_x];
        u[2] = C64::new(f64::NAN, 0.0);
        assert!(analyze(&g, &u).is_err());
    }

    #[test]
    fn sobolev_examples() {
        let s = FourierState::mode(16, 3);
        assert!((sobolev_norm(&s, SobolevIndex::new(2.0).unwrap()) - 10.0).abs() < 1e-12);
        assert!((sobolev_norm(&s, SobolevIndex::new(1.0).unwrap()) - 10f64.sqrt()).abs() < 1e-12);
        let one = FourierState::mode(16, 0);
        assert!((sobolev_norm(&one, SobolevIndex::new(3.7).unwrap()) - 1.0).abs() < 1e-14);
        assert!(SobolevIndex::new(-0.1).is_err());
    }

    #[test]
    fn inner_product_examples() {
        let a = FourierState::mode(4, 1);
        let b = FourierState::mode(4, 2);
        assert!((l2_inner(&a, &a).unwrap() - 2.0 * PI).norm() < 1e-14);
        assert!(l2_inner(&a, &b).unwrap().norm() < 1e-14);
        assert!(l2_inner(&a, &FourierState::mode(5, 1)).is_err());
    }

    #[test]
    fn s0_norm_matches_quadrature() {
        let g = grid();
        let u: Vec<C64> = g
            .x_points()
            .iter()
            .map(|x| C64::new(x.cos() + 0.3 * (5.0 * x).sin(), 0.2 * (2.0 * x).cos()))
            .collect();
        let s = analyze(&g, &u).unwrap();
        let quad = u.iter().map(|v| v.norm_sqr()).sum::<f64>() * 2.0 * PI / g.n_x as f64;
        let n0 = sobolev_norm(&s, SobolevIndex::new(0.0).unwrap());
        assert!((2.0 * PI * n0 * n0 - quad).abs() < 1e-12 * quad);
    }

    fn band_state() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 33)
    }

    proptest! {
        #[test]
        fn roundtrip_is_identity(c in band_state()) {
            let g = grid();
            let coeffs: Array1<C64> = c.iter().map(|(a, b)| C64::new(*a, *b)).collect();
            let s = FourierState::from_coeffs(16, coeffs).unwrap();
            let u = synthesize(&g, &s).unwrap();
            let back = analyze(&g, &u).unwrap();
            let scale = s.coeffs.iter().map(|c| c.norm()).fold(1e-300, f64::max);
            for (a, b) in back.coeffs.iter().zip(s.coeffs.iter()) {
                prop_assert!((a - b).norm() <= 1e-12 * scale);
            }
            let u2 = synthesize(&g, &back).unwrap();
            for (a, b) in u.iter().zip(&u2) {
                prop_assert!((a - b).norm() <= 1e-12 * scale * 33.0);
            }
        }

        #[test]
        fn parseval_and_monotone(c in band_state(), s1 in 0.0..2.0f64, ds in 0.0..2.0f64) {
            let coeffs: Array1<C64> = c.iter().map(|(a, b)| C64::new(*a, *b)).collect();
            let s = FourierState::from_coeffs(16, coeffs).unwrap();
            let n0 = sobolev_norm(&s, SobolevIndex::new(0.0).unwrap());
            let ip = l2_inner(&s, &s).unwrap();
            prop_assert!((ip.re - 2.0 * PI * n0 * n0).abs() <= 1e-12 * ip.re.max(1e-300));
            let a = sobolev_norm(&s, SobolevIndex::new(s1).unwrap());
            let b = sobolev_norm(&s, SobolevIndex::new(s1 + ds).unwrap());
            prop_assert!(a <= b * (1.0 + 1e-14));
        }

        #[test]
        fn analyze_is_linear(c1 in band_state(), c2 in band_state(), a in -2.0..2.0f64, b in -2.0..2.0f64) {
            let g = grid();
            let to_state = |c: &Vec<(f64, f64)>| {
                FourierState::from_coeffs(16, c.iter().map(|(x, y)| C64::new(*x, *y)).collect()).unwrap()
            };
            let u = synthesize(&g, &to_state(&c1)).unwrap();
            let v = synthesize(&g, &to_state(&c2)).unwrap();
            let w: Vec<C64> = u.iter().zip(&v).map(|(p, q)| p * a + q * b).collect();
            let lhs = analyze(&g, &w).unwrap();
            let (su, sv) = (analyze(&g, &u).unwrap(), analyze(&g, &v).unwrap());
            for i in 0..33 {
                prop_assert!((lhs.coeffs[i] - (su.coeffs[i] * a + sv.coeffs[i] * b)).norm() < 1e-12);
            }
        }

        #[test]
        fn inner_product_conjugate_symmetric(c1 in band_state(), c2 in band_state()) {
            let to_state = |c: &Vec<(f64, f64)>| {
                FourierState::from_coeffs(16, c.iter().map(|(x, y)| C64::new(*x, *y)).collect()).unwrap()
            };
            let (u, v) = (to_state(&c1), to_state(&c2));
            let a = l2_inner(&u, &v).unwrap();
            let b = l2_inner(&v, &u).unwrap();
            prop_assert!((a.conj() - b).norm() < 1e-12);
        }
    }
}
