//! Dense complex matrix helpers on top of ndarray-linalg (LAPACK).

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ShapeBuilder, Zip};
use ndarray_linalg::{EighInto, Inverse, SVDInto, UPLO};
use num_complex::Complex64 as C64;

pub type CMat = Array2<C64>;

pub fn adjoint(a: &CMat) -> CMat {
    a.t().mapv(|v| v.conj())
}

/// Hermitian part `(a + a^*)/2`.
pub fn sym(a: &CMat) -> CMat {
    let mut out = a.clone();
    Zip::from(&mut out).and(&a.t()).for_each(|x, y| *x = (*x + y.conj()) * 0.5);
    out
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    Zip::from(a).and(b).fold(0.0, |m, x, y| m.max((x - y).norm()))
}

/// Largest entry of `a - a^*`.
pub fn hermitian_defect(a: &CMat) -> f64 {
    Zip::from(a).and(&a.t()).fold(0.0, |m, x, y| m.max((x - y.conj()).norm()))
}

pub fn identity(n: usize) -> CMat {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

pub fn diag(d: &[C64]) -> CMat {
    Array2::from_diag(&Array1::from(d.to_vec()))
}

/// Eigendecomposition of the Hermitian part of a matrix.
pub struct HermEig {
    pub values: Array1<f64>,
    pub vectors: CMat,
}

impl HermEig {
    pub fn new(a: &CMat) -> Result<Self> {
        // LAPACK reads a row-major buffer as the transpose, which for a
        // Hermitian matrix is its conjugate; hand it column-major storage.
        let h = sym(a);
        let mut f = Array2::zeros(h.raw_dim().f());
        f.assign(&h);
        let (values, vectors) = f.eigh_into(UPLO::Lower)?;
        Ok(HermEig { values, vectors })
    }

    /// `U f(lambda) U^*`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> C64) -> CMat {
        let u = &self.vectors;
        let mut scaled = u.clone();
        for (mut col, &l) in scaled.columns_mut().into_iter().zip(self.values.iter()) {
            let s = f(l);
            col.mapv_inplace(|v| v * s);
        }
        scaled.dot(&adjoint(u))
    }

    /// `e^{i s G}`.
    pub fn expi(&self, s: f64) -> CMat {
        self.apply_fn(|l| C64::from_polar(1.0, s * l))
    }

    /// Term `i e^{iG} d/dphi(e^{-iG})` for a derivative direction `gdot`:
    /// `U [(U^* gdot U) o F] U^*` with `F_jk = (e^{i d} - 1)/(i d)`,
    /// `d = lambda_j - lambda_k`.
    pub fn duhamel(&self, gdot: &CMat) -> CMat {
        let u = &self.vectors;
        let mut inner = adjoint(u).dot(gdot).dot(u);
        let lam = &self.values;
        for ((j, k), v) in inner.indexed_iter_mut() {
            *v *= phi1(C64::new(0.0, lam[j] - lam[k]));
        }
        u.dot(&inner).dot(&adjoint(u))
    }
}

/// `(e^z - 1)/z`, with a series near zero.
pub fn phi1(z: C64) -> C64 {
    if z.norm() < 1e-3 {
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for n in 2..8 {
            term *= z / n as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp() - 1.0) / z
    }
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    a.inv().map_err(|e| Error::Instability(format!("singular transformation: {e}")))
}

pub fn singular_values(a: &CMat) -> Result<Array1<f64>> {
    let (_, s, _) = a.clone().svd_into(false, false)?;
    Ok(s)
}

pub fn largest_singular_value(a: &CMat) -> Result<f64> {
    Ok(singular_values(a)?.iter().fold(0.0, |m: f64, v| m.max(*v)))
}

/// Conjugate a Hermitian field by `e^{iG}` including the phase-derivative term:
/// returns `e^{iG} v e^{-iG} + i e^{iG} (omega.d_phi e^{-iG})` and `e^{-iG}`.
pub fn conjugate_by_exp(v: &CMat, g: &CMat, gdot: Option<&CMat>) -> Result<(CMat, CMat)> {
    let eig = HermEig::new(g)?;
    let e = eig.expi(1.0);
    let mut out = e.dot(v).dot(&adjoint(&e));
    if let Some(gd) = gdot {
        out += &eig.duhamel(gd);
    }
    Ok((out, adjoint(&e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_herm(n: usize, seed: u64, scale: f64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        sym(&a) * C64::new(scale, 0.0)
    }

    fn taylor_expi(g: &CMat, terms: usize) -> CMat {
        let n = g.nrows();
        let mut out = identity(n);
        let mut term = identity(n);
        for k in 1..terms {
            term = term.dot(g) * C64::new(0.0, 1.0 / k as f64);
            out += &term;
        }
        out
    }

    #[test]
    fn exponential_matches_taylor() {
        let g = random_herm(12, 1, 0.3);
        let e = HermEig::new(&g).unwrap().expi(1.0);
        let err = max_abs_diff(&e, &taylor_expi(&g, 40));
        assert!(err < 1e-13, "{err}");
        let uu = adjoint(&e).dot(&e);
        assert!(max_abs_diff(&uu, &identity(12)) < 1e-13);
    }

    #[test]
    fn duhamel_matches_finite_difference() {
        let g = random_herm(10, 2, 0.5);
        let gd = random_herm(10, 3, 1.0);
        let eig = HermEig::new(&g).unwrap();
        let h = 1e-5;
        let em = |s: f64| HermEig::new(&(&g + &(&gd * C64::new(s, 0.0)))).unwrap().expi(-1.0);
        let deriv = (em(h) - em(-h)) / C64::new(2.0 * h, 0.0);
        let want = eig.expi(1.0).dot(&deriv) * C64::new(0.0, 1.0);
        let err = max_abs_diff(&eig.duhamel(&gd), &want);
        assert!(err < 1e-8, "{err}");
        assert!(hermitian_defect(&eig.duhamel(&gd)) < 1e-13);
    }

    #[test]
    fn phi1_is_continuous() {
        let a = phi1(C64::new(0.0, 0.999e-3));
        let b = phi1(C64::new(0.0, 1.001e-3));
        assert!((a - b).norm() < 1e-5);
        assert!((phi1(C64::new(0.0, 0.0)) - 1.0).norm() < 1e-16);
    }

    #[test]
    fn inverse_and_singular_values() {
        let a = random_herm(8, 4, 1.0) + identity(8) * C64::new(5.0, 0.0);
        let ai = inverse(&a).unwrap();
        assert!(max_abs_diff(&a.dot(&ai), &identity(8)) < 1e-12);
        let d = diag(&[C64::new(3.0, 0.0), C64::new(-7.0, 0.0), C64::new(0.0, 2.0)]);
        assert!((largest_singular_value(&d).unwrap() - 7.0).abs() < 1e-12);
    }
}
