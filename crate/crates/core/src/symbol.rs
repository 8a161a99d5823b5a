//! Symbols a(phi, x, xi), their quantization on the truncated band, and the
//! asymptotic calculus (composition, adjoint, Poisson bracket).
//!
//! Two representations are supported. A closed symbol is a finite sum of
//! terms `c(phi, x) m(xi)` with `c` a trigonometric polynomial and `m` a
//! closed-form multiplier; it is closed under products, derivatives and
//! divisor inversion, with exact xi-derivatives. A lattice symbol stores the
//! spatial Fourier coefficients `a_hat(phi_p, k, xi)` at integer `xi`; its
//! xi-derivatives use a centered five-point stencil.

use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::grid::{analyze, japanese, FourierState, TorusGrid};
use crate::lattice::PhaseLattice;
use crate::linalg::{self, CMat};
use crate::mult::{CutoffKind, Mult};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

fn ipow(n: usize) -> C64 {
    [C64::new(1.0, 0.0), C64::new(0.0, 1.0), C64::new(-1.0, 0.0), C64::new(0.0, -1.0)][n % 4]
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub l: Vec<i64>,
    pub k: i64,
    pub re: f64,
    pub im: f64,
}

/// Trigonometric polynomial `sum c_{l,k} e^{i(l.phi + k x)}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TrigPolyRepr", into = "TrigPolyRepr")]
pub struct TrigPoly {
    pub nu: usize,
    pub modes: BTreeMap<(Vec<i64>, i64), C64>,
}

#[derive(Serialize, Deserialize)]
struct TrigPolyRepr {
    nu: usize,
    modes: Vec<ModeEntry>,
}

impl From<TrigPolyRepr> for TrigPoly {
    fn from(r: TrigPolyRepr) -> Self {
        let mut p = TrigPoly::zero(r.nu);
        for m in r.modes {
            p.add_mode(m.l, m.k, C64::new(m.re, m.im));
        }
        p
    }
}

impl From<TrigPoly> for TrigPolyRepr {
    fn from(p: TrigPoly) -> Self {
        TrigPolyRepr {
            nu: p.nu,
            modes: p
                .modes
                .into_iter()
                .map(|((l, k), c)| ModeEntry { l, k, re: c.re, im: c.im })
                .collect(),
        }
    }
}

/// Elementary factor of a real trigonometric term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wave {
    One,
    Cos,
    Sin,
}

impl Wave {
    /// Exponential coefficients `(sign, weight)` of cos / sin / 1.
    fn split(self) -> Vec<(i64, C64)> {
        match self {
            Wave::One => vec![(0, C64::new(1.0, 0.0))],
            Wave::Cos => vec![(1, C64::new(0.5, 0.0)), (-1, C64::new(0.5, 0.0))],
            Wave::Sin => vec![(1, C64::new(0.0, -0.5)), (-1, C64::new(0.0, 0.5))],
        }
    }
}

impl TrigPoly {
    pub fn zero(nu: usize) -> Self {
        TrigPoly { nu, modes: BTreeMap::new() }
    }

    pub fn constant(nu: usize, c: C64) -> Self {
        let mut p = Self::zero(nu);
        p.add_mode(vec![0; nu], 0, c);
        p
    }

    pub fn add_mode(&mut self, l: Vec<i64>, k: i64, c: C64) {
        assert_eq!(l.len(), self.nu, "mode dimension");
        let e = self.modes.entry((l, k)).or_insert(zero());
        *e += c;
    }

    /// `amp * f(l . phi) * g(k x)` for `f, g` in {1, cos, sin}.
    pub fn wave(nu: usize, amp: f64, l: &[i64], phi_wave: Wave, k: i64, x_wave: Wave) -> Self {
        let mut p = Self::zero(nu);
        for (sl, wl) in phi_wave.split() {
            for (sk, wk) in x_wave.split() {
                let ll: Vec<i64> = l.iter().map(|c| c * sl).collect();
                p.add_mode(ll, k * sk, wl * wk * amp);
            }
        }
        p.prune(0.0);
        p
    }

    pub fn prune(&mut self, tol: f64) {
        self.modes.retain(|_, c| c.norm() > tol);
    }

    pub fn is_zero(&self) -> bool {
        self.modes.values().all(|c| c.norm() == 0.0)
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for ((l, k), c) in &o.modes {
            out.add_mode(l.clone(), *k, *c);
        }
        out
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.modes.values_mut().for_each(|v| *v *= c);
        out
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut out = Self::zero(self.nu);
        for ((l1, k1), c1) in &self.modes {
            for ((l2, k2), c2) in &o.modes {
                let l: Vec<i64> = l1.iter().zip(l2).map(|(a, b)| a + b).collect();
                out.add_mode(l, k1 + k2, c1 * c2);
            }
        }
        out
    }

    pub fn conj(&self) -> Self {
        let mut out = Self::zero(self.nu);
        for ((l, k), c) in &self.modes {
            out.add_mode(l.iter().map(|v| -v).collect(), -k, c.conj());
        }
        out
    }

    pub fn dx(&self, n: usize) -> Self {
        let mut out = self.clone();
        for ((_, k), c) in out.modes.iter_mut() {
            *c *= C64::new(0.0, *k as f64).powu(n as u32);
        }
        out.prune(0.0);
        out
    }

    pub fn try_map_modes(&self, f: impl Fn(&[i64], i64) -> Result<C64>) -> Result<Self> {
        let mut out = Self::zero(self.nu);
        for ((l, k), c) in &self.modes {
            let w = f(l, *k)?;
            if w != zero() {
                out.add_mode(l.clone(), *k, c * w);
            }
        }
        Ok(out)
    }

    pub fn eval(&self, phi: &[f64], x: f64) -> C64 {
        self.modes
            .iter()
            .map(|((l, k), c)| {
                let arg: f64 = l.iter().zip(phi).map(|(a, p)| *a as f64 * p).sum::<f64>() + *k as f64 * x;
                c * C64::from_polar(1.0, arg)
            })
            .sum()
    }

    /// Spatial Fourier coefficients at a fixed angle, `k -> sum_l c_{l,k} e^{il.phi}`.
    pub fn x_coefficients(&self, phi: &[f64]) -> BTreeMap<i64, C64> {
        let mut out = BTreeMap::new();
        for ((l, k), c) in &self.modes {
            let arg: f64 = l.iter().zip(phi).map(|(a, p)| *a as f64 * p).sum();
            *out.entry(*k).or_insert(zero()) += c * C64::from_polar(1.0, arg);
        }
        out
    }

    pub fn kmax(&self) -> i64 {
        self.modes.keys().map(|(_, k)| k.abs()).max().unwrap_or(0)
    }

    pub fn phase_modes(&self) -> Vec<Vec<i64>> {
        self.modes.keys().map(|(l, _)| l.clone()).collect()
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.add(&self.conj().scale(C64::new(-1.0, 0.0)))
            .modes
            .values()
            .all(|c| c.norm() <= tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: TrigPoly,
    pub mult: Mult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedSymbol {
    pub nu: usize,
    pub order: f64,
    pub terms: Vec<Term>,
}

impl ClosedSymbol {
    pub fn new(nu: usize, order: f64, terms: Vec<Term>) -> Self {
        ClosedSymbol { nu, order, terms }
    }

    pub fn multiplier(nu: usize, order: f64, mult: Mult) -> Self {
        Self::new(nu, order, vec![Term { coef: TrigPoly::constant(nu, C64::new(1.0, 0.0)), mult }])
    }

    pub fn function(coef: TrigPoly) -> Self {
        let nu = coef.nu;
        Self::new(nu, 0.0, vec![Term { coef, mult: Mult::constant(1.0) }])
    }

    pub fn product(coef: TrigPoly, order: f64, mult: Mult) -> Self {
        let nu = coef.nu;
        Self::new(nu, order, vec![Term { coef, mult }])
    }

    pub fn eval(&self, phi: &[f64], x: f64, xi: f64) -> C64 {
        self.terms.iter().map(|t| t.coef.eval(phi, x) * t.mult.eval(xi)).sum()
    }

    fn map_terms(&self, order: f64, f: impl Fn(&Term) -> Option<Term>) -> Self {
        ClosedSymbol { nu: self.nu, order, terms: self.terms.iter().filter_map(f).collect() }
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(o.terms.iter().cloned());
        ClosedSymbol { nu: self.nu, order: self.order.max(o.order), terms }
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map_terms(self.order, |t| Some(Term { coef: t.coef.scale(c), mult: t.mult.clone() }))
    }

    pub fn mul(&self, o: &Self) -> Self {
        let mut terms = Vec::new();
        for a in &self.terms {
            for b in &o.terms {
                let coef = a.coef.mul(&b.coef);
                if !coef.is_zero() {
                    terms.push(Term { coef, mult: a.mult.clone().times(b.mult.clone()) });
                }
            }
        }
        ClosedSymbol { nu: self.nu, order: self.order + o.order, terms }
    }

    pub fn dx(&self, n: usize) -> Self {
        self.map_terms(self.order, |t| {
            let coef = t.coef.dx(n);
            (!coef.is_zero()).then(|| Term { coef, mult: t.mult.clone() })
        })
    }

    pub fn dxi(&self, n: usize) -> Self {
        self.map_terms(self.order - n as f64, |t| {
            Some(Term { coef: t.coef.clone(), mult: t.mult.clone().derivative(n) })
        })
    }

    pub fn conj(&self) -> Self {
        self.map_terms(self.order, |t| Some(Term { coef: t.coef.conj(), mult: t.mult.clone().conj() }))
    }

    pub fn phase_modes(&self) -> Vec<Vec<i64>> {
        self.terms.iter().flat_map(|t| t.coef.phase_modes()).collect()
    }

    pub fn kmax(&self) -> i64 {
        self.terms.iter().map(|t| t.coef.kmax()).max().unwrap_or(0)
    }

    pub fn map_coefficients(&self, f: impl Fn(&[i64], i64) -> Result<C64>) -> Result<Self> {
        let mut terms = Vec::new();
        for t in &self.terms {
            let coef = t.coef.try_map_modes(&f)?;
            if !coef.is_zero() {
                terms.push(Term { coef, mult: t.mult.clone() });
            }
        }
        Ok(ClosedSymbol { nu: self.nu, order: self.order, terms })
    }

    /// Matrix on the band at angle `phi`: entry `(xi', xi)` is `a_hat(phi, xi' - xi, xi)`.
    pub fn matrix_at(&self, phi: &[f64], xi_max: usize) -> CMat {
        let n = 2 * xi_max + 1;
        let mut out = Array2::zeros((n, n));
        for t in &self.terms {
            let mvals: Vec<C64> = (0..n).map(|c| t.mult.eval(c as f64 - xi_max as f64)).collect();
            for (k, ck) in t.coef.x_coefficients(phi) {
                for c in 0..n {
                    let r = c as i64 + k;
                    if r >= 0 && (r as usize) < n {
                        out[[r as usize, c]] += ck * mvals[c];
                    }
                }
            }
        }
        out
    }
}

/// Spatial Fourier coefficients of a symbol at integer frequencies:
/// `coeffs[p][[k + kmax, xi + xi_s]] = a_hat(phi_p, k, xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSymbol {
    pub order: f64,
    pub lattice: PhaseLattice,
    pub xi_s: usize,
    pub kmax: usize,
    pub coeffs: Vec<Array2<C64>>,
    /// `max |a| <xi>^{-order}` over the stored samples.
    pub bound: f64,
}

impl LatticeSymbol {
    fn build(order: f64, lattice: &PhaseLattice, xi_s: usize, kmax: usize, coeffs: Vec<Array2<C64>>) -> Self {
        let mut s = LatticeSymbol { order, lattice: lattice.clone(), xi_s, kmax, coeffs, bound: 0.0 };
        s.bound = s.measured_bound();
        s
    }

    pub fn xi(&self, j: usize) -> i64 {
        j as i64 - self.xi_s as i64
    }

    pub fn from_closed(a: &ClosedSymbol, lattice: &PhaseLattice, xi_s: usize, kmax: usize) -> Result<Self> {
        check_modes(a, lattice)?;
        let coeffs = (0..lattice.n_points())
            .map(|p| {
                let phi = lattice.phi_representative(&lattice.theta(p));
                let mut c = Array2::zeros((2 * kmax + 1, 2 * xi_s + 1));
                for t in &a.terms {
                    let xc = t.coef.x_coefficients(&phi);
                    for j in 0..2 * xi_s + 1 {
                        let m = t.mult.eval(j as f64 - xi_s as f64);
                        for (k, v) in &xc {
                            if k.unsigned_abs() as usize <= kmax {
                                c[[(*k + kmax as i64) as usize, j]] += v * m;
                            }
                        }
                    }
                }
                c
            })
            .collect();
        let s = Self::build(a.order, lattice, xi_s, kmax, coeffs);
        // spot check against the closed form
        let phi = lattice.phi_representative(&lattice.theta(0));
        for &(x, xi) in &[(0.3, 0i64), (1.7, xi_s as i64 / 2), (4.1, -(xi_s as i64))] {
            let d = (s.value(0, x, xi) - a.eval(&phi, x, xi as f64)).norm();
            if d > 1e-10 * (1.0 + s.bound * japanese(xi as f64).powf(a.order)) && kmax as i64 >= a.kmax() {
                return Err(Error::Instability(format!("lattice sampling disagrees with closed form by {d:.3e}")));
            }
        }
        Ok(s)
    }

    pub fn from_family(f: &OperatorFamily, order: f64) -> Self {
        let xm = f.xi_max;
        let n = f.band_len();
        let kmax = 2 * xm;
        let coeffs = f
            .mats
            .iter()
            .map(|m| {
                let mut c = Array2::zeros((2 * kmax + 1, n));
                for col in 0..n {
                    for row in 0..n {
                        let k = row as i64 - col as i64;
                        c[[(k + kmax as i64) as usize, col]] = m[[row, col]];
                    }
                }
                c
            })
            .collect();
        Self::build(order, &f.lattice, xm, kmax, coeffs)
    }

    pub fn value(&self, p: usize, x: f64, xi: i64) -> C64 {
        let (j, tail) = if xi.unsigned_abs() as usize <= self.xi_s {
            ((xi + self.xi_s as i64) as usize, 1.0)
        } else {
            let edge = xi.signum() * self.xi_s as i64;
            (
                (edge + self.xi_s as i64) as usize,
                (japanese(xi as f64) / japanese(edge as f64)).powf(self.order),
            )
        };
        let c = &self.coeffs[p];
        let s: C64 = (0..2 * self.kmax + 1)
            .map(|i| c[[i, j]] * C64::from_polar(1.0, (i as f64 - self.kmax as f64) * x))
            .sum();
        s * tail
    }

    fn measured_bound(&self) -> f64 {
        let mut b: f64 = 0.0;
        for (p, c) in self.coeffs.iter().enumerate() {
            let _ = p;
            for j in 0..2 * self.xi_s + 1 {
                let amp: f64 = (0..2 * self.kmax + 1).map(|i| c[[i, j]].norm()).sum();
                b = b.max(amp * japanese(self.xi(j) as f64).powf(-self.order));
            }
        }
        b
    }

    fn with(&self, order: f64, xi_s: usize, kmax: usize, coeffs: Vec<Array2<C64>>) -> Self {
        Self::build(order, &self.lattice, xi_s, kmax, coeffs)
    }

    pub fn to_matrix(&self, p: usize, xi_max: usize) -> CMat {
        let n = 2 * xi_max + 1;
        let c = &self.coeffs[p];
        Array2::from_shape_fn((n, n), |(r, col)| {
            let xi = col as i64 - xi_max as i64;
            let k = r as i64 - col as i64;
            if xi.unsigned_abs() as usize > self.xi_s || k.unsigned_abs() as usize > self.kmax {
                zero()
            } else {
                c[[(k + self.kmax as i64) as usize, (xi + self.xi_s as i64) as usize]]
            }
        })
    }

    pub fn dx(&self, n: usize) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                let mut c = c.clone();
                for ((i, _), v) in c.indexed_iter_mut() {
                    *v *= C64::new(0.0, i as f64 - self.kmax as f64).powu(n as u32);
                }
                c
            })
            .collect();
        self.with(self.order, self.xi_s, self.kmax, coeffs)
    }

    /// Five-point centered difference in xi, applied `n` times; each pass
    /// loses two frequencies at each end.
    pub fn dxi(&self, n: usize) -> Result<Self> {
        let mut cur = self.clone();
        for _ in 0..n {
            if cur.xi_s < 3 {
                return Err(Error::Precondition("xi band too small for the five-point stencil".into()));
            }
            let xs = cur.xi_s - 2;
            let coeffs = cur
                .coeffs
                .iter()
                .map(|c| {
                    Array2::from_shape_fn((2 * cur.kmax + 1, 2 * xs + 1), |(i, j)| {
                        let jj = j + 2;
                        (c[[i, jj - 2]] - c[[i, jj - 1]] * 8.0 + c[[i, jj + 1]] * 8.0 - c[[i, jj + 2]]) / 12.0
                    })
                })
                .collect();
            cur = cur.with(cur.order - 1.0, xs, cur.kmax, coeffs);
        }
        Ok(cur)
    }

    fn crop(&self, xi_s: usize) -> Self {
        let off = self.xi_s - xi_s;
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| c.slice(ndarray::s![.., off..off + 2 * xi_s + 1]).to_owned())
            .collect();
        self.with(self.order, xi_s, self.kmax, coeffs)
    }

    fn widen(&self, kmax: usize) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                let mut w = Array2::zeros((2 * kmax + 1, c.ncols()));
                let off = kmax - self.kmax;
                w.slice_mut(ndarray::s![off..off + 2 * self.kmax + 1, ..]).assign(c);
                w
            })
            .collect();
        self.with(self.order, self.xi_s, kmax, coeffs)
    }

    fn align(&self, o: &Self) -> Result<(Self, Self)> {
        if self.lattice != o.lattice {
            return Err(Error::GridMismatch("lattice symbols on different angle grids".into()));
        }
        let xs = self.xi_s.min(o.xi_s);
        let km = self.kmax.max(o.kmax);
        Ok((self.crop(xs).widen(km), o.crop(xs).widen(km)))
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        let (a, b) = self.align(o)?;
        let coeffs = a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x + y).collect();
        Ok(a.with(self.order.max(o.order), a.xi_s, a.kmax, coeffs))
    }

    pub fn scale(&self, c: C64) -> Self {
        self.with(self.order, self.xi_s, self.kmax, self.coeffs.iter().map(|m| m * c).collect())
    }

    /// Pointwise product: convolution of spatial coefficients per frequency.
    pub fn mul(&self, o: &Self) -> Result<Self> {
        if self.lattice != o.lattice {
            return Err(Error::GridMismatch("lattice symbols on different angle grids".into()));
        }
        let xs = self.xi_s.min(o.xi_s);
        let (a, b) = (self.crop(xs), o.crop(xs));
        let km = a.kmax + b.kmax;
        let coeffs = a
            .coeffs
            .iter()
            .zip(&b.coeffs)
            .map(|(ca, cb)| {
                let mut out = Array2::zeros((2 * km + 1, 2 * xs + 1));
                for i in 0..2 * a.kmax + 1 {
                    for j in 0..2 * b.kmax + 1 {
                        for col in 0..2 * xs + 1 {
                            out[[i + j, col]] += ca[[i, col]] * cb[[j, col]];
                        }
                    }
                }
                out
            })
            .collect();
        Ok(a.with(self.order + o.order, xs, km, coeffs))
    }

    pub fn conj(&self) -> Self {
        let km = self.kmax;
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| Array2::from_shape_fn(c.dim(), |(i, j)| c[[2 * km - i, j]].conj()))
            .collect();
        self.with(self.order, self.xi_s, km, coeffs)
    }

    pub fn to_family(&self, xi_max: usize) -> OperatorFamily {
        OperatorFamily::from_fn(&self.lattice, xi_max, |p| self.to_matrix(p, xi_max))
    }
}

fn check_modes(a: &ClosedSymbol, lattice: &PhaseLattice) -> Result<()> {
    for l in a.phase_modes() {
        if lattice.reduce(&l).is_none() {
            return Err(Error::GridMismatch(format!("phase mode {l:?} is not resolved by the angle grid")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Symbol {
    Closed(ClosedSymbol),
    Lattice(LatticeSymbol),
}

impl From<ClosedSymbol> for Symbol {
    fn from(c: ClosedSymbol) -> Self {
        Symbol::Closed(c)
    }
}

impl From<LatticeSymbol> for Symbol {
    fn from(c: LatticeSymbol) -> Self {
        Symbol::Lattice(c)
    }
}

impl Symbol {
    pub fn order(&self) -> f64 {
        match self {
            Symbol::Closed(c) => c.order,
            Symbol::Lattice(l) => l.order,
        }
    }

    pub fn with_order(mut self, order: f64) -> Self {
        match &mut self {
            Symbol::Closed(c) => c.order = order,
            Symbol::Lattice(l) => l.order = order,
        }
        self
    }

    pub fn closed(&self) -> Option<&ClosedSymbol> {
        match self {
            Symbol::Closed(c) => Some(c),
            Symbol::Lattice(_) => None,
        }
    }

    /// Lattice form of either representation.
    pub fn to_lattice(&self, lattice: &PhaseLattice, xi_s: usize, kmax: usize) -> Result<LatticeSymbol> {
        match self {
            Symbol::Closed(c) => LatticeSymbol::from_closed(c, lattice, xi_s, kmax),
            Symbol::Lattice(l) => Ok(l.clone()),
        }
    }

    fn binary(
        &self,
        o: &Symbol,
        fc: impl Fn(&ClosedSymbol, &ClosedSymbol) -> ClosedSymbol,
        fl: impl Fn(&LatticeSymbol, &LatticeSymbol) -> Result<LatticeSymbol>,
    ) -> Result<Symbol> {
        match (self, o) {
            (Symbol::Closed(a), Symbol::Closed(b)) => Ok(fc(a, b).into()),
            (Symbol::Lattice(a), Symbol::Lattice(b)) => Ok(fl(a, b)?.into()),
            (Symbol::Lattice(a), Symbol::Closed(b)) => {
                Ok(fl(a, &LatticeSymbol::from_closed(b, &a.lattice, a.xi_s, b.kmax() as usize)?)?.into())
            }
            (Symbol::Closed(a), Symbol::Lattice(b)) => {
                Ok(fl(&LatticeSymbol::from_closed(a, &b.lattice, b.xi_s, a.kmax() as usize)?, b)?.into())
            }
        }
    }

    pub fn add(&self, o: &Symbol) -> Result<Symbol> {
        self.binary(o, |a, b| a.add(b), |a, b| a.add(b))
    }

    pub fn sub(&self, o: &Symbol) -> Result<Symbol> {
        self.add(&o.scale(C64::new(-1.0, 0.0)))
    }

    pub fn mul(&self, o: &Symbol) -> Result<Symbol> {
        self.binary(o, |a, b| a.mul(b), |a, b| a.mul(b))
    }

    pub fn scale(&self, c: C64) -> Symbol {
        match self {
            Symbol::Closed(a) => a.scale(c).into(),
            Symbol::Lattice(a) => a.scale(c).into(),
        }
    }

    pub fn dx(&self, n: usize) -> Symbol {
        match self {
            Symbol::Closed(a) => a.dx(n).into(),
            Symbol::Lattice(a) => a.dx(n).into(),
        }
    }

    pub fn dxi(&self, n: usize) -> Result<Symbol> {
        match self {
            Symbol::Closed(a) => Ok(a.dxi(n).into()),
            Symbol::Lattice(a) => Ok(a.dxi(n)?.into()),
        }
    }

    pub fn conj(&self) -> Symbol {
        match self {
            Symbol::Closed(a) => a.conj().into(),
            Symbol::Lattice(a) => a.conj().into(),
        }
    }

    /// Quantization at grid point `p` of `lattice`.
    pub fn to_matrix(&self, lattice: &PhaseLattice, p: usize, xi_max: usize) -> Result<CMat> {
        match self {
            Symbol::Closed(a) => {
                check_modes(a, lattice)?;
                Ok(a.matrix_at(&lattice.phi_representative(&lattice.theta(p)), xi_max))
            }
            Symbol::Lattice(a) => {
                if a.lattice != *lattice {
                    return Err(Error::GridMismatch("symbol sampled on another angle grid".into()));
                }
                Ok(a.to_matrix(p, xi_max))
            }
        }
    }

    pub fn to_family(&self, lattice: &PhaseLattice, xi_max: usize) -> Result<OperatorFamily> {
        let mats = (0..lattice.n_points())
            .map(|p| self.to_matrix(lattice, p, xi_max))
            .collect::<Result<_>>()?;
        Ok(OperatorFamily { lattice: lattice.clone(), xi_max, mats })
    }

    /// Value at angle grid point `p`, position `x`, integer frequency `xi`.
    pub fn value(&self, lattice: &PhaseLattice, p: usize, x: f64, xi: i64) -> C64 {
        match self {
            Symbol::Closed(a) => a.eval(&lattice.phi_representative(&lattice.theta(p)), x, xi as f64),
            Symbol::Lattice(a) => a.value(p, x, xi),
        }
    }

    /// `max |a(phi, x, xi)| <xi>^{-order}` over the grid and `|xi| <= xi_max`.
    pub fn decay_bound(&self, grid: &TorusGrid, lattice: &PhaseLattice) -> f64 {
        let xs = grid.x_points();
        let mut b: f64 = 0.0;
        for p in 0..lattice.n_points() {
            for xi in -(grid.xi_max as i64)..=grid.xi_max as i64 {
                let w = japanese(xi as f64).powf(-self.order());
                for &x in &xs {
                    b = b.max(self.value(lattice, p, x, xi).norm() * w);
                }
            }
        }
        b
    }
}

/// `Op(a) u` at grid point `p`, evaluated in physical space
/// (`sum_xi a(phi, x, xi) u_hat(xi) e^{i x xi}`) and truncated to the band.
pub fn op_apply(a: &Symbol, u: &FourierState, lattice: &PhaseLattice, p: usize) -> Result<FourierState> {
    let xm = u.xi_max;
    let kmax = match a {
        Symbol::Closed(c) => {
            check_modes(c, lattice)?;
            c.kmax() as usize
        }
        Symbol::Lattice(l) => l.kmax,
    };
    let nx = 2 * xm + kmax + 2;
    let grid = TorusGrid { nu: lattice.nu, n_phi: lattice.n_phi.max(4), xi_max: xm, n_x: nx };
    // e^{i x xi} from an exact index table: x xi itself reaches hundreds of radians
    let twiddle: Vec<C64> = (0..nx).map(|m| C64::from_polar(1.0, 2.0 * PI * m as f64 / nx as f64)).collect();
    let mut samples = vec![zero(); nx];
    for (j, s) in samples.iter_mut().enumerate() {
        let x = 2.0 * PI * j as f64 / nx as f64;
        for xi in -(xm as i64)..=xm as i64 {
            let c = u.get(xi);
            if c != zero() {
                *s += a.value(lattice, p, x, xi) * c * twiddle[(j as i64 * xi).rem_euclid(nx as i64) as usize];
            }
        }
    }
    analyze(&grid, &samples)
}

/// `sum_{b < n} (1/(i^b b!)) d_xi^b a d_x^b b`.
pub fn compose_expansion(a: &Symbol, b: &Symbol, n_terms: usize) -> Result<Symbol> {
    if n_terms == 0 {
        return Err(Error::Precondition("n_terms must be at least 1".into()));
    }
    let mut out = a.mul(b)?;
    for beta in 1..n_terms {
        let c = C64::new(1.0 / factorial(beta), 0.0) / ipow(beta);
        out = out.add(&a.dxi(beta)?.mul(&b.dx(beta))?.scale(c))?;
    }
    Ok(out.with_order(a.order() + b.order()))
}

/// `sum_{al < n} (1/(i^al al!)) d_x^al d_xi^al conj(a)`.
pub fn adjoint_expansion(a: &Symbol, n_terms: usize) -> Result<Symbol> {
    if n_terms == 0 {
        return Err(Error::Precondition("n_terms must be at least 1".into()));
    }
    let ac = a.conj();
    let mut out = ac.clone();
    for al in 1..n_terms {
        let c = C64::new(1.0 / factorial(al), 0.0) / ipow(al);
        out = out.add(&ac.dxi(al)?.dx(al).scale(c))?;
    }
    Ok(out.with_order(a.order()))
}

/// `{a, b} = d_xi a d_x b - d_x a d_xi b`.
pub fn poisson_bracket(a: &Symbol, b: &Symbol) -> Result<Symbol> {
    let t1 = a.dxi(1)?.mul(&b.dx(1))?;
    let t2 = a.dx(1).mul(&b.dxi(1)?)?;
    Ok(t1.sub(&t2)?.with_order(a.order() + b.order() - 1.0))
}

pub fn make_cutoff(nu: usize) -> Symbol {
    ClosedSymbol::multiplier(nu, 0.0, Mult::cutoff(CutoffKind::Base)).into()
}

pub fn make_cutoff0(nu: usize) -> Symbol {
    ClosedSymbol::multiplier(nu, 0.0, Mult::cutoff(CutoffKind::Space)).into()
}

pub fn make_cutoff1(nu: usize) -> Symbol {
    ClosedSymbol::multiplier(nu, 0.0, Mult::cutoff(CutoffKind::Lower)).into()
}

pub fn make_cutoff_pm(nu: usize) -> (Symbol, Symbol) {
    (
        ClosedSymbol::multiplier(nu, 0.0, Mult::cutoff(CutoffKind::Plus)).into(),
        ClosedSymbol::multiplier(nu, 0.0, Mult::cutoff(CutoffKind::Minus)).into(),
    )
}

/// `|xi|^alpha chi(xi)`.
pub fn make_abs_d(nu: usize, alpha: f64) -> Symbol {
    ClosedSymbol::multiplier(nu, alpha, Mult::abs_d(alpha)).into()
}

/// `-i sign(xi) chi(xi)`.
pub fn make_hilbert(nu: usize) -> Symbol {
    let m = Mult::complex(C64::new(0.0, -1.0))
        .times(Mult::Sign)
        .times(Mult::cutoff(CutoffKind::Base));
    ClosedSymbol::multiplier(nu, 0.0, m).into()
}

pub fn make_projectors(nu: usize) -> (Symbol, Symbol) {
    make_cutoff_pm(nu)
}

/// Largest entry of `A(phi) - A(phi)^*` over the angle grid.
pub fn self_adjoint_defect(a: &Symbol, lattice: &PhaseLattice, xi_max: usize) -> Result<f64> {
    let mut d: f64 = 0.0;
    for p in 0..lattice.n_points() {
        d = d.max(linalg::hermitian_defect(&a.to_matrix(lattice, p, xi_max)?));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;

    fn lat() -> PhaseLattice {
        PhaseLattice::identity(2, 4)
    }

    fn unit(nu: usize) -> TrigPoly {
        TrigPoly::constant(nu, C64::new(1.0, 0.0))
    }

    fn eix(nu: usize, k: i64) -> TrigPoly {
        let mut p = TrigPoly::zero(nu);
        p.add_mode(vec![0; nu], k, C64::new(1.0, 0.0));
        p
    }

    fn xi_sym(nu: usize) -> Symbol {
        ClosedSymbol::multiplier(nu, 1.0, Mult::Xi).into()
    }

    #[test]
    fn identity_symbol_acts_as_identity() {
        let a: Symbol = ClosedSymbol::function(unit(2)).into();
        let mut u = FourierState::zeros(6);
        for xi in -6..=6 {
            u.coeffs[(xi + 6) as usize] = C64::new(xi as f64, 1.0 / (1.0 + xi as f64 * xi as f64));
        }
        let v = op_apply(&a, &u, &lat(), 1).unwrap();
        assert!((&v.coeffs - &u.coeffs).iter().all(|c| c.norm() < 1e-13));
    }

    #[test]
    fn fractional_derivative_on_mode() {
        let a = make_abs_d(2, 0.5);
        let v = op_apply(&a, &FourierState::mode(8, 4), &lat(), 0).unwrap();
        assert!((v.get(4) - 2.0).norm() < 1e-13);
        let a = make_abs_d(2, 1.0);
        let v = op_apply(&a, &FourierState::mode(8, 3), &lat(), 0).unwrap();
        assert!((v.get(3) - 3.0).norm() < 1e-13);
        let v = op_apply(&a, &FourierState::mode(8, 0), &lat(), 0).unwrap();
        assert!(v.coeffs.iter().all(|c| c.norm() < 1e-14));
        let m = make_abs_d(2, -2.0).to_matrix(&lat(), 0, 8).unwrap();
        assert!((m[[12, 12]] - 1.0 / 16.0).norm() < 1e-15);
    }

    #[test]
    fn matrix_examples() {
        let m = xi_sym(2).to_matrix(&lat(), 0, 3).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let want = if i == j { i as f64 - 3.0 } else { 0.0 };
                assert_eq!(m[[i, j]], C64::new(want, 0.0));
            }
        }
        let s: Symbol = ClosedSymbol::function(eix(2, 1)).into();
        let m = s.to_matrix(&lat(), 0, 3).unwrap();
        for i in 0..7 {
            for j in 0..7 {
                let want = if i == j + 1 { 1.0 } else { 0.0 };
                assert!((m[[i, j]] - want).norm() < 1e-15);
            }
        }
        // e^{ix} xi against op_apply on basis vectors
        let s: Symbol = ClosedSymbol::product(eix(2, 1), 1.0, Mult::Xi).into();
        let m = s.to_matrix(&lat(), 2, 5).unwrap();
        for xi in -5..=5 {
            let v = op_apply(&s, &FourierState::mode(5, xi), &lat(), 2).unwrap();
            for r in 0..11 {
                assert!((v.coeffs[r] - m[[r, (xi + 5) as usize]]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn composition_examples() {
        let a: Symbol = ClosedSymbol::function(eix(2, 1)).into();
        let c = compose_expansion(&a, &xi_sym(2), 1).unwrap();
        let want: Symbol = ClosedSymbol::product(eix(2, 1), 1.0, Mult::Xi).into();
        let (m1, m2) = (c.to_matrix(&lat(), 0, 6).unwrap(), want.to_matrix(&lat(), 0, 6).unwrap());
        assert!(max_abs_diff(&m1, &m2) < 1e-14);
        // xi o e^{ix} = e^{ix}(xi + 1)
        let c = compose_expansion(&xi_sym(2), &a, 2).unwrap();
        let exact = xi_sym(2).to_matrix(&lat(), 0, 6).unwrap().dot(&a.to_matrix(&lat(), 0, 6).unwrap());
        let m = c.to_matrix(&lat(), 0, 6).unwrap();
        assert!(max_abs_diff(&m, &exact) < 1e-13);
        let shifted: Symbol = ClosedSymbol::product(
            eix(2, 1),
            1.0,
            Mult::Sum { terms: vec![Mult::Xi, Mult::constant(1.0)] },
        )
        .into();
        assert!(max_abs_diff(&m, &shifted.to_matrix(&lat(), 0, 6).unwrap()) < 1e-13);
    }

    #[test]
    fn adjoint_examples() {
        let a: Symbol = ClosedSymbol::function(eix(2, 1)).into();
        let b = adjoint_expansion(&a, 1).unwrap();
        let m = b.to_matrix(&lat(), 0, 5).unwrap();
        assert!(max_abs_diff(&m, &ClosedSymbol::function(eix(2, -1)).matrix_at(&[0.0, 0.0], 5)) < 1e-15);
        let real: Symbol =
            ClosedSymbol::function(TrigPoly::wave(2, 0.7, &[1, 0], Wave::Cos, 2, Wave::Sin)).into();
        let b = adjoint_expansion(&real, 3).unwrap();
        let d = max_abs_diff(&b.to_matrix(&lat(), 1, 5).unwrap(), &real.to_matrix(&lat(), 1, 5).unwrap());
        assert!(d < 1e-15);
    }

    #[test]
    fn poisson_examples() {
        let e: Symbol = ClosedSymbol::function(eix(2, 1)).into();
        let pb = poisson_bracket(&xi_sym(2), &e).unwrap();
        let want = e.scale(C64::new(0.0, 1.0));
        assert!(max_abs_diff(&pb.to_matrix(&lat(), 0, 5).unwrap(), &want.to_matrix(&lat(), 0, 5).unwrap()) < 1e-14);
        let a: Symbol = ClosedSymbol::product(
            TrigPoly::wave(2, 0.4, &[0, 1], Wave::Sin, 1, Wave::Cos),
            0.5,
            Mult::abs_d(0.5),
        )
        .into();
        let aa = poisson_bracket(&a, &a).unwrap();
        assert!(aa.to_matrix(&lat(), 3, 8).unwrap().iter().all(|c| c.norm() < 1e-14));
    }

    #[test]
    fn hilbert_and_projectors() {
        let h = make_hilbert(2).to_matrix(&lat(), 0, 5).unwrap();
        assert!((h[[8, 8]] - C64::new(0.0, -1.0)).norm() < 1e-15);
        assert_eq!(h[[5, 5]], zero());
        let (pp, pm) = make_projectors(2);
        let (a, b) = (pp.to_matrix(&lat(), 0, 5).unwrap(), pm.to_matrix(&lat(), 0, 5).unwrap());
        assert_eq!(a[[4, 4]], zero());
        assert_eq!(b[[4, 4]], C64::new(1.0, 0.0));
        assert!(max_abs_diff(&a.dot(&a), &a) < 1e-15);
        assert!(max_abs_diff(&b.dot(&b), &b) < 1e-15);
        assert!(linalg::max_abs(&a.dot(&b)) < 1e-15);
        assert!(max_abs_diff(&(&a + &b), &linalg::identity(11)) < 1e-15);
    }

    #[test]
    fn self_adjoint_defects() {
        let v: Symbol = ClosedSymbol::function(TrigPoly::wave(2, 0.5, &[1, 1], Wave::Cos, 1, Wave::Cos)).into();
        assert!(self_adjoint_defect(&v, &lat(), 8).unwrap() < 1e-15);
        assert!(self_adjoint_defect(&make_abs_d(2, 0.5), &lat(), 8).unwrap() == 0.0);
        let a: Symbol = ClosedSymbol::product(eix(2, 1), 1.0, Mult::Xi).into();
        assert!(self_adjoint_defect(&a, &lat(), 8).unwrap() > 1.0);
        let fam = a.to_family(&lat(), 8).unwrap().sym();
        assert!(fam.hermitian_defect() < 1e-15);
    }

    #[test]
    fn lattice_symbol_matches_closed() {
        let a: Symbol = ClosedSymbol::product(
            TrigPoly::wave(2, 0.4, &[1, 0], Wave::Cos, 2, Wave::Sin),
            0.5,
            Mult::abs_d(0.5),
        )
        .into();
        let l = a.to_lattice(&lat(), 12, 2).unwrap();
        let m1 = a.to_matrix(&lat(), 1, 12).unwrap();
        let m2 = l.to_matrix(1, 12);
        assert!(max_abs_diff(&m1, &m2) < 1e-14);
        // stencil derivative against exact jets away from the cutoff transition
        let dl = l.dxi(1).unwrap();
        let da = a.dxi(1).unwrap();
        for xi in 6..10 {
            let v1 = dl.value(0, 0.4, xi);
            let v2 = da.value(&lat(), 0, 0.4, xi);
            assert!((v1 - v2).norm() < 1e-3 * v2.norm().max(1e-3), "{xi} {v1} {v2}");
        }
        let fam = a.to_family(&lat(), 12).unwrap();
        let back = LatticeSymbol::from_family(&fam, 0.5);
        assert!(max_abs_diff(&back.to_matrix(2, 12), &fam.mats[2]) < 1e-15);
        let s = serde_json::to_string(&a).unwrap();
        let a2: Symbol = serde_json::from_str(&s).unwrap();
        assert_eq!(a, a2);
    }

    #[test]
    fn unresolved_modes_are_rejected() {
        let rank1 = PhaseLattice::from_modes(2, 8, &[vec![1, 1]]);
        let a: Symbol = ClosedSymbol::function(TrigPoly::wave(2, 1.0, &[1, 0], Wave::Cos, 0, Wave::One)).into();
        assert!(a.to_matrix(&rank1, 0, 4).is_err());
    }
}
