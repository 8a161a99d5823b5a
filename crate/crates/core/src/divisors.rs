//! Non-resonance scans and the inverse operators `d_x^{-1}`,
//! `(omega . d_phi)^{-1}`, `(omega . d_phi + lambda d_x)^{-1}` on symbols,
//! together with the angle and joint averages.

use crate::error::{Error, Result};
use crate::lattice::{small_divisor, PhaseLattice, DIVISOR_FLOOR};
use crate::symbol::{ClosedSymbol, LatticeSymbol, Symbol, Term, TrigPoly};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub tau: f64,
}

impl FrequencyVector {
    pub fn new(omega: Vec<f64>, gamma: f64, tau: f64) -> Result<Self> {
        if omega.is_empty() || omega.iter().any(|w| !w.is_finite()) || omega.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidInput("omega must be finite and not identically zero".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma = {gamma} outside (0, 1)")));
        }
        let nu = omega.len() as f64;
        if !(tau > nu - 1.0) {
            return Err(Error::InvalidInput(format!("tau = {tau} must exceed nu - 1 = {}", nu - 1.0)));
        }
        Ok(FrequencyVector { omega, gamma, tau })
    }

    pub fn nu(&self) -> usize {
        self.omega.len()
    }

    /// Which lower bound on tau the configuration meets: the set definition
    /// only needs `tau > nu - 1`, the reduction theorems ask for `tau > nu`.
    pub fn tau_regime(&self) -> TauRegime {
        if self.tau > self.nu() as f64 {
            TauRegime::AboveNu
        } else {
            TauRegime::AboveNuMinusOne
        }
    }

    pub fn dot(&self, l: &[i64]) -> f64 {
        self.omega.iter().zip(l).map(|(w, c)| w * *c as f64).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauRegime {
    AboveNu,
    AboveNuMinusOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub passed: bool,
    #[serde(with = "crate::decay::float_serde")]
    pub worst_margin: f64,
    pub worst_ell: Vec<i64>,
    pub worst_j: Option<i64>,
    pub scan_bound: usize,
    pub lambda: Option<f64>,
}

impl ResonanceReport {
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::Resonance { margin: self.worst_margin, ell: self.worst_ell, j: self.worst_j })
        }
    }
}

/// All `l` with `|l|_inf <= bound` in a half space (one of each `+-l`), zero excluded.
fn half_lattice(nu: usize, bound: usize) -> Vec<Vec<i64>> {
    let b = bound as i64;
    let mut out = Vec::new();
    let mut l = vec![-b; nu];
    loop {
        let first = l.iter().find(|&&c| c != 0).copied();
        if first.is_some_and(|c| c > 0) {
            out.push(l.clone());
        }
        let mut i = 0;
        loop {
            if i == nu {
                return out;
            }
            if l[i] < b {
                l[i] += 1;
                break;
            }
            l[i] = -b;
            i += 1;
        }
    }
}

fn norm2(l: &[i64]) -> f64 {
    (l.iter().map(|c| (c * c) as f64).sum::<f64>()).sqrt()
}

/// Scan of `|omega . l| |l|^tau / gamma` over `0 < |l|_inf <= bound`
/// (Euclidean `|l|`).
pub fn check_diophantine(freq: &FrequencyVector, bound: usize) -> ResonanceReport {
    let mut worst = (f64::INFINITY, vec![0; freq.nu()]);
    for l in half_lattice(freq.nu(), bound.max(1)) {
        let m = freq.dot(&l).abs() * norm2(&l).powf(freq.tau) / freq.gamma;
        // ties go to the shortest witness
        if m < worst.0 || (m == worst.0 && norm2(&l) < norm2(&worst.1)) {
            worst = (m, l);
        }
    }
    ResonanceReport {
        passed: worst.0 >= 1.0,
        worst_margin: worst.0,
        worst_ell: worst.1,
        worst_j: None,
        scan_bound: bound,
        lambda: None,
    }
}

/// Scan of `|omega . l + lambda j| <l>^tau / gamma` over `|l|_inf <= bound`,
/// `|j| <= j_max`, `(l, j) != 0`.
pub fn check_melnikov(freq: &FrequencyVector, lambda: f64, bound: usize, j_max: usize) -> ResonanceReport {
    let jm = j_max as i64;
    let mut worst = (f64::INFINITY, vec![0; freq.nu()], 0i64);
    let mut consider = |l: Vec<i64>, wl: f64| {
        let br = (1.0 + norm2(&l).powi(2)).sqrt().powf(freq.tau) / freq.gamma;
        let mut cands = Vec::new();
        if lambda != 0.0 {
            let j0 = (-wl / lambda).round() as i64;
            for j in [j0 - 1, j0, j0 + 1, -jm, jm] {
                cands.push(j.clamp(-jm, jm));
            }
        } else {
            cands.extend([0, 1.min(jm)]);
        }
        for j in cands {
            if j == 0 && l.iter().all(|&c| c == 0) {
                continue;
            }
            let m = (wl + lambda * j as f64).abs() * br;
            let shorter = || (norm2(&l), j.abs()) < (norm2(&worst.1), worst.2.abs());
            if m < worst.0 || (m == worst.0 && shorter()) {
                worst = (m, l.clone(), j);
            }
        }
    };
    if jm > 0 {
        consider(vec![0; freq.nu()], 0.0);
    }
    for l in half_lattice(freq.nu(), bound.max(1)) {
        let wl = freq.dot(&l);
        consider(l.clone(), wl);
        let neg: Vec<i64> = l.iter().map(|c| -c).collect();
        consider(neg, -wl);
    }
    ResonanceReport {
        passed: worst.0 >= 1.0,
        worst_margin: worst.0,
        worst_ell: worst.1,
        worst_j: Some(worst.2),
        scan_bound: bound,
        lambda: Some(lambda),
    }
}

fn map_lattice(
    a: &LatticeSymbol,
    f: impl Fn(&[i64], i64, i64, bool) -> Result<C64>,
) -> Result<LatticeSymbol> {
    let (nk, nxi) = (2 * a.kmax + 1, 2 * a.xi_s + 1);
    let inner = nk * nxi;
    let mut buf: Vec<C64> = Vec::with_capacity(a.coeffs.len() * inner);
    for c in &a.coeffs {
        buf.extend(c.as_standard_layout().iter().copied());
    }
    a.lattice.transform(&mut buf, inner, false);
    for (p, chunk) in buf.chunks_mut(inner).enumerate() {
        let (m, nyq) = a.lattice.mode(p);
        for (idx, v) in chunk.iter_mut().enumerate() {
            if *v != C64::new(0.0, 0.0) {
                let k = (idx / nxi) as i64 - a.kmax as i64;
                let xi = (idx % nxi) as i64 - a.xi_s as i64;
                *v *= f(&m, k, xi, nyq)?;
            }
        }
    }
    a.lattice.transform(&mut buf, inner, true);
    let coeffs = buf
        .chunks(inner)
        .map(|c| Array2::from_shape_vec((nk, nxi), c.to_vec()).expect("shape"))
        .collect();
    let mut out = a.clone();
    out.coeffs = coeffs;
    Ok(out)
}

fn map_symbol(
    a: &Symbol,
    closed: impl Fn(&[i64], i64) -> Result<C64>,
    lattice: impl Fn(&[i64], i64, i64, bool) -> Result<C64>,
) -> Result<Symbol> {
    Ok(match a {
        Symbol::Closed(c) => c.map_coefficients(closed)?.into(),
        Symbol::Lattice(l) => map_lattice(l, lattice)?.into(),
    })
}

fn inv_i(d: f64) -> C64 {
    C64::new(0.0, -1.0 / d)
}

/// `e^{ikx} -> e^{ikx}/(ik)`, x-mean to zero.
pub fn invert_dx(a: &Symbol) -> Symbol {
    map_symbol(
        a,
        |_, k| Ok(if k == 0 { C64::new(0.0, 0.0) } else { inv_i(k as f64) }),
        |_, k, _, _| Ok(if k == 0 { C64::new(0.0, 0.0) } else { inv_i(k as f64) }),
    )
    .expect("infallible")
}

pub fn invert_omega_dphi(a: &Symbol, freq: &FrequencyVector) -> Result<Symbol> {
    let red = match a {
        Symbol::Lattice(l) => l.lattice.reduced_omega(&freq.omega),
        Symbol::Closed(_) => Vec::new(),
    };
    let lat = lattice_of(a);
    map_symbol(
        a,
        |l, _| {
            if l.iter().all(|&c| c == 0) {
                return Ok(C64::new(0.0, 0.0));
            }
            let d = freq.dot(l);
            if d.abs() < DIVISOR_FLOOR {
                return Err(Error::SmallDivisor { ell: l.to_vec(), j: None, divisor: d });
            }
            Ok(inv_i(d))
        },
        |m, _, _, nyq| {
            if nyq || m.iter().all(|&c| c == 0) {
                return Ok(C64::new(0.0, 0.0));
            }
            let d: f64 = m.iter().zip(&red).map(|(a, w)| *a as f64 * w).sum();
            if d.abs() < DIVISOR_FLOOR {
                return Err(small_divisor(lat.as_ref().expect("lattice"), m, None, d));
            }
            Ok(inv_i(d))
        },
    )
}

pub fn invert_mixed(a: &Symbol, freq: &FrequencyVector, lambda: f64) -> Result<Symbol> {
    let red = match a {
        Symbol::Lattice(l) => l.lattice.reduced_omega(&freq.omega),
        Symbol::Closed(_) => Vec::new(),
    };
    let lat = lattice_of(a);
    map_symbol(
        a,
        |l, k| {
            if k == 0 && l.iter().all(|&c| c == 0) {
                return Ok(C64::new(0.0, 0.0));
            }
            let d = freq.dot(l) + lambda * k as f64;
            if d.abs() < DIVISOR_FLOOR {
                return Err(Error::SmallDivisor { ell: l.to_vec(), j: Some(k), divisor: d });
            }
            Ok(inv_i(d))
        },
        |m, k, _, nyq| {
            if nyq || (k == 0 && m.iter().all(|&c| c == 0)) {
                return Ok(C64::new(0.0, 0.0));
            }
            let d: f64 = m.iter().zip(&red).map(|(a, w)| *a as f64 * w).sum::<f64>() + lambda * k as f64;
            if d.abs() < DIVISOR_FLOOR {
                return Err(small_divisor(lat.as_ref().expect("lattice"), m, Some(k), d));
            }
            Ok(inv_i(d))
        },
    )
}

fn lattice_of(a: &Symbol) -> Option<PhaseLattice> {
    match a {
        Symbol::Lattice(l) => Some(l.lattice.clone()),
        Symbol::Closed(_) => None,
    }
}

/// `<a>_phi(x, xi)`.
pub fn average_phi(a: &Symbol) -> Symbol {
    map_symbol(
        a,
        |l, _| Ok(C64::new(f64::from(u8::from(l.iter().all(|&c| c == 0))), 0.0)),
        |m, _, _, nyq| Ok(C64::new(f64::from(u8::from(!nyq && m.iter().all(|&c| c == 0))), 0.0)),
    )
    .expect("infallible")
}

/// `<a>_{phi,x}(xi)`.
pub fn average_phi_x(a: &Symbol) -> Symbol {
    map_symbol(
        a,
        |l, k| Ok(C64::new(f64::from(u8::from(k == 0 && l.iter().all(|&c| c == 0))), 0.0)),
        |m, k, _, nyq| Ok(C64::new(f64::from(u8::from(k == 0 && !nyq && m.iter().all(|&c| c == 0))), 0.0)),
    )
    .expect("infallible")
}

/// `omega . d_phi a` (exact for closed symbols, spectral on the lattice).
pub fn omega_dphi(a: &Symbol, freq: &FrequencyVector) -> Symbol {
    let red = match a {
        Symbol::Lattice(l) => l.lattice.reduced_omega(&freq.omega),
        Symbol::Closed(_) => Vec::new(),
    };
    map_symbol(
        a,
        |l, _| Ok(C64::new(0.0, freq.dot(l))),
        |m, _, _, nyq| {
            let d: f64 = m.iter().zip(&red).map(|(a, w)| *a as f64 * w).sum();
            Ok(if nyq { C64::new(0.0, 0.0) } else { C64::new(0.0, d) })
        },
    )
    .expect("infallible")
}

/// Real trigonometric function of `(phi, x)` as a symbol of order 0.
pub fn function_symbol(p: TrigPoly) -> Symbol {
    ClosedSymbol::function(p).into()
}

/// Closed symbol with a single term.
pub fn single_term(coef: TrigPoly, order: f64, mult: crate::mult::Mult) -> Symbol {
    let nu = coef.nu;
    ClosedSymbol::new(nu, order, vec![Term { coef, mult }]).into()
}
