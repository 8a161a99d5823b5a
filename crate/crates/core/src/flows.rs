//! Torus diffeomorphisms `x -> x + alpha(phi, x)`, the weighted composition
//! operators they induce, flows of linear generators on the band, Egorov
//! substitution and the quasi-periodic push-forward.

use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::fft;
use crate::lattice::{PhaseField, PhaseLattice};
use crate::linalg::{self, CMat, HermEig};
use crate::symbol::{poisson_bracket, ClosedSymbol, LatticeSymbol, Symbol};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

/// Displacement field of `x -> x + alpha(phi, x)`, real-valued samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Diffeo {
    pub alpha: PhaseField,
}

impl Diffeo {
    pub fn new(alpha: PhaseField) -> Result<Self> {
        if alpha.max_imag() > 1e-12 {
            return Err(Error::InvalidInput("displacement must be real".into()));
        }
        let d = Diffeo { alpha: alpha.real_part() };
        let j = d.min_jacobian();
        if !(j > 0.0) {
            return Err(Error::Precondition(format!("1 + d_x alpha reaches {j:.3e}")));
        }
        Ok(d)
    }

    pub fn zero(lattice: &PhaseLattice, n_x: usize) -> Self {
        Diffeo { alpha: PhaseField::zeros(lattice, n_x) }
    }

    pub fn from_fn(lattice: &PhaseLattice, n_x: usize, f: impl Fn(&[f64], f64) -> f64) -> Result<Self> {
        Self::new(PhaseField::from_fn(lattice, n_x, |th, x| C64::new(f(th, x), 0.0)))
    }

    pub fn lattice(&self) -> &PhaseLattice {
        &self.alpha.lattice
    }

    pub fn n_x(&self) -> usize {
        self.alpha.n_x()
    }

    pub fn alpha_x(&self) -> PhaseField {
        self.alpha.dx().real_part()
    }

    pub fn min_jacobian(&self) -> f64 {
        self.alpha_x().values.iter().fold(f64::INFINITY, |m, v| m.min(1.0 + v.re))
    }

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.alpha.map(|v| v * t))
    }

    /// Trigonometric interpolant of `alpha` and `alpha_x` at one angle point.
    pub fn interpolant(&self, p: usize) -> Interpolant {
        Interpolant::new(&self.alpha, p)
    }

    /// Angle point of this field to use for grid point `p` of `lattice`:
    /// phi-independent displacements broadcast.
    fn point_for(&self, lattice: &PhaseLattice, p: usize) -> Result<usize> {
        if self.lattice().rank() == 0 {
            Ok(0)
        } else if self.lattice() == lattice {
            Ok(p)
        } else {
            Err(Error::GridMismatch("displacement sampled on another angle grid".into()))
        }
    }
}

pub struct Interpolant {
    coeffs: Vec<(i64, C64)>,
}

impl Interpolant {
    /// Interpolant of the real part of one angle row of a field.
    pub fn new(f: &PhaseField, p: usize) -> Self {
        let nx = f.n_x();
        let mut buf: Vec<C64> = f.row(p).iter().map(|v| C64::new(v.re, 0.0)).collect();
        fft::forward(&mut buf);
        let coeffs = (0..nx)
            .filter(|&j| !fft::is_nyquist(j, nx))
            .map(|j| (fft::signed_index(j, nx), buf[j] / nx as f64))
            .collect();
        Interpolant { coeffs }
    }

    /// `(alpha(x), alpha_x(x))`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let mut a = 0.0;
        let mut ax = 0.0;
        for (k, c) in &self.coeffs {
            let e = c * C64::from_polar(1.0, *k as f64 * x);
            a += e.re;
            ax += (e * C64::new(0.0, *k as f64)).re;
        }
        (a, ax)
    }
}

/// `alpha_tilde` with `y -> y + alpha_tilde(y)` inverting `x -> x + alpha(x)`,
/// by Newton on `alpha_tilde(y) + alpha(y + alpha_tilde(y)) = 0` from `-alpha`.
pub fn invert_diffeo(d: &Diffeo) -> Result<Diffeo> {
    let nx = d.n_x();
    let mut out = PhaseField::zeros(d.lattice(), nx);
    let mut worst = 0.0f64;
    for p in 0..d.lattice().n_points() {
        let it = d.interpolant(p);
        for j in 0..nx {
            let y = 2.0 * PI * j as f64 / nx as f64;
            let mut at = -d.alpha.values[[p, j]].re;
            let mut res = f64::INFINITY;
            let mut iters = 0;
            while iters < NEWTON_MAX_ITER {
                let (a, ax) = it.eval(y + at);
                let f = at + a;
                res = f.abs();
                if res < NEWTON_TOL {
                    break;
                }
                at -= f / (1.0 + ax);
                iters += 1;
            }
            if res >= NEWTON_TOL {
                return Err(Error::NonConvergence {
                    what: "diffeomorphism inversion",
                    iterations: iters,
                    residual: res,
                    contraction: f64::NAN,
                });
            }
            worst = worst.max(res);
            out.values[[p, j]] = C64::new(at, 0.0);
        }
    }
    Diffeo::new(out)
}

/// `b = beta / (1 + tau beta_x)` on the grid.
pub fn transport_speed(beta: &Diffeo, tau: f64) -> Result<PhaseField> {
    let bx = beta.alpha_x();
    let den = bx.map(|v| 1.0 + tau * v);
    let m = den.values.iter().fold(f64::INFINITY, |m, v| m.min(v.re));
    if !(m > 0.0) {
        return Err(Error::Precondition(format!("1 + tau d_x beta reaches {m:.3e} at tau = {tau}")));
    }
    Ok(beta.alpha.zip_with(&den, |a, b| a / b))
}

/// Symbol `b(tau; x) i xi + b_x / 2` of the skew-adjoint generator
/// `b d_x + b_x / 2` whose time-one flow is composition with `x + beta`.
pub fn transport_generator(beta: &Diffeo, tau: f64, xi_s: usize) -> Result<LatticeSymbol> {
    let b = transport_speed(beta, tau)?;
    let bx = b.dx();
    let kmax = b.n_x() / 2 - 1;
    let cb = b.x_coefficients(kmax);
    let cbx = bx.x_coefficients(kmax);
    let coeffs = (0..b.lattice.n_points())
        .map(|p| {
            Array2::from_shape_fn((2 * kmax + 1, 2 * xi_s + 1), |(i, j)| {
                let xi = j as f64 - xi_s as f64;
                cb[[p, i]] * C64::new(0.0, xi) + cbx[[p, i]] * 0.5
            })
        })
        .collect::<Vec<_>>();
    let mut s = LatticeSymbol::from_family(&OperatorFamily::zeros(&b.lattice, 1), 1.0);
    s.xi_s = xi_s;
    s.kmax = kmax;
    s.coeffs = coeffs;
    Ok(s)
}

/// Generator matrices `b d_x + b_x/2` at every point of the displacement's lattice.
pub fn transport_matrices(beta: &Diffeo, tau: f64, xi_max: usize) -> Result<Vec<CMat>> {
    let s = transport_generator(beta, tau, xi_max)?;
    Ok((0..s.coeffs.len()).map(|p| s.to_matrix(p, xi_max)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FlowScheme {
    /// Fourth-order Magnus with Gauss nodes; exactly unitary for
    /// skew-Hermitian generators.
    #[default]
    Magnus4,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct FlowMap {
    pub forward: Vec<CMat>,
    pub inverse: Vec<CMat>,
    pub n_steps: usize,
    pub scheme: FlowScheme,
    /// `max |Phi Phi^{-1} - Id|` over the points.
    pub inverse_defect: f64,
    /// Largest singular values of `Phi(1)` and `Phi(1)^{-1}`.
    pub norm_forward: f64,
    pub norm_inverse: f64,
}

fn commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

fn exp_skew(om: &CMat) -> Result<CMat> {
    if linalg::max_abs(&(om + &linalg::adjoint(om))) > 1e-10 * (1.0 + linalg::max_abs(om)) {
        return Err(Error::Precondition("Magnus step requires a skew-Hermitian generator".into()));
    }
    let h = om * C64::new(0.0, -1.0);
    Ok(HermEig::new(&h)?.expi(1.0))
}

fn step(
    gen: &dyn Fn(f64) -> Result<CMat>,
    phi: &CMat,
    t: f64,
    h: f64,
    scheme: FlowScheme,
) -> Result<CMat> {
    match scheme {
        FlowScheme::Magnus4 => {
            let s = 3f64.sqrt() / 6.0;
            let a1 = gen(t + (0.5 - s) * h)?;
            let a2 = gen(t + (0.5 + s) * h)?;
            let mut om = (&a1 + &a2) * C64::new(0.5 * h, 0.0);
            om += &(commutator(&a2, &a1) * C64::new(3f64.sqrt() / 12.0 * h * h, 0.0));
            Ok(exp_skew(&om)?.dot(phi))
        }
        FlowScheme::Rk4 => {
            let a0 = gen(t)?;
            let am = gen(t + 0.5 * h)?;
            let a1 = gen(t + h)?;
            let hc = C64::new(h, 0.0);
            let k1 = a0.dot(phi) * hc;
            let k2 = am.dot(&(phi + &(&k1 * 0.5))) * hc;
            let k3 = am.dot(&(phi + &(&k2 * 0.5))) * hc;
            let k4 = a1.dot(&(phi + &k3)) * hc;
            Ok(phi + &((k1 + &k2 * 2.0 + &k3 * 2.0 + k4) / 6.0))
        }
    }
}

/// Solution of `d_tau Phi = A(tau) Phi`, `Phi(0) = Id` on `[0, 1]` at each
/// point, with the inverse from the reversed integration.
pub fn integrate_flow(
    gen: &dyn Fn(f64, usize) -> Result<CMat>,
    n_points: usize,
    n: usize,
    n_steps: usize,
    scheme: FlowScheme,
) -> Result<FlowMap> {
    let h = 1.0 / n_steps as f64;
    let mut forward = Vec::with_capacity(n_points);
    let mut inverse = Vec::with_capacity(n_points);
    let mut defect: f64 = 0.0;
    let (mut nf, mut ni) = (0.0f64, 0.0f64);
    for p in 0..n_points {
        let g = |t: f64| gen(t, p);
        let mut f = linalg::identity(n);
        for s in 0..n_steps {
            f = step(&g, &f, s as f64 * h, h, scheme)?;
        }
        let mut b = linalg::identity(n);
        for s in (0..n_steps).rev() {
            b = step(&g, &b, (s + 1) as f64 * h, -h, scheme)?;
        }
        let d = linalg::max_abs_diff(&f.dot(&b), &linalg::identity(n));
        if !(d <= 1e-8) {
            return Err(Error::Instability(format!(
                "flow inverse check failed at point {p}: |Phi Phi^-1 - Id| = {d:.3e} with {n_steps} steps"
            )));
        }
        defect = defect.max(d);
        nf = nf.max(linalg::largest_singular_value(&f)?);
        ni = ni.max(linalg::largest_singular_value(&b)?);
        forward.push(f);
        inverse.push(b);
    }
    Ok(FlowMap { forward, inverse, n_steps, scheme, inverse_defect: defect, norm_forward: nf, norm_inverse: ni })
}

/// Matrix of `u -> sqrt(1 + alpha_x) u(x + alpha(x))` at angle point `p` of
/// the displacement's lattice, truncated to the band.
pub fn diffeo_operator(d: &Diffeo, p: usize, xi_max: usize) -> CMat {
    let nf = (4 * (2 * xi_max + 1)).max(d.n_x()).next_power_of_two();
    let it = d.interpolant(p);
    let samples: Vec<(f64, C64, C64)> = (0..nf)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / nf as f64;
            let (a, ax) = it.eval(x);
            (x + a, C64::new((1.0 + ax).sqrt(), 0.0), C64::new(0.0, 0.0))
        })
        .collect();
    composition_matrix(&samples, xi_max)
}

/// Angle derivative of [`diffeo_operator`] along a direction in which the
/// displacement changes by `adot(x)`:
/// `e^{i xi x} -> (adot_x / (2 sqrt(1 + alpha_x)) + i xi adot sqrt(1 + alpha_x)) e^{i xi (x + alpha)}`.
pub fn diffeo_operator_dot(d: &Diffeo, adot: &PhaseField, p: usize, xi_max: usize) -> CMat {
    let nf = (4 * (2 * xi_max + 1)).max(d.n_x()).next_power_of_two();
    let it = d.interpolant(p);
    let id = Interpolant::new(adot, p);
    let samples: Vec<(f64, C64, C64)> = (0..nf)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / nf as f64;
            let (a, ax) = it.eval(x);
            let (b, bx) = id.eval(x);
            let s = (1.0 + ax).sqrt();
            (x + a, C64::new(bx / (2.0 * s), 0.0), C64::new(0.0, b * s))
        })
        .collect();
    composition_matrix(&samples, xi_max)
}

/// Band matrix whose column `xi` holds the coefficients of
/// `(w + xi w_xi) e^{i xi y}` sampled at `(y, w, w_xi)`.
fn composition_matrix(samples: &[(f64, C64, C64)], xi_max: usize) -> CMat {
    let n = 2 * xi_max + 1;
    let nf = samples.len();
    let mut out = Array2::zeros((n, n));
    let mut buf = vec![C64::new(0.0, 0.0); nf];
    for c in 0..n {
        let xi = c as f64 - xi_max as f64;
        for (b, (y, w, wx)) in buf.iter_mut().zip(samples) {
            *b = (w + wx * xi) * C64::from_polar(1.0, xi * y);
        }
        fft::forward(&mut buf);
        for r in 0..n {
            let k = r as i64 - xi_max as i64;
            out[[r, c]] = buf[k.rem_euclid(nf as i64) as usize] / nf as f64;
        }
    }
    out
}

/// The operator family of `d` and of its inverse diffeomorphism on `lattice`.
pub fn diffeo_pair(d: &Diffeo, lattice: &PhaseLattice, xi_max: usize) -> Result<(OperatorFamily, OperatorFamily)> {
    let inv = invert_diffeo(d)?;
    let fwd = (0..lattice.n_points())
        .map(|p| Ok(diffeo_operator(d, d.point_for(lattice, p)?, xi_max)))
        .collect::<Result<Vec<_>>>()?;
    let bwd = (0..lattice.n_points())
        .map(|p| Ok(diffeo_operator(&inv, inv.point_for(lattice, p)?, xi_max)))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        OperatorFamily { lattice: lattice.clone(), xi_max, mats: fwd },
        OperatorFamily { lattice: lattice.clone(), xi_max, mats: bwd },
    ))
}

/// Principal symbol of the conjugation by the time-`tau` diffeomorphism:
/// `v(phi, x + tau alpha, xi / (1 + tau alpha_x))`, sampled on `lattice`.
pub fn egorov_principal(
    v: &ClosedSymbol,
    d: &Diffeo,
    tau: f64,
    lattice: &PhaseLattice,
    xi_s: usize,
) -> Result<LatticeSymbol> {
    let nx = d.n_x().max(4 * (v.kmax() as usize + 1)).next_power_of_two();
    let kmax = nx / 2 - 1;
    let mut coeffs = Vec::with_capacity(lattice.n_points());
    for p in 0..lattice.n_points() {
        let it = d.interpolant(d.point_for(lattice, p)?);
        let phi = lattice.phi_representative(&lattice.theta(p));
        let pts: Vec<(f64, f64, f64)> = (0..nx)
            .map(|j| {
                let x = 2.0 * PI * j as f64 / nx as f64;
                let (a, ax) = it.eval(x);
                (x, x + tau * a, 1.0 / (1.0 + tau * ax))
            })
            .collect();
        let mut c = Array2::zeros((2 * kmax + 1, 2 * xi_s + 1));
        let mut buf = vec![C64::new(0.0, 0.0); nx];
        for col in 0..2 * xi_s + 1 {
            let xi = col as f64 - xi_s as f64;
            for (b, (_, y, s)) in buf.iter_mut().zip(&pts) {
                *b = v.eval(&phi, *y, xi * s);
            }
            fft::forward(&mut buf);
            for i in 0..2 * kmax + 1 {
                let k = i as i64 - kmax as i64;
                c[[i, col]] = buf[k.rem_euclid(nx as i64) as usize] / nx as f64;
            }
        }
        coeffs.push(c);
    }
    let mut s = LatticeSymbol::from_family(&OperatorFamily::zeros(lattice, 1), v.order);
    s.xi_s = xi_s;
    s.kmax = kmax;
    s.coeffs = coeffs;
    Ok(s)
}

/// `v + tau {g, v}`, the first two terms of the conjugation of `Op(v)` by the
/// flow of `i Op(g)` for a generator of order below one.
pub fn conjugate_expand(v: &Symbol, g: &Symbol, tau: f64) -> Result<Symbol> {
    if g.order() >= 1.0 {
        return Err(Error::Precondition(format!("generator order {} must be below 1", g.order())));
    }
    let pb = poisson_bracket(g, v)?;
    Ok(v.add(&pb.scale(C64::new(tau, 0.0)))?.with_order(v.order()))
}

/// Spectral `omega . d_phi` of a matrix family (full frequency vector).
pub fn family_omega_dphi(f: &OperatorFamily, omega: &[f64]) -> OperatorFamily {
    f.omega_dphi(&f.lattice.reduced_omega(omega))
}

/// Push-forward of the vector field `X` by `Phi`:
/// `Phi^{-1} (X Phi - omega . d_phi Phi)`.
pub fn pushforward(x: &OperatorFamily, phi: &OperatorFamily, omega: &[f64]) -> Result<OperatorFamily> {
    let dphi = family_omega_dphi(phi, omega);
    let inv = phi.try_map(|_, m| linalg::inverse(m))?;
    let xp = x.dot(phi)?.sub(&dphi)?;
    inv.dot(&xp)
}

/// The same transformation on the Hamiltonian `V` of `X = i V`:
/// `T^{-1} V T + i T^{-1} omega . d_phi T`.
pub fn pushforward_hamiltonian(v: &OperatorFamily, t: &OperatorFamily, omega: &[f64]) -> Result<OperatorFamily> {
    let x = v.scale(C64::new(0.0, 1.0));
    Ok(pushforward(&x, t, omega)?.scale(C64::new(0.0, -1.0)))
}
