//! Time evolution of the full and the reduced systems on the band, and the
//! diagnostics built on it: Sobolev norm series, growth fits, the
//! interpolation inequality and the change-of-variables comparison.
//!
//! The full operator is stored as a short angle Fourier series of banded
//! matrices, and each step applies `exp(i dt H)` through a Lanczos basis.
//! The reduced system is split as `e^{i lambda dt/2} e^{i dt R} e^{i lambda dt/2}`,
//! so the multiplier part is exact.

use crate::decay;
use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::grid::{hs_norm, japanese, FourierState};
use crate::lattice::PhaseLattice;
use crate::ledger::{self, Transform};
use crate::linalg::{self, CMat, HermEig};
use crate::linear::LinearCertificate;
use crate::model::{Config, ModelSpec};
use crate::sublinear::ReductionCertificate;
use ndarray::{Array1, Array2};
use ndarray_linalg::Solve;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative accuracy of the Krylov exponentials.
pub const KRYLOV_TOL: f64 = 1e-13;
pub const KRYLOV_MAX: usize = 60;
/// Relative Hermitian defect tolerated in the step Hamiltonian.
pub const HERMITIAN_TOL: f64 = 1e-10;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// `exp(i dt H(t + dt/2))`.
    #[default]
    ExponentialMidpoint,
    /// Fourth-order Magnus with two Gauss points.
    Magnus4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_final: f64,
    pub s_list: Vec<f64>,
    pub sample_stride: usize,
    #[serde(default)]
    pub integrator: Integrator,
    /// Initial time; the angle starts at `omega t0`.
    #[serde(default)]
    pub t0: f64,
    /// Keep the sampled states, not only their norms.
    #[serde(default)]
    pub keep_states: bool,
}

impl EvolutionConfig {
    pub fn from_config(c: &Config) -> Self {
        EvolutionConfig {
            dt: c.dt,
            t_final: c.t_final,
            s_list: c.s_list.clone(),
            sample_stride: c.sample_stride,
            integrator: Integrator::default(),
            t0: 0.0,
            keep_states: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_final >= self.dt) {
            return Err(Error::InvalidInput(format!("t_final = {} below dt = {}", self.t_final, self.dt)));
        }
        if self.s_list.is_empty() || self.s_list.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("s_list must be non-empty with entries >= 0".into()));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidInput("sample_stride must be positive".into()));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil() as usize
    }
}

/// Band matrix stored by diagonals: `diags[d][r] = A[r, r - offsets[d]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    pub n: usize,
    pub offsets: Vec<i64>,
    pub diags: Vec<Vec<C64>>,
}

impl BandMatrix {
    pub fn from_dense(a: &CMat, offsets: &[i64]) -> Self {
        let n = a.nrows();
        let diags = offsets
            .iter()
            .map(|&k| {
                (0..n)
                    .map(|r| {
                        let c = r as i64 - k;
                        if c >= 0 && (c as usize) < n {
                            a[[r, c as usize]]
                        } else {
                            zero()
                        }
                    })
                    .collect()
            })
            .collect();
        BandMatrix { n, offsets: offsets.to_vec(), diags }
    }

    pub fn to_dense(&self) -> CMat {
        let mut a = Array2::zeros((self.n, self.n));
        for (k, d) in self.offsets.iter().zip(&self.diags) {
            for (r, v) in d.iter().enumerate() {
                let c = r as i64 - k;
                if c >= 0 && (c as usize) < self.n {
                    a[[r, c as usize]] = *v;
                }
            }
        }
        a
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = zero());
        let n = self.n as i64;
        for (k, d) in self.offsets.iter().zip(&self.diags) {
            let lo = (*k).max(0);
            let hi = (n + k).min(n);
            for r in lo..hi {
                y[r as usize] += d[r as usize] * x[(r - k) as usize];
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.diags.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `|A[r,c] - conj(A[c,r])|`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n as i64;
        let mut d: f64 = 0.0;
        for (i, k) in self.offsets.iter().enumerate() {
            let j = self.offsets.iter().position(|o| *o == -k);
            for r in (*k).max(0)..(n + k).min(n) {
                let a = self.diags[i][r as usize];
                let b = j.map(|j| self.diags[j][(r - k) as usize]).unwrap_or_default();
                d = d.max((a - b.conj()).norm());
            }
        }
        d
    }
}

/// Angle Fourier series of band matrices, `H(theta) = sum_p w_p(theta) H_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedFamily {
    pub lattice: PhaseLattice,
    pub xi_max: usize,
    pub offsets: Vec<i64>,
    /// `(bin, band)` for the bins that carry data.
    pub terms: Vec<(usize, BandMatrix)>,
}

impl BandedFamily {
    /// Keeps bins and diagonals with an entry above `rel_tol` times the
    /// largest coefficient.
    pub fn from_family(f: &OperatorFamily, rel_tol: f64) -> Self {
        let spec = f.spectrum();
        let scale = spec.iter().map(linalg::max_abs).fold(0.0, f64::max);
        let tol = rel_tol * scale;
        let n = f.band_len() as i64;
        let mut offsets = Vec::new();
        for k in -(n - 1)..n {
            let hit = spec.iter().any(|m| {
                (k.max(0)..(n + k).min(n)).any(|r| m[[r as usize, (r - k) as usize]].norm() > tol)
            });
            if hit {
                offsets.push(k);
            }
        }
        let terms = spec
            .iter()
            .enumerate()
            .filter(|(_, m)| linalg::max_abs(m) > tol)
            .map(|(p, m)| (p, BandMatrix::from_dense(m, &offsets)))
            .collect();
        BandedFamily { lattice: f.lattice.clone(), xi_max: f.xi_max, offsets, terms }
    }

    pub fn at(&self, theta: &[f64]) -> BandMatrix {
        let w = self.lattice.interpolation_weights(theta);
        let n = 2 * self.xi_max + 1;
        let mut diags = vec![vec![zero(); n]; self.offsets.len()];
        for (p, b) in &self.terms {
            for (acc, d) in diags.iter_mut().zip(&b.diags) {
                for (a, v) in acc.iter_mut().zip(d) {
                    *a += w[*p] * v;
                }
            }
        }
        BandMatrix { n, offsets: self.offsets.clone(), diags }
    }
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `exp(i dt A) v` for Hermitian `A`, by Lanczos with full
/// reorthogonalization. The result has the norm of `v` up to roundoff.
pub fn expmv_hermitian(apply: &mut dyn FnMut(&[C64], &mut [C64]), v: &[C64], dt: f64) -> Result<Vec<C64>> {
    let n = v.len();
    let beta0 = norm(v);
    if beta0 == 0.0 {
        return Ok(v.to_vec());
    }
    let mut q: Vec<Vec<C64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![zero(); n];
    let mut scale: f64 = 0.0;
    for j in 0..KRYLOV_MAX.min(n) {
        apply(&q[j], &mut w);
        let a = dot(&q[j], &w).re;
        for (wi, qi) in w.iter_mut().zip(&q[j]) {
            *wi -= qi * a;
        }
        if j > 0 {
            let b = beta[j - 1];
            for (wi, qi) in w.iter_mut().zip(&q[j - 1]) {
                *wi -= qi * b;
            }
        }
        for _ in 0..2 {
            for qi in &q {
                let c = dot(qi, &w);
                for (wk, qk) in w.iter_mut().zip(qi) {
                    *wk -= qk * c;
                }
            }
        }
        alpha.push(a);
        let b = norm(&w);
        scale = scale.max(a.abs() + b);
        let m = j + 1;
        let t = Array2::from_shape_fn((m, m), |(r, c)| {
            if r == c {
                C64::new(alpha[r], 0.0)
            } else if r == c + 1 {
                C64::new(beta[c], 0.0)
            } else if c == r + 1 {
                C64::new(beta[r], 0.0)
            } else {
                zero()
            }
        });
        let y = HermEig::new(&t)?.expi(dt).column(0).to_owned();
        let done = b <= 1e-14 * scale.max(1e-300) || b * y[m - 1].norm() < KRYLOV_TOL || m == n;
        if done {
            let mut out = vec![zero(); n];
            for (qi, yi) in q.iter().zip(y.iter()) {
                for (o, x) in out.iter_mut().zip(qi) {
                    *o += x * yi * beta0;
                }
            }
            return Ok(out);
        }
        beta.push(b);
        q.push(w.iter().map(|x| x / b).collect());
    }
    Err(Error::NonConvergence { what: "Lanczos exponential", iterations: KRYLOV_MAX, residual: f64::NAN, contraction: f64::NAN })
}

/// `e^A` by scaling and squaring of the Taylor series.
pub fn expm(a: &CMat) -> CMat {
    let n = a.nrows();
    let norm1 = (0..n).map(|c| a.column(c).iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max);
    let s = if norm1 > 0.5 { (norm1 / 0.5).log2().ceil() as i32 } else { 0 };
    let b = a / C64::new(2f64.powi(s), 0.0);
    let mut out = linalg::identity(n);
    let mut term = linalg::identity(n);
    for k in 1..=30 {
        term = term.dot(&b) / C64::new(k as f64, 0.0);
        out += &term;
        if linalg::max_abs(&term) < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        out = out.dot(&out);
    }
    out
}

/// `exp(i dt A) v` for general `A`, by Arnoldi.
pub fn expmv_general(apply: &mut dyn FnMut(&[C64], &mut [C64]), v: &[C64], dt: f64) -> Result<Vec<C64>> {
    let n = v.len();
    let beta0 = norm(v);
    if beta0 == 0.0 {
        return Ok(v.to_vec());
    }
    let mmax = KRYLOV_MAX.min(n);
    let mut q: Vec<Vec<C64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut h = Array2::<C64>::zeros((mmax + 1, mmax));
    let mut w = vec![zero(); n];
    let mut scale: f64 = 0.0;
    for j in 0..mmax {
        apply(&q[j], &mut w);
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let c = dot(qi, &w);
                h[[i, j]] += c;
                for (wk, qk) in w.iter_mut().zip(qi) {
                    *wk -= qk * c;
                }
            }
        }
        let b = norm(&w);
        h[[j + 1, j]] = C64::new(b, 0.0);
        let m = j + 1;
        scale = scale.max((0..m).map(|i| h[[i, j]].norm()).sum::<f64>() + b);
        let hm = h.slice(ndarray::s![..m, ..m]).to_owned() * C64::new(0.0, dt);
        let e = expm(&hm);
        let done = b <= 1e-14 * scale.max(1e-300) || b * e[[m - 1, 0]].norm() < KRYLOV_TOL || m == n;
        if done {
            let mut out = vec![zero(); n];
            for (i, qi) in q.iter().enumerate() {
                let yi = e[[i, 0]] * beta0;
                for (o, x) in out.iter_mut().zip(qi) {
                    *o += x * yi;
                }
            }
            return Ok(out);
        }
        q.push(w.iter().map(|x| x / b).collect());
    }
    Err(Error::NonConvergence { what: "Arnoldi exponential", iterations: mmax, residual: f64::NAN, contraction: f64::NAN })
}

/// One time step of a band-limited linear system.
pub trait Stepper {
    fn xi_max(&self) -> usize;
    fn step(&self, u: &[C64], t: f64, dt: f64, integrator: Integrator) -> Result<Vec<C64>>;
}

/// `d_t u = i H(omega t) u` with the model operator.
#[derive(Debug, Clone)]
pub struct FullSystem {
    pub op: BandedFamily,
    pub omega: Vec<f64>,
}

impl FullSystem {
    pub fn new(spec: &ModelSpec, lattice: &PhaseLattice, xi_max: usize, omega: &[f64]) -> Result<Self> {
        spec.require(lattice, xi_max)?;
        Ok(Self::from_family(&spec.family(lattice, xi_max)?, omega))
    }

    pub fn from_config(c: &Config) -> Result<Self> {
        Self::new(&c.model()?, &c.lattice()?, c.xi_max, &c.omega)
    }

    pub fn from_family(f: &OperatorFamily, omega: &[f64]) -> Self {
        FullSystem { op: BandedFamily::from_family(f, 1e-13), omega: omega.to_vec() }
    }

    pub fn hamiltonian(&self, t: f64) -> Result<BandMatrix> {
        let th = self.op.lattice.theta_at(&self.omega, &[], t);
        let h = self.op.at(&th);
        let d = h.hermitian_defect();
        if d > HERMITIAN_TOL * h.max_abs().max(1.0) {
            return Err(Error::Hypothesis("H1", format!("step Hamiltonian has Hermitian defect {d:.3e} at t = {t}")));
        }
        Ok(h)
    }
}

impl Stepper for FullSystem {
    fn xi_max(&self) -> usize {
        self.op.xi_max
    }

    fn step(&self, u: &[C64], t: f64, dt: f64, integrator: Integrator) -> Result<Vec<C64>> {
        match integrator {
            Integrator::ExponentialMidpoint => {
                let h = self.hamiltonian(t + dt / 2.0)?;
                expmv_hermitian(&mut |x, y| h.apply(x, y), u, dt)
            }
            Integrator::Magnus4 => {
                let c = 3f64.sqrt() / 6.0;
                let h1 = self.hamiltonian(t + dt * (0.5 - c))?;
                let h2 = self.hamiltonian(t + dt * (0.5 + c))?;
                let n = u.len();
                let k = C64::new(0.0, -3f64.sqrt() / 12.0 * dt);
                let (mut a, mut b, mut ab, mut ba) = (vec![zero(); n], vec![zero(); n], vec![zero(); n], vec![zero(); n]);
                // (H1 + H2)/2 - i sqrt3/12 dt [H1, H2]
                let mut apply = |x: &[C64], y: &mut [C64]| {
                    h1.apply(x, &mut a);
                    h2.apply(x, &mut b);
                    h1.apply(&b, &mut ab);
                    h2.apply(&a, &mut ba);
                    for i in 0..n {
                        y[i] = (a[i] + b[i]) * 0.5 + k * (ab[i] - ba[i]);
                    }
                };
                expmv_hermitian(&mut apply, u, dt)
            }
        }
    }
}

/// The reduced system `d_t v = i (lambda_K(D) + R(omega t)) v` together with
/// the transformations that lead to it.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub lattice: PhaseLattice,
    pub xi_max: usize,
    pub omega: Vec<f64>,
    pub multiplier: Vec<f64>,
    pub remainder: OperatorFamily,
    spec: Vec<(usize, CMat)>,
    pub ledger: Vec<Transform>,
}

impl ReducedSystem {
    pub fn new(lattice: &PhaseLattice, omega: &[f64], multiplier: Vec<f64>, remainder: OperatorFamily, ledger: Vec<Transform>) -> Self {
        let spec = remainder
            .spectrum()
            .into_iter()
            .enumerate()
            .filter(|(_, m)| linalg::max_abs(m) > 0.0)
            .collect();
        ReducedSystem {
            lattice: lattice.clone(),
            xi_max: remainder.xi_max,
            omega: omega.to_vec(),
            multiplier,
            remainder,
            spec,
            ledger,
        }
    }

    pub fn from_sublinear(cert: &ReductionCertificate, omega: &[f64]) -> Self {
        Self::new(&cert.lattice, omega, cert.multiplier(), cert.remainder_family(), cert.ledger.clone())
    }

    pub fn from_linear(cert: &LinearCertificate, omega: &[f64]) -> Self {
        Self::new(&cert.lattice, omega, cert.lambda_k.clone(), cert.remainder_family(), cert.ledger.clone())
    }

    pub fn remainder_at(&self, t: f64) -> CMat {
        let th = self.lattice.theta_at(&self.omega, &[], t);
        let w = self.lattice.interpolation_weights(&th);
        let n = 2 * self.xi_max + 1;
        let mut out = Array2::zeros((n, n));
        for (p, m) in &self.spec {
            out.scaled_add(w[*p], m);
        }
        out
    }

    /// `sup_phi ||diag(<xi'>^s) R(phi)||_2` over the angle grid: the
    /// `B(L^2, H^s)` norm of the remainder on the band.
    pub fn remainder_bound(&self, s: f64) -> Result<f64> {
        let xm = self.xi_max as i64;
        let mut best: f64 = 0.0;
        for m in &self.remainder.mats {
            let mut w = m.clone();
            for (r, mut row) in w.rows_mut().into_iter().enumerate() {
                let f = japanese((r as i64 - xm) as f64).powf(s);
                row.mapv_inplace(|v| v * f);
            }
            best = best.max(linalg::largest_singular_value(&w)?);
        }
        Ok(best)
    }

    fn half_multiplier(&self, u: &mut [C64], dt: f64) {
        for (v, l) in u.iter_mut().zip(&self.multiplier) {
            *v *= C64::from_polar(1.0, l * dt / 2.0);
        }
    }
}

impl Stepper for ReducedSystem {
    fn xi_max(&self) -> usize {
        self.xi_max
    }

    /// Strang splitting; both integrators use the midpoint remainder.
    fn step(&self, u: &[C64], t: f64, dt: f64, _integrator: Integrator) -> Result<Vec<C64>> {
        let mut v = u.to_vec();
        self.half_multiplier(&mut v, dt);
        if !self.spec.is_empty() {
            let r = self.remainder_at(t + dt / 2.0);
            let mut apply = |x: &[C64], y: &mut [C64]| {
                let out = r.dot(&Array1::from(x.to_vec()));
                y.copy_from_slice(out.as_slice().expect("contiguous"));
            };
            v = expmv_general(&mut apply, &v, dt)?;
        }
        self.half_multiplier(&mut v, dt);
        Ok(v)
    }
}

/// Sampled norms (and optionally states) of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub s_list: Vec<f64>,
    /// `norms[i][j]`: the `H^{s_j}` norm at sample `i`.
    pub norms: Vec<Vec<f64>>,
    pub l2: Vec<f64>,
    /// Largest relative deviation of the `L^2` norm over every step.
    pub l2_drift: f64,
    pub n_steps: usize,
    pub final_state: FourierState,
    #[serde(skip)]
    pub states: Vec<Vec<C64>>,
}

impl Trajectory {
    pub fn series(&self, s: f64) -> Option<Vec<f64>> {
        let j = self.s_list.iter().position(|v| (*v - s).abs() < 1e-12)?;
        Some(self.norms.iter().map(|r| r[j]).collect())
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(self.s_list.iter().map(|s| format!("Hs_{s}")));
        h.push("l2".into());
        h
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.times
            .iter()
            .zip(&self.norms)
            .zip(&self.l2)
            .map(|((t, n), l)| {
                let mut row = vec![format!("{t}")];
                row.extend(n.iter().map(|v| format!("{v:.15e}")));
                row.push(format!("{l:.15e}"));
                row
            })
            .collect()
    }
}

/// Evolve from `cfg.t0` to `cfg.t0 + cfg.t_final`, sampling every stride.
pub fn evolve(sys: &dyn Stepper, u0: &FourierState, cfg: &EvolutionConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if u0.xi_max != sys.xi_max() {
        return Err(Error::GridMismatch(format!("state band {} vs operator band {}", u0.xi_max, sys.xi_max())));
    }
    u0.check_finite()?;
    let l0 = hs_norm(u0.coeffs.as_slice().expect("contiguous"), u0.xi_max, 0.0);
    if l0 == 0.0 {
        return Err(Error::InvalidInput("initial state is zero".into()));
    }
    let n_steps = cfg.n_steps();
    let xm = u0.xi_max;
    let mut u: Vec<C64> = u0.coeffs.to_vec();
    let mut traj = Trajectory {
        times: Vec::new(),
        s_list: cfg.s_list.clone(),
        norms: Vec::new(),
        l2: Vec::new(),
        l2_drift: 0.0,
        n_steps,
        final_state: u0.clone(),
        states: Vec::new(),
    };
    let sample = |traj: &mut Trajectory, t: f64, u: &[C64]| {
        traj.times.push(t);
        traj.norms.push(cfg.s_list.iter().map(|s| hs_norm(u, xm, *s)).collect());
        traj.l2.push(hs_norm(u, xm, 0.0));
        if cfg.keep_states {
            traj.states.push(u.to_vec());
        }
    };
    sample(&mut traj, cfg.t0, &u);
    for k in 0..n_steps {
        let t = cfg.t0 + k as f64 * cfg.dt;
        u = sys.step(&u, t, cfg.dt, cfg.integrator)?;
        let l = hs_norm(&u, xm, 0.0);
        if !l.is_finite() {
            return Err(Error::Instability(format!("non-finite state at t = {}", t + cfg.dt)));
        }
        traj.l2_drift = traj.l2_drift.max((l - l0).abs() / l0);
        if (k + 1) % cfg.sample_stride == 0 || k + 1 == n_steps {
            sample(&mut traj, t + cfg.dt, &u);
        }
    }
    traj.final_state = FourierState { xi_max: xm, coeffs: Array1::from(u) };
    Ok(traj)
}

/// Least-squares growth exponent and affine-bound constant for one index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub s: f64,
    /// Slope of `log ||u||_{H^s}` against `log(1 + t)`, first 10% of samples dropped.
    pub fitted_eta: f64,
    /// Smallest `C` with `||u(t)||_{H^s} <= C (||u_0||_{H^s} + t ||u_0||_{L^2})`.
    pub linear_bound_constant: f64,
    /// `s / S` from interpolation against the index `S`, when `S > s`.
    pub eta_pred: Option<f64>,
    pub samples_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub times: Vec<f64>,
    pub s_list: Vec<f64>,
    pub norms: Vec<Vec<f64>>,
    pub l2_drift: f64,
    pub fits: Vec<GrowthFit>,
}

pub fn growth_fit(times: &[f64], norms: &[f64], l2: &[f64], s: f64, interp_index: Option<f64>) -> Result<GrowthFit> {
    if times.len() != norms.len() || times.len() != l2.len() {
        return Err(Error::InvalidInput("growth series of different lengths".into()));
    }
    if times.len() < 20 {
        return Err(Error::InvalidInput(format!("growth fit needs at least 20 samples, got {}", times.len())));
    }
    if norms.iter().chain(l2).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput("growth series must be positive and finite".into()));
    }
    let t0 = times[0];
    let skip = times.len() / 10;
    let pts: Vec<(f64, f64)> = times[skip..]
        .iter()
        .zip(&norms[skip..])
        .map(|(t, n)| ((1.0 + t - t0).ln(), n.ln()))
        .collect();
    let (fitted_eta, _) = decay::least_squares(&pts);
    if !fitted_eta.is_finite() {
        return Err(Error::InvalidInput("degenerate time samples".into()));
    }
    let (n0, l0) = (norms[0], l2[0]);
    let linear_bound_constant = times
        .iter()
        .zip(norms)
        .map(|(t, n)| n / (n0 + (t - t0) * l0))
        .fold(0.0, f64::max);
    let eta_pred = interp_index.filter(|big| *big > s).map(|big| s / big);
    Ok(GrowthFit { s, fitted_eta, linear_bound_constant, eta_pred, samples_used: pts.len() })
}

pub fn growth_report(traj: &Trajectory, interp_index: Option<f64>) -> Result<GrowthReport> {
    let fits = traj
        .s_list
        .iter()
        .map(|s| growth_fit(&traj.times, &traj.series(*s).expect("listed index"), &traj.l2, *s, interp_index))
        .collect::<Result<Vec<_>>>()?;
    Ok(GrowthReport {
        times: traj.times.clone(),
        s_list: traj.s_list.clone(),
        norms: traj.norms.clone(),
        l2_drift: traj.l2_drift,
        fits,
    })
}

/// Full evolution with its growth report.
pub fn evolve_full(sys: &FullSystem, u0: &FourierState, cfg: &EvolutionConfig, interp_index: Option<f64>) -> Result<(GrowthReport, Trajectory)> {
    let traj = evolve(sys, u0, cfg)?;
    Ok((growth_report(&traj, interp_index)?, traj))
}

pub fn evolve_reduced(sys: &ReducedSystem, v0: &FourierState, cfg: &EvolutionConfig) -> Result<Trajectory> {
    evolve(sys, v0, cfg)
}

/// Forward over `cfg` then backward to the start: relative `L^2` error.
pub fn reversibility(sys: &dyn Stepper, u0: &FourierState, cfg: &EvolutionConfig) -> Result<f64> {
    cfg.validate()?;
    let n = cfg.n_steps();
    let mut u = u0.coeffs.to_vec();
    for k in 0..n {
        u = sys.step(&u, cfg.t0 + k as f64 * cfg.dt, cfg.dt, cfg.integrator)?;
    }
    for k in (0..n).rev() {
        u = sys.step(&u, cfg.t0 + (k + 1) as f64 * cfg.dt, -cfg.dt, cfg.integrator)?;
    }
    let d: Vec<C64> = u.iter().zip(u0.coeffs.iter()).map(|(a, b)| a - b).collect();
    Ok(norm(&d) / norm(u0.coeffs.as_slice().expect("contiguous")))
}

/// Smooth deterministic initial datum: modes `|xi| <= 16` with amplitudes
/// `<xi>^{-2}` and random phases, unit `L^2` norm.
pub fn initial_state(xi_max: usize, seed: u64) -> FourierState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xm = xi_max as i64;
    let cut = xm.min(16);
    let mut coeffs = Array1::zeros(2 * xi_max + 1);
    for xi in -cut..=cut {
        let a = japanese(xi as f64).powi(-2) * rng.random_range(0.5..1.0);
        coeffs[(xi + xm) as usize] = C64::from_polar(a, 2.0 * PI * rng.random::<f64>());
    }
    let l = coeffs.iter().map(|v: &C64| v.norm_sqr()).sum::<f64>().sqrt();
    coeffs.mapv_inplace(|v| v / l);
    FourierState { xi_max, coeffs }
}

/// Propagator `U(t0, t0 + n dt)` on the band, column by column.
pub fn propagator(sys: &dyn Stepper, t0: f64, dt: f64, n_steps: usize, integrator: Integrator) -> Result<CMat> {
    let n = 2 * sys.xi_max() + 1;
    let mut out = Array2::zeros((n, n));
    for c in 0..n {
        let mut u = vec![zero(); n];
        u[c] = C64::new(1.0, 0.0);
        for k in 0..n_steps {
            u = sys.step(&u, t0 + k as f64 * dt, dt, integrator)?;
        }
        out.column_mut(c).assign(&Array1::from(u));
    }
    Ok(out)
}

fn weighted(u: &CMat, xi_max: usize, s: f64) -> CMat {
    let xm = xi_max as i64;
    Array2::from_shape_fn(u.raw_dim(), |(r, c)| {
        let wr = japanese((r as i64 - xm) as f64).powf(s);
        let wc = japanese((c as i64 - xm) as f64).powf(-s);
        u[[r, c]] * wr * wc
    })
}

/// `B(H^s)` norm of a band matrix.
pub fn sobolev_operator_norm(u: &CMat, xi_max: usize, s: f64) -> Result<f64> {
    linalg::largest_singular_value(&weighted(u, xi_max, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationEntry {
    pub norm_l2: f64,
    pub norm_s: f64,
    pub norm_big_s: f64,
    /// `||U||_{L^2}^{(S-s)/S} ||U||_{H^S}^{s/S}`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub s: f64,
    pub big_s: f64,
    pub slack: f64,
    pub entries: Vec<InterpolationEntry>,
    pub all_hold: bool,
}

pub fn interpolation_check(mats: &[CMat], xi_max: usize, s: f64, big_s: f64, slack: f64) -> Result<InterpolationReport> {
    if !(big_s > 0.0 && s >= 0.0 && s <= big_s) {
        return Err(Error::InvalidInput(format!("need 0 <= s <= S with S > 0, got s = {s}, S = {big_s}")));
    }
    let entries = mats
        .iter()
        .map(|u| {
            let n0 = linalg::largest_singular_value(u)?;
            let ns = sobolev_operator_norm(u, xi_max, s)?;
            let nb = sobolev_operator_norm(u, xi_max, big_s)?;
            let bound = n0.powf((big_s - s) / big_s) * nb.powf(s / big_s);
            Ok(InterpolationEntry { norm_l2: n0, norm_s: ns, norm_big_s: nb, bound, holds: ns <= bound + slack })
        })
        .collect::<Result<Vec<_>>>()?;
    let all_hold = entries.iter().all(|e| e.holds);
    Ok(InterpolationReport { s, big_s, slack, entries, all_hold })
}

/// Comparison of `T^{-1}(omega t) u(t)` with the reduced trajectory `v(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub times: Vec<f64>,
    /// `||T^{-1} u - v||_{H^1} / ||u_0||_{H^1}` per sample.
    pub errors: Vec<f64>,
    pub max_error: f64,
}

/// The composed change of variables, interpolated in the angle.
#[derive(Debug, Clone)]
pub struct ChangeOfVariables {
    lattice: PhaseLattice,
    omega: Vec<f64>,
    spec: Vec<CMat>,
}

impl ChangeOfVariables {
    pub fn new(ledger: &[Transform], lattice: &PhaseLattice, xi_max: usize, omega: &[f64]) -> Result<Self> {
        let t = ledger::compose(ledger, lattice, xi_max)?;
        Ok(ChangeOfVariables { lattice: lattice.clone(), omega: omega.to_vec(), spec: t.spectrum() })
    }

    pub fn at(&self, t: f64) -> CMat {
        let th = self.lattice.theta_at(&self.omega, &[], t);
        OperatorFamily::interpolate(&self.spec, &self.lattice, &th)
    }

    /// `T(omega t)^{-1} u`.
    pub fn pull_back(&self, t: f64, u: &[C64]) -> Result<Vec<C64>> {
        let x = self.at(t).solve_into(Array1::from(u.to_vec()))?;
        Ok(x.to_vec())
    }
}

pub fn equivalence_check(
    full: &FullSystem,
    reduced: &ReducedSystem,
    u0: &FourierState,
    t_max: f64,
    dt: f64,
    stride: usize,
) -> Result<EquivalenceReport> {
    let cov = ChangeOfVariables::new(&reduced.ledger, &reduced.lattice, reduced.xi_max, &reduced.omega)?;
    let v0 = cov.pull_back(0.0, u0.coeffs.as_slice().expect("contiguous"))?;
    let v0 = FourierState { xi_max: u0.xi_max, coeffs: Array1::from(v0) };
    let cfg = EvolutionConfig {
        dt,
        t_final: t_max,
        s_list: vec![1.0],
        sample_stride: stride,
        integrator: Integrator::ExponentialMidpoint,
        t0: 0.0,
        keep_states: true,
    };
    let tu = evolve(full, u0, &cfg)?;
    let tv = evolve(reduced, &v0, &cfg)?;
    let xm = u0.xi_max;
    let scale = hs_norm(u0.coeffs.as_slice().expect("contiguous"), xm, 1.0);
    let mut errors = Vec::new();
    for ((t, u), v) in tu.times.iter().zip(&tu.states).zip(&tv.states) {
        let pu = cov.pull_back(*t, u)?;
        let d: Vec<C64> = pu.iter().zip(v).map(|(a, b)| a - b).collect();
        errors.push(hs_norm(&d, xm, 1.0) / scale);
    }
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(EquivalenceReport { times: tu.times, errors, max_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{sobolev_norm, SobolevIndex};
    use crate::model::{worked_linear, worked_sublinear, WaveTerm};

    fn small(c: &mut Config, xi_max: usize) {
        c.xi_max = xi_max;
    }

    #[test]
    fn band_matrix_roundtrip() {
        let n = 9;
        let a = Array2::from_shape_fn((n, n), |(r, c)| {
            let k = r as i64 - c as i64;
            if k.abs() <= 2 {
                C64::new((r + 2 * c) as f64, k as f64)
            } else {
                zero()
            }
        });
        let b = BandMatrix::from_dense(&a, &[-2, -1, 0, 1, 2]);
        assert_eq!(b.to_dense(), a);
        let x: Vec<C64> = (0..n).map(|i| C64::new(i as f64, 1.0)).collect();
        let mut y = vec![zero(); n];
        b.apply(&x, &mut y);
        let want = a.dot(&Array1::from(x));
        assert!(y.iter().zip(want.iter()).all(|(p, q)| (p - q).norm() < 1e-12));
        assert!(BandMatrix::from_dense(&linalg::sym(&a), &[-2, -1, 0, 1, 2]).hermitian_defect() < 1e-14);
    }

    #[test]
    fn krylov_exponentials_match_dense() {
        let n = 40;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Array2::from_shape_fn((n, n), |_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = linalg::sym(&a);
        let v: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), 0.3)).collect();
        let want = HermEig::new(&h).unwrap().expi(0.2).dot(&Array1::from(v.clone()));
        let got = expmv_hermitian(&mut |x, y| y.copy_from_slice(h.dot(&Array1::from(x.to_vec())).as_slice().unwrap()), &v, 0.2).unwrap();
        let err = got.iter().zip(want.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        let got = expmv_general(&mut |x, y| y.copy_from_slice(a.dot(&Array1::from(x.to_vec())).as_slice().unwrap()), &v, 0.2).unwrap();
        let dense = expm(&(a.clone() * C64::new(0.0, 0.2))).dot(&Array1::from(v.clone()));
        let err = got.iter().zip(dense.iter()).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        // Hermitian case of the Taylor exponential against the eigendecomposition
        let e1 = expm(&(h.clone() * C64::new(0.0, 0.7)));
        let e2 = HermEig::new(&h).unwrap().expi(0.7);
        assert!(linalg::max_abs_diff(&e1, &e2) < 1e-12);
    }

    #[test]
    fn constant_coefficient_flow_keeps_every_norm() {
        let mut c = worked_sublinear();
        small(&mut c, 16);
        c.v = vec![WaveTerm::constant(1.0)];
        c.w.clear();
        let sys = FullSystem::from_config(&c).unwrap();
        let u0 = initial_state(16, 3);
        let cfg = EvolutionConfig { dt: 0.05, t_final: 20.0, s_list: vec![0.0, 1.0, 2.0], sample_stride: 10, integrator: Integrator::ExponentialMidpoint, t0: 0.0, keep_states: false };
        let tr = evolve(&sys, &u0, &cfg).unwrap();
        for j in 0..3 {
            let first = tr.norms[0][j];
            assert!(tr.norms.iter().all(|r| (r[j] - first).abs() < 1e-9 * first));
        }
    }

    #[test]
    fn single_mode_keeps_l2_norm() {
        let mut c = worked_linear();
        small(&mut c, 24);
        let sys = FullSystem::from_config(&c).unwrap();
        let u0 = FourierState::mode(24, 5);
        let cfg = EvolutionConfig { dt: 0.01, t_final: 10.0, s_list: vec![0.0, 1.0], sample_stride: 50, integrator: Integrator::ExponentialMidpoint, t0: 0.0, keep_states: false };
        let tr = evolve(&sys, &u0, &cfg).unwrap();
        assert!(tr.l2_drift < 1e-9, "{}", tr.l2_drift);
        let s1 = tr.series(1.0).unwrap();
        assert!(s1.iter().any(|v| (v - s1[0]).abs() > 1e-6), "H^1 norm should move");
    }

    #[test]
    fn midpoint_converges_at_second_order_and_magnus_at_fourth() {
        let mut c = worked_sublinear();
        small(&mut c, 16);
        let sys = FullSystem::from_config(&c).unwrap();
        let u0 = initial_state(16, 1);
        let run = |dt: f64, integrator| {
            let cfg = EvolutionConfig { dt, t_final: 4.0, s_list: vec![1.0], sample_stride: 1_000_000, integrator, t0: 0.0, keep_states: false };
            evolve(&sys, &u0, &cfg).unwrap().final_state
        };
        let diff = |a: &FourierState, b: &FourierState| {
            let d: Vec<C64> = a.coeffs.iter().zip(b.coeffs.iter()).map(|(x, y)| x - y).collect();
            norm(&d)
        };
        let reference = run(0.0025, Integrator::Magnus4);
        let e1 = diff(&run(0.04, Integrator::ExponentialMidpoint), &reference);
        let e2 = diff(&run(0.02, Integrator::ExponentialMidpoint), &reference);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.2, "midpoint order {order}");
        let m1 = diff(&run(0.08, Integrator::Magnus4), &reference);
        let m2 = diff(&run(0.04, Integrator::Magnus4), &reference);
        let order = (m1 / m2).log2();
        assert!(order > 3.6, "Magnus order {order}");
        // the H^1 norm series converges at second order as well
        let h = |dt| {
            let cfg = EvolutionConfig { dt, t_final: 4.0, s_list: vec![1.0], sample_stride: 1_000_000, integrator: Integrator::ExponentialMidpoint, t0: 0.0, keep_states: false };
            *evolve(&sys, &u0, &cfg).unwrap().norms.last().unwrap().first().unwrap()
        };
        let (a, b, r) = (h(0.04), h(0.02), h(0.01));
        let order = ((a - r) / (b - r)).abs().log2();
        assert!(order > 1.5, "norm order {order}");
    }

    #[test]
    fn backward_evolution_returns_to_start() {
        let mut c = worked_linear();
        small(&mut c, 24);
        let sys = FullSystem::from_config(&c).unwrap();
        let u0 = initial_state(24, 2);
        for integrator in [Integrator::ExponentialMidpoint, Integrator::Magnus4] {
            let cfg = EvolutionConfig { dt: 0.02, t_final: 20.0, s_list: vec![0.0], sample_stride: 1, integrator, t0: 3.0, keep_states: false };
            let e = reversibility(&sys, &u0, &cfg).unwrap();
            assert!(e < 1e-10, "{e}");
        }
    }

    #[test]
    fn zero_remainder_reduced_flow_is_a_phase() {
        let lat = PhaseLattice::identity(1, 8);
        let xm = 10;
        let mult: Vec<f64> = (-(xm as i64)..=xm as i64).map(|x| (x.abs() as f64).sqrt() * 1.3).collect();
        let sys = ReducedSystem::new(&lat, &[1.618], mult.clone(), OperatorFamily::zeros(&lat, xm), Vec::new());
        let v0 = initial_state(xm, 4);
        let cfg = EvolutionConfig { dt: 0.1, t_final: 5.0, s_list: vec![0.0, 1.0, 3.0], sample_stride: 5, integrator: Integrator::ExponentialMidpoint, t0: 0.0, keep_states: false };
        let tr = evolve_reduced(&sys, &v0, &cfg).unwrap();
        for r in &tr.norms {
            for (j, v) in r.iter().enumerate() {
                assert!((*v - tr.norms[0][j]).abs() <= 1e-14 * tr.norms[0][j]);
            }
        }
        let t = *tr.times.last().unwrap();
        for (i, c) in tr.final_state.coeffs.iter().enumerate() {
            let want = v0.coeffs[i] * C64::from_polar(1.0, mult[i] * t);
            assert!((c - want).norm() < 1e-12);
        }
        assert_eq!(sys.remainder_bound(1.0).unwrap(), 0.0);
    }

    #[test]
    fn growth_fit_on_synthetic_series() {
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 50.0).collect();
        let ones = vec![1.0; 200];
        let f = growth_fit(&times, &ones, &ones, 1.0, Some(2.0)).unwrap();
        assert!(f.fitted_eta.abs() < 1e-12);
        assert_eq!(f.eta_pred, Some(0.5));
        let lin: Vec<f64> = times.iter().map(|t| 1.0 + t).collect();
        let f = growth_fit(&times, &lin, &ones, 1.0, None).unwrap();
        assert!((f.fitted_eta - 1.0).abs() < 1e-9);
        assert!((f.linear_bound_constant - 1.0).abs() < 1e-12);
        assert!(growth_fit(&times[..10], &ones[..10], &ones[..10], 1.0, None).is_err());
        let mut bad = ones.clone();
        bad[3] = f64::NAN;
        assert!(growth_fit(&times, &bad, &ones, 1.0, None).is_err());
    }

    #[test]
    fn interpolation_inequality_examples() {
        let xm = 12;
        let n = 2 * xm + 1;
        let phases: Vec<C64> = (0..n).map(|i| C64::from_polar(1.0, i as f64)).collect();
        let u = linalg::diag(&phases);
        let r = interpolation_check(&[u], xm, 1.0, 2.0, 1e-6).unwrap();
        let e = &r.entries[0];
        assert!((e.norm_l2 - 1.0).abs() < 1e-12 && (e.norm_s - 1.0).abs() < 1e-12 && (e.bound - 1.0).abs() < 1e-12);
        assert!(r.all_hold);
        // diag(<xi>^0.1): every weighted norm is max <xi>^0.1, the bound is tight
        let d: Vec<C64> = (0..n).map(|i| C64::new(japanese(i as f64 - xm as f64).powf(0.1), 0.0)).collect();
        let r = interpolation_check(&[linalg::diag(&d)], xm, 1.0, 2.0, 1e-6).unwrap();
        let want = japanese(xm as f64).powf(0.1);
        assert!((r.entries[0].norm_s - want).abs() < 1e-12);
        assert!(r.all_hold);
        // a shift is not bounded uniformly on H^s: the weighted norms grow with s
        let shift = Array2::from_shape_fn((n, n), |(a, b)| C64::new(f64::from(u8::from(a == b + 3)), 0.0));
        let r = interpolation_check(&[shift], xm, 1.0, 2.0, 1e-6).unwrap();
        assert!(r.entries[0].norm_big_s > r.entries[0].norm_s && r.all_hold);
    }

    #[test]
    fn propagator_satisfies_interpolation() {
        let mut c = worked_sublinear();
        small(&mut c, 12);
        let sys = FullSystem::from_config(&c).unwrap();
        let u = propagator(&sys, 0.0, 0.05, 200, Integrator::ExponentialMidpoint).unwrap();
        let r = interpolation_check(&[u.clone()], 12, 1.0, 2.0, 1e-6).unwrap();
        assert!(r.all_hold);
        assert!((r.entries[0].norm_l2 - 1.0).abs() < 1e-10);
        // unitarity of the propagator
        let id = linalg::adjoint(&u).dot(&u);
        assert!(linalg::max_abs_diff(&id, &linalg::identity(25)) < 1e-10);
    }

    #[test]
    fn initial_state_is_deterministic_and_normalized() {
        let a = initial_state(32, 7);
        assert_eq!(a, initial_state(32, 7));
        assert_ne!(a, initial_state(32, 8));
        assert!((sobolev_norm(&a, SobolevIndex::new(0.0).unwrap()) - 1.0).abs() < 1e-14);
        assert_eq!(a.get(17), zero());
    }

    #[test]
    fn config_validation() {
        let mut c = EvolutionConfig::from_config(&worked_linear());
        assert!(c.validate().is_ok());
        assert_eq!(c.n_steps(), 100_000);
        c.s_list.clear();
        assert!(c.validate().is_err());
        let mut c = EvolutionConfig::from_config(&worked_linear());
        c.dt = 0.0;
        assert!(c.validate().is_err());
        c.dt = 2000.0;
        assert!(c.validate().is_err());
    }
}
