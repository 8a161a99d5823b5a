//! Normal form for `0 < M < 1`: flatten `V(phi, x)|D|^M` to `lambda |D|^M`
//! by a time-dependent conjugation and a transport flow, then push the lower
//! orders into a real Fourier multiplier one order gap at a time.

use crate::decay::{self, DecayFit};
use crate::divisors::{check_diophantine, FrequencyVector, ResonanceReport, TauRegime};
use crate::error::{Error, Result};
use crate::family::{multiplier_matrix, OperatorFamily};
use crate::flows::{self, Diffeo, FlowScheme};
use crate::lattice::{PhaseField, PhaseLattice, DIVISOR_FLOOR};
use crate::ledger::{self, FieldData, SparseFamily, Transform};
use crate::linalg::{self, CMat};
use crate::model::{Config, HypothesisReport, ModelSpec};
use crate::mult::{CutoffKind, Mult};
use crate::steps::{self, StepKind, StepRecord, GENERATOR_TOL, REMAINDER_TOL};
use crate::symbol::TrigPoly;
use ndarray::Array2;
use ndarray_linalg::LeastSquaresSvd;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Samples per period for the spatial fields of the top reduction.
pub const TOP_NX: usize = 256;

/// `min(1 - M, epsilon)`.
pub fn epsilon_bar(m: f64, epsilon: f64) -> Result<f64> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::Precondition(format!("sublinear reduction needs 0 < M < 1, got {m}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Hypothesis("H2", format!("epsilon = {epsilon} must be positive")));
    }
    Ok((1.0 - m).min(epsilon))
}

/// Number of steps `ceil((order + K)/eps_bar) + 1` with a guard against
/// rounding up exact quotients.
pub fn step_count(order: f64, k: usize, eps_bar: f64) -> usize {
    ((order + k as f64) / eps_bar - 1e-9).ceil() as usize + 1
}

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// `(omega . d_phi)^{-1}[(<V>_phi - V)/2]` mode by mode.
pub fn solve_alpha_top(v: &TrigPoly, freq: &FrequencyVector) -> Result<TrigPoly> {
    let mut a = v.try_map_modes(|l, _| {
        if l.iter().all(|&c| c == 0) {
            return Ok(zero());
        }
        let d = freq.dot(l);
        if d.abs() < DIVISOR_FLOOR {
            return Err(Error::SmallDivisor { ell: l.to_vec(), j: None, divisor: d });
        }
        Ok(C64::new(0.0, 0.5 / d))
    })?;
    a.prune(0.0);
    Ok(a)
}

/// `<V>_phi` as a function of `x`.
pub fn phase_average(v: &TrigPoly) -> TrigPoly {
    let mut out = TrigPoly::zero(v.nu);
    for ((l, k), c) in &v.modes {
        if l.iter().all(|&x| x == 0) {
            out.add_mode(l.clone(), *k, *c);
        }
    }
    out
}

/// `omega . d_phi` of a trigonometric polynomial.
pub fn omega_dphi_poly(a: &TrigPoly, freq: &FrequencyVector) -> TrigPoly {
    a.try_map_modes(|l, _| Ok(C64::new(0.0, freq.dot(l)))).expect("infallible")
}

/// Max over the lattice and `n_x` points of `|V + 2 omega.d_phi alpha - <V>_phi|`.
pub fn top_time_residual(v: &TrigPoly, alpha: &TrigPoly, freq: &FrequencyVector, lattice: &PhaseLattice, n_x: usize) -> f64 {
    let lhs = v.add(&omega_dphi_poly(alpha, freq).scale(C64::new(2.0, 0.0))).add(&phase_average(v).scale(C64::new(-1.0, 0.0)));
    let mut r: f64 = 0.0;
    for p in 0..lattice.n_points() {
        let phi = lattice.phi_representative(&lattice.theta(p));
        for j in 0..n_x {
            r = r.max(lhs.eval(&phi, 2.0 * PI * j as f64 / n_x as f64).norm());
        }
    }
    r
}

/// Matrices of `Op(a (m(xi) + m(xi')))` on the lattice: the symmetric
/// quantization of `2 a m`, `m = |xi|^M chi`.
pub fn symmetric_product(a: &TrigPoly, m: f64, lattice: &PhaseLattice, xi_max: usize) -> OperatorFamily {
    let n = 2 * xi_max + 1;
    let mult = Mult::abs_d(m);
    let mv: Vec<f64> = (0..n).map(|i| mult.eval(i as f64 - xi_max as f64).re).collect();
    OperatorFamily::from_fn(lattice, xi_max, |p| {
        let phi = lattice.phi_representative(&lattice.theta(p));
        let mut out = Array2::zeros((n, n));
        for (k, ck) in a.x_coefficients(&phi) {
            for c in 0..n {
                let r = c as i64 + k;
                if r >= 0 && (r as usize) < n {
                    out[[r as usize, c]] += ck * (mv[c] + mv[r as usize]);
                }
            }
        }
        out
    })
}

/// Generator of the top time step and its exact `omega . d_phi`.
pub fn top_time_generator(
    alpha: &TrigPoly,
    freq: &FrequencyVector,
    m: f64,
    lattice: &PhaseLattice,
    xi_max: usize,
) -> (OperatorFamily, OperatorFamily) {
    let g = symmetric_product(alpha, m, lattice, xi_max);
    let gdot = symmetric_product(&omega_dphi_poly(alpha, freq), m, lattice, xi_max);
    (g, gdot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaBeta {
    pub lambda: f64,
    /// Displacement `beta_tilde(y)` on a phase-independent grid.
    pub beta_tilde: Diffeo,
    /// `max |<V>(y)(1 + beta_tilde_y)^M - lambda|`.
    pub residual: f64,
}

/// `lambda = (mean <V>^{-1/M})^{-M}`, `beta_tilde = d_y^{-1}[lambda^{1/M} <V>^{-1/M} - 1]`.
pub fn solve_lambda_beta(vbar: &TrigPoly, m: f64, n_x: usize) -> Result<LambdaBeta> {
    let lat = PhaseLattice::trivial(vbar.nu, 1);
    let zero_phi = vec![0.0; vbar.nu];
    let vals: Vec<f64> = (0..n_x).map(|j| vbar.eval(&zero_phi, 2.0 * PI * j as f64 / n_x as f64).re).collect();
    let vmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(vmin > 0.0) {
        return Err(Error::Hypothesis("H3", format!("phase average of V reaches {vmin:.3e}")));
    }
    let mean = vals.iter().map(|v| v.powf(-1.0 / m)).sum::<f64>() / n_x as f64;
    let lambda = mean.powf(-m);
    let rhs = PhaseField::from_fn(&lat, n_x, |_, x| {
        C64::new(lambda.powf(1.0 / m) * vbar.eval(&zero_phi, x).re.powf(-1.0 / m) - 1.0, 0.0)
    });
    let beta_tilde = Diffeo::new(rhs.invert_dx().real_part())?;
    let by = beta_tilde.alpha_x();
    let residual = (0..n_x)
        .map(|j| (vals[j] * (1.0 + by.values[[0, j]].re).powf(m) - lambda).abs())
        .fold(0.0, f64::max);
    Ok(LambdaBeta { lambda, beta_tilde, residual })
}

/// Fitted `|xi|^M` coefficient of an operator family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCoefficient {
    /// Mean of the extrapolated coefficient over the angle, x and sign samples.
    pub value: f64,
    /// `max |c - value| / |value|` over the samples.
    pub rel_variation: f64,
    /// The same spread for the plain ratio at the largest window frequency.
    pub raw_rel_variation: f64,
    pub window: (i64, i64),
    /// Expansion variable `t = |xi|^{-step}` and polynomial degree of the fit.
    pub step: f64,
    pub degree: usize,
}

/// Extract the coefficient of `|xi|^M`: sample the symbol of each column
/// `xi` in the window at `n_x` points, divide by `|xi|^M`, and extrapolate
/// in `t = |xi|^{-step}` to `t = 0` by a least-squares polynomial.
pub fn top_coefficient(
    v: &OperatorFamily,
    m: f64,
    step: f64,
    degree: usize,
    window: (i64, i64),
    n_x: usize,
) -> Result<TopCoefficient> {
    let xm = v.xi_max as i64;
    if window.0 < 1 || window.1 > xm || window.1 - window.0 < degree as i64 + 2 {
        return Err(Error::InvalidInput(format!("window {window:?} unusable on band {xm}")));
    }
    let xis: Vec<i64> = (window.0..=window.1).collect();
    let tmax = (window.0 as f64).powf(-step);
    let design = Array2::from_shape_fn((xis.len(), degree + 1), |(i, j)| ((xis[i] as f64).powf(-step) / tmax).powi(j as i32));
    let n = v.band_len();
    let phases: Vec<Vec<C64>> = (0..n_x)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / n_x as f64;
            (0..n).map(|r| C64::from_polar(1.0, r as f64 * x)).collect()
        })
        .collect();
    let mut samples = Vec::new();
    let mut raw = Vec::new();
    for mat in &v.mats {
        for sign in [1i64, -1] {
            // rhs columns: real and imaginary parts per x point
            let mut rhs = Array2::zeros((xis.len(), 2 * n_x));
            for (i, &xi0) in xis.iter().enumerate() {
                let xi = sign * xi0;
                let c = (xi + xm) as usize;
                let scale = (xi0 as f64).powf(-m);
                for (j, ph) in phases.iter().enumerate() {
                    let mut s = zero();
                    for r in 0..n {
                        // e^{i k x} with k = r - c
                        s += mat[[r, c]] * ph[r] * ph[c].conj();
                    }
                    rhs[[i, 2 * j]] = s.re * scale;
                    rhs[[i, 2 * j + 1]] = s.im * scale;
                }
            }
            let sol = design.least_squares(&rhs)?.solution;
            for j in 0..n_x {
                samples.push(C64::new(sol[[0, 2 * j]], sol[[0, 2 * j + 1]]));
                let last = xis.len() - 1;
                raw.push(C64::new(rhs[[last, 2 * j]], rhs[[last, 2 * j + 1]]));
            }
        }
    }
    let spread = |s: &[C64]| {
        let mean = s.iter().sum::<C64>() / s.len() as f64;
        let var = s.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) / mean.norm();
        (mean.re, var)
    };
    let (value, rel_variation) = spread(&samples);
    let (_, raw_rel_variation) = spread(&raw);
    Ok(TopCoefficient { value, rel_variation, raw_rel_variation, window, step, degree })
}

/// Homological residuals collected along the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `V + 2 omega.d_phi alpha - <V>_phi` on the grid.
    pub top_time: f64,
    /// `<V>(y)(1 + beta_tilde_y)^M - lambda` on the grid.
    pub top_space: f64,
    /// `w_n + omega.d_phi g - <w_n>_phi` per lower step, resolved modes.
    pub lower_time: Vec<f64>,
    /// Content of `w_n` in the unresolved (Nyquist) angle bin, per lower step.
    pub lower_time_unresolved: Vec<f64>,
    /// `chi_0 (<w_n>_phi - <w_n>_{phi,x}) - 2 lambda M sign(xi)|xi|^{M-1} d_x sigma` per step.
    pub lower_space: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionCertificate {
    pub branch: String,
    pub config_hash: String,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N_K")]
    pub n_k: usize,
    pub eps_bar: f64,
    pub lambda: f64,
    pub xi_max: usize,
    pub lattice: PhaseLattice,
    /// `mu(xi)` for `xi = -xi_max ..= xi_max`.
    pub mu: Vec<f64>,
    pub mu_max_imag: f64,
    pub steps: Vec<StepRecord>,
    pub ledger: Vec<Transform>,
    pub remainder: SparseFamily,
    pub remainder_profile: Vec<(i64, f64)>,
    pub remainder_fit: DecayFit,
    #[serde(with = "crate::decay::float_serde")]
    pub measured_remainder_order: f64,
    pub residuals: Residuals,
    pub top: TopCoefficient,
    pub hypotheses: HypothesisReport,
    pub diophantine: ResonanceReport,
    pub tau_regime: TauRegime,
    pub max_hermitian_defect: f64,
}

impl ReductionCertificate {
    /// `lambda |xi|^M chi + mu(xi)` on the band.
    pub fn multiplier(&self) -> Vec<f64> {
        let mult = Mult::abs_d(self.m);
        self.mu
            .iter()
            .enumerate()
            .map(|(i, mu)| self.lambda * mult.eval(i as f64 - self.xi_max as f64).re + mu)
            .collect()
    }

    pub fn remainder_family(&self) -> OperatorFamily {
        self.remainder.to_family()
    }

    /// Invariant checks that do not need the model: `lambda > 0`, real `mu`,
    /// and the remainder order target.
    pub fn invariant_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lambda > 0.0) {
            out.push(format!("lambda = {} is not positive", self.lambda));
        }
        if self.mu_max_imag > 1e-9 {
            out.push(format!("mu has imaginary part {:.3e}", self.mu_max_imag));
        }
        if self.measured_remainder_order > -(self.k as f64) + 0.5 {
            out.push(format!("remainder order {} above {}", self.measured_remainder_order, -(self.k as f64) + 0.5));
        }
        out
    }
}

/// In-memory result of a reduction: the certificate plus the matrices it summarizes.
#[derive(Debug, Clone)]
pub struct SublinearReduction {
    pub certificate: ReductionCertificate,
    /// The model operator on the grid.
    pub model: OperatorFamily,
    /// The operator after the two top steps.
    pub after_top: OperatorFamily,
    /// Final operator `lambda |D|^M + mu + R`.
    pub reduced: OperatorFamily,
    pub remainder: OperatorFamily,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SublinearOptions {
    pub k: usize,
    pub flow_steps: usize,
    pub scheme: FlowScheme,
    pub scan_bound: usize,
    /// Stop after the two top steps.
    pub top_only: bool,
}

impl SublinearOptions {
    pub fn from_config(c: &Config) -> Self {
        SublinearOptions { k: c.k, flow_steps: c.flow_steps, scheme: FlowScheme::default(), scan_bound: c.scan_bound, top_only: false }
    }
}

/// Time step of a lower order: `g = (omega.d_phi)^{-1}[<w>_phi - w]`, with
/// `omega.d_phi g = <w>_phi - w` on the resolved modes.
pub fn lower_time_step(w: &OperatorFamily, omega: &[f64]) -> Result<(OperatorFamily, OperatorFamily)> {
    let red = w.lattice.reduced_omega(omega);
    let g = w.scale(C64::new(-1.0, 0.0)).invert_omega_dphi(&red)?;
    let gdot = g.omega_dphi(&red);
    Ok((g, gdot))
}

/// Residual of the time homological equation and the unresolved content of `w`.
pub fn lower_time_residual(w: &OperatorFamily, g: &OperatorFamily, omega: &[f64]) -> Result<(f64, f64)> {
    let red = w.lattice.reduced_omega(omega);
    let avg = OperatorFamily::constant(&w.lattice, &w.phi_mean());
    let nyq = w.map_modes(|m, _, _, nyq| Ok(C64::new(f64::from(u8::from(nyq && m.iter().any(|&c| c != 0))), 0.0)))?;
    let res = w.add(&g.omega_dphi(&red))?.sub(&avg)?.sub(&nyq)?;
    Ok((res.max_abs(), nyq.max_abs()))
}

/// `sigma[xi'][xi] = chi_0(xi) a[xi'][xi] / (i k) * sign(xi)|xi|^{1-M}/(2 lambda M)`
/// for `k = xi' - xi != 0`.
pub fn space_sigma(avg: &CMat, lambda: f64, m: f64) -> CMat {
    let n = avg.nrows();
    let xm = (n as i64 - 1) / 2;
    let chi0 = Mult::cutoff(CutoffKind::Space);
    Array2::from_shape_fn((n, n), |(r, c)| {
        let k = r as i64 - c as i64;
        let xi = c as i64 - xm;
        if k == 0 || xi == 0 {
            return zero();
        }
        let w = chi0.eval(xi as f64).re * (xi.signum() as f64) * (xi.abs() as f64).powf(1.0 - m) / (2.0 * lambda * m);
        avg[[r, c]] * C64::new(0.0, -1.0 / k as f64) * w
    })
}

/// Space step of a lower order: `g = sigma + sigma^*` and the multiplier increment.
pub fn lower_space_step(avg: &CMat, lambda: f64, m: f64) -> Result<(CMat, Vec<C64>)> {
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!("lambda = {lambda} must be positive")));
    }
    let s = space_sigma(avg, lambda, m);
    let g = &s + &linalg::adjoint(&s);
    Ok((g, avg.diag().to_vec()))
}

/// `chi_0 (a - diag a) - 2 lambda M sign(xi) |xi|^{M-1} d_x sigma`.
pub fn lower_space_residual(avg: &CMat, sigma: &CMat, lambda: f64, m: f64) -> f64 {
    let n = avg.nrows();
    let xm = (n as i64 - 1) / 2;
    let chi0 = Mult::cutoff(CutoffKind::Space);
    let mut r: f64 = 0.0;
    for ((i, j), s) in sigma.indexed_iter() {
        let k = i as i64 - j as i64;
        if k == 0 {
            continue;
        }
        let xi = j as i64 - xm;
        let lhs = avg[[i, j]] * chi0.eval(xi as f64).re;
        let f = if xi == 0 { 0.0 } else { 2.0 * lambda * m * xi.signum() as f64 * (xi.abs() as f64).powf(m - 1.0) };
        r = r.max((lhs - s * C64::new(0.0, k as f64) * f).norm());
    }
    r
}

fn record(kind: StepKind, n: usize) -> StepRecord {
    StepRecord {
        kind,
        n,
        order_before: f64::NAN,
        order_after: f64::NAN,
        generator_norm: 0.0,
        residual: 0.0,
        hermitian_defect: 0.0,
        ledger_index: None,
    }
}

/// Extrapolation setup used for the top coefficient: the expansion variable
/// is `|xi|^{-eps_bar}` with lower-order data, `|xi|^{-(1-M)}` without.
pub fn top_fit_params(spec: &ModelSpec, eps_bar: f64) -> (f64, usize) {
    if spec.w.is_empty() {
        (1.0 - spec.m, 5)
    } else {
        (eps_bar, 6)
    }
}

/// Window of the top-coefficient fit.
pub fn top_window(xi_max: usize) -> (i64, i64) {
    ((xi_max / 8) as i64, (3 * xi_max / 4) as i64)
}

struct TopResult {
    v: OperatorFamily,
    lambda: f64,
}

#[allow(clippy::too_many_arguments)]
fn reduce_top(
    spec: &ModelSpec,
    freq: &FrequencyVector,
    opts: &SublinearOptions,
    v0: &OperatorFamily,
    records: &mut Vec<StepRecord>,
    ledger: &mut Vec<Transform>,
    residuals: &mut Residuals,
    scale: f64,
) -> Result<TopResult> {
    let (lattice, xi_max) = (&v0.lattice, v0.xi_max);
    let lam_order = |v: &OperatorFamily, lambda: f64| {
        let top = multiplier_matrix(xi_max, |xi| Mult::abs_d(spec.m).eval(xi as f64) * lambda);
        let w = v.map(|_, a| a - &top);
        steps::measured_order(&steps::non_multiplier_part(&w), scale).slope
    };
    // time
    let alpha = solve_alpha_top(&spec.v, freq)?;
    residuals.top_time = top_time_residual(&spec.v, &alpha, freq, lattice, TOP_NX.min(64));
    let vbar = phase_average(&spec.v);
    let lb = solve_lambda_beta(&vbar, spec.m, TOP_NX)?;
    residuals.top_space = lb.residual;
    let mut rec = record(StepKind::TimeTop, 0);
    rec.residual = residuals.top_time;
    rec.order_before = lam_order(v0, lb.lambda);
    let mut v = v0.clone();
    if !alpha.is_zero() {
        let (g, gdot) = top_time_generator(&alpha, freq, spec.m, lattice, xi_max);
        rec.generator_norm = g.max_abs();
        v = steps::conjugate_family(&v, &g, &gdot)?;
        rec.hermitian_defect = steps::resymmetrize(&mut v);
        rec.ledger_index = Some(ledger.len());
        ledger.push(Transform::Exp { generator: SparseFamily::from_family(&g, GENERATOR_TOL) });
    }
    rec.order_after = lam_order(&v, lb.lambda);
    records.push(rec);
    // space
    let mut rec = record(StepKind::SpaceTop, 0);
    rec.residual = lb.residual;
    rec.order_before = lam_order(&v, lb.lambda);
    if lb.beta_tilde.alpha.max_abs() > 1e-15 {
        let beta = flows::invert_diffeo(&lb.beta_tilde)?;
        let flow = flows::integrate_flow(
            &|t, _| Ok(flows::transport_matrices(&beta, t, xi_max)?.remove(0)),
            1,
            v.band_len(),
            opts.flow_steps,
            opts.scheme,
        )?;
        let (a, ainv) = (&flow.forward[0], &flow.inverse[0]);
        v = v.map(|_, x| a.dot(x).dot(ainv));
        rec.generator_norm = beta.alpha.max_abs();
        rec.hermitian_defect = steps::resymmetrize(&mut v);
        rec.ledger_index = Some(ledger.len());
        ledger.push(Transform::TransportInverse {
            beta: FieldData::from_field(&beta.alpha),
            n_steps: opts.flow_steps,
            scheme: opts.scheme,
        });
    }
    rec.order_after = lam_order(&v, lb.lambda);
    records.push(rec);
    Ok(TopResult { v, lambda: lb.lambda })
}

/// Full reduction of a sublinear model to `lambda |D|^M + mu(D) + R_K`.
pub fn reduce_sublinear(config: &Config, opts: &SublinearOptions) -> Result<SublinearReduction> {
    let spec = config.model()?;
    let freq = config.frequency()?;
    let lattice = config.lattice()?;
    let xi_max = config.xi_max;
    let eps_bar = epsilon_bar(spec.m, spec.epsilon)?;
    let hypotheses = spec.require(&lattice, xi_max)?;
    let diophantine = check_diophantine(&freq, opts.scan_bound).into_result()?;
    let n_k = step_count(spec.m, opts.k, eps_bar);
    let model = spec.family(&lattice, xi_max)?;
    let scale = model.max_abs();

    let mut records = Vec::new();
    let mut ledger: Vec<Transform> = Vec::new();
    let mut residuals = Residuals::default();
    let mut max_defect = model.hermitian_defect();

    let top = reduce_top(&spec, &freq, opts, &model, &mut records, &mut ledger, &mut residuals, scale)
        .map_err(|e| steps::abort(0, &ledger, e))?;
    let lambda = top.lambda;
    let after_top = top.v.clone();
    let (step, degree) = top_fit_params(&spec, eps_bar);
    let top_coef = top_coefficient(&after_top, spec.m, step, degree, top_window(xi_max), 16)?;
    for r in &records {
        max_defect = max_defect.max(r.hermitian_defect);
    }

    let n = 2 * xi_max + 1;
    let top_mult = multiplier_matrix(xi_max, |xi| Mult::abs_d(spec.m).eval(xi as f64) * lambda);
    let mut v = top.v;
    let mut mu = vec![zero(); n];
    let floor = decay::noise_floor(scale);
    let lower_steps = if opts.top_only { 0 } else { n_k - 1 };
    for step_n in 1..=lower_steps {
        let run = |v: &mut OperatorFamily,
                   mu: &mut Vec<C64>,
                   records: &mut Vec<StepRecord>,
                   ledger: &mut Vec<Transform>,
                   residuals: &mut Residuals|
         -> Result<()> {
            let mu_re: Vec<f64> = mu.iter().map(|c| c.re).collect();
            let w = steps::subtract_multiplier(&v.map(|_, a| a - &top_mult), &mu_re);
            let order_w = steps::measured_order(&steps::non_multiplier_part(&w), scale).slope;
            let avg = w.phi_mean();
            // time
            let (g1, g1dot) = lower_time_step(&w, &config.omega)?;
            let (res, unresolved) = lower_time_residual(&w, &g1, &config.omega)?;
            let mask = steps::generator_mask(&g1, floor);
            let (g1, g1dot) = (g1.map(|_, a| steps::apply_mask(a, &mask)), g1dot.map(|_, a| steps::apply_mask(a, &mask)));
            residuals.lower_time.push(res);
            residuals.lower_time_unresolved.push(unresolved);
            let mut rec = record(StepKind::TimeLower, step_n);
            rec.order_before = order_w;
            rec.residual = res;
            rec.generator_norm = g1.max_abs();
            if rec.generator_norm > 0.0 {
                *v = steps::conjugate_family(v, &g1, &g1dot)?;
                rec.hermitian_defect = steps::resymmetrize(v);
                rec.ledger_index = Some(ledger.len());
                ledger.push(Transform::Exp { generator: SparseFamily::from_family(&g1, GENERATOR_TOL) });
            }
            let w_mid = steps::subtract_multiplier(&v.map(|_, a| a - &top_mult), &mu_re);
            rec.order_after = steps::measured_order(&steps::non_multiplier_part(&w_mid), scale).slope;
            records.push(rec);
            // space
            let (g2, inc) = lower_space_step(&avg, lambda, spec.m)?;
            let mask = steps::generator_mask(&OperatorFamily::constant(&v.lattice, &g2), floor);
            let g2 = steps::apply_mask(&g2, &mask);
            let sigma = space_sigma(&avg, lambda, spec.m);
            let sres = lower_space_residual(&avg, &sigma, lambda, spec.m);
            residuals.lower_space.push(sres);
            let mut rec = record(StepKind::SpaceLower, step_n);
            rec.order_before = order_w;
            rec.residual = sres;
            rec.generator_norm = linalg::max_abs(&g2);
            if rec.generator_norm > 0.0 {
                *v = steps::conjugate_constant(v, &g2)?;
                rec.hermitian_defect = steps::resymmetrize(v);
                let gf = OperatorFamily::constant(&v.lattice, &g2);
                rec.ledger_index = Some(ledger.len());
                ledger.push(Transform::Exp { generator: SparseFamily::from_family(&gf, GENERATOR_TOL) });
            }
            for (m, d) in mu.iter_mut().zip(&inc) {
                *m += d;
            }
            let mu_re: Vec<f64> = mu.iter().map(|c| c.re).collect();
            let w_after = steps::subtract_multiplier(&v.map(|_, a| a - &top_mult), &mu_re);
            rec.order_after = steps::measured_order(&steps::non_multiplier_part(&w_after), scale).slope;
            records.push(rec);
            Ok(())
        };
        run(&mut v, &mut mu, &mut records, &mut ledger, &mut residuals)
            .map_err(|e| steps::abort(2 * step_n, &ledger, e))?;
        max_defect = max_defect.max(records[records.len() - 1].hermitian_defect);
        max_defect = max_defect.max(records[records.len() - 2].hermitian_defect);
    }

    let mu_re: Vec<f64> = mu.iter().map(|c| c.re).collect();
    let mu_max_imag = mu.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let remainder = steps::subtract_multiplier(&v.map(|_, a| a - &top_mult), &mu_re);
    let window = decay::inner_window(xi_max);
    let profile = decay::column_profile(&remainder.mats, xi_max, window, &|_, _| true);
    let fit = decay::fit_profile(&profile, decay::noise_floor(scale));
    let certificate = ReductionCertificate {
        branch: "sublinear".into(),
        config_hash: config.hash(),
        m: spec.m,
        k: opts.k,
        n_k,
        eps_bar,
        lambda,
        xi_max,
        lattice: lattice.clone(),
        mu: mu_re,
        mu_max_imag,
        steps: records,
        ledger,
        remainder: SparseFamily::from_family(&remainder, REMAINDER_TOL),
        remainder_profile: profile,
        measured_remainder_order: fit.slope,
        remainder_fit: fit,
        residuals,
        top: top_coef,
        hypotheses,
        diophantine,
        tau_regime: freq.tau_regime(),
        max_hermitian_defect: max_defect,
    };
    Ok(SublinearReduction { certificate, model, after_top, reduced: v, remainder })
}

/// Replay the certificate's ledger on the model and compare with
/// `lambda |D|^M + mu + R` (max entry difference).
pub fn replay_defect(cert: &ReductionCertificate, model: &OperatorFamily, omega: &[f64]) -> Result<f64> {
    let replayed = ledger::replay(model, &cert.ledger, omega)?;
    steps::multiplier_defect(&replayed, &cert.multiplier(), &cert.remainder_family())
}

/// Angle variance of each entry of a family (max over entries).
pub fn phase_variance(f: &OperatorFamily) -> f64 {
    let mean = f.phi_mean();
    f.mats.iter().map(|m| linalg::max_abs_diff(m, &mean)).fold(0.0, f64::max)
}

/// Largest difference along the angle grid of the diagonal of a family:
/// the spread of the multiplier part.
pub fn diagonal_spread(f: &OperatorFamily) -> f64 {
    let d: Vec<Vec<C64>> = f.mats.iter().map(|m| m.diag().to_vec()).collect();
    let n = f.band_len();
    (0..n)
        .map(|i| {
            let vals: Vec<C64> = d.iter().map(|row| row[i]).collect();
            let mean = vals.iter().sum::<C64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean).norm()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::worked_sublinear;
    use crate::symbol::Wave;

    fn golden() -> FrequencyVector {
        FrequencyVector::new(vec![1.0, (5f64.sqrt() - 1.0) / 2.0], 0.1, 2.0).unwrap()
    }

    #[test]
    fn eps_bar_examples() {
        assert_eq!(epsilon_bar(0.5, 0.25).unwrap(), 0.25);
        assert!((epsilon_bar(0.9, 0.5).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(epsilon_bar(0.5, 0.5).unwrap(), 0.5);
        assert!(epsilon_bar(1.0, 0.5).is_err());
        assert_eq!(step_count(0.5, 2, 0.25), 11);
        assert_eq!(step_count(0.5, 1, 0.25), 7);
        assert_eq!(step_count(1.0, 1, 0.5), 5);
    }

    #[test]
    fn alpha_top_residual() {
        let f = golden();
        let mut v = TrigPoly::constant(2, C64::new(2.0, 0.0));
        v = v.add(&TrigPoly::wave(2, 1.0, &[1, 0], Wave::Cos, 1, Wave::Cos));
        let a = solve_alpha_top(&v, &f).unwrap();
        assert!(a.is_real(1e-15));
        let lat = PhaseLattice::identity(2, 8);
        assert!(top_time_residual(&v, &a, &f, &lat, 32) < 1e-14);
        // cos(phi_1) cos x: alpha = -sin(phi_1) cos x / (2 omega_1)
        let want = TrigPoly::wave(2, -0.5, &[1, 0], Wave::Sin, 1, Wave::Cos);
        let d = a.add(&want.scale(C64::new(-1.0, 0.0)));
        assert!(d.modes.values().all(|c| c.norm() < 1e-15));
        assert_eq!(phase_average(&v).modes.len(), 1);
        let flat = TrigPoly::wave(2, 0.3, &[0, 0], Wave::One, 2, Wave::Cos);
        assert!(solve_alpha_top(&flat, &f).unwrap().is_zero());
    }

    #[test]
    fn lambda_beta_examples() {
        let c = TrigPoly::constant(1, C64::new(3.0, 0.0));
        let lb = solve_lambda_beta(&c, 0.5, 64).unwrap();
        assert!((lb.lambda - 3.0).abs() < 1e-14);
        assert!(lb.beta_tilde.alpha.max_abs() < 1e-15);
        let v = TrigPoly::constant(1, C64::new(2.0, 0.0)).add(&TrigPoly::wave(1, 0.5, &[0], Wave::One, 1, Wave::Cos));
        let lb = solve_lambda_beta(&v, 0.5, 256).unwrap();
        // independent quadrature: composite Simpson on a fine grid
        let n = 20000;
        let h = 2.0 * PI / n as f64;
        let f = |y: f64| (2.0 + 0.5 * y.cos()).powf(-2.0);
        let mut s = f(0.0) + f(2.0 * PI);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let mean = s * h / 3.0 / (2.0 * PI);
        assert!((lb.lambda - mean.powf(-0.5)).abs() < 1e-12);
        assert!(lb.residual < 1e-10, "{}", lb.residual);
        assert!(lb.lambda > 0.0);
        let bad = TrigPoly::wave(1, 1.0, &[0], Wave::One, 1, Wave::Cos);
        assert!(solve_lambda_beta(&bad, 0.5, 64).is_err());
    }

    #[test]
    fn lower_steps_solve_their_equations() {
        let lat = PhaseLattice::identity(1, 16);
        let f = [1.0];
        let xm = 24;
        let w = OperatorFamily::from_fn(&lat, xm, |p| {
            let th = lat.theta(p)[0];
            Array2::from_shape_fn((2 * xm + 1, 2 * xm + 1), |(r, c)| {
                let k = r as i64 - c as i64;
                let xi = (c as f64 - xm as f64).abs();
                if k.abs() == 1 {
                    C64::new(0.5 * th.cos() * xi.powf(0.25), 0.0)
                } else if k == 0 {
                    C64::new(0.2 + 0.1 * th.cos(), 0.0)
                } else {
                    zero()
                }
            })
        })
        .sym();
        let (g, gdot) = lower_time_step(&w, &f).unwrap();
        let (res, unres) = lower_time_residual(&w, &g, &f).unwrap();
        assert!(res < 1e-13 && unres < 1e-14, "{res} {unres}");
        assert!(g.hermitian_defect() < 1e-13);
        let want = OperatorFamily::constant(&lat, &w.phi_mean()).sub(&w).unwrap();
        assert!(gdot.max_abs_diff(&want).unwrap() < 1e-13);
        let avg = w.phi_mean();
        let (g2, inc) = lower_space_step(&avg, 2.0, 0.5).unwrap();
        assert!(linalg::hermitian_defect(&g2) < 1e-14);
        assert!(inc.iter().all(|c| c.im.abs() < 1e-15 && (c.re - 0.2).abs() < 1e-14));
        let s = space_sigma(&avg, 2.0, 0.5);
        assert!(lower_space_residual(&avg, &s, 2.0, 0.5) < 1e-14);
        // x-independent average: no generator
        let flat = linalg::diag(&vec![C64::new(0.3, 0.0); 2 * xm + 1]);
        let (g0, _) = lower_space_step(&flat, 2.0, 0.5).unwrap();
        assert_eq!(linalg::max_abs(&g0), 0.0);
        assert!(lower_space_step(&flat, 0.0, 0.5).is_err());
    }

    #[test]
    fn phase_independent_model_is_already_flat_in_time() {
        let mut c = worked_sublinear();
        c.xi_max = 32;
        c.v = vec![crate::model::WaveTerm::constant(2.0)];
        c.w.clear();
        let opts = SublinearOptions { top_only: true, ..SublinearOptions::from_config(&c) };
        let r = reduce_sublinear(&c, &opts).unwrap();
        assert!(r.certificate.ledger.is_empty());
        assert!((r.certificate.lambda - 2.0).abs() < 1e-15);
        assert!(r.after_top.max_abs_diff(&r.model).unwrap() < 1e-15);
    }

    #[test]
    fn top_time_flattens_small_band() {
        let mut c = worked_sublinear();
        c.xi_max = 48;
        c.w.clear();
        let opts = SublinearOptions { top_only: true, ..SublinearOptions::from_config(&c) };
        let r = reduce_sublinear(&c, &opts).unwrap();
        let cert = &r.certificate;
        assert!(cert.residuals.top_time < 1e-14);
        assert!((cert.lambda - 2.0).abs() < 1e-14);
        assert!(r.after_top.hermitian_defect() < 1e-8);
        // the phi-dependent top coefficient is gone: raw spread drops from O(0.25)
        let before = top_coefficient(&r.model, 0.5, 0.5, 5, top_window(48), 16).unwrap();
        assert!(before.rel_variation > 0.1);
        assert!(cert.top.rel_variation < 1e-3, "{:?}", cert.top);
    }
}
