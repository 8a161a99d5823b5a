//! Normal form for `M = 1`: split the band into non-negative and negative
//! frequencies, straighten the two transport fields `+-(1 + eps P) d_x` with
//! one weighted composition each, then flatten the lower orders block by
//! block with joint angle/space divisors.

use crate::decay::{self, DecayFit};
use crate::divisors::{check_diophantine, check_melnikov, FrequencyVector, ResonanceReport, TauRegime};
use crate::error::{Error, Result};
use crate::family::{multiplier_matrix, projector_matrices, OperatorFamily};
use crate::flows::{self, Diffeo};
use crate::lattice::{PhaseField, PhaseLattice, DIVISOR_FLOOR};
use crate::ledger::{self, FieldData, SparseFamily, Transform};
use crate::linalg::{self, CMat};
use crate::model::{Config, HypothesisReport, ModelSpec};
use crate::mult::{CutoffKind, Mult};
use crate::steps::{self, StepKind, StepRecord, GENERATOR_TOL, REMAINDER_TOL};
use crate::sublinear::step_count;
use crate::symbol::TrigPoly;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Spatial samples of the transport fields.
pub const TRANSPORT_NX: usize = 128;
pub const TRANSPORT_MAX_ITER: usize = 200;
pub const TRANSPORT_TOL: f64 = 1e-9;

fn zero() -> C64 {
    C64::new(0.0, 0.0)
}

/// `min(epsilon, 1)`: the order gap of the lower part below the first order.
pub fn epsilon_bar_linear(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::Hypothesis("H2", format!("epsilon = {epsilon} must be positive")));
    }
    Ok(epsilon.min(1.0))
}

/// Solution of `omega.d_phi alpha + (m + eps P) d_x alpha + eps P = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    pub alpha: PhaseField,
    pub c: f64,
    /// Sup norm of the equation defect on the grid.
    pub residual: f64,
    pub m_shift: f64,
    pub iterations: usize,
    /// Largest ratio of successive update sizes.
    pub contraction: f64,
}

/// Summary of a transport solve kept in certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportReport {
    pub c: f64,
    pub residual: f64,
    pub iterations: usize,
    pub contraction: f64,
    pub min_jacobian: f64,
}

impl TransportSolution {
    pub fn report(&self) -> TransportReport {
        let j = self.alpha.dx().values.iter().fold(f64::INFINITY, |m, v| m.min(1.0 + v.re));
        TransportReport {
            c: self.c,
            residual: self.residual,
            iterations: self.iterations,
            contraction: self.contraction,
            min_jacobian: j,
        }
    }
}

/// `omega.d_phi alpha + (m + eps P) alpha_x + eps P - c` on the grid.
pub fn transport_defect(p: &PhaseField, eps: f64, omega_red: &[f64], m_shift: f64, alpha: &PhaseField, c: f64) -> PhaseField {
    let ax = alpha.dx();
    let lhs = alpha.omega_dphi(omega_red);
    let mut out = lhs;
    ndarray::Zip::from(&mut out.values)
        .and(&ax.values)
        .and(&p.values)
        .for_each(|o, a, pv| *o += (m_shift + eps * pv) * a + eps * pv - c);
    out
}

/// Fixed point `alpha <- (omega.d_phi + m d_x)^{-1}[c - eps P - eps P alpha_x]`
/// with `c` the joint mean of `eps P (1 + alpha_x)`. `omega` is the full
/// frequency vector; pass its negative for the reversed orientation.
pub fn solve_transport(p: &PhaseField, eps: f64, omega: &[f64], m_shift: f64) -> Result<TransportSolution> {
    if !(m_shift.abs() > 0.5 && m_shift.abs() < 2.0) {
        return Err(Error::Precondition(format!("transport speed {m_shift} outside (1/2, 2)")));
    }
    if p.max_imag() > 1e-12 {
        return Err(Error::InvalidInput("P must be real".into()));
    }
    let red = p.lattice.reduced_omega(omega);
    let mut alpha = PhaseField::zeros(&p.lattice, p.n_x());
    if eps == 0.0 {
        return Ok(TransportSolution { alpha, c: 0.0, residual: 0.0, m_shift, iterations: 0, contraction: 0.0 });
    }
    let mean_c = |alpha: &PhaseField| {
        let ax = alpha.dx();
        let s = p.zip_with(&ax, |pv, a| pv * (1.0 + a) * eps);
        (s.mean_all().re, s)
    };
    let mut last_update = f64::INFINITY;
    let mut contraction: f64 = 0.0;
    let mut best = f64::INFINITY;
    for it in 1..=TRANSPORT_MAX_ITER {
        let (c, s) = mean_c(&alpha);
        let rhs = s.map(|v| C64::new(c, 0.0) - v);
        let next = rhs.invert_mixed(&red, m_shift)?.real_part();
        let update = next.zip_with(&alpha, |a, b| a - b).max_abs();
        if last_update.is_finite() && last_update > 0.0 {
            contraction = contraction.max(update / last_update);
        }
        last_update = update;
        alpha = next;
        let (c, _) = mean_c(&alpha);
        let residual = transport_defect(p, eps, &red, m_shift, &alpha, c).max_abs();
        // stop once the defect no longer improves at roundoff level
        if residual <= TRANSPORT_TOL && (residual >= 0.5 * best || residual < 1e-15 || update < 1e-16) {
            return Ok(TransportSolution { alpha, c, residual, m_shift, iterations: it, contraction });
        }
        best = best.min(residual);
    }
    let (c, _) = mean_c(&alpha);
    let residual = transport_defect(p, eps, &red, m_shift, &alpha, c).max_abs();
    if residual <= TRANSPORT_TOL {
        return Ok(TransportSolution { alpha, c, residual, m_shift, iterations: TRANSPORT_MAX_ITER, contraction });
    }
    Err(Error::NonConvergence { what: "transport fixed point", iterations: TRANSPORT_MAX_ITER, residual, contraction })
}

/// Samples of a real trigonometric polynomial on the lattice.
pub fn sample_field(f: &TrigPoly, lattice: &PhaseLattice, n_x: usize) -> PhaseField {
    let mut out = PhaseField::zeros(lattice, n_x);
    for p in 0..lattice.n_points() {
        let phi = lattice.phi_representative(&lattice.theta(p));
        for j in 0..n_x {
            out.values[[p, j]] = C64::new(f.eval(&phi, 2.0 * PI * j as f64 / n_x as f64).re, 0.0);
        }
    }
    out
}

/// The two transport solves of the first-order part: the non-negative block
/// uses `-omega`, the negative block `+omega`, both with speed one.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitTransport {
    pub plus: TransportSolution,
    pub minus: TransportSolution,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// Melnikov scan of the speed-one divisors used by both solves.
    pub gate: ResonanceReport,
}

/// Admissibility of the transport solves: `eps/gamma` below the threshold and
/// the speed-one divisors non-resonant.
pub fn transport_gate(freq: &FrequencyVector, eps: f64, threshold: f64, scan: usize, j_max: usize) -> Result<ResonanceReport> {
    if eps.abs() / freq.gamma > threshold {
        return Err(Error::Precondition(format!(
            "eps/gamma = {:.4} exceeds the transport threshold {threshold}",
            eps.abs() / freq.gamma
        )));
    }
    check_melnikov(freq, 1.0, scan, j_max).into_result()
}

pub fn solve_split_transport(
    spec: &ModelSpec,
    freq: &FrequencyVector,
    lattice: &PhaseLattice,
    threshold: f64,
    scan: usize,
) -> Result<SplitTransport> {
    let (eps, p) = spec.perturbation()?;
    let gate = transport_gate(freq, eps, threshold, scan, TRANSPORT_NX / 2)?;
    let pf = sample_field(&p, lattice, TRANSPORT_NX);
    let neg: Vec<f64> = freq.omega.iter().map(|w| -w).collect();
    let plus = solve_transport(&pf, eps, &neg, 1.0)?;
    let minus = solve_transport(&pf, eps, &freq.omega, 1.0)?;
    Ok(SplitTransport { lambda_plus: 1.0 + plus.c, lambda_minus: 1.0 + minus.c, plus, minus, gate })
}

/// The map `T(phi) = C_+ Pi_+ + C_- Pi_-`, with `C_pm` the weighted
/// compositions with `y + alpha_pm(phi, y)`, and its exact `omega . d_phi`.
pub fn split_map(
    plus: &Diffeo,
    minus: &Diffeo,
    omega: &[f64],
    xi_max: usize,
) -> (OperatorFamily, OperatorFamily) {
    let lattice = plus.lattice().clone();
    let red = lattice.reduced_omega(omega);
    let (pp, pm) = projector_matrices(xi_max);
    let dp = plus.alpha.omega_dphi(&red);
    let dm = minus.alpha.omega_dphi(&red);
    let t = OperatorFamily::from_fn(&lattice, xi_max, |p| {
        flows::diffeo_operator(plus, p, xi_max).dot(&pp) + flows::diffeo_operator(minus, p, xi_max).dot(&pm)
    });
    let tdot = OperatorFamily::from_fn(&lattice, xi_max, |p| {
        flows::diffeo_operator_dot(plus, &dp, p, xi_max).dot(&pp)
            + flows::diffeo_operator_dot(minus, &dm, p, xi_max).dot(&pm)
    });
    (t, tdot)
}

/// `T^{-1} V T + i T^{-1} tdot` at every point.
pub fn push_with_derivative(v: &OperatorFamily, t: &OperatorFamily, tdot: &OperatorFamily) -> Result<OperatorFamily> {
    let i = C64::new(0.0, 1.0);
    let mats = v
        .mats
        .iter()
        .zip(&t.mats)
        .zip(&tdot.mats)
        .map(|((a, tm), td)| {
            let inv = linalg::inverse(tm)?;
            Ok(inv.dot(&(a.dot(tm) + td * i)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatorFamily { lattice: v.lattice.clone(), xi_max: v.xi_max, mats })
}

/// Refuse to continue unless both speeds pass the first-order Melnikov scan.
pub fn melnikov_gate(
    freq: &FrequencyVector,
    lambda_plus: f64,
    lambda_minus: f64,
    scan: usize,
    j_max: usize,
) -> Result<(ResonanceReport, ResonanceReport)> {
    let p = check_melnikov(freq, lambda_plus, scan, j_max).into_result()?;
    let m = check_melnikov(freq, lambda_minus, scan, j_max).into_result()?;
    Ok((p, m))
}

/// First-order multiplier: `lambda_+ |xi| chi` on `xi >= 0`, `lambda_- |xi| chi`
/// on `xi < 0`.
pub fn first_order_multiplier(lambda_plus: f64, lambda_minus: f64, xi_max: usize) -> Vec<f64> {
    let xm = xi_max as i64;
    let a = Mult::abs_d(1.0);
    (-xm..=xm)
        .map(|xi| a.eval(xi as f64).re * if xi >= 0 { lambda_plus } else { lambda_minus })
        .collect()
}

/// The two diagonal blocks of a family (coupling between signs removed).
pub fn block_part(w: &OperatorFamily) -> OperatorFamily {
    w.map(|_, a| {
        let xm = w.xi_max as i64;
        let mut out = a.clone();
        for ((r, c), v) in out.indexed_iter_mut() {
            if (r as i64 >= xm) != (c as i64 >= xm) {
                *v = zero();
            }
        }
        out
    })
}

/// Coupling between the two blocks.
pub fn off_block_part(w: &OperatorFamily) -> Result<OperatorFamily> {
    w.sub(&block_part(w))
}

/// Generator of one lower step on the Hermitian block part `h`: per block,
/// `q = -chi_1^pm(xi) h / (i (omega.l -+ lambda_pm k))` on every resolved
/// mode except the joint mean, then `g = (q + q^*)/2`.
pub fn lower_generator(h: &OperatorFamily, omega: &[f64], lambda_plus: f64, lambda_minus: f64) -> Result<(OperatorFamily, OperatorFamily)> {
    let red = h.lattice.reduced_omega(omega);
    let lat = h.lattice.clone();
    let cp = Mult::cutoff(CutoffKind::LowerPlus);
    let cm = Mult::cutoff(CutoffKind::LowerMinus);
    let q = h.map_modes(|m, xr, xc, nyq| {
        let k = xr - xc;
        if nyq || (xr >= 0) != (xc >= 0) || (k == 0 && m.iter().all(|&v| v == 0)) {
            return Ok(zero());
        }
        let wl: f64 = m.iter().zip(&red).map(|(a, w)| *a as f64 * w).sum();
        let (d, weight) = if xc >= 0 {
            (wl - lambda_plus * k as f64, cp.eval(xc as f64).re)
        } else {
            (wl + lambda_minus * k as f64, cm.eval(xc as f64).re)
        };
        if weight == 0.0 {
            return Ok(zero());
        }
        if d.abs() < DIVISOR_FLOOR {
            return Err(crate::lattice::small_divisor(&lat, m, Some(k), d));
        }
        Ok(C64::new(0.0, weight / d))
    })?;
    let g = q.add(&q.adjoint())?.scale(C64::new(0.5, 0.0));
    let gdot = g.omega_dphi(&red);
    Ok((g, gdot))
}

/// Forward substitution of a lower step: `h + omega.d_phi g + i[g, D] - <h>_{phi,x}`
/// on entries whose row and column both carry `chi_1 = 1`, leaving out the
/// unresolved angle bin. Returns the residual and the unresolved content.
pub fn lower_residual(
    h: &OperatorFamily,
    g: &OperatorFamily,
    gdot: &OperatorFamily,
    d: &[f64],
) -> Result<(f64, f64)> {
    let dm = linalg::diag(&d.iter().map(|x| C64::new(*x, 0.0)).collect::<Vec<_>>());
    let i = C64::new(0.0, 1.0);
    let comm = g.map(|_, a| (a.dot(&dm) - dm.dot(a)) * i);
    let avg = linalg::diag(&h.mean_multiplier());
    let nyq = h.map_modes(|m, _, _, nyq| Ok(C64::new(f64::from(u8::from(nyq && m.iter().any(|&c| c != 0))), 0.0)))?;
    let res = h.add(gdot)?.add(&comm)?.sub(&nyq)?.map(|_, a| a - &avg);
    let xm = h.xi_max as i64;
    let mut r: f64 = 0.0;
    for m in &res.mats {
        for ((a, b), v) in m.indexed_iter() {
            let (xr, xc) = (a as i64 - xm, b as i64 - xm);
            if xr.abs() >= 2 && xc.abs() >= 2 && (xr >= 0) == (xc >= 0) {
                r = r.max(v.norm());
            }
        }
    }
    Ok((r, nyq.max_abs()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearResiduals {
    pub transport_plus: f64,
    pub transport_minus: f64,
    /// Forward substitution of each lower step.
    pub lower: Vec<f64>,
    /// Content of the unresolved angle bin per lower step.
    pub lower_unresolved: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCertificate {
    pub branch: String,
    pub config_hash: String,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N_K")]
    pub n_k: usize,
    pub eps_bar: f64,
    pub eps_small: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub transport_plus: TransportReport,
    pub transport_minus: TransportReport,
    pub xi_max: usize,
    pub lattice: PhaseLattice,
    /// `mu_+(xi)` on the band; zero for `xi < 0`.
    pub mu_plus: Vec<f64>,
    /// `mu_-(xi)` on the band; zero for `xi >= 0`.
    pub mu_minus: Vec<f64>,
    /// Largest imaginary part of the block averages that fed `mu`.
    pub mu_max_imag: f64,
    /// `lambda_K(xi)` for `xi = -xi_max ..= xi_max`.
    pub lambda_k: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub ledger: Vec<Transform>,
    pub remainder: SparseFamily,
    pub remainder_profile: Vec<(i64, f64)>,
    pub remainder_fit: DecayFit,
    #[serde(with = "crate::decay::float_serde")]
    pub measured_remainder_order: f64,
    /// Decay of the coupling between the two blocks of the reduced operator.
    pub off_block_profile: Vec<(i64, f64)>,
    pub off_block_fit: DecayFit,
    /// Largest entry of the anti-Hermitian part of the blocks, and its decay.
    pub block_antihermitian: f64,
    pub block_antihermitian_fit: DecayFit,
    /// Largest Hermitian defect of the block parts of the operator, measured
    /// on columns with `|xi| >= xi_max/4`.
    pub max_block_defect: f64,
    pub residuals: LinearResiduals,
    pub hypotheses: HypothesisReport,
    pub diophantine: ResonanceReport,
    pub transport_gate: ResonanceReport,
    pub melnikov_plus: ResonanceReport,
    pub melnikov_minus: ResonanceReport,
    pub tau_regime: TauRegime,
}

impl LinearCertificate {
    pub fn remainder_family(&self) -> OperatorFamily {
        self.remainder.to_family()
    }

    pub fn invariant_failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, l) in [("lambda_+", self.lambda_plus), ("lambda_-", self.lambda_minus)] {
            if (l - 1.0).abs() > 10.0 * self.eps_small.abs() {
                out.push(format!("|{name} - 1| = {:.3e} exceeds 10 eps", (l - 1.0).abs()));
            }
        }
        if self.mu_max_imag > 1e-9 {
            out.push(format!("mu has imaginary part {:.3e}", self.mu_max_imag));
        }
        if self.measured_remainder_order > -(self.k as f64) + 0.5 {
            out.push(format!("remainder order {} above {}", self.measured_remainder_order, -(self.k as f64) + 0.5));
        }
        if self.off_block_fit.slope > -8.0 {
            out.push(format!("off-block slope {} above -8", self.off_block_fit.slope));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct LinearReduction {
    pub certificate: LinearCertificate,
    pub model: OperatorFamily,
    /// Operator after the split transport conjugation.
    pub after_top: OperatorFamily,
    pub reduced: OperatorFamily,
    pub remainder: OperatorFamily,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOptions {
    pub k: usize,
    pub scan_bound: usize,
    pub threshold: f64,
    pub top_only: bool,
}

impl LinearOptions {
    pub fn from_config(c: &Config) -> Self {
        LinearOptions { k: c.k, scan_bound: c.scan_bound, threshold: c.transport_threshold, top_only: false }
    }
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

/// Hermitian defect of the blocks on columns `|xi| >= xi_max/4`.
fn block_defect(w: &OperatorFamily) -> f64 {
    let xm = w.xi_max as i64;
    let lo = xm / 4;
    let b = block_part(w);
    b.mats
        .iter()
        .map(|a| {
            let mut d: f64 = 0.0;
            for ((r, c), v) in a.indexed_iter() {
                let (xr, xc) = (r as i64 - xm, c as i64 - xm);
                if xc.abs() >= lo || xr.abs() >= lo {
                    d = d.max((v - a[[c, r]].conj()).norm());
                }
            }
            d
        })
        .fold(0.0, f64::max)
}

/// Full reduction of a first-order model to `lambda_K(D) + R_K`.
pub fn reduce_linear(config: &Config, opts: &LinearOptions) -> Result<LinearReduction> {
    let spec = config.model()?;
    if spec.m != 1.0 {
        return Err(Error::Precondition(format!("linear reduction needs M = 1, got {}", spec.m)));
    }
    let freq = config.frequency()?;
    let lattice = config.lattice()?;
    let xi_max = config.xi_max;
    let eps_bar = epsilon_bar_linear(spec.epsilon)?;
    let hypotheses = spec.require(&lattice, xi_max)?;
    let diophantine = check_diophantine(&freq, opts.scan_bound).into_result()?;
    let n_k = step_count(1.0, opts.k, eps_bar);
    let model = spec.family(&lattice, xi_max)?;
    let scale = model.max_abs();
    let floor = decay::noise_floor(scale);
    let n = 2 * xi_max + 1;
    let mut records = Vec::new();
    let mut ledger: Vec<Transform> = Vec::new();
    let mut residuals = LinearResiduals::default();

    // first order
    let split = solve_split_transport(&spec, &freq, &lattice, opts.threshold, opts.scan_bound)?;
    residuals.transport_plus = split.plus.residual;
    residuals.transport_minus = split.minus.residual;
    let (lp, lm) = (split.lambda_plus, split.lambda_minus);
    let top = first_order_multiplier(lp, lm, xi_max);
    let order_of = |v: &OperatorFamily, mu: &[f64]| {
        let d: Vec<f64> = top.iter().zip(mu).map(|(a, b)| a + b).collect();
        let w = steps::subtract_multiplier(v, &d);
        steps::measured_order(&steps::non_multiplier_part(&w), scale).slope
    };
    let mut mu = vec![0.0; n];
    let mut rec = record(StepKind::TransportTop, 0);
    rec.residual = split.plus.residual.max(split.minus.residual);
    rec.order_before = order_of(&model, &mu);
    let mut v = model.clone();
    let (ap, am) = (&split.plus.alpha, &split.minus.alpha);
    if ap.max_abs() > 0.0 || am.max_abs() > 0.0 {
        let dp = Diffeo::new(ap.clone())?;
        let dm = Diffeo::new(am.clone())?;
        let (t, tdot) = split_map(&dp, &dm, &config.omega, xi_max);
        v = push_with_derivative(&model, &t, &tdot)?;
        rec.generator_norm = ap.max_abs().max(am.max_abs());
        rec.ledger_index = Some(ledger.len());
        ledger.push(Transform::SplitComposition {
            alpha_tilde_plus: FieldData::from_field(ap),
            alpha_tilde_minus: FieldData::from_field(am),
        });
    }
    rec.hermitian_defect = block_defect(&v);
    rec.order_after = order_of(&v, &mu);
    records.push(rec);
    let after_top = v.clone();
    let (melnikov_plus, melnikov_minus) =
        melnikov_gate(&freq, lp, lm, opts.scan_bound, xi_max).map_err(|e| steps::abort(1, &ledger, e))?;

    // lower orders
    let mut mu_imag: f64 = 0.0;
    let lower_steps = if opts.top_only { 0 } else { n_k - 1 };
    for step_n in 1..=lower_steps {
        let mut run = || -> Result<()> {
            let d: Vec<f64> = top.iter().zip(&mu).map(|(a, b)| a + b).collect();
            let w = steps::subtract_multiplier(&v, &d);
            let wb = block_part(&w);
            let h = wb.sym();
            let raw_avg = wb.mean_multiplier();
            let mut rec = record(StepKind::MixedLower, step_n);
            rec.order_before = steps::measured_order(&steps::non_multiplier_part(&w), scale).slope;
            let (g, gdot) = lower_generator(&h, &config.omega, lp, lm)?;
            let (res, unresolved) = lower_residual(&h, &g, &gdot, &top)?;
            residuals.lower.push(res);
            residuals.lower_unresolved.push(unresolved);
            rec.residual = res;
            let mask = steps::generator_mask(&g, floor);
            let (g, gdot) = (g.map(|_, a| steps::apply_mask(a, &mask)), gdot.map(|_, a| steps::apply_mask(a, &mask)));
            rec.generator_norm = g.max_abs();
            if rec.generator_norm > 0.0 {
                v = steps::conjugate_family(&v, &g, &gdot)?;
                rec.ledger_index = Some(ledger.len());
                ledger.push(Transform::Exp { generator: SparseFamily::from_family(&g, GENERATOR_TOL) });
            }
            let inc = h.mean_multiplier();
            for (i, (m, c)) in mu.iter_mut().zip(&inc).enumerate() {
                *m += c.re;
                let xi = i as i64 - xi_max as i64;
                if xi.abs() >= 2 {
                    mu_imag = mu_imag.max(raw_avg[i].im.abs());
                }
            }
            rec.hermitian_defect = block_defect(&v);
            rec.order_after = order_of(&v, &mu);
            records.push(rec);
            Ok(())
        };
        run().map_err(|e| steps::abort(step_n + 1, &ledger, e))?;
    }

    let d: Vec<f64> = top.iter().zip(&mu).map(|(a, b)| a + b).collect();
    let remainder = steps::subtract_multiplier(&v, &d);
    let window = decay::inner_window(xi_max);
    let profile = decay::column_profile(&remainder.mats, xi_max, window, &|_, _| true);
    let fit = decay::fit_profile(&profile, floor);
    let off_profile = decay::column_profile(&remainder.mats, xi_max, window, &|r, c| (r >= 0) != (c >= 0));
    let off_fit = decay::fit_profile(&off_profile, floor);
    let wb = block_part(&remainder);
    let anti = wb.sub(&wb.adjoint())?.scale(C64::new(0.5, 0.0));
    let anti_fit = decay::fit_family(&anti.mats, xi_max, window, scale);
    let max_block_defect = records.iter().map(|r| r.hermitian_defect).fold(0.0, f64::max);
    let xm = xi_max as i64;
    let mu_plus: Vec<f64> = mu.iter().enumerate().map(|(i, m)| if i as i64 >= xm { *m } else { 0.0 }).collect();
    let mu_minus: Vec<f64> = mu.iter().enumerate().map(|(i, m)| if (i as i64) < xm { *m } else { 0.0 }).collect();
    let certificate = LinearCertificate {
        branch: "linear".into(),
        config_hash: config.hash(),
        m: 1.0,
        k: opts.k,
        n_k,
        eps_bar,
        eps_small: spec.perturbation()?.0,
        lambda_plus: lp,
        lambda_minus: lm,
        transport_plus: split.plus.report(),
        transport_minus: split.minus.report(),
        xi_max,
        lattice: lattice.clone(),
        mu_plus,
        mu_minus,
        mu_max_imag: mu_imag,
        lambda_k: d,
        steps: records,
        ledger,
        remainder: SparseFamily::from_family(&remainder, REMAINDER_TOL),
        remainder_profile: profile,
        measured_remainder_order: fit.slope,
        remainder_fit: fit,
        off_block_profile: off_profile,
        off_block_fit: off_fit,
        block_antihermitian: anti.max_abs(),
        block_antihermitian_fit: anti_fit,
        max_block_defect,
        residuals,
        hypotheses,
        diophantine,
        transport_gate: split.gate,
        melnikov_plus,
        melnikov_minus,
        tau_regime: freq.tau_regime(),
    };
    Ok(LinearReduction { certificate, model, after_top, reduced: v, remainder })
}

/// Replay the ledger on the model and compare with `lambda_K(D) + R`.
pub fn replay_defect(cert: &LinearCertificate, model: &OperatorFamily, omega: &[f64]) -> Result<f64> {
    let replayed = ledger::replay(model, &cert.ledger, omega)?;
    steps::multiplier_defect(&replayed, &cert.lambda_k, &cert.remainder_family())
}

/// `i|D| Pi_+ = d_x Pi_+` and `i|D| Pi_- = -d_x Pi_-` as band matrices:
/// largest entry of the two differences.
pub fn sign_algebra_defect(xi_max: usize) -> f64 {
    let (pp, pm) = projector_matrices(xi_max);
    let i = C64::new(0.0, 1.0);
    let absd = multiplier_matrix(xi_max, |xi| C64::new(xi.abs() as f64, 0.0));
    let dx = multiplier_matrix(xi_max, |xi| C64::new(0.0, xi as f64));
    let a = linalg::max_abs_diff(&(absd.dot(&pp) * i), &dx.dot(&pp));
    let b = linalg::max_abs_diff(&(absd.dot(&pm) * i), &(dx.dot(&pm) * C64::new(-1.0, 0.0)));
    a.max(b)
}

/// Band matrix of a multiplier table.
pub fn multiplier_of(d: &[f64]) -> CMat {
    linalg::diag(&d.iter().map(|x| C64::new(*x, 0.0)).collect::<Vec<_>>())
}
