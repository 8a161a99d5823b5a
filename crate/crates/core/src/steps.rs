//! Building blocks shared by the two reduction pipelines: conjugation of a
//! Hermitian family, step records, and measured orders.

use crate::decay::{self, DecayFit};
use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::ledger::Transform;
use crate::linalg::{self, CMat, HermEig};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Re-symmetrize when the Hermitian defect exceeds this.
pub const RESYM_TOL: f64 = 1e-9;
/// Relative pruning threshold for stored generators.
pub const GENERATOR_TOL: f64 = 1e-14;
/// Relative pruning threshold for the stored remainder.
pub const REMAINDER_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    TimeTop,
    SpaceTop,
    TimeLower,
    SpaceLower,
    /// Split transport conjugation of the first-order part (`M = 1`).
    TransportTop,
    /// Joint angle/space step on the two frequency blocks (`M = 1`).
    MixedLower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub kind: StepKind,
    /// Lower-step index `n` (0 for the top steps).
    pub n: usize,
    /// Fitted order of the non-multiplier part before and after the step.
    #[serde(with = "crate::decay::float_serde")]
    pub order_before: f64,
    #[serde(with = "crate::decay::float_serde")]
    pub order_after: f64,
    pub generator_norm: f64,
    /// Forward-substitution residual of the homological equation.
    pub residual: f64,
    /// Hermitian defect of the transformed operator before re-symmetrization.
    pub hermitian_defect: f64,
    /// Position of the step's transformation in the ledger, if it has one.
    pub ledger_index: Option<usize>,
}

/// Entry mask of a generator family: entries whose magnitude stays below
/// `floor` at every angle point are roundoff and are dropped. Without this,
/// far off-diagonal roundoff (rows near `xi' = 0` of a high column) is
/// multiplied by about `lambda |xi|^M / |omega . l|` at every time step.
pub fn generator_mask(g: &OperatorFamily, floor: f64) -> Array2<bool> {
    let n = g.band_len();
    Array2::from_shape_fn((n, n), |(r, c)| g.mats.iter().any(|m| m[[r, c]].norm() >= floor))
}

pub fn apply_mask(a: &CMat, mask: &Array2<bool>) -> CMat {
    let mut out = a.clone();
    ndarray::Zip::from(&mut out).and(mask).for_each(|v, keep| {
        if !*keep {
            *v = C64::new(0.0, 0.0);
        }
    });
    out
}

/// `e^{iG} V e^{-iG} + i e^{iG} omega.d_phi e^{-iG}` at every point.
pub fn conjugate_family(v: &OperatorFamily, g: &OperatorFamily, gdot: &OperatorFamily) -> Result<OperatorFamily> {
    let mats = v
        .mats
        .iter()
        .zip(&g.mats)
        .zip(&gdot.mats)
        .map(|((a, b), c)| Ok(linalg::conjugate_by_exp(a, b, Some(c))?.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatorFamily { lattice: v.lattice.clone(), xi_max: v.xi_max, mats })
}

/// `e^{iG} V e^{-iG}` for an angle-independent `G`.
pub fn conjugate_constant(v: &OperatorFamily, g: &CMat) -> Result<OperatorFamily> {
    let e = HermEig::new(g)?.expi(1.0);
    let eh = linalg::adjoint(&e);
    Ok(v.map(|_, m| e.dot(m).dot(&eh)))
}

/// Hermitian part when the defect is above [`RESYM_TOL`]; returns the defect.
pub fn resymmetrize(v: &mut OperatorFamily) -> f64 {
    let d = v.hermitian_defect();
    if d > RESYM_TOL {
        *v = v.sym();
    }
    d
}

/// `V - diag(d)` at every point.
pub fn subtract_multiplier(v: &OperatorFamily, d: &[f64]) -> OperatorFamily {
    v.map(|_, m| {
        let mut out = m.clone();
        for (i, x) in d.iter().enumerate() {
            out[[i, i]] -= C64::new(*x, 0.0);
        }
        out
    })
}

/// The family with the angle mean of its diagonal removed.
pub fn non_multiplier_part(w: &OperatorFamily) -> OperatorFamily {
    let d: Vec<f64> = w.mean_multiplier().iter().map(|c| c.re).collect();
    subtract_multiplier(w, &d)
}

/// Decay fit on the inner window with the noise floor set by `scale`.
pub fn measured_order(w: &OperatorFamily, scale: f64) -> DecayFit {
    decay::fit_family(&w.mats, w.xi_max, decay::inner_window(w.xi_max), scale)
}

/// Largest Hermitian-generator entry across the family.
pub fn generator_norm(g: &OperatorFamily) -> f64 {
    g.max_abs()
}

/// `V - diag(d)` and the diagonal-plus-remainder comparison used by replays:
/// max entry of `replayed - (diag(d) + r)`.
pub fn multiplier_defect(replayed: &OperatorFamily, d: &[f64], r: &OperatorFamily) -> Result<f64> {
    subtract_multiplier(replayed, d).max_abs_diff(r)
}

/// Wrap a failure with the transformations completed so far.
pub fn abort(step: usize, ledger: &[Transform], e: Error) -> Error {
    match e {
        Error::Aborted { .. } => e,
        other => Error::Aborted { step, ledger: ledger.to_vec(), source: Box::new(other) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::PhaseLattice;

    #[test]
    fn constant_conjugation_matches_general() {
        let lat = PhaseLattice::identity(1, 4);
        let g = Array2::from_shape_fn((5, 5), |(r, c)| C64::new(0.1 / (1 + r + c) as f64, 0.0));
        let v = OperatorFamily::from_fn(&lat, 2, |p| {
            Array2::from_shape_fn((5, 5), |(r, c)| C64::new((p + r * c) as f64, 0.0))
        })
        .sym();
        let a = conjugate_constant(&v, &g).unwrap();
        let gf = OperatorFamily::constant(&lat, &g);
        let b = conjugate_family(&v, &gf, &OperatorFamily::zeros(&lat, 2)).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-13);
    }

    #[test]
    fn abort_keeps_first_failure() {
        let e = abort(3, &[], Error::Precondition("x".into()));
        let e2 = abort(5, &[], e);
        match e2 {
            Error::Aborted { step, .. } => assert_eq!(step, 3),
            _ => unreachable!(),
        }
    }
}
