//! Transformation ledger: the ordered list of changes of variables
//! `u = T_0 T_1 ... T_n v` produced by a reduction, with a compact
//! serialization and an independent replay.
//!
//! Replay multiplies the stored transformations into `T(phi)` on the angle
//! grid and pushes the model forward as `T^{-1} V T + i T^{-1} omega . d_phi T`
//! with a spectral angle derivative; the reduction itself never forms this
//! product, so agreement is a genuine consistency check.

use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::flows::{self, Diffeo, FlowScheme};
use crate::lattice::{PhaseField, PhaseLattice};
use crate::linalg::{self, HermEig};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Angle-spectrum entries of a matrix family above a relative threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub lattice: PhaseLattice,
    pub xi_max: usize,
    pub tol: f64,
    /// `(bin, row, col)` triples.
    pub index: Vec<[u32; 3]>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl SparseFamily {
    pub fn from_family(f: &OperatorFamily, rel_tol: f64) -> Self {
        let spec = f.spectrum();
        let scale = spec.iter().map(linalg::max_abs).fold(0.0, f64::max);
        let tol = rel_tol * scale;
        let mut out = SparseFamily {
            lattice: f.lattice.clone(),
            xi_max: f.xi_max,
            tol,
            index: Vec::new(),
            re: Vec::new(),
            im: Vec::new(),
        };
        for (p, m) in spec.iter().enumerate() {
            for ((r, c), v) in m.indexed_iter() {
                if v.norm() > tol {
                    out.index.push([p as u32, r as u32, c as u32]);
                    out.re.push(v.re);
                    out.im.push(v.im);
                }
            }
        }
        out
    }

    pub fn to_family(&self) -> OperatorFamily {
        let n = 2 * self.xi_max + 1;
        let mut spec = vec![Array2::zeros((n, n)); self.lattice.n_points()];
        for ((ix, re), im) in self.index.iter().zip(&self.re).zip(&self.im) {
            spec[ix[0] as usize][[ix[1] as usize, ix[2] as usize]] = C64::new(*re, *im);
        }
        OperatorFamily::from_spectrum(&self.lattice, self.xi_max, spec)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

/// Real samples of a displacement on a phase lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldData {
    pub lattice: PhaseLattice,
    pub n_x: usize,
    pub values: Vec<f64>,
}

impl FieldData {
    pub fn from_field(f: &PhaseField) -> Self {
        FieldData { lattice: f.lattice.clone(), n_x: f.n_x(), values: f.values.iter().map(|v| v.re).collect() }
    }

    pub fn to_field(&self) -> Result<PhaseField> {
        let np = self.lattice.n_points();
        let values = Array2::from_shape_vec((np, self.n_x), self.values.iter().map(|v| C64::new(*v, 0.0)).collect())
            .map_err(|e| Error::InvalidInput(format!("field samples: {e}")))?;
        Ok(PhaseField { lattice: self.lattice.clone(), values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// `T(phi) = e^{-i G(phi)}` with Hermitian `G`.
    Exp { generator: SparseFamily },
    /// `T = Phi(1)^{-1}`, the inverse time-one map of the transport flow
    /// whose time-one map composes with `x + beta(x)`.
    TransportInverse { beta: FieldData, n_steps: usize, scheme: FlowScheme },
    /// `T(phi) = Phi_+(phi)^{-1} Pi_+ + Phi_-(phi)^{-1} Pi_-` where `Phi_pm` are
    /// weighted compositions with `x + alpha_pm`; `Phi_pm^{-1}` is built from
    /// the inverse displacement `alpha_tilde_pm` stored here.
    SplitComposition { alpha_tilde_plus: FieldData, alpha_tilde_minus: FieldData },
}

/// The transformation at every point of `lattice` on the band.
pub fn transform_family(t: &Transform, lattice: &PhaseLattice, xi_max: usize) -> Result<OperatorFamily> {
    let n = 2 * xi_max + 1;
    match t {
        Transform::Exp { generator } => {
            let g = generator.to_family();
            if g.lattice != *lattice || g.xi_max != xi_max {
                return Err(Error::GridMismatch("ledger generator on another grid".into()));
            }
            if generator.index.iter().all(|ix| ix[0] == 0) {
                let e = HermEig::new(&g.mats[0])?.expi(-1.0);
                return Ok(OperatorFamily::constant(lattice, &e));
            }
            g.try_map(|_, m| Ok(HermEig::new(m)?.expi(-1.0)))
        }
        Transform::TransportInverse { beta, n_steps, scheme } => {
            let d = Diffeo::new(beta.to_field()?)?;
            let flow = flows::integrate_flow(
                &|t, _| Ok(flows::transport_matrices(&d, t, xi_max)?.remove(0)),
                1,
                n,
                *n_steps,
                *scheme,
            )?;
            Ok(OperatorFamily::constant(lattice, &flow.inverse[0]))
        }
        Transform::SplitComposition { alpha_tilde_plus, alpha_tilde_minus } => {
            let ap = Diffeo::new(alpha_tilde_plus.to_field()?)?;
            let am = Diffeo::new(alpha_tilde_minus.to_field()?)?;
            let (pp, pm) = crate::family::projector_matrices(xi_max);
            Ok(OperatorFamily::from_fn(lattice, xi_max, |p| {
                let q = if ap.lattice().rank() == 0 { 0 } else { p };
                flows::diffeo_operator(&ap, q, xi_max).dot(&pp) + flows::diffeo_operator(&am, q, xi_max).dot(&pm)
            }))
        }
    }
}

/// `T_0 T_1 ... T_n` on the grid.
pub fn compose(ledger: &[Transform], lattice: &PhaseLattice, xi_max: usize) -> Result<OperatorFamily> {
    let n = 2 * xi_max + 1;
    let mut acc = OperatorFamily::constant(lattice, &linalg::identity(n));
    for t in ledger {
        acc = acc.dot(&transform_family(t, lattice, xi_max)?)?;
    }
    Ok(acc)
}

/// Model pushed forward through the whole ledger.
pub fn replay(model: &OperatorFamily, ledger: &[Transform], omega: &[f64]) -> Result<OperatorFamily> {
    let t = compose(ledger, &model.lattice, model.xi_max)?;
    flows::pushforward_hamiltonian(model, &t, omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_roundtrip() {
        let lat = PhaseLattice::identity(1, 8);
        let f = OperatorFamily::from_fn(&lat, 3, |p| {
            let th = lat.theta(p)[0];
            Array2::from_shape_fn((7, 7), |(r, c)| C64::new((th * (1 + r) as f64).cos() * 0.5f64.powi(c as i32), 0.0))
        });
        let s = SparseFamily::from_family(&f, 0.0);
        assert!(s.to_family().max_abs_diff(&f).unwrap() < 1e-14);
        let txt = serde_json::to_string(&Transform::Exp { generator: s.clone() }).unwrap();
        let back: Transform = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, Transform::Exp { generator: s });
        let pruned = SparseFamily::from_family(&f, 1e-2);
        assert!(pruned.len() < 8 * 49);
        assert!(pruned.to_family().max_abs_diff(&f).unwrap() < 1e-2 * 49.0);
    }

    #[test]
    fn replay_of_constant_exp_is_conjugation() {
        let lat = PhaseLattice::identity(1, 8);
        let n = 5;
        let g = Array2::from_shape_fn((n, n), |(r, c)| C64::new(0.1 * (r + c) as f64, 0.05 * (r as f64 - c as f64)));
        let gf = OperatorFamily::constant(&lat, &g);
        let v = OperatorFamily::from_fn(&lat, 2, |p| {
            let th = lat.theta(p)[0];
            linalg::sym(&Array2::from_shape_fn((n, n), |(r, c)| C64::new(th.cos() * (r * c) as f64, 0.0)))
        });
        let ledger = vec![Transform::Exp { generator: SparseFamily::from_family(&gf, 0.0) }];
        let out = replay(&v, &ledger, &[1.3]).unwrap();
        let want = v.map(|_, m| linalg::conjugate_by_exp(m, &g, None).unwrap().0);
        assert!(out.max_abs_diff(&want).unwrap() < 1e-12);
    }
}
