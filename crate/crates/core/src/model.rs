//! Problem data: the configuration document, the model operator
//! `V(phi, x)|D|^M + W(phi)` on the band, and its hypothesis checks.

use crate::divisors::FrequencyVector;
use crate::error::{Error, Result};
use crate::family::OperatorFamily;
use crate::lattice::PhaseLattice;
use crate::mult::Mult;
use crate::symbol::{ClosedSymbol, Symbol, Term, TrigPoly, Wave};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// `amp * f(l . phi) * g(k x)`, optionally times `|xi|^power chi(xi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveTerm {
    pub amp: f64,
    #[serde(default)]
    pub l: Vec<i64>,
    #[serde(default = "one_wave")]
    pub phi: Wave,
    #[serde(default)]
    pub k: i64,
    #[serde(default = "one_wave")]
    pub x: Wave,
    #[serde(default)]
    pub power: f64,
}

fn one_wave() -> Wave {
    Wave::One
}

impl WaveTerm {
    pub fn constant(amp: f64) -> Self {
        WaveTerm { amp, l: Vec::new(), phi: Wave::One, k: 0, x: Wave::One, power: 0.0 }
    }

    pub fn poly(&self, nu: usize) -> Result<TrigPoly> {
        let l = if self.l.is_empty() { vec![0; nu] } else { self.l.clone() };
        if l.len() != nu {
            return Err(Error::InvalidInput(format!("phase mode {:?} has length != nu = {nu}", self.l)));
        }
        Ok(TrigPoly::wave(nu, self.amp, &l, self.phi, self.k, self.x))
    }
}

fn default_n_phi() -> usize {
    32
}
fn default_xi_max() -> usize {
    128
}
fn default_scan() -> usize {
    60
}
fn default_flow_steps() -> usize {
    64
}
fn default_s_list() -> Vec<f64> {
    vec![0.0, 1.0]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_stride() -> usize {
    10
}
fn default_threshold() -> f64 {
    0.05
}
fn default_interp() -> f64 {
    2.0
}

/// JSON configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub nu: usize,
    #[serde(default = "default_n_phi")]
    pub n_phi: usize,
    #[serde(default = "default_xi_max")]
    pub xi_max: usize,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "V")]
    pub v: Vec<WaveTerm>,
    #[serde(rename = "W", default)]
    pub w: Vec<WaveTerm>,
    /// Order gap of the lower-order part: `W` has order at most `M - epsilon`.
    pub epsilon: f64,
    /// Size of the perturbation `V = 1 + eps_small P` when `M = 1`.
    #[serde(default)]
    pub eps_small: Option<f64>,
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub tau: f64,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default = "default_s_list")]
    pub s_list: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_scan")]
    pub scan_bound: usize,
    #[serde(default = "default_flow_steps")]
    pub flow_steps: usize,
    #[serde(default = "default_stride")]
    pub sample_stride: usize,
    /// Admissibility threshold on `eps_small / gamma` for the transport solves.
    #[serde(default = "default_threshold")]
    pub transport_threshold: f64,
    /// Higher Sobolev index used for the interpolation prediction.
    #[serde(default = "default_interp")]
    pub interp_index: f64,
}

fn default_k() -> usize {
    2
}
fn default_dt() -> f64 {
    0.01
}
fn default_t_final() -> f64 {
    1000.0
}

impl Config {
    pub fn from_json(s: &str) -> Result<Self> {
        let c: Config = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 || self.omega.len() != self.nu {
            return Err(Error::InvalidInput(format!("omega has {} entries for nu = {}", self.omega.len(), self.nu)));
        }
        if self.n_phi < 4 || self.xi_max == 0 {
            return Err(Error::InvalidInput("n_phi must be >= 4 and xi_max positive".into()));
        }
        if !(self.m > 0.0 && self.m <= 1.0) {
            return Err(Error::InvalidInput(format!("M = {} outside (0, 1]", self.m)));
        }
        if !(self.dt > 0.0 && self.t_final >= self.dt) {
            return Err(Error::InvalidInput("need dt > 0 and t_final >= dt".into()));
        }
        if self.s_list.is_empty() || self.s_list.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidInput("s_list must be non-empty with entries >= 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("serializable");
        let d = Sha256::digest(s.as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn frequency(&self) -> Result<FrequencyVector> {
        FrequencyVector::new(self.omega.clone(), self.gamma, self.tau)
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let v = self
            .v
            .iter()
            .try_fold(TrigPoly::zero(self.nu), |acc, t| Ok::<_, Error>(acc.add(&t.poly(self.nu)?)))?;
        let w = self
            .w
            .iter()
            .map(|t| Ok((t.poly(self.nu)?, t.power)))
            .collect::<Result<Vec<_>>>()?;
        ModelSpec::new(self.nu, self.m, v, w, self.epsilon, self.eps_small)
    }

    pub fn lattice(&self) -> Result<PhaseLattice> {
        Ok(self.model()?.lattice(self.n_phi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Defect of the model operator as used (symmetrized quantization).
    pub h1_defect: f64,
    /// Defect of the plain quantization `Op(V |xi|^M chi + w)` before symmetrization.
    pub raw_defect: f64,
    pub w_order: f64,
    pub h2_ok: bool,
    /// Minimum of `V` on the grid (`M < 1`) or the size of `V - 1` (`M = 1`).
    pub h3_value: f64,
    pub h3_ok: bool,
}

/// `V(phi, x) |D|^M + W(phi)` with `W = sym Op(sum_j c_j(phi, x) |xi|^{p_j} chi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub nu: usize,
    pub m: f64,
    pub v: TrigPoly,
    pub w: Vec<(TrigPoly, f64)>,
    pub epsilon: f64,
    pub eps_small: Option<f64>,
}

impl ModelSpec {
    pub fn new(nu: usize, m: f64, v: TrigPoly, w: Vec<(TrigPoly, f64)>, epsilon: f64, eps_small: Option<f64>) -> Result<Self> {
        if !v.is_real(1e-14) || !w.iter().all(|(c, _)| c.is_real(1e-14)) {
            return Err(Error::InvalidInput("V and the coefficients of W must be real".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Hypothesis("H2", format!("epsilon = {epsilon} must be positive")));
        }
        Ok(ModelSpec { nu, m, v, w, epsilon, eps_small })
    }

    pub fn w_order(&self) -> f64 {
        self.w.iter().map(|(_, p)| *p).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn v_symbol(&self) -> ClosedSymbol {
        ClosedSymbol::product(self.v.clone(), self.m, Mult::abs_d(self.m))
    }

    pub fn w_symbol(&self) -> ClosedSymbol {
        let terms = self
            .w
            .iter()
            .map(|(c, p)| Term { coef: c.clone(), mult: Mult::abs_d(*p) })
            .collect();
        ClosedSymbol::new(self.nu, self.w_order(), terms)
    }

    /// Smallest supported angle lattice resolving every phase mode of the data.
    pub fn lattice(&self, n_phi: usize) -> PhaseLattice {
        let mut modes = self.v.phase_modes();
        for (c, _) in &self.w {
            modes.extend(c.phase_modes());
        }
        PhaseLattice::from_modes(self.nu, n_phi, &modes)
    }

    /// `P = (V - 1) / eps_small` for the `M = 1` branch.
    pub fn perturbation(&self) -> Result<(f64, TrigPoly)> {
        let e = self
            .eps_small
            .ok_or_else(|| Error::Hypothesis("H3", "M = 1 requires eps_small".into()))?;
        let shifted = self.v.add(&TrigPoly::constant(self.nu, C64::new(-1.0, 0.0)));
        if e == 0.0 {
            if !shifted.modes.values().all(|c| c.norm() < 1e-15) {
                return Err(Error::Hypothesis("H3", "eps_small = 0 requires V = 1".into()));
            }
            return Ok((0.0, TrigPoly::zero(self.nu)));
        }
        Ok((e, shifted.scale(C64::new(1.0 / e, 0.0))))
    }

    pub fn check(&self, lattice: &PhaseLattice, xi_max: usize) -> Result<HypothesisReport> {
        let raw: Symbol = self.v_symbol().add(&self.w_symbol()).into();
        let raw_defect = crate::symbol::self_adjoint_defect(&raw, lattice, xi_max)?;
        let h1_defect = self.family(lattice, xi_max)?.hermitian_defect();
        let w_order = self.w_order();
        let h2_ok = self.w.is_empty() || w_order <= self.m - self.epsilon + 1e-12;
        let (h3_value, h3_ok) = if self.m < 1.0 {
            let n = 64;
            let mut vmin = f64::INFINITY;
            for p in 0..lattice.n_points() {
                let phi = lattice.phi_representative(&lattice.theta(p));
                for j in 0..n {
                    let x = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    vmin = vmin.min(self.v.eval(&phi, x).re);
                }
            }
            (vmin, vmin > 0.0)
        } else {
            match self.perturbation() {
                Ok((e, _)) => (e, true),
                Err(_) => (f64::NAN, false),
            }
        };
        Ok(HypothesisReport { h1_defect, raw_defect, w_order, h2_ok, h3_value, h3_ok })
    }

    /// Fail on any violated hypothesis.
    pub fn require(&self, lattice: &PhaseLattice, xi_max: usize) -> Result<HypothesisReport> {
        let r = self.check(lattice, xi_max)?;
        if r.h1_defect > 1e-10 {
            return Err(Error::Hypothesis("H1", format!("self-adjoint defect {:.3e}", r.h1_defect)));
        }
        if !r.h2_ok {
            return Err(Error::Hypothesis(
                "H2",
                format!("W has order {} > M - epsilon = {}", r.w_order, self.m - self.epsilon),
            ));
        }
        if !r.h3_ok {
            return Err(Error::Hypothesis("H3", format!("V fails the positivity/perturbation form ({})", r.h3_value)));
        }
        Ok(r)
    }

    /// Top-order part `sym Op(V |xi|^M chi)` on the band.
    pub fn top_family(&self, lattice: &PhaseLattice, xi_max: usize) -> Result<OperatorFamily> {
        Ok(Symbol::from(self.v_symbol()).to_family(lattice, xi_max)?.sym())
    }

    pub fn lower_family(&self, lattice: &PhaseLattice, xi_max: usize) -> Result<OperatorFamily> {
        Ok(Symbol::from(self.w_symbol()).to_family(lattice, xi_max)?.sym())
    }

    /// The Hermitian model operator on the band at every angle point.
    pub fn family(&self, lattice: &PhaseLattice, xi_max: usize) -> Result<OperatorFamily> {
        self.top_family(lattice, xi_max)?.add(&self.lower_family(lattice, xi_max)?)
    }

    /// The Hermitian model matrix at an arbitrary angle vector.
    pub fn matrix_at(&self, phi: &[f64], xi_max: usize) -> crate::linalg::CMat {
        let top = crate::linalg::sym(&self.v_symbol().matrix_at(phi, xi_max));
        let low = crate::linalg::sym(&self.w_symbol().matrix_at(phi, xi_max));
        top + low
    }
}

/// Worked sublinear example: `V = 2 + 0.5 cos(phi_1 + phi_2) cos x`, `M = 1/2`,
/// `W = Op(0.1 cos x |xi|^{1/4} chi)`.
pub fn worked_sublinear() -> Config {
    Config {
        nu: 2,
        n_phi: 32,
        xi_max: 128,
        m: 0.5,
        v: vec![
            WaveTerm::constant(2.0),
            WaveTerm { amp: 0.5, l: vec![1, 1], phi: Wave::Cos, k: 1, x: Wave::Cos, power: 0.0 },
        ],
        w: vec![WaveTerm { amp: 0.1, l: vec![0, 0], phi: Wave::One, k: 1, x: Wave::Cos, power: 0.25 }],
        epsilon: 0.25,
        eps_small: None,
        omega: vec![1.0, (5f64.sqrt() - 1.0) / 2.0],
        gamma: 0.1,
        tau: 2.0,
        k: 2,
        dt: 0.01,
        t_final: 1000.0,
        s_list: vec![0.0, 1.0, 2.0],
        seeds: vec![0],
        scan_bound: 60,
        flow_steps: 64,
        sample_stride: 100,
        transport_threshold: 0.05,
        interp_index: 2.0,
    }
}

/// Worked linear example: `V = 1 + 0.01 cos(phi) cos x`, `M = 1`, one golden
/// frequency, `W = Op(0.05 cos x |xi|^{1/2} chi)`.
pub fn worked_linear() -> Config {
    Config {
        nu: 1,
        n_phi: 32,
        xi_max: 128,
        m: 1.0,
        v: vec![
            WaveTerm::constant(1.0),
            WaveTerm { amp: 0.01, l: vec![1], phi: Wave::Cos, k: 1, x: Wave::Cos, power: 0.0 },
        ],
        w: vec![WaveTerm { amp: 0.05, l: vec![0], phi: Wave::One, k: 1, x: Wave::Cos, power: 0.5 }],
        epsilon: 0.5,
        eps_small: Some(0.01),
        omega: vec![(1.0 + 5f64.sqrt()) / 2.0],
        gamma: 0.2,
        tau: 2.0,
        k: 1,
        dt: 0.01,
        t_final: 1000.0,
        s_list: vec![0.0, 1.0],
        seeds: vec![0],
        scan_bound: 60,
        flow_steps: 64,
        sample_stride: 100,
        transport_threshold: 0.05,
        interp_index: 2.0,
    }
}
