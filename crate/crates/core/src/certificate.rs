//! Branch-independent handling of reduction certificates: running the right
//! pipeline for a configuration, reading a certificate back, and checking it
//! against the model.

use crate::error::{Error, Result};
use crate::evolve::{self, EvolutionConfig, FullSystem, GrowthReport, ReducedSystem};
use crate::family::OperatorFamily;
use crate::ledger::Transform;
use crate::linear::{self, LinearCertificate, LinearOptions};
use crate::model::Config;
use crate::sublinear::{self, ReductionCertificate, SublinearOptions};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Sublinear,
    Linear,
}

impl Branch {
    pub fn for_order(m: f64) -> Result<Self> {
        if m > 0.0 && m < 1.0 {
            Ok(Branch::Sublinear)
        } else if m == 1.0 {
            Ok(Branch::Linear)
        } else {
            Err(Error::InvalidInput(format!("no reduction for M = {m}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Certificate {
    Sublinear(Box<ReductionCertificate>),
    Linear(Box<LinearCertificate>),
}

impl Certificate {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn branch(&self) -> Branch {
        match self {
            Certificate::Sublinear(_) => Branch::Sublinear,
            Certificate::Linear(_) => Branch::Linear,
        }
    }

    pub fn config_hash(&self) -> &str {
        match self {
            Certificate::Sublinear(c) => &c.config_hash,
            Certificate::Linear(c) => &c.config_hash,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Certificate::Sublinear(c) => c.k,
            Certificate::Linear(c) => c.k,
        }
    }

    pub fn ledger(&self) -> &[Transform] {
        match self {
            Certificate::Sublinear(c) => &c.ledger,
            Certificate::Linear(c) => &c.ledger,
        }
    }

    pub fn multiplier(&self) -> Vec<f64> {
        match self {
            Certificate::Sublinear(c) => c.multiplier(),
            Certificate::Linear(c) => c.lambda_k.clone(),
        }
    }

    pub fn remainder_family(&self) -> OperatorFamily {
        match self {
            Certificate::Sublinear(c) => c.remainder_family(),
            Certificate::Linear(c) => c.remainder_family(),
        }
    }

    pub fn measured_remainder_order(&self) -> f64 {
        match self {
            Certificate::Sublinear(c) => c.measured_remainder_order,
            Certificate::Linear(c) => c.measured_remainder_order,
        }
    }

    /// Largest homological residual recorded by the reduction.
    pub fn max_residual(&self) -> f64 {
        let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        match self {
            Certificate::Sublinear(c) => {
                let r = &c.residuals;
                r.top_time.max(r.top_space).max(max(&r.lower_time)).max(max(&r.lower_space))
            }
            Certificate::Linear(c) => {
                let r = &c.residuals;
                r.transport_plus.max(r.transport_minus).max(max(&r.lower))
            }
        }
    }

    pub fn block_defect(&self) -> f64 {
        match self {
            Certificate::Sublinear(c) => c.max_hermitian_defect,
            Certificate::Linear(c) => c.max_block_defect,
        }
    }

    pub fn invariant_failures(&self) -> Vec<String> {
        match self {
            Certificate::Sublinear(c) => c.invariant_failures(),
            Certificate::Linear(c) => c.invariant_failures(),
        }
    }

    pub fn reduced_system(&self, omega: &[f64]) -> ReducedSystem {
        match self {
            Certificate::Sublinear(c) => ReducedSystem::from_sublinear(c, omega),
            Certificate::Linear(c) => ReducedSystem::from_linear(c, omega),
        }
    }

    pub fn replay_defect(&self, model: &OperatorFamily, omega: &[f64]) -> Result<f64> {
        match self {
            Certificate::Sublinear(c) => sublinear::replay_defect(c, model, omega),
            Certificate::Linear(c) => linear::replay_defect(c, model, omega),
        }
    }
}

/// Run the reduction selected by `branch` (default: by the order `M`).
pub fn reduce(config: &Config, branch: Option<Branch>, k: Option<usize>) -> Result<(Certificate, OperatorFamily)> {
    let mut config = config.clone();
    if let Some(k) = k {
        config.k = k;
    }
    match branch.map_or_else(|| Branch::for_order(config.m), Ok)? {
        Branch::Sublinear => {
            let r = sublinear::reduce_sublinear(&config, &SublinearOptions::from_config(&config))?;
            Ok((Certificate::Sublinear(Box::new(r.certificate)), r.model))
        }
        Branch::Linear => {
            let r = linear::reduce_linear(&config, &LinearOptions::from_config(&config))?;
            Ok((Certificate::Linear(Box::new(r.certificate)), r.model))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub branch: Branch,
    #[serde(rename = "K")]
    pub k: usize,
    pub config_hash_matches: bool,
    pub replay_defect: f64,
    pub max_residual: f64,
    pub block_defect: f64,
    pub measured_remainder_order: f64,
    pub invariant_failures: Vec<String>,
    pub growth: Option<GrowthReport>,
    pub passed: bool,
}

/// Replay tolerance used by [`verify`].
pub const REPLAY_TOL: f64 = 1e-6;
/// Residual tolerance used by [`verify`].
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Check a certificate against its configuration; with `growth`, also run
/// the full system and fit the norm growth.
pub fn verify(config: &Config, cert: &Certificate, growth: Option<&EvolutionConfig>) -> Result<VerifyReport> {
    let model = config.model()?.family(&config.lattice()?, config.xi_max)?;
    let replay_defect = cert.replay_defect(&model, &config.omega)?;
    let growth = match growth {
        Some(cfg) => {
            let sys = FullSystem::from_config(config)?;
            let u0 = evolve::initial_state(config.xi_max, config.seeds.first().copied().unwrap_or(0));
            Some(evolve::evolve_full(&sys, &u0, cfg, Some(config.interp_index))?.0)
        }
        None => None,
    };
    let config_hash_matches = cert.config_hash() == config.hash();
    let invariant_failures = cert.invariant_failures();
    let max_residual = cert.max_residual();
    let passed = config_hash_matches && replay_defect <= REPLAY_TOL && max_residual <= RESIDUAL_TOL && invariant_failures.is_empty();
    Ok(VerifyReport {
        branch: cert.branch(),
        k: cert.k(),
        config_hash_matches,
        replay_defect,
        max_residual,
        block_defect: cert.block_defect(),
        measured_remainder_order: cert.measured_remainder_order(),
        invariant_failures,
        growth,
        passed,
    })
}
