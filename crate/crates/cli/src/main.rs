use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qpreduce::certificate::{self, Branch, Certificate};
use qpreduce::divisors::{check_diophantine, check_melnikov, FrequencyVector, ResonanceReport};
use qpreduce::evolve::{self, EvolutionConfig, FullSystem, Integrator, Trajectory};
use qpreduce::model::Config;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qpreduce", version, about = "Normal-form reduction and growth diagnostics for quasi-periodic dispersive operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Sublinear,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntegratorArg {
    Midpoint,
    Magnus4,
}

#[derive(Subcommand)]
enum Command {
    /// Reduce the model to a constant-coefficient multiplier plus remainder.
    Reduce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        branch: Option<BranchArg>,
        #[arg(long = "K")]
        k: Option<usize>,
    },
    /// Evolve the full system, or the reduced one when a certificate is given.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long, value_enum, default_value = "midpoint")]
        integrator: IntegratorArg,
    },
    /// Check a certificate against its configuration.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cert: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the growth run of the full system.
        #[arg(long)]
        no_growth: bool,
        #[arg(long)]
        t_final: Option<f64>,
    },
    /// Diophantine (and, with --lambda, Melnikov) scan of a frequency vector.
    CheckFreq {
        /// Comma-separated frequencies.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        omega: Vec<f64>,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long, allow_hyphen_values = true)]
        lambda: Option<f64>,
        #[arg(long = "L", default_value_t = 60)]
        l: usize,
        /// Largest spatial frequency in the Melnikov scan.
        #[arg(long, default_value_t = 64)]
        j_max: usize,
    },
}

fn load_config(path: &Path) -> Result<Config> {
    Config::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(traj.csv_header())?;
    for row in traj.csv_rows() {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn report_rows(name: &str, r: &ResonanceReport) -> String {
    format!(
        "{:<12} {:<6} {:>12.4e} {:>16} {:>6}",
        name,
        if r.passed { "pass" } else { "FAIL" },
        r.worst_margin,
        format!("{:?}", r.worst_ell),
        r.worst_j.map_or("-".to_string(), |j| j.to_string())
    )
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Reduce { config, out, branch, k } => {
            let c = load_config(&config)?;
            let branch = branch.map(|b| match b {
                BranchArg::Sublinear => Branch::Sublinear,
                BranchArg::Linear => Branch::Linear,
            });
            let (cert, _) = certificate::reduce(&c, branch, k)?;
            write_json(&out, &cert)?;
            eprintln!(
                "{:?} reduction, K = {}: remainder order {}, {} transformations",
                cert.branch(),
                cert.k(),
                cert.measured_remainder_order(),
                cert.ledger().len()
            );
            Ok(true)
        }
        Command::Evolve { config, cert, out, seed, dt, t_final, integrator } => {
            let c = load_config(&config)?;
            let mut cfg = EvolutionConfig::from_config(&c);
            cfg.dt = dt.unwrap_or(cfg.dt);
            cfg.t_final = t_final.unwrap_or(cfg.t_final);
            cfg.integrator = match integrator {
                IntegratorArg::Midpoint => Integrator::ExponentialMidpoint,
                IntegratorArg::Magnus4 => Integrator::Magnus4,
            };
            let seed = seed.or(c.seeds.first().copied()).unwrap_or(0);
            let u0 = evolve::initial_state(c.xi_max, seed);
            let traj = match cert {
                None => evolve::evolve(&FullSystem::from_config(&c)?, &u0, &cfg)?,
                Some(p) => {
                    let cert = Certificate::load(&p).with_context(|| format!("reading certificate {}", p.display()))?;
                    if cert.config_hash() != c.hash() {
                        bail!("certificate {} was produced from a different configuration", p.display());
                    }
                    let red = cert.reduced_system(&c.omega);
                    let cov = evolve::ChangeOfVariables::new(cert.ledger(), &red.lattice, red.xi_max, &c.omega)?;
                    let v0 = cov.pull_back(0.0, u0.coeffs.as_slice().expect("contiguous"))?;
                    let v0 = qpreduce::grid::FourierState::from_coeffs(c.xi_max, v0.into())?;
                    evolve::evolve_reduced(&red, &v0, &cfg)?
                }
            };
            write_csv(&out, &traj)?;
            eprintln!("{} steps, L2 drift {:.3e}", traj.n_steps, traj.l2_drift);
            Ok(true)
        }
        Command::Verify { config, cert, out, no_growth, t_final } => {
            let c = load_config(&config)?;
            let cert = Certificate::load(&cert).with_context(|| format!("reading certificate {}", cert.display()))?;
            let mut cfg = EvolutionConfig::from_config(&c);
            cfg.t_final = t_final.unwrap_or(cfg.t_final);
            let report = certificate::verify(&c, &cert, (!no_growth).then_some(&cfg))?;
            write_json(&out, &report)?;
            eprintln!(
                "replay {:.3e}, residual {:.3e}, remainder order {}, {}",
                report.replay_defect,
                report.max_residual,
                report.measured_remainder_order,
                if report.passed { "passed" } else { "FAILED" }
            );
            for f in &report.invariant_failures {
                eprintln!("  {f}");
            }
            Ok(report.passed)
        }
        Command::CheckFreq { omega, gamma, tau, lambda, l, j_max } => {
            let freq = FrequencyVector::new(omega, gamma, tau)?;
            println!("{:<12} {:<6} {:>12} {:>16} {:>6}", "check", "result", "margin", "worst l", "j");
            let d = check_diophantine(&freq, l);
            println!("{}", report_rows("diophantine", &d));
            let mut ok = d.passed;
            if let Some(lam) = lambda {
                let m = check_melnikov(&freq, lam, l, j_max);
                println!("{}", report_rows("melnikov", &m));
                ok &= m.passed;
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
