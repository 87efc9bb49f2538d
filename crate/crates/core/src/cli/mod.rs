//! Command-line front end: `schedule`, `compare`, `simulate`, `first-best`
//! and `reservation`. Every command writes CSV files and a `checks.csv` with
//! one line per invariant it verified; a failed check gives exit status 2.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::agent::{reservation, AgentError};
use crate::mfsim::{
    contract_payoffs, ensemble_summary, simulate, verify_participation, verify_principal_value, McReport, SimError,
};
use crate::model::{calibrated_defaults, ModelError, ValidatedParams};
use crate::numerics::{NumericsError, TimeGrid};
use crate::principal::{
    compare, first_best_report_for, optimal_schedule, value_report, ContractKind, EffortSchedule, PaymentSchedule,
    PrincipalError, PrincipalKind,
};

use config::{ConfigFile, Overrides, RunConfig, DEFAULT_VARIANCE_SHARE};
use output::{format_number as g, format_option, indexed, write_csv, write_key_values, Checks};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Principal(#[from] PrincipalError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad configuration: {0}")]
    Config(String),
}

#[derive(Debug, Parser)]
#[command(name = "mfdr", version, about = "Mean-field demand-response contracts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Optimal payment rates and induced efforts for new and classical contracts.
    Schedule,
    /// Value gap between new and classical contracts over an r_p × variance-share sweep.
    Compare,
    /// Monte Carlo check of participation and principal value.
    Simulate,
    /// First-best benchmark and its dominance over the second-best contracts.
    FirstBest,
    /// Reservation utility of a consumer refusing any contract.
    Reservation,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Fraction of the no-effort variance carried by the common noise.
    #[arg(long, global = true)]
    pub share: Option<f64>,
    /// Principal risk aversion; 0 selects a risk-neutral principal.
    #[arg(long, global = true)]
    pub rp: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of Simpson intervals on [0, T] (even).
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    /// Particles per common-noise path.
    #[arg(long, global = true)]
    pub particles: Option<usize>,
    /// Number of common-noise paths.
    #[arg(long, global = true)]
    pub common: Option<usize>,
    /// Time step; T / dt must be an integer.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            share: self.share,
            r_p: self.rp,
            seed: self.seed,
            grid: self.grid,
            n_particles: self.particles,
            n_common: self.common,
            dt: self.dt,
        }
    }
}

/// Files written and checks performed by one command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub checks: Checks,
    pub warnings: Vec<String>,
}

/// Resolve the configuration and run the command.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let file = match &cli.flags.config {
        Some(path) => ConfigFile::from_file(path)?,
        None => ConfigFile::default(),
    };
    let rc = RunConfig::resolve(file, &cli.flags.overrides())?;
    std::fs::create_dir_all(&rc.out).map_err(|source| CliError::Io {
        path: rc.out.display().to_string(),
        source,
    })?;
    let mut outcome = Outcome::default();
    match cli.command {
        Command::Schedule => run_schedule(&rc, &mut outcome)?,
        Command::Compare => run_compare(&rc, &mut outcome)?,
        Command::Simulate => run_simulate(&rc, &mut outcome)?,
        Command::FirstBest => run_first_best(&rc, &mut outcome)?,
        Command::Reservation => run_reservation(&rc, &mut outcome)?,
    }
    outcome.files.push(outcome.checks.write(&rc.out)?);
    Ok(outcome)
}

/// Binary entry point. `MFDR_THREADS` fixes the worker count.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("MFDR_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: cannot configure {n} threads: {e}");
                }
            }
            _ => eprintln!("warning: ignoring MFDR_THREADS={v}"),
        }
    }
    match execute(&cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            let failed: Vec<_> = outcome.checks.failures().collect();
            println!(
                "{} of {} checks passed",
                outcome.checks.0.len() - failed.len(),
                outcome.checks.0.len()
            );
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                for c in failed {
                    eprintln!("check failed: {}: {}", c.name, c.detail);
                }
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn grid_for(rc: &RunConfig, p: &ValidatedParams) -> Result<TimeGrid, CliError> {
    Ok(TimeGrid::uniform(p.horizon, rc.grid)?)
}

fn principals_for(p: &ValidatedParams) -> Vec<PrincipalKind> {
    match PrincipalKind::for_params(p) {
        PrincipalKind::Cara => vec![PrincipalKind::Cara, PrincipalKind::RiskNeutral],
        PrincipalKind::RiskNeutral => vec![PrincipalKind::RiskNeutral],
    }
}

fn tolerance(values: &[f64]) -> f64 {
    1e-10 * values.iter().fold(1.0_f64, |a, v| a.max(v.abs()))
}

fn schedule_rows(s: &PaymentSchedule, e: &EffortSchedule) -> Vec<Vec<String>> {
    (0..s.times.len())
        .map(|i| {
            let mut row = vec![g(s.times[i]), g(s.z[i]), g(s.z_mu[i]), g(s.gamma[i])];
            row.extend(e.alpha[i].iter().map(|&a| g(a)));
            row.extend(e.beta[i].iter().map(|&b| g(b)));
            row
        })
        .collect()
}

fn effort_header(d: usize) -> Vec<String> {
    let mut h = indexed("alpha", d);
    h.extend(indexed("beta", d));
    h
}

fn run_schedule(rc: &RunConfig, out: &mut Outcome) -> Result<(), CliError> {
    let p = &rc.model;
    let grid = grid_for(rc, p)?;
    let mut header: Vec<String> = ["t", "z", "z_mu", "gamma"].iter().map(|s| s.to_string()).collect();
    header.extend(effort_header(p.d));
    let lambda_floor = -1.0 / p.lambda_bar();
    let mut new_z: Vec<(PrincipalKind, Vec<f64>)> = Vec::new();
    for principal in principals_for(p) {
        let mut pair = Vec::new();
        for kind in [ContractKind::New, ContractKind::Classical] {
            let (s, e) = optimal_schedule(kind, principal, p, &grid)?;
            let name = format!("schedule_{}_{}.csv", kind.as_str(), principal.as_str());
            out.files
                .push(write_csv(&rc.out, &name, &header, &schedule_rows(&s, &e))?);

            let tag = format!("{}_{}", kind.as_str(), principal.as_str());
            let eff_ok = e.beta.iter().flatten().all(|&b| (p.b_min..=1.0).contains(&b))
                && e.alpha.iter().flatten().all(|&a| (0.0..=p.a_max).contains(&a));
            out.checks.record(
                format!("{tag}: efforts admissible"),
                eff_ok,
                "0 <= alpha <= a_max, b_min <= beta <= 1",
            );
            let gamma_ok = s.gamma.iter().all(|&gm| gm <= lambda_floor);
            out.checks
                .record(format!("{tag}: gamma <= -1/lambda_bar"), gamma_ok, g(lambda_floor));
            if kind == ContractKind::New && principal == PrincipalKind::RiskNeutral {
                let ok = s.z.iter().zip(&s.z_mu).all(|(z, zm)| *zm == -z);
                out.checks.record(format!("{tag}: z_mu = -z"), ok, "exact");
            }
            if kind == ContractKind::New {
                new_z.push((principal, s.z.clone()));
            }
            pair.push(s);
        }
        if principal == PrincipalKind::RiskNeutral {
            let (n, c) = (&pair[0], &pair[1]);
            let tol = tolerance(&n.z);
            let z_ok = n.z.iter().zip(&c.z).all(|(zn, zc)| zc.abs() <= zn.abs() + tol);
            let g_ok = n
                .gamma
                .iter()
                .zip(&c.gamma)
                .all(|(gn, gc)| *gc >= gn - tolerance(&n.gamma));
            out.checks.record(
                "risk_neutral: |z_classical| <= |z_new|",
                z_ok,
                format!("tol {}", g(tol)),
            );
            out.checks
                .record("risk_neutral: gamma_classical >= gamma_new", g_ok, "pointwise");
        }
    }
    if new_z.len() == 2 {
        let same = new_z[0]
            .1
            .iter()
            .zip(&new_z[1].1)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        out.checks.record("new: z independent of r_p", same, "bitwise");
    }
    Ok(())
}

fn run_compare(rc: &RunConfig, out: &mut Outcome) -> Result<(), CliError> {
    let header: Vec<String> = [
        "r_p",
        "variance_share",
        "delta_v",
        "rel_delta_v",
        "delta_alpha",
        "delta_beta",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &r_p in &rc.sweep_r_p {
        for &share in &rc.sweep_variance_share {
            let p = rc.model_at(share, r_p)?;
            let grid = grid_for(rc, &p)?;
            let c = compare(&p, &grid)?;
            rows.push(vec![
                g(r_p),
                g(share),
                g(c.delta_v),
                g(c.rel_delta_v),
                format_option(c.delta_alpha),
                format_option(c.delta_beta),
            ]);
            let tag = format!("r_p={} share={}", g(r_p), g(share));
            let tol = tolerance(&c.classical.m);
            let dominated = c.new.m.iter().zip(&c.classical.m).all(|(n, cl)| *n <= cl + tol);
            out.checks.record(
                format!("{tag}: m_new <= m_classical"),
                dominated,
                format!("tol {}", g(tol)),
            );
            out.checks.record(
                format!("{tag}: delta_v >= 0"),
                c.delta_v >= -tol,
                format!("delta_v {}", g(c.delta_v)),
            );
            cells.push((r_p, share, c.delta_v));
        }
    }
    // Gains grow with the common share; asserted at the calibrated r_p only.
    let calibrated_r_p = calibrated_defaults(DEFAULT_VARIANCE_SHARE)?.r_p;
    for &r_p in rc.sweep_r_p.iter().filter(|&&r| r == calibrated_r_p) {
        let mut by_share: Vec<(f64, f64)> = cells.iter().filter(|c| c.0 == r_p).map(|c| (c.1, c.2)).collect();
        if by_share.len() < 2 {
            continue;
        }
        by_share.sort_by(|a, b| a.0.total_cmp(&b.0));
        let tol = tolerance(&by_share.iter().map(|c| c.1).collect::<Vec<_>>());
        let ok = by_share.windows(2).all(|w| w[1].1 >= w[0].1 - tol);
        out.checks.record(
            format!("r_p={}: delta_v non-decreasing in share", g(r_p)),
            ok,
            "sweep order",
        );
    }
    out.files.push(write_csv(&rc.out, "compare.csv", &header, &rows)?);
    Ok(())
}

fn mc_row(name: &str, r: &McReport) -> Vec<String> {
    vec![
        name.to_string(),
        g(r.estimate),
        g(r.std_error),
        r.n_effective.to_string(),
        g(r.closed_form_target),
        g(r.z_score),
        format_option(r.jackknife_bias),
    ]
}

fn run_simulate(rc: &RunConfig, out: &mut Outcome) -> Result<(), CliError> {
    let p = &rc.model;
    let grid = grid_for(rc, p)?;
    let (kind, principal) = (rc.sim.kind, rc.sim.principal);
    if kind == ContractKind::FirstBest {
        return Err(CliError::Config("sim_kind must be new or classical".into()));
    }
    if rc.sim.config.n_particles == 2 {
        out.warnings
            .push("n_particles = 2 leaves one other consumer in each conditional mean".into());
    }
    let (schedule, _) = optimal_schedule(kind, principal, p, &grid)?;
    let report = value_report(kind, principal, p, &grid)?;
    let ens = simulate(p, &schedule, &rc.sim.config)?;
    let payoffs = contract_payoffs(&ens, &schedule, p, principal)?;
    let part = verify_participation(&ens, &payoffs, p)?;
    let value = verify_principal_value(&ens, &payoffs, p, &report)?;

    let header: Vec<String> = [
        "name",
        "estimate",
        "std_error",
        "n_effective",
        "target",
        "z_score",
        "jackknife_bias",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows = vec![mc_row("participation_ce", &part), mc_row("principal_value", &value)];
    out.files.push(write_csv(&rc.out, "mc_report.csv", &header, &rows)?);

    let summary = ensemble_summary(&ens, &payoffs)?;
    let srows: Vec<Vec<String>> = summary
        .iter()
        .enumerate()
        .map(|(m, (l, x))| vec![m.to_string(), g(*l), g(*x)])
        .collect();
    let sheader = vec!["path".to_string(), "mean_l_t".into(), "mean_x_t".into()];
    out.files
        .push(write_csv(&rc.out, "ensemble_summary.csv", &sheader, &srows)?);

    let tag = format!("{}_{}", kind.as_str(), principal.as_str());
    out.checks.record(
        format!("{tag}: participation within 3 se"),
        part.within(3.0),
        format!("z {}", g(part.z_score)),
    );
    out.checks.record(
        format!("{tag}: principal value within 3 se"),
        value.within(3.0),
        format!("z {}", g(value.z_score)),
    );
    Ok(())
}

fn run_first_best(rc: &RunConfig, out: &mut Outcome) -> Result<(), CliError> {
    let p = &rc.model;
    let grid = grid_for(rc, p)?;
    let principal = PrincipalKind::for_params(p);
    let fb = first_best_report_for(principal, p, &grid)?;
    let new = value_report(ContractKind::New, principal, p, &grid)?;
    let classical = value_report(ContractKind::Classical, principal, p, &grid)?;
    let tol = 1e-10 * fb.v_fb.abs().max(new.v0.abs()).max(1e-300);
    let dominates = fb.v_fb >= new.v0 - tol && fb.v_fb >= classical.v0 - tol;
    let pairs = [
        ("principal", principal.as_str().to_string()),
        ("v_fb", g(fb.v_fb)),
        ("lagrange_rho", format_option(fb.lagrange_rho)),
        ("ce_fb", g(fb.ce_fb)),
        ("fb_contract_constant", g(fb.fb_contract_constant)),
        ("v0_new", g(new.v0)),
        ("v0_classical", g(classical.v0)),
        ("dominance", if dominates { "pass" } else { "fail" }.to_string()),
    ];
    out.files.push(write_key_values(&rc.out, "first_best.csv", &pairs)?);

    let e = &fb.efforts;
    let mut header = vec!["t".to_string()];
    header.extend(effort_header(p.d));
    let rows: Vec<Vec<String>> = (0..e.times.len())
        .map(|i| {
            let mut row = vec![g(e.times[i])];
            row.extend(e.alpha[i].iter().map(|&a| g(a)));
            row.extend(e.beta[i].iter().map(|&b| g(b)));
            row
        })
        .collect();
    out.files
        .push(write_csv(&rc.out, "first_best_efforts.csv", &header, &rows)?);
    out.checks.record(
        "first_best dominates new and classical",
        dominates,
        format!(
            "v_fb {} v0_new {} v0_classical {}",
            g(fb.v_fb),
            g(new.v0),
            g(classical.v0)
        ),
    );
    Ok(())
}

fn run_reservation(rc: &RunConfig, out: &mut Outcome) -> Result<(), CliError> {
    let p = &rc.model;
    let r = reservation(p, rc.grid)?;
    let mut header = vec!["t".to_string(), "gamma0".into()];
    header.extend(indexed("beta0", p.d));
    let rows: Vec<Vec<String>> = (0..r.times.len())
        .map(|i| {
            let mut row = vec![g(r.times[i]), g(r.gamma0[i])];
            row.extend(r.beta0[i].iter().map(|&b| g(b)));
            row
        })
        .collect();
    out.files.push(write_csv(&rc.out, "reservation.csv", &header, &rows)?);
    let pairs = [("xi0", g(r.xi0)), ("r0", g(r.r0)), ("psi0_T", g(r.psi0_t))];
    out.files
        .push(write_key_values(&rc.out, "reservation_summary.csv", &pairs)?);

    let beta_ok = r.beta0.iter().flatten().all(|&b| (p.b_min..=1.0).contains(&b));
    out.checks
        .record("reservation: b_min <= beta0 <= 1", beta_ok, "pointwise");
    let gamma_ok = r.gamma0.iter().all(|&gm| gm <= 0.0);
    out.checks.record("reservation: gamma0 <= 0", gamma_ok, "pointwise");
    Ok(())
}

/// Read a two-column `key,value` CSV written by this tool.
pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}
