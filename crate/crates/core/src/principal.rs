//! Optimal payment-rate schedules, principal values and contract comparisons
//! in the linear energy-value-discrepancy regime.
//!
//! Two second-best contract families are solved:
//!
//! * `New` contracts pay on the consumer's own deviation (`Z`), on the mean
//!   deviation of the others (`Z̄^μ`) and on quadratic variation (`Γ`).
//! * `Classical` contracts only pay on the consumer's own deviation and its
//!   quadratic variation.
//!
//! In both cases `Z_t` minimizes a one-dimensional objective at each time and
//! `Γ_t = −max{θ + R_A Z_t², 1/λ̄}`. The first-best benchmark has explicit
//! efforts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    best_drift_effort, best_vol_effort, drift_level, f0_unchecked, neg_part, optimal_variance, reservation, AgentError,
};
use crate::model::{variance_unchecked, ValidatedParams};
use crate::numerics::{minimize_scalar, NumericsError, TimeGrid, DEFAULT_COARSE_N, DEFAULT_REL_TOL};

#[derive(Debug, Error)]
pub enum PrincipalError {
    #[error("minimizer failed at t = {t}: {source}")]
    Minimizer { t: f64, source: NumericsError },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("a CARA principal needs r_p > 0, got {0}")]
    NotRiskAverse(f64),
    #[error("schedule grid horizon {grid} differs from model horizon {model}")]
    GridMismatch { grid: f64, model: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractKind {
    New,
    Classical,
    FirstBest,
}

impl ContractKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::New => "new",
            Self::Classical => "classical",
            Self::FirstBest => "first_best",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalKind {
    Cara,
    RiskNeutral,
}

impl PrincipalKind {
    /// CARA when `r_p > 0`, risk-neutral otherwise.
    pub fn for_params(p: &ValidatedParams) -> Self {
        if p.r_p > 0.0 {
            Self::Cara
        } else {
            Self::RiskNeutral
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cara => "cara",
            Self::RiskNeutral => "risk_neutral",
        }
    }

    /// Principal risk aversion used by the formulas: `r_p` or zero.
    pub fn effective_r_p(self, p: &ValidatedParams) -> f64 {
        match self {
            Self::Cara => p.r_p,
            Self::RiskNeutral => 0.0,
        }
    }

    /// `R̄` used by the formulas: the harmonic ratio or zero.
    pub fn effective_r_bar(self, p: &ValidatedParams) -> f64 {
        match self {
            Self::Cara => p.r_bar(),
            Self::RiskNeutral => 0.0,
        }
    }
}

/// Deterministic payment rates on a time grid.
///
/// For `FirstBest` the rates are shadow values reproducing the first-best
/// efforts through the best responses (`z = −(δ⁻(T−t) ∧ A_max)`, `γ = −θ`);
/// the matching [`EffortSchedule`] is the authoritative output.
#[derive(Debug, Clone, PartialEq)]
pub struct PaymentSchedule {
    pub kind: ContractKind,
    pub principal: PrincipalKind,
    pub times: Vec<f64>,
    pub z: Vec<f64>,
    pub z_mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffortSchedule {
    pub times: Vec<f64>,
    /// `alpha[i][k]`: drift effort on usage `k` at `times[i]`.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[i][k]`: volatility effort on usage `k` at `times[i]`.
    pub beta: Vec<Vec<f64>>,
}

impl EffortSchedule {
    fn from_rates(times: &[f64], z: &[f64], gamma: &[f64], p: &ValidatedParams) -> Self {
        Self {
            times: times.to_vec(),
            alpha: z.iter().map(|&z| best_drift_effort(z, p)).collect(),
            beta: gamma.iter().map(|&g| best_vol_effort(g, p)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    pub kind: ContractKind,
    pub principal: PrincipalKind,
    /// Principal value: a negative utility for CARA, pence for risk-neutral.
    pub v0: f64,
    /// Certainty equivalent `u(0, μ₀)`, pence.
    pub ce: f64,
    /// Reservation transfer, pence.
    pub xi0: f64,
    /// `∫₀ᵀ m(s) ds`, pence.
    pub m_integral: f64,
    /// The integrand `m` on the grid.
    pub m: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstBestReport {
    pub principal: PrincipalKind,
    pub v_fb: f64,
    /// Optimal Lagrange multiplier of the participation constraint; only
    /// available in closed form for a CARA principal.
    pub lagrange_rho: Option<f64>,
    /// `u^FB(0, μ₀)`, pence.
    pub ce_fb: f64,
    pub efforts: EffortSchedule,
    /// Deterministic part of the first-best transfer, `−ln(−R₀)/R_A`.
    pub fb_contract_constant: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub principal: PrincipalKind,
    /// `(V^P − V^{0,P})/R_P`, or `V⁰ − V^{0,0}` for a risk-neutral principal.
    pub delta_v: f64,
    /// `(V^P − V^{0,P})/(1 + V^{0,P})`; for a risk-neutral principal the
    /// `R_P → 0` limit `(V⁰ − V^{0,0})/V^{0,0}`.
    pub rel_delta_v: f64,
    /// Relative gain in mean consumption reduction; `None` when undefined.
    pub delta_alpha: Option<f64>,
    /// Relative gain in volatility reduction; `None` when undefined.
    pub delta_beta: Option<f64>,
    pub new: ValueReport,
    pub classical: ValueReport,
}

fn tau(t: f64, p: &ValidatedParams) -> f64 {
    (p.horizon - t).max(0.0)
}

/// New-contract objective `h̄(t, z) = F₀(θ + R_A z²) + ρ̄((z⁻ ∧ A_max) + δ(T−t))²`.
pub fn hbar(t: f64, z: f64, p: &ValidatedParams) -> f64 {
    let u = drift_level(z, p) + p.delta * tau(t, p);
    f0_unchecked(p.theta + p.r_a * z * z, p) + p.rho_bar() * u * u
}

/// Classical-contract objective with the model's `r_p`.
pub fn hbar_classical(t: f64, z: f64, p: &ValidatedParams) -> f64 {
    classical_objective(t, z, p, p.r_p)
}

/// `h̄^P(t, z) = h̄(t, z) + R_A σ°² z² + R_P σ°² (δ(T−t) − z)²`.
pub fn classical_objective(t: f64, z: f64, p: &ValidatedParams, r_p: f64) -> f64 {
    let s2 = p.sigma_circ * p.sigma_circ;
    let w = p.delta * tau(t, p) - z;
    hbar(t, z, p) + p.r_a * s2 * z * z + r_p * s2 * w * w
}

fn margin(p: &ValidatedParams) -> f64 {
    1e-6 * (1.0 + p.delta.abs() * p.horizon)
}

fn tolerance(p: &ValidatedParams) -> f64 {
    DEFAULT_REL_TOL * (1.0 + p.delta.abs() * p.horizon)
}

#[derive(Debug, Clone, Copy)]
struct NodeSolution {
    z: f64,
    min_value: f64,
}

fn solve_new(t: f64, p: &ValidatedParams) -> Result<NodeSolution, PrincipalError> {
    let m = margin(p);
    let lo = (p.delta * tau(t, p)).min(0.0).max(-p.a_max) - m;
    let r = minimize_scalar(|z| hbar(t, z, p), lo, m, tolerance(p), DEFAULT_COARSE_N)
        .map_err(|source| PrincipalError::Minimizer { t, source })?;
    Ok(NodeSolution {
        z: r.argmin,
        min_value: r.min_value,
    })
}

fn solve_classical(t: f64, p: &ValidatedParams, r_p: f64) -> Result<NodeSolution, PrincipalError> {
    let m = margin(p);
    let edge = p.delta * tau(t, p);
    let (lo, hi) = (edge.min(0.0) - m, edge.max(0.0) + m);
    let r = minimize_scalar(
        |z| classical_objective(t, z, p, r_p),
        lo,
        hi,
        tolerance(p),
        DEFAULT_COARSE_N,
    )
    .map_err(|source| PrincipalError::Minimizer { t, source })?;
    Ok(NodeSolution {
        z: r.argmin,
        min_value: r.min_value,
    })
}

fn solve_nodes(
    kind: ContractKind,
    principal: PrincipalKind,
    p: &ValidatedParams,
    grid: &TimeGrid,
) -> Result<Vec<NodeSolution>, PrincipalError> {
    let r_p = principal.effective_r_p(p);
    grid.times()
        .par_iter()
        .map(|&t| match kind {
            ContractKind::New => solve_new(t, p),
            ContractKind::Classical => solve_classical(t, p, r_p),
            ContractKind::FirstBest => Ok(NodeSolution {
                z: -drift_level(p.delta * tau(t, p), p),
                min_value: f64::NAN,
            }),
        })
        .collect()
}

fn check_grid(p: &ValidatedParams, grid: &TimeGrid) -> Result<(), PrincipalError> {
    if (grid.horizon() - p.horizon).abs() > 1e-12 * p.horizon {
        return Err(PrincipalError::GridMismatch {
            grid: grid.horizon(),
            model: p.horizon,
        });
    }
    Ok(())
}

/// `Γ = −max{θ + R_A z², 1/λ̄}`.
pub fn optimal_gamma(z: f64, p: &ValidatedParams) -> f64 {
    -(p.theta + p.r_a * z * z).max(1.0 / p.lambda_bar())
}

/// Weight `R_P/(R_A + R_P)` of the common-noise indexation; zero when risk-neutral.
pub fn common_noise_weight(principal: PrincipalKind, p: &ValidatedParams) -> f64 {
    let r_p = principal.effective_r_p(p);
    if r_p > 0.0 {
        r_p / (p.r_a + r_p)
    } else {
        0.0
    }
}

/// Optimal payment rates and the efforts they induce.
pub fn optimal_schedule(
    kind: ContractKind,
    principal: PrincipalKind,
    p: &ValidatedParams,
    grid: &TimeGrid,
) -> Result<(PaymentSchedule, EffortSchedule), PrincipalError> {
    check_grid(p, grid)?;
    let nodes = solve_nodes(kind, principal, p, grid)?;
    let times = grid.times().to_vec();
    let z: Vec<f64> = nodes.iter().map(|n| n.z).collect();
    let (z_mu, gamma): (Vec<f64>, Vec<f64>) = match kind {
        ContractKind::New => {
            let w = common_noise_weight(principal, p);
            times
                .iter()
                .zip(&z)
                .map(|(&t, &z)| (-z + w * p.delta * tau(t, p), optimal_gamma(z, p)))
                .unzip()
        }
        ContractKind::Classical => z.iter().map(|&z| (0.0, optimal_gamma(z, p))).unzip(),
        ContractKind::FirstBest => z.iter().map(|_| (0.0, -p.theta)).unzip(),
    };
    let efforts = EffortSchedule::from_rates(&times, &z, &gamma, p);
    Ok((
        PaymentSchedule {
            kind,
            principal,
            times,
            z,
            z_mu,
            gamma,
        },
        efforts,
    ))
}

/// First-best integrand `m̄(t)` for the given `R̄`.
fn first_best_m(t: f64, p: &ValidatedParams, r_bar: f64) -> f64 {
    let s2 = p.sigma_circ * p.sigma_circ;
    let dt = p.delta * tau(t, p);
    let u = neg_part(dt).min(p.a_max) + dt;
    p.theta * s2 / 2.0
        + 0.5 * (s2 * r_bar - p.rho_bar()) * dt * dt
        + 0.5 * p.rho_bar() * u * u
        + 0.5 * f0_unchecked(p.theta, p)
}

fn m_values(
    kind: ContractKind,
    principal: PrincipalKind,
    p: &ValidatedParams,
    grid: &TimeGrid,
) -> Result<Vec<f64>, PrincipalError> {
    let s2 = p.sigma_circ * p.sigma_circ;
    let r_bar = principal.effective_r_bar(p);
    let base = |t: f64| p.theta * s2 / 2.0 - 0.5 * p.rho_bar() * (p.delta * tau(t, p)).powi(2);
    match kind {
        ContractKind::FirstBest => Ok(grid.times().iter().map(|&t| first_best_m(t, p, r_bar)).collect()),
        ContractKind::New => {
            let nodes = solve_nodes(kind, principal, p, grid)?;
            Ok(grid
                .times()
                .iter()
                .zip(&nodes)
                .map(|(&t, n)| {
                    let dt = p.delta * tau(t, p);
                    base(t) + 0.5 * s2 * r_bar * dt * dt + 0.5 * n.min_value
                })
                .collect())
        }
        ContractKind::Classical => {
            let nodes = solve_nodes(kind, principal, p, grid)?;
            Ok(grid
                .times()
                .iter()
                .zip(&nodes)
                .map(|(&t, n)| base(t) + 0.5 * n.min_value)
                .collect())
        }
    }
}

/// Values `m(t)` of the certainty-equivalent integrand on the grid.
pub fn m_schedule(
    kind: ContractKind,
    principal: PrincipalKind,
    p: &ValidatedParams,
    grid: &TimeGrid,
) -> Result<Vec<f64>, PrincipalError> {
    check_grid(p, grid)?;
    m_values(kind, principal, p, grid)
}

/// Principal value of a contract family, with `ξ₀` from the reservation
/// utility computed on the same grid. The CARA value is
/// `−exp(R_P(ξ₀ − u))` and the risk-neutral value is `u − ξ₀`, where
/// `u = δ T x₀ − ∫ m`.
pub fn value_report(
    kind: ContractKind,
    principal: PrincipalKind,
    p: &ValidatedParams,
    grid: &TimeGrid,
) -> Result<ValueReport, PrincipalError> {
    check_grid(p, grid)?;
    if principal == PrincipalKind::Cara && !(p.r_p > 0.0) {
        return Err(PrincipalError::NotRiskAverse(p.r_p));
    }
    let xi0 = reservation(p, grid.n_intervals())?.xi0;
    let m = m_values(kind, principal, p, grid)?;
    let m_integral = grid.integrate_samples(&m)?;
    let ce = p.delta * p.horizon * p.x0 - m_integral;
    let v0 = match principal {
        PrincipalKind::Cara => -(p.r_p * (xi0 - ce)).exp(),
        PrincipalKind::RiskNeutral => ce - xi0,
    };
    Ok(ValueReport {
        kind,
        principal,
        v0,
        ce,
        xi0,
        m_integral,
        m,
    })
}

/// First-best benchmark for the principal implied by `r_p`.
pub fn first_best_report(p: &ValidatedParams, grid: &TimeGrid) -> Result<FirstBestReport, PrincipalError> {
    first_best_report_for(PrincipalKind::for_params(p), p, grid)
}

pub fn first_best_report_for(
    principal: PrincipalKind,
    p: &ValidatedParams,
    grid: &TimeGrid,
) -> Result<FirstBestReport, PrincipalError> {
    check_grid(p, grid)?;
    if principal == PrincipalKind::Cara && !(p.r_p > 0.0) {
        return Err(PrincipalError::NotRiskAverse(p.r_p));
    }
    let r0 = reservation(p, grid.n_intervals())?.r0;
    let r_bar = principal.effective_r_bar(p);
    let m: Vec<f64> = grid.times().iter().map(|&t| first_best_m(t, p, r_bar)).collect();
    let ce_fb = p.delta * p.horizon * p.x0 - grid.integrate_samples(&m)?;
    let (v_fb, lagrange_rho) = match principal {
        PrincipalKind::Cara => {
            let v_rbar = -(-r_bar * ce_fb).exp();
            let power = (v_rbar / r0).powf(1.0 + p.r_p / p.r_a);
            (r0 * power, Some(p.r_p / p.r_a * power))
        }
        PrincipalKind::RiskNeutral => ((-r0).ln() / p.r_a + ce_fb, None),
    };
    let (schedule, efforts) = optimal_schedule(ContractKind::FirstBest, principal, p, grid)?;
    debug_assert_eq!(schedule.times.len(), efforts.times.len());
    Ok(FirstBestReport {
        principal,
        v_fb,
        lagrange_rho,
        ce_fb,
        efforts,
        fb_contract_constant: -(-r0).ln() / p.r_a,
    })
}

/// Comparison of new and classical contracts for the principal implied by `r_p`.
pub fn compare(p: &ValidatedParams, grid: &TimeGrid) -> Result<ComparisonReport, PrincipalError> {
    let principal = PrincipalKind::for_params(p);
    let new = value_report(ContractKind::New, principal, p, grid)?;
    let classical = value_report(ContractKind::Classical, principal, p, grid)?;

    let (delta_v, rel_delta_v) = match principal {
        PrincipalKind::Cara => {
            // V = −exp(R_P y) with y = ξ₀ − u; expm1 keeps small R_P accurate.
            let en = (p.r_p * (new.xi0 - new.ce)).exp_m1();
            let ec = (p.r_p * (classical.xi0 - classical.ce)).exp_m1();
            let diff = ec - en;
            (diff / p.r_p, diff / -ec)
        }
        PrincipalKind::RiskNeutral => {
            let diff = new.v0 - classical.v0;
            (diff, diff / classical.v0)
        }
    };

    let (sn, _) = optimal_schedule(ContractKind::New, principal, p, grid)?;
    let (sc, _) = optimal_schedule(ContractKind::Classical, principal, p, grid)?;
    let drift = |s: &PaymentSchedule| -> Result<f64, PrincipalError> {
        let v: Vec<f64> = s.z.iter().map(|&z| crate::agent::total_drift(z, p)).collect();
        Ok(grid.integrate_samples(&v)?)
    };
    let vol = |s: &PaymentSchedule| -> Result<f64, PrincipalError> {
        let v: Vec<f64> = s.gamma.iter().map(|&g| optimal_variance(g, p)).collect();
        Ok(grid.integrate_samples(&v)?)
    };
    let (an, ac) = (drift(&sn)?, drift(&sc)?);
    let delta_alpha = if ac != 0.0 { Some((an - ac) / ac) } else { None };
    let (bn, bc) = (vol(&sn)?, vol(&sc)?);
    let denom = bc + p.horizon * p.sigma_circ * p.sigma_circ;
    let delta_beta = if denom != 0.0 { Some((bc - bn) / denom) } else { None };

    Ok(ComparisonReport {
        principal,
        delta_v,
        rel_delta_v,
        delta_alpha,
        delta_beta,
        new,
        classical,
    })
}

/// Total idiosyncratic variance rate of a set of per-usage volatility efforts.
pub fn effort_variance(beta: &[f64], p: &ValidatedParams) -> f64 {
    variance_unchecked(beta, p)
}
