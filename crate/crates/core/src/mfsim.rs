//! Conditional-law particle Monte Carlo of the mean-field equilibrium.
//!
//! `M` common-noise paths are simulated; on each of them `N` consumers
//! follow the equilibrium dynamics
//!
//! ```text
//! dX° = −ρ̄(Z⁻ ∧ A_max) dt + σ*(Γ)·dW,     X = X° + σ° W°,
//! ```
//!
//! with independent idiosyncratic noises `W` and the shared common noise
//! `W°`. Averages over the `N` particles of one path estimate conditional
//! expectations given the common noise.
//!
//! Every draw comes from its own ChaCha stream keyed by (path, particle), so
//! the output does not depend on how paths are spread over threads. All
//! reductions run in a fixed order.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::agent::{best_vol_effort, h_drift, h_vol, optimal_cost, reservation, total_drift, AgentError};
use crate::model::ValidatedParams;
use crate::numerics::{mean_and_variance, pairwise_sum, uniform_node, DEFAULT_INTERVALS};
use crate::principal::{common_noise_weight, ContractKind, PaymentSchedule, PrincipalKind, ValueReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("schedule grid incompatible with the simulation: {0}")]
    IncompatibleGrid(String),
    #[error("non-finite value in accumulators on common path {path}")]
    Overflow { path: usize },
    #[error("schedule/ensemble mismatch: {0}")]
    Mismatch(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("degenerate variance: estimate {estimate} differs from target {target} with zero standard error")]
    DegenerateVariance { estimate: f64, target: f64 },
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_particles: usize,
    pub n_common: usize,
    /// Time step, hours.
    pub dt: f64,
    pub seed: u64,
    /// Pair common paths `2j` and `2j + 1` with opposite common-noise increments.
    pub antithetic: bool,
}

impl SimConfig {
    /// `N = 4096`, `M = 256`, `dt = horizon / 512`.
    pub fn standard(horizon: f64, seed: u64) -> Self {
        Self {
            n_particles: 4096,
            n_common: 256,
            dt: horizon / 512.0,
            seed,
            antithetic: false,
        }
    }

    /// Number of steps of size `dt` covering `[0, horizon]`.
    pub fn n_steps(&self, horizon: f64) -> Result<usize, SimError> {
        if self.n_particles < 2 {
            return Err(SimError::InvalidConfig(format!(
                "n_particles must be >= 2, got {}",
                self.n_particles
            )));
        }
        if self.n_particles >= u32::MAX as usize || self.n_common >= u32::MAX as usize {
            return Err(SimError::InvalidConfig("too many particles or paths".into()));
        }
        if self.n_common < 1 {
            return Err(SimError::InvalidConfig("n_common must be >= 1".into()));
        }
        if self.antithetic && !self.n_common.is_multiple_of(2) {
            return Err(SimError::InvalidConfig(format!(
                "antithetic pairing needs an even n_common, got {}",
                self.n_common
            )));
        }
        if !(self.dt > 0.0 && self.dt <= horizon) {
            return Err(SimError::InvalidConfig(format!(
                "dt must lie in (0, {horizon}], got {}",
                self.dt
            )));
        }
        let ratio = horizon / self.dt;
        let n = ratio.round();
        let ulp = f64::from_bits(n.to_bits() + 1) - n;
        if (ratio - n).abs() > 0.5 * ulp {
            return Err(SimError::InvalidConfig(format!(
                "horizon / dt = {ratio} is not an integer step count"
            )));
        }
        Ok(n as usize)
    }
}

/// Common-noise path and its path-level accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonPath {
    /// Increments of `W°` over each step.
    pub dw: Vec<f64>,
    /// `W°_T`.
    pub w_t: f64,
    /// `Σ (T − t_k) ΔW°_k`.
    pub int_tau_dw: f64,
    /// `Σ Z̄^μ_k (−ā_k dt + σ° ΔW°_k)`: the rate on others integrated against
    /// the exact conditional-mean increments.
    pub int_zmu_dmean: f64,
    /// `Σ Z̄^μ_k Σ_j ΔX^j_k` over all particles of the path.
    pub int_zmu_dsum: f64,
}

/// Terminal state and running integrals of one particle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ParticleState {
    /// Controlled deviation `X°_T`.
    pub x_circ: f64,
    /// Deviation `X_T = X°_T + σ° W°_T`.
    pub x: f64,
    /// `∫ X ds`.
    pub int_x: f64,
    /// `∫ Z dX°`.
    pub int_z_dxc: f64,
    /// `∫ Z dX`.
    pub int_z_dx: f64,
    /// `∫ Z̄^μ dX`.
    pub int_zmu_dx: f64,
    /// Agent running cost `∫ (c* − κ X) ds`.
    pub agent_cost: f64,
    /// Principal running cost `∫ g(X) ds + θ/2 ∫ d⟨X⟩`.
    pub principal_cost: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub config: SimConfig,
    pub n_steps: usize,
    pub kind: ContractKind,
    pub principal: PrincipalKind,
    pub common: Vec<CommonPath>,
    /// Particle `(m, i)` is stored at `m * n_particles + i`.
    pub particles: Vec<ParticleState>,
    /// Deterministic `∫ (Σ*(Γ) + σ°²) ds` on the simulation grid.
    pub quadratic_variation: f64,
    /// Deterministic `∫ ρ̄(Z⁻ ∧ A_max) ds` on the simulation grid.
    pub drift_integral: f64,
    fingerprint: u64,
}

impl ParticleEnsemble {
    pub fn particles_of(&self, m: usize) -> &[ParticleState] {
        let n = self.config.n_particles;
        &self.particles[m * n..(m + 1) * n]
    }

    /// Mean of `X_T` over the particles of common path `m`.
    pub fn conditional_mean_x(&self, m: usize) -> f64 {
        let xs: Vec<f64> = self.particles_of(m).iter().map(|s| s.x).collect();
        pairwise_sum(&xs) / xs.len() as f64
    }

    /// Mean-field limit of [`Self::conditional_mean_x`]:
    /// `x₀ − ∫ ρ̄(Z⁻ ∧ A_max) ds + σ° W°_T`.
    pub fn limit_mean_x(&self, m: usize, p: &ValidatedParams) -> f64 {
        p.x0 - self.drift_integral + p.sigma_circ * self.common[m].w_t
    }
}

/// Schedule sampled left-constant on the simulation grid.
struct StepTable {
    n: usize,
    h: f64,
    d: usize,
    times: Vec<f64>,
    z: Vec<f64>,
    z_mu: Vec<f64>,
    gamma: Vec<f64>,
    drift: Vec<f64>,
    /// Flattened `n × d` per-usage volatilities `σ_k √b_k`.
    vol: Vec<f64>,
    var: Vec<f64>,
    cost: Vec<f64>,
    /// `½H_d(Z) + ½H_v(Γ)`.
    ham: Vec<f64>,
}

impl StepTable {
    fn new(p: &ValidatedParams, s: &PaymentSchedule, n: usize) -> Result<Self, SimError> {
        let horizon = p.horizon;
        let len = s.times.len();
        if len < 2 || s.z.len() != len || s.z_mu.len() != len || s.gamma.len() != len {
            return Err(SimError::IncompatibleGrid(
                "schedule arrays have inconsistent lengths".into(),
            ));
        }
        if s.times[0] != 0.0 || (s.times[len - 1] - horizon).abs() > 1e-12 * horizon {
            return Err(SimError::IncompatibleGrid(format!(
                "schedule spans [{}, {}], model horizon is {horizon}",
                s.times[0],
                s.times[len - 1]
            )));
        }
        if s.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SimError::IncompatibleGrid(
                "schedule times not strictly increasing".into(),
            ));
        }
        let times: Vec<f64> = (0..=n).map(|k| uniform_node(horizon, k, n)).collect();
        let slack = 1e-12 * horizon;
        let mut t = StepTable {
            n,
            h: horizon / n as f64,
            d: p.d,
            times,
            z: Vec::with_capacity(n),
            z_mu: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n),
            drift: Vec::with_capacity(n),
            vol: Vec::with_capacity(n * p.d),
            var: Vec::with_capacity(n),
            cost: Vec::with_capacity(n),
            ham: Vec::with_capacity(n),
        };
        for k in 0..n {
            let tk = t.times[k];
            let j = s.times.partition_point(|&x| x <= tk + slack) - 1;
            let (z, zm, g) = (s.z[j], s.z_mu[j], s.gamma[j]);
            let b = best_vol_effort(g, p);
            let mut var = 0.0;
            for (bk, sk) in b.iter().zip(&p.sigma) {
                t.vol.push(sk * bk.sqrt());
                var += sk * sk * bk;
            }
            t.z.push(z);
            t.z_mu.push(zm);
            t.gamma.push(g);
            t.drift.push(total_drift(z, p));
            t.var.push(var);
            t.cost.push(optimal_cost(z, g, p));
            t.ham.push(0.5 * h_drift(z, p) + 0.5 * h_vol(g, p));
        }
        Ok(t)
    }

    fn sum<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        let v: Vec<f64> = (0..self.n).map(f).collect();
        pairwise_sum(&v) * self.h
    }
}

fn fingerprint(p: &ValidatedParams, s: &PaymentSchedule, cfg: &SimConfig) -> u64 {
    let mut h = DefaultHasher::new();
    p.to_toml_string().hash(&mut h);
    s.kind.hash(&mut h);
    s.principal.hash(&mut h);
    for v in [&s.times, &s.z, &s.z_mu, &s.gamma] {
        for x in v.iter() {
            x.to_bits().hash(&mut h);
        }
    }
    cfg.dt.to_bits().hash(&mut h);
    h.finish()
}

fn stream_rng(seed: u64, path: usize, particle: Option<usize>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slot = particle.map_or(0, |i| i as u64 + 1);
    rng.set_stream(((path as u64) << 32) | slot);
    rng
}

/// Simulate the equilibrium under `schedule`. The schedule is sampled
/// left-constant at the simulation times `t_k = k T / n`.
pub fn simulate(
    p: &ValidatedParams,
    schedule: &PaymentSchedule,
    cfg: &SimConfig,
) -> Result<ParticleEnsemble, SimError> {
    let n_steps = cfg.n_steps(p.horizon)?;
    let table = StepTable::new(p, schedule, n_steps)?;
    let paths: Vec<(CommonPath, Vec<ParticleState>)> = (0..cfg.n_common)
        .into_par_iter()
        .map(|m| simulate_path(m, p, &table, cfg))
        .collect();

    let mut common = Vec::with_capacity(cfg.n_common);
    let mut particles = Vec::with_capacity(cfg.n_common * cfg.n_particles);
    for (m, (c, ps)) in paths.into_iter().enumerate() {
        let finite = c.w_t.is_finite()
            && c.int_zmu_dsum.is_finite()
            && ps
                .iter()
                .all(|s| s.x.is_finite() && s.int_z_dx.is_finite() && s.int_x.is_finite());
        if !finite {
            return Err(SimError::Overflow { path: m });
        }
        common.push(c);
        particles.extend(ps);
    }
    let s2 = p.sigma_circ * p.sigma_circ;
    Ok(ParticleEnsemble {
        config: *cfg,
        n_steps,
        kind: schedule.kind,
        principal: schedule.principal,
        common,
        particles,
        quadratic_variation: table.sum(|k| table.var[k] + s2),
        drift_integral: table.sum(|k| table.drift[k]),
        fingerprint: fingerprint(p, schedule, cfg),
    })
}

#[allow(clippy::needless_range_loop)]
fn simulate_path(m: usize, p: &ValidatedParams, t: &StepTable, cfg: &SimConfig) -> (CommonPath, Vec<ParticleState>) {
    let n_part = cfg.n_particles;
    let sq = t.h.sqrt();
    let sc = p.sigma_circ;

    let source = if cfg.antithetic && m % 2 == 1 { m - 1 } else { m };
    let sign = if source == m { 1.0 } else { -1.0 };
    let mut crng = stream_rng(cfg.seed, source, None);
    let dw: Vec<f64> = (0..t.n)
        .map(|_| sign * sq * crng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut rngs: Vec<ChaCha8Rng> = (0..n_part).map(|i| stream_rng(cfg.seed, m, Some(i))).collect();
    let mut st = vec![
        ParticleState {
            x_circ: p.x0,
            ..ParticleState::default()
        };
        n_part
    ];

    let mut w = 0.0;
    let mut int_tau_dw = 0.0;
    let mut int_zmu_dmean = 0.0;
    let mut int_zmu_dsum = 0.0;
    for k in 0..t.n {
        let (z, zm, drift) = (t.z[k], t.z_mu[k], t.drift[k]);
        let vol = &t.vol[k * t.d..(k + 1) * t.d];
        let dwc = dw[k];
        let common_dx = sc * dwc;
        let mut step_sum = 0.0;
        for (s, rng) in st.iter_mut().zip(rngs.iter_mut()) {
            let x = s.x_circ + sc * w;
            s.int_x += x * t.h;
            let mut dxc = -drift * t.h;
            for v in vol {
                dxc += v * sq * rng.sample::<f64, _>(StandardNormal);
            }
            let dx = dxc + common_dx;
            s.int_z_dxc += z * dxc;
            s.int_z_dx += z * dx;
            s.int_zmu_dx += zm * dx;
            s.x_circ += dxc;
            step_sum += dx;
        }
        int_tau_dw += (p.horizon - t.times[k]) * dwc;
        int_zmu_dmean += zm * (-drift * t.h + common_dx);
        int_zmu_dsum += zm * step_sum;
        w += dwc;
    }

    let int_cost = t.sum(|k| t.cost[k]);
    let s2 = sc * sc;
    let qv = t.sum(|k| t.var[k] + s2);
    for s in st.iter_mut() {
        s.x = s.x_circ + sc * w;
        s.agent_cost = int_cost - p.kappa * s.int_x;
        s.principal_cost = (p.kappa - p.delta) * s.int_x + 0.5 * p.theta * qv;
    }
    (
        CommonPath {
            dw,
            w_t: w,
            int_tau_dw,
            int_zmu_dmean,
            int_zmu_dsum,
        },
        st,
    )
}

fn check_match(ens: &ParticleEnsemble, s: &PaymentSchedule, p: &ValidatedParams) -> Result<StepTable, SimError> {
    if fingerprint(p, s, &ens.config) != ens.fingerprint {
        return Err(SimError::Mismatch(
            "ensemble was simulated under a different schedule or parameters".into(),
        ));
    }
    StepTable::new(p, s, ens.n_steps)
}

/// Payoffs `ξ_T` of every particle under the contract written on the
/// controlled deviation `X°` and the common noise `W°`.
///
/// New contracts pay
/// `ξ₀ − ∫ℋ ds + ∫Z dX° + ½∫(Γ + R_A Z²)Σ* ds + w σ° δ∫(T−s)dW° + ½R_A w² σ°² δ² T³/3`
/// with `ℋ = ½H_d + ½H_v + κX` and `w = R_P/(R_A + R_P)` (zero for a
/// risk-neutral principal). Classical contracts pay
/// `ξ₀ − ∫ℋ° ds + ∫Z dX + ½∫(Γ + R_A Z²) d⟨X⟩`.
pub fn contract_payoffs(
    ens: &ParticleEnsemble,
    s: &PaymentSchedule,
    p: &ValidatedParams,
    principal: PrincipalKind,
) -> Result<Vec<f64>, SimError> {
    let t = check_match(ens, s, p)?;
    if s.principal != principal {
        return Err(SimError::Mismatch(format!(
            "schedule is for a {} principal, payoffs requested for {}",
            s.principal.as_str(),
            principal.as_str()
        )));
    }
    let xi0 = reservation(p, DEFAULT_INTERVALS)?.xi0;
    let s2 = p.sigma_circ * p.sigma_circ;
    let ham = t.sum(|k| t.ham[k]);
    let n_part = ens.config.n_particles;

    match s.kind {
        ContractKind::New => {
            let w = common_noise_weight(principal, p);
            let quad = t.sum(|k| 0.5 * (t.gamma[k] + p.r_a * t.z[k] * t.z[k]) * t.var[k]);
            let c3 = p.horizon.powi(3) / 3.0;
            let det = xi0 - ham + quad + 0.5 * p.r_a * w * w * s2 * p.delta * p.delta * c3;
            Ok(ens
                .particles
                .iter()
                .enumerate()
                .map(|(j, st)| {
                    let c = &ens.common[j / n_part];
                    det - p.kappa * st.int_x + st.int_z_dxc + w * p.sigma_circ * p.delta * c.int_tau_dw
                })
                .collect())
        }
        ContractKind::Classical => {
            let det = xi0 - ham - t.sum(|k| 0.5 * t.gamma[k] * s2)
                + t.sum(|k| 0.5 * (t.gamma[k] + p.r_a * t.z[k] * t.z[k]) * (t.var[k] + s2));
            Ok(ens
                .particles
                .iter()
                .map(|st| det - p.kappa * st.int_x + st.int_z_dx)
                .collect())
        }
        ContractKind::FirstBest => Err(SimError::Unsupported(
            "first-best transfers are not simple contracts".into(),
        )),
    }
}

/// How the law-indexed payoff measures the others' mean deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionalMean {
    /// Average of the other `N − 1` particles on the same common path.
    LeaveSelfOut,
    /// The mean-field conditional mean `x₀ − ∫ρ̄(Z⁻∧A_max) ds + σ° W°`.
    Limit,
}

/// Payoffs of the simple contract indexed on the consumer's deviation and
/// the conditional law of the others,
///
/// ```text
/// ξ₀ − ∫ℋ° ds + Z̄^μ ā ds + ∫Z dX + ∫Z̄^μ dX̄ + ½∫(Γ + R_A Z²) d⟨X⟩
///    + ½R_A σ°² ∫(Z̄^μ)² ds + R_A σ°² ∫Z Z̄^μ ds,
/// ```
///
/// where `X̄` is the others' mean deviation and `ā = ρ̄(Z⁻ ∧ A_max)` their
/// aggregate drift effort.
pub fn law_indexed_payoffs(
    ens: &ParticleEnsemble,
    s: &PaymentSchedule,
    p: &ValidatedParams,
    mean: ConditionalMean,
) -> Result<Vec<f64>, SimError> {
    let t = check_match(ens, s, p)?;
    if s.kind == ContractKind::FirstBest {
        return Err(SimError::Unsupported(
            "first-best transfers are not simple contracts".into(),
        ));
    }
    let xi0 = reservation(p, DEFAULT_INTERVALS)?.xi0;
    let s2 = p.sigma_circ * p.sigma_circ;
    let det = xi0 - t.sum(|k| t.ham[k] + 0.5 * t.gamma[k] * s2 - t.z_mu[k] * t.drift[k])
        + t.sum(|k| 0.5 * (t.gamma[k] + p.r_a * t.z[k] * t.z[k]) * (t.var[k] + s2))
        + t.sum(|k| 0.5 * p.r_a * s2 * t.z_mu[k] * t.z_mu[k] + p.r_a * s2 * t.z[k] * t.z_mu[k]);
    let n_part = ens.config.n_particles;
    let others = (n_part - 1) as f64;
    Ok(ens
        .particles
        .iter()
        .enumerate()
        .map(|(j, st)| {
            let c = &ens.common[j / n_part];
            let on_others = match mean {
                ConditionalMean::LeaveSelfOut => (c.int_zmu_dsum - st.int_zmu_dx) / others,
                ConditionalMean::Limit => c.int_zmu_dmean,
            };
            det - p.kappa * st.int_x + st.int_z_dx + on_others
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub estimate: f64,
    pub std_error: f64,
    /// Number of independent outer samples behind `std_error`.
    pub n_effective: usize,
    pub closed_form_target: f64,
    pub z_score: f64,
    /// Jackknife estimate of the bias of the nested estimator, when it applies.
    pub jackknife_bias: Option<f64>,
}

impl McReport {
    /// `|estimate − target| ≤ k·SE + |bias|`.
    pub fn within(&self, k: f64) -> bool {
        let bias = self.jackknife_bias.unwrap_or(0.0).abs();
        (self.estimate - self.closed_form_target).abs() <= k * self.std_error + bias
    }
}

/// Outer samples: one per common path, or one per antithetic pair.
fn outer_units(per_path: &[f64], antithetic: bool) -> Vec<f64> {
    if antithetic {
        per_path.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
    } else {
        per_path.to_vec()
    }
}

fn z_score(estimate: f64, target: f64, se: f64) -> Result<f64, SimError> {
    if se > 0.0 {
        return Ok((estimate - target) / se);
    }
    if (estimate - target).abs() <= 1e-12 * target.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(SimError::DegenerateVariance { estimate, target })
    }
}

fn check_payoffs(ens: &ParticleEnsemble, payoffs: &[f64]) -> Result<(), SimError> {
    if payoffs.len() != ens.particles.len() {
        return Err(SimError::Mismatch(format!(
            "{} payoffs for {} particles",
            payoffs.len(),
            ens.particles.len()
        )));
    }
    Ok(())
}

/// Agent expected utility `E[−exp(−R_A(ξ_T − ∫(c* − κX) ds))]`, reported as a
/// certainty equivalent and compared with the reservation transfer `ξ₀`.
pub fn verify_participation(
    ens: &ParticleEnsemble,
    payoffs: &[f64],
    p: &ValidatedParams,
) -> Result<McReport, SimError> {
    check_payoffs(ens, payoffs)?;
    let xi0 = reservation(p, DEFAULT_INTERVALS)?.xi0;
    let n_part = ens.config.n_particles;
    let per_path: Vec<f64> = (0..ens.config.n_common)
        .into_par_iter()
        .map(|m| {
            let u: Vec<f64> = (m * n_part..(m + 1) * n_part)
                .map(|j| -(-p.r_a * (payoffs[j] - ens.particles[j].agent_cost)).exp())
                .collect();
            pairwise_sum(&u) / n_part as f64
        })
        .collect();
    let units = outer_units(&per_path, ens.config.antithetic);
    let (mean_u, var_u) = mean_and_variance(&units);
    let se_u = (var_u / units.len() as f64).sqrt();
    let ce = -(-mean_u).ln() / p.r_a;
    let se = se_u / (p.r_a * mean_u.abs());
    Ok(McReport {
        estimate: ce,
        std_error: se,
        n_effective: units.len(),
        closed_form_target: xi0,
        z_score: z_score(ce, xi0, se)?,
        jackknife_bias: None,
    })
}

/// Principal value: the conditional expectation of
/// `L_T = ξ_T + ∫g(X) ds + θ/2 ∫d⟨X⟩` given the common noise is estimated by
/// the particle average on each path, then the principal's utility of `−L̄`
/// is averaged over paths. For a CARA principal the delete-one-particle
/// jackknife bias of this nested estimator is reported.
pub fn verify_principal_value(
    ens: &ParticleEnsemble,
    payoffs: &[f64],
    p: &ValidatedParams,
    report: &ValueReport,
) -> Result<McReport, SimError> {
    check_payoffs(ens, payoffs)?;
    if report.kind != ens.kind {
        return Err(SimError::Mismatch(format!(
            "value report is for {} contracts, ensemble for {}",
            report.kind.as_str(),
            ens.kind.as_str()
        )));
    }
    let n_part = ens.config.n_particles;
    if n_part < 2 {
        return Err(SimError::InvalidConfig("jackknife needs at least two particles".into()));
    }
    let r_p = report.principal.effective_r_p(p);
    let utility = |l: f64| match report.principal {
        PrincipalKind::Cara => -(r_p * l).exp(),
        PrincipalKind::RiskNeutral => -l,
    };
    let per_path: Vec<(f64, f64)> = (0..ens.config.n_common)
        .into_par_iter()
        .map(|m| {
            let l: Vec<f64> = (m * n_part..(m + 1) * n_part)
                .map(|j| payoffs[j] + ens.particles[j].principal_cost)
                .collect();
            let total = pairwise_sum(&l);
            let full = utility(total / n_part as f64);
            let bias = match report.principal {
                PrincipalKind::Cara => {
                    let others = (n_part - 1) as f64;
                    let loo: Vec<f64> = l.iter().map(|li| utility((total - li) / others)).collect();
                    others * (pairwise_sum(&loo) / n_part as f64 - full)
                }
                PrincipalKind::RiskNeutral => 0.0,
            };
            (full, bias)
        })
        .collect();
    let values: Vec<f64> = per_path.iter().map(|v| v.0).collect();
    let biases: Vec<f64> = per_path.iter().map(|v| v.1).collect();
    let units = outer_units(&values, ens.config.antithetic);
    let (est, var) = mean_and_variance(&units);
    let se = (var / units.len() as f64).sqrt();
    let jackknife_bias = match report.principal {
        PrincipalKind::Cara => Some(pairwise_sum(&biases) / biases.len() as f64),
        PrincipalKind::RiskNeutral => None,
    };
    Ok(McReport {
        estimate: est,
        std_error: se,
        n_effective: units.len(),
        closed_form_target: report.v0,
        z_score: z_score(est, report.v0, se)?,
        jackknife_bias,
    })
}

/// Per common path: conditional means of `L_T` and of `X_T`.
pub fn ensemble_summary(ens: &ParticleEnsemble, payoffs: &[f64]) -> Result<Vec<(f64, f64)>, SimError> {
    check_payoffs(ens, payoffs)?;
    let n_part = ens.config.n_particles;
    Ok((0..ens.config.n_common)
        .map(|m| {
            let l: Vec<f64> = (m * n_part..(m + 1) * n_part)
                .map(|j| payoffs[j] + ens.particles[j].principal_cost)
                .collect();
            (pairwise_sum(&l) / n_part as f64, ens.conditional_mean_x(m))
        })
        .collect())
}
