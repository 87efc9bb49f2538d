//! Consumer best responses, Hamiltonian envelopes, the `F₀` envelope and the
//! autarky (reservation) utility.
//!
//! Best responses only depend on the rate `z` paid on the consumer's own
//! deviation and the rate `γ` paid on its quadratic variation. The rate on
//! the others' mean deviation and the common-noise volatility never enter,
//! which is why none of the functions below take them.

use thiserror::Error;

use crate::model::{drift_cost, variance_unchecked, vol_cost, vol_cost_k, ValidatedParams};
use crate::numerics::{NumericsError, TimeGrid};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("F0 needs q >= 0, got {0}")]
    NegativeQ(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Negative part `max(-x, 0)`.
pub fn neg_part(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        0.0
    }
}

/// Capped incentive `z⁻ ∧ A_max`, common to all usages.
pub fn drift_level(z: f64, p: &ValidatedParams) -> f64 {
    neg_part(z).min(p.a_max)
}

/// Optimal drift efforts `a[k] = rho[k] (z⁻ ∧ A_max)`.
pub fn best_drift_effort(z: f64, p: &ValidatedParams) -> Vec<f64> {
    let level = drift_level(z, p);
    p.rho.iter().map(|r| r * level).collect()
}

/// Aggregate drift reduction `a*(z)·1 = rho_bar (z⁻ ∧ A_max)`.
pub fn total_drift(z: f64, p: &ValidatedParams) -> f64 {
    p.rho_bar() * drift_level(z, p)
}

/// Optimal volatility effort on usage `k` at payment rate `gamma`.
pub fn best_vol_effort_k(gamma: f64, k: usize, p: &ValidatedParams) -> f64 {
    let gm = neg_part(gamma);
    let lam = p.lambda[k];
    if gm <= 1.0 / lam {
        return 1.0;
    }
    (lam * gm).powf(-1.0 / (p.eta[k] + 1.0)).clamp(p.b_min, 1.0)
}

/// Optimal volatility efforts `b[k] = 1 ∧ (λ[k] γ⁻)^(−1/(η[k]+1)) ∨ B_min`.
pub fn best_vol_effort(gamma: f64, p: &ValidatedParams) -> Vec<f64> {
    (0..p.d).map(|k| best_vol_effort_k(gamma, k, p)).collect()
}

/// `Σ*(γ) = Σ(b*(γ))`.
pub fn optimal_variance(gamma: f64, p: &ValidatedParams) -> f64 {
    variance_unchecked(&best_vol_effort(gamma, p), p)
}

/// Which closed form of the `F₀` envelope applies on one usage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum F0Branch {
    /// `λq ≤ 1`: no volatility effort.
    NoEffort,
    /// Interior optimum.
    Interior,
    /// The floor `B_min` binds.
    Floor,
}

/// Branch of `F₀(q)` on usage `k`.
pub fn f0_branch(q: f64, k: usize, p: &ValidatedParams) -> F0Branch {
    let lam = p.lambda[k];
    if q <= 1.0 / lam {
        F0Branch::NoEffort
    } else if (lam * q).powf(-1.0 / (p.eta[k] + 1.0)) >= p.b_min {
        F0Branch::Interior
    } else {
        F0Branch::Floor
    }
}

/// Contribution of usage `k` to `F₀(q)` evaluated with the given branch's
/// formula, whether or not that branch is the active one.
pub fn f0_branch_value(branch: F0Branch, q: f64, k: usize, p: &ValidatedParams) -> f64 {
    let (s2, lam, eta) = (p.sigma[k] * p.sigma[k], p.lambda[k], p.eta[k]);
    match branch {
        F0Branch::NoEffort => s2 * q,
        F0Branch::Interior => s2 / (lam * eta) * ((1.0 + eta) * (lam * q).powf(eta / (1.0 + eta)) - 1.0),
        F0Branch::Floor => {
            let b = p.b_min;
            s2 * (b * q + (b.powf(-eta) - 1.0) / (lam * eta))
        }
    }
}

pub(crate) fn f0_unchecked(q: f64, p: &ValidatedParams) -> f64 {
    (0..p.d).map(|k| f0_branch_value(f0_branch(q, k, p), q, k, p)).sum()
}

/// `F₀(q) = inf_b {Σ(b) q + c_β(b)}`, attained at `b*(−q)`.
pub fn f0(q: f64, p: &ValidatedParams) -> Result<f64, AgentError> {
    if !(q >= 0.0) {
        return Err(AgentError::NegativeQ(q));
    }
    Ok(f0_unchecked(q, p))
}

/// `F₀` evaluated straight from its definition through the best response,
/// `q Σ*(−q) + c_β(b*(−q))`.
pub fn f0_from_best_response(q: f64, p: &ValidatedParams) -> f64 {
    let b = best_vol_effort(-q, p);
    q * variance_unchecked(&b, p) + vol_cost(&b, p)
}

/// Drift envelope `H_d(z) = −inf_a {2 z a·1 + c_α(a)}`.
pub fn h_drift(z: f64, p: &ValidatedParams) -> f64 {
    let zm = neg_part(z);
    let level = zm.min(p.a_max);
    p.rho_bar() * level * (2.0 * zm - level)
}

/// Volatility envelope `H_v(γ) = −inf_b {c_β(b) − γ Σ(b)}`.
pub fn h_vol(gamma: f64, p: &ValidatedParams) -> f64 {
    if gamma >= 0.0 {
        gamma * p.idio_variance()
    } else {
        -f0_unchecked(-gamma, p)
    }
}

/// `H_c(x, γ) = ½ γ σ°² + κ x`.
pub fn h_common(x: f64, gamma: f64, p: &ValidatedParams) -> f64 {
    0.5 * gamma * p.sigma_circ * p.sigma_circ + p.kappa * x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelopes {
    pub h_d: f64,
    pub h_v: f64,
    pub h_c: f64,
    /// `½H_d + ½H_v + H_c`.
    pub total: f64,
}

pub fn hamiltonian_envelopes(z: f64, gamma: f64, x: f64, p: &ValidatedParams) -> Envelopes {
    let h_d = h_drift(z, p);
    let h_v = h_vol(gamma, p);
    let h_c = h_common(x, gamma, p);
    Envelopes {
        h_d,
        h_v,
        h_c,
        total: 0.5 * h_d + 0.5 * h_v + h_c,
    }
}

/// Cost rate of the optimal efforts at rates `(z, γ)`.
pub fn optimal_cost(z: f64, gamma: f64, p: &ValidatedParams) -> f64 {
    0.5 * drift_cost(&best_drift_effort(z, p), p) + 0.5 * vol_cost(&best_vol_effort(gamma, p), p)
}

/// Autarky Hamiltonian `H₀(γ) = ½(c*_β(γ) − γ Σ*(γ) − γ σ°²)`.
pub fn autarky_hamiltonian(gamma: f64, p: &ValidatedParams) -> f64 {
    let mut cb = 0.0;
    let mut var = 0.0;
    for k in 0..p.d {
        let b = best_vol_effort_k(gamma, k, p);
        cb += vol_cost_k(b, k, p);
        var += p.sigma[k] * p.sigma[k] * b;
    }
    0.5 * (cb - gamma * var - gamma * p.sigma_circ * p.sigma_circ)
}

/// Autarky payment rate on quadratic variation, `γ⁰(t) = −R_A κ² (T−t)²`.
pub fn autarky_gamma(t: f64, p: &ValidatedParams) -> f64 {
    let tau = (p.horizon - t).max(0.0);
    -p.r_a * p.kappa * p.kappa * tau * tau
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservationReport {
    pub times: Vec<f64>,
    pub gamma0: Vec<f64>,
    /// `beta0[i][k]`: autarky volatility effort on usage `k` at `times[i]`.
    pub beta0: Vec<Vec<f64>>,
    pub psi0_t: f64,
    /// Reservation transfer `ξ₀ = κ T x₀ + ψ₀(T)`.
    pub xi0: f64,
    /// Reservation utility `R₀ = −exp(−R_A ξ₀)`.
    pub r0: f64,
}

/// Reservation utility of a consumer refusing the contract, with `ψ₀(T)`
/// computed by Simpson quadrature on `grid_size` intervals.
pub fn reservation(p: &ValidatedParams, grid_size: usize) -> Result<ReservationReport, AgentError> {
    let grid = TimeGrid::uniform(p.horizon, grid_size)?;
    let times = grid.times().to_vec();
    let gamma0: Vec<f64> = times.iter().map(|&t| autarky_gamma(t, p)).collect();
    let beta0 = gamma0.iter().map(|&g| best_vol_effort(g, p)).collect();
    let h0: Vec<f64> = gamma0.iter().map(|&g| autarky_hamiltonian(g, p)).collect();
    let psi0_t = -grid.integrate_samples(&h0)?;
    let xi0 = p.kappa * p.horizon * p.x0 + psi0_t;
    let r0 = -(-p.r_a * xi0).exp();
    Ok(ReservationReport {
        times,
        gamma0,
        beta0,
        psi0_t,
        xi0,
        r0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{calibrated_defaults, validate};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn calibrated(share: f64) -> ValidatedParams {
        validate(calibrated_defaults(share).unwrap()).unwrap()
    }

    #[test]
    fn drift_examples() {
        let p = calibrated(0.5);
        assert_eq!(best_drift_effort(50.0, &p), vec![0.0]);
        assert_relative_eq!(best_drift_effort(-100.0, &p)[0], 9.3e-3, max_relative = 1e-14);
        assert_eq!(best_drift_effort(-2.0 * p.a_max, &p)[0], p.rho[0] * p.a_max);
    }

    #[test]
    fn vol_examples() {
        let p = calibrated(0.5);
        let lam = p.lambda[0];
        assert_eq!(best_vol_effort(-1.0 / lam, &p), vec![1.0]);
        assert_relative_eq!(best_vol_effort(-4.0 / lam, &p)[0], 0.5, max_relative = 1e-14);
        assert_eq!(best_vol_effort(3.0, &p), vec![1.0]);
        assert_eq!(best_vol_effort(-1e12, &p), vec![p.b_min]);
    }

    #[test]
    fn f0_examples() {
        let p = calibrated(0.5);
        let s2 = p.sigma[0] * p.sigma[0];
        let lam = p.lambda[0];
        assert_relative_eq!(f0(10.0, &p).unwrap(), 10.0 * s2, max_relative = 1e-15);
        let q = 1.0 / lam;
        let i = f0_branch_value(F0Branch::NoEffort, q, 0, &p);
        let ii = f0_branch_value(F0Branch::Interior, q, 0, &p);
        assert_relative_eq!(i, s2 / lam, max_relative = 1e-15);
        assert_relative_eq!(ii, s2 / lam, max_relative = 1e-12);
        assert!(f0(-1.0, &p).is_err());
    }

    #[test]
    fn f0_branch_selection() {
        let p = calibrated(0.5);
        let lam = p.lambda[0];
        assert_eq!(f0_branch(0.5 / lam, 0, &p), F0Branch::NoEffort);
        assert_eq!(f0_branch(4.0 / lam, 0, &p), F0Branch::Interior);
        assert_eq!(f0_branch(1e6 / lam, 0, &p), F0Branch::Floor);
    }

    #[test]
    fn floor_branch_continuity() {
        let p = calibrated(0.5);
        let lam = p.lambda[0];
        // (λq)^(−1/2) = B_min.
        let q = 1.0 / (p.b_min * p.b_min * lam);
        let a = f0_branch_value(F0Branch::Interior, q, 0, &p);
        let b = f0_branch_value(F0Branch::Floor, q, 0, &p);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn envelope_examples() {
        let p = calibrated(0.5);
        assert_eq!(
            hamiltonian_envelopes(0.0, 0.0, 0.0, &p),
            Envelopes {
                h_d: 0.0,
                h_v: 0.0,
                h_c: 0.0,
                total: 0.0
            }
        );
        assert_relative_eq!(h_drift(-100.0, &p), 0.93, max_relative = 1e-13);
        let q = 10.0 / p.lambda[0];
        assert_eq!(h_vol(-q, &p), -f0(q, &p).unwrap());
        assert_relative_eq!(h_vol(2.0, &p), 2.0 * p.idio_variance(), max_relative = 1e-15);
    }

    #[test]
    fn capped_drift_envelope() {
        let p = calibrated(0.5);
        let z = -3.0 * p.a_max;
        let a = p.rho[0] * p.a_max;
        assert_relative_eq!(h_drift(z, &p), -2.0 * z * a - a * a / p.rho[0], max_relative = 1e-13);
    }

    #[test]
    fn reservation_calibrated() {
        let p = calibrated(0.5);
        let r = reservation(&p, 1024).unwrap();
        assert_relative_eq!(r.gamma0[0], -5.7e-3 * 11.76 * 11.76 * 5.5 * 5.5, max_relative = 1e-14);
        assert!((r.gamma0[0] + 23.85).abs() < 0.01);
        assert!((p.lambda[0] * r.gamma0[0].abs() - 0.668).abs() < 1e-3);
        assert!(r.beta0.iter().all(|b| b[0] == 1.0));
        let closed = -(p.r_a * p.kappa * p.kappa * 0.085 * 0.085 / 2.0) * 5.5f64.powi(3) / 3.0;
        assert_relative_eq!(r.psi0_t, closed, max_relative = 1e-10);
        assert!((r.psi0_t + 0.1579).abs() < 1e-4);
        assert_relative_eq!(-(-r.r0).ln() / p.r_a, r.xi0, max_relative = 1e-12);
    }

    #[test]
    fn reservation_without_preference() {
        let mut q = calibrated_defaults(0.5).unwrap();
        q.kappa = 0.0;
        let p = validate(q).unwrap();
        let r = reservation(&p, 64).unwrap();
        assert!(r.gamma0.iter().all(|g| *g == 0.0));
        assert!(r.beta0.iter().all(|b| b[0] == 1.0));
        assert_eq!(r.psi0_t, 0.0);
        assert_eq!(r.r0, -1.0);
    }

    #[test]
    fn reservation_grid_must_be_even() {
        assert!(reservation(&calibrated(0.5), 7).is_err());
    }

    proptest! {
        #[test]
        fn drift_effort_monotone(z1 in -1000.0f64..1000.0, z2 in -1000.0f64..1000.0) {
            let p = calibrated(0.5);
            let (lo, hi) = if z1 < z2 { (z1, z2) } else { (z2, z1) };
            let a = best_drift_effort(lo, &p)[0];
            let b = best_drift_effort(hi, &p)[0];
            prop_assert!(a >= b);
            prop_assert!(a >= 0.0 && a <= p.rho[0] * p.a_max);
        }

        #[test]
        fn vol_effort_monotone(g1 in -1e6f64..10.0, g2 in -1e6f64..10.0) {
            let p = calibrated(0.5);
            let (lo, hi) = if g1 < g2 { (g1, g2) } else { (g2, g1) };
            let a = best_vol_effort(lo, &p)[0];
            let b = best_vol_effort(hi, &p)[0];
            prop_assert!(a <= b);
            prop_assert!(a >= p.b_min && b <= 1.0);
        }

        #[test]
        fn f0_matches_definition(q in 0.0f64..1e7) {
            let p = calibrated(0.5);
            let a = f0(q, &p).unwrap();
            let b = f0_from_best_response(q, &p);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }

        #[test]
        fn f0_nondecreasing(q1 in 0.0f64..1e6, q2 in 0.0f64..1e6) {
            let p = calibrated(0.0);
            let (lo, hi) = if q1 < q2 { (q1, q2) } else { (q2, q1) };
            prop_assert!(f0(lo, &p).unwrap() <= f0(hi, &p).unwrap());
        }

        #[test]
        fn reservation_worse_with_common_noise(s1 in 0.0f64..0.2, s2 in 0.0f64..0.2) {
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            let at = |s: f64| {
                let mut q = calibrated_defaults(0.5).unwrap();
                q.sigma_circ = s;
                reservation(&validate(q).unwrap(), 64).unwrap().psi0_t
            };
            prop_assert!(at(hi) <= at(lo));
        }
    }
}
