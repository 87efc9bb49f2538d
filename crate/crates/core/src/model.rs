//! Model constants and the raw cost and volatility primitives.
//!
//! Units follow the calibration: pence, kW and hours. A consumer controls
//! `d` usages; on usage `k` a drift effort `a[k]` in `[0, rho[k] * a_max]`
//! reduces consumption and a volatility effort `b[k]` in `[b_min, 1]` scales
//! the idiosyncratic variance `sigma[k]^2`.

use std::fmt;
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Total no-effort standard deviation of the calibrated deviation process.
pub const CALIBRATED_TOTAL_VOL: f64 = 0.085;

/// One violated parameter bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub bound: &'static str,
    pub value: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} violates {}", self.field, self.value, self.bound)
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameters: {}", list(.0))]
    Invalid(Vec<Violation>),
    #[error("variance share must lie in [0, 1], got {0}")]
    ShareOutOfRange(f64),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error("cannot parse parameters: {0}")]
    Parse(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn list(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Raw model constants as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Number of electricity usages.
    pub d: usize,
    /// Drift-effort efficiency per usage, kW²·h⁻¹·pence⁻¹.
    pub rho: Vec<f64>,
    /// Volatility-effort efficiency per usage, kW²·h·pence⁻¹.
    pub lambda: Vec<f64>,
    /// Volatility cost exponent per usage.
    pub eta: Vec<f64>,
    /// Idiosyncratic volatility per usage, kW·h^(−1/2).
    pub sigma: Vec<f64>,
    /// Common-noise volatility, kW·h^(−1/2).
    pub sigma_circ: f64,
    /// Drift-effort cap scale, pence·kW⁻²·h.
    pub a_max: f64,
    /// Volatility-effort floor, in (0, 1).
    pub b_min: f64,
    /// Agent CARA risk aversion, pence⁻¹.
    pub r_a: f64,
    /// Principal CARA risk aversion, pence⁻¹; zero means risk-neutral.
    pub r_p: f64,
    /// Quadratic-variation cost, pence·kW⁻²·h⁻¹.
    pub theta: f64,
    /// Contract duration, hours.
    pub horizon: f64,
    /// Initial deviation, kW.
    pub x0: f64,
    /// Slope of the linear energy value discrepancy, pence·kWh⁻¹.
    pub delta: f64,
    /// Agent preference slope, pence·kWh⁻¹.
    pub kappa: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    d: usize,
    rho: Vec<f64>,
    lambda: Vec<f64>,
    eta: Vec<f64>,
    sigma: Vec<f64>,
    sigma_circ: f64,
    a_max: Option<f64>,
    b_min: Option<f64>,
    r_a: f64,
    r_p: f64,
    theta: f64,
    horizon: f64,
    x0: Option<f64>,
    delta: f64,
    kappa: f64,
}

/// Default drift cap: twice the largest payment rate the optimal contracts can use.
pub fn default_a_max(delta: f64, horizon: f64) -> f64 {
    2.0 * delta.abs() * horizon
}

/// Default volatility-effort floor.
pub const DEFAULT_B_MIN: f64 = 0.01;

impl ModelParams {
    /// Parse a TOML document whose keys are exactly the field names.
    /// `a_max`, `b_min` and `x0` may be omitted and take their defaults.
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let raw: RawParams = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        Ok(Self {
            d: raw.d,
            rho: raw.rho,
            lambda: raw.lambda,
            eta: raw.eta,
            sigma: raw.sigma,
            sigma_circ: raw.sigma_circ,
            a_max: raw.a_max.unwrap_or_else(|| default_a_max(raw.delta, raw.horizon)),
            b_min: raw.b_min.unwrap_or(DEFAULT_B_MIN),
            r_a: raw.r_a,
            r_p: raw.r_p,
            theta: raw.theta,
            horizon: raw.horizon,
            x0: raw.x0.unwrap_or(0.0),
            delta: raw.delta,
            kappa: raw.kappa,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model parameters always serialize")
    }

    /// Re-split the total no-effort variance `Σ(1) + σ°²` so that the common
    /// part is the fraction `share` of it. Idiosyncratic volatilities are
    /// rescaled proportionally; with no idiosyncratic noise left to rescale the
    /// remainder goes to a single usage.
    pub fn with_variance_share(&self, share: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&share) {
            return Err(ModelError::ShareOutOfRange(share));
        }
        let idio: f64 = self.sigma.iter().map(|s| s * s).sum();
        let total = idio + self.sigma_circ * self.sigma_circ;
        let mut out = self.clone();
        out.sigma_circ = (share * total).sqrt();
        let target = (1.0 - share) * total;
        if idio > 0.0 {
            let scale = (target / idio).sqrt();
            out.sigma.iter_mut().for_each(|s| *s *= scale);
        } else if self.d == 1 {
            out.sigma = vec![target.sqrt()];
        } else if target > 0.0 {
            return Err(ModelError::Domain(
                "cannot split common variance across several usages without idiosyncratic volatilities".into(),
            ));
        }
        Ok(out)
    }
}

/// Calibrated single-usage parameters with the common noise carrying the
/// fraction `variance_share` of the total no-effort variance `0.085²`.
pub fn calibrated_defaults(variance_share: f64) -> Result<ModelParams, ModelError> {
    if !(0.0..=1.0).contains(&variance_share) {
        return Err(ModelError::ShareOutOfRange(variance_share));
    }
    let horizon = 5.5;
    let delta = -55.44;
    Ok(ModelParams {
        d: 1,
        rho: vec![9.3e-5],
        lambda: vec![2.8e-2],
        eta: vec![1.0],
        sigma: vec![CALIBRATED_TOTAL_VOL * (1.0 - variance_share).sqrt()],
        sigma_circ: CALIBRATED_TOTAL_VOL * variance_share.sqrt(),
        a_max: default_a_max(delta, horizon),
        b_min: DEFAULT_B_MIN,
        r_a: 5.7e-3,
        r_p: 6e-3,
        theta: 4e-3,
        horizon,
        x0: 0.0,
        delta,
        kappa: 11.76,
    })
}

/// Parameters that passed [`validate`], with derived aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedParams {
    params: ModelParams,
    rho_bar: f64,
    lambda_bar: f64,
    r_bar: f64,
}

impl Deref for ValidatedParams {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.params
    }
}

impl ValidatedParams {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `Σ_k rho[k]`.
    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }

    /// `max_k lambda[k]`.
    pub fn lambda_bar(&self) -> f64 {
        self.lambda_bar
    }

    /// Harmonic risk ratio `1/R̄ = 1/R_A + 1/R_P`, zero for a risk-neutral principal.
    pub fn r_bar(&self) -> f64 {
        self.r_bar
    }

    /// `Σ(1) = Σ_k sigma[k]²`.
    pub fn idio_variance(&self) -> f64 {
        self.sigma.iter().map(|s| s * s).sum()
    }

    /// Copy with a different principal risk aversion.
    pub fn with_r_p(&self, r_p: f64) -> Result<Self, ModelError> {
        let mut p = self.params.clone();
        p.r_p = r_p;
        validate(p)
    }
}

/// Check every parameter bound and populate the derived fields.
///
/// Zero idiosyncratic volatility is admitted (it is the all-common-noise
/// calibration) and the cost exponent may equal one, which is the calibrated
/// value.
/// Field name, value, admissibility test and the bound it states.
type ScalarRule = (&'static str, f64, fn(f64) -> bool, &'static str);

pub fn validate(params: ModelParams) -> Result<ValidatedParams, ModelError> {
    let mut bad = Vec::new();
    let mut push = |field: String, bound: &'static str, value: String| {
        bad.push(Violation { field, bound, value });
    };

    if params.d < 1 {
        push("d".into(), "d >= 1", params.d.to_string());
    }
    for (name, v) in [
        ("rho", &params.rho),
        ("lambda", &params.lambda),
        ("eta", &params.eta),
        ("sigma", &params.sigma),
    ] {
        if v.len() != params.d {
            push(name.into(), "length == d", v.len().to_string());
        }
    }
    let mut per_usage = |name: &str, v: &[f64], ok: fn(f64) -> bool, bound: &'static str| {
        for (k, x) in v.iter().enumerate() {
            if !(x.is_finite() && ok(*x)) {
                push(format!("{name}[{k}]"), bound, x.to_string());
            }
        }
    };
    per_usage("rho", &params.rho, |x| x > 0.0, "> 0");
    per_usage("lambda", &params.lambda, |x| x > 0.0, "> 0");
    per_usage("eta", &params.eta, |x| x >= 1.0, ">= 1");
    per_usage("sigma", &params.sigma, |x| x >= 0.0, ">= 0");

    let scalars: [ScalarRule; 10] = [
        ("sigma_circ", params.sigma_circ, |x| x >= 0.0, ">= 0"),
        ("a_max", params.a_max, |x| x > 0.0, "> 0"),
        ("b_min", params.b_min, |x| x > 0.0 && x < 1.0, "in (0, 1)"),
        ("r_a", params.r_a, |x| x > 0.0, "> 0"),
        ("r_p", params.r_p, |x| x >= 0.0, ">= 0"),
        ("theta", params.theta, |x| x >= 0.0, ">= 0"),
        ("horizon", params.horizon, |x| x > 0.0, "> 0"),
        ("x0", params.x0, |_| true, "finite"),
        ("delta", params.delta, |_| true, "finite"),
        ("kappa", params.kappa, |_| true, "finite"),
    ];
    for (name, x, ok, bound) in scalars {
        if !(x.is_finite() && ok(x)) {
            push(name.into(), bound, x.to_string());
        }
    }
    bad.dedup();
    if !bad.is_empty() {
        return Err(ModelError::Invalid(bad));
    }

    let rho_bar = params.rho.iter().sum();
    let lambda_bar = params.lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r_bar = if params.r_p > 0.0 {
        params.r_a * params.r_p / (params.r_a + params.r_p)
    } else {
        0.0
    };
    Ok(ValidatedParams {
        params,
        rho_bar,
        lambda_bar,
        r_bar,
    })
}

/// `c_α(a) = Σ a[k]² / rho[k]`, without domain checks.
pub fn drift_cost(a: &[f64], p: &ModelParams) -> f64 {
    a.iter().zip(&p.rho).map(|(a, r)| a * a / r).sum()
}

/// `c_β(b) = Σ sigma[k]² / (lambda[k] eta[k]) (b[k]^(−eta[k]) − 1)`, without domain checks.
pub fn vol_cost(b: &[f64], p: &ModelParams) -> f64 {
    (0..p.d).map(|k| vol_cost_k(b[k], k, p)).sum()
}

pub(crate) fn vol_cost_k(b: f64, k: usize, p: &ModelParams) -> f64 {
    let (s, l, e) = (p.sigma[k], p.lambda[k], p.eta[k]);
    s * s / (l * e) * (b.powf(-e) - 1.0)
}

/// Effort cost rate `½c_α(a) + ½c_β(b)` in pence per hour.
pub fn effort_cost(a: &[f64], b: &[f64], p: &ModelParams) -> Result<f64, ModelError> {
    check_drift(a, p)?;
    check_vol(b, p)?;
    Ok(0.5 * drift_cost(a, p) + 0.5 * vol_cost(b, p))
}

fn check_drift(a: &[f64], p: &ModelParams) -> Result<(), ModelError> {
    if a.len() != p.d {
        return Err(ModelError::Domain(format!(
            "drift effort has {} entries, d = {}",
            a.len(),
            p.d
        )));
    }
    for (k, x) in a.iter().enumerate() {
        let cap = p.rho[k] * p.a_max;
        if !(*x >= 0.0 && *x <= cap) {
            return Err(ModelError::Domain(format!("a[{k}] = {x} outside [0, {cap}]")));
        }
    }
    Ok(())
}

fn check_vol(b: &[f64], p: &ModelParams) -> Result<(), ModelError> {
    if b.len() != p.d {
        return Err(ModelError::Domain(format!(
            "volatility effort has {} entries, d = {}",
            b.len(),
            p.d
        )));
    }
    for (k, x) in b.iter().enumerate() {
        if !(*x >= p.b_min && *x <= 1.0) {
            return Err(ModelError::Domain(format!("b[{k}] = {x} outside [{}, 1]", p.b_min)));
        }
    }
    Ok(())
}

/// Per-usage volatility `σ(b) = (sigma[k] √b[k])_k`.
pub fn sigma_of(b: &[f64], p: &ModelParams) -> Result<Vec<f64>, ModelError> {
    check_vol(b, p)?;
    Ok(b.iter().zip(&p.sigma).map(|(b, s)| s * b.sqrt()).collect())
}

/// Idiosyncratic variance rate `Σ(b) = Σ sigma[k]² b[k]`.
pub fn variance_of(b: &[f64], p: &ModelParams) -> Result<f64, ModelError> {
    check_vol(b, p)?;
    Ok(variance_unchecked(b, p))
}

pub(crate) fn variance_unchecked(b: &[f64], p: &ModelParams) -> f64 {
    b.iter().zip(&p.sigma).map(|(b, s)| s * s * b).sum()
}
