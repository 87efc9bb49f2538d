//! Bounded scalar minimization, composite Simpson quadrature and a few
//! summation helpers.
//!
//! The minimizer is a coarse scan followed by golden-section refinement of
//! the best bracket, then a central-difference polish. The polish exists
//! because the objectives minimized here are very flat near their optimum
//! (relative curvature of order 1e-4), so comparing function values alone
//! cannot locate the argmin much better than `sqrt(eps)` times the scale.

use thiserror::Error;

/// Default number of points of the coarse scan in [`minimize_scalar`].
pub const DEFAULT_COARSE_N: usize = 256;

/// Default relative tolerance on the argmin, scaled by the problem size.
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Default number of Simpson intervals.
pub const DEFAULT_INTERVALS: usize = 1024;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("objective returned NaN at x = {x}")]
    NanObjective { x: f64 },
    #[error("integrand returned NaN at x = {x}")]
    NanIntegrand { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeResult {
    pub argmin: f64,
    pub min_value: f64,
    pub evaluations: usize,
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: Fn(f64) -> f64> Counted<F> {
    fn eval(&mut self, x: f64) -> Result<f64, NumericsError> {
        self.evaluations += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            return Err(NumericsError::NanObjective { x });
        }
        Ok(v)
    }
}

/// Minimize `f` over `[lo, hi]`.
///
/// `coarse_n` equally spaced points (endpoints included) are scanned first;
/// ties on the scan go to the point with the smaller `|x|`. The bracket
/// around the best scan point is refined by golden section until its width
/// is at most `tol`, and finally polished by bisection on the sign of a
/// central difference. The polished point is kept only when its value is no
/// worse than the golden-section point up to rounding.
pub fn minimize_scalar<F>(f: F, lo: f64, hi: f64, tol: f64, coarse_n: usize) -> Result<MinimizeResult, NumericsError>
where
    F: Fn(f64) -> f64,
{
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(NumericsError::InvalidArgument(format!(
            "need finite lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(NumericsError::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    if coarse_n < 3 {
        return Err(NumericsError::InvalidArgument(format!(
            "coarse_n must be >= 3, got {coarse_n}"
        )));
    }

    let mut f = Counted { f, evaluations: 0 };
    let span = hi - lo;
    let last = coarse_n - 1;
    let node = |i: usize| {
        if i == last {
            hi
        } else {
            lo + span * (i as f64) / (last as f64)
        }
    };

    let mut best_i = 0;
    let mut best_x = node(0);
    let mut best_v = f.eval(best_x)?;
    for i in 1..coarse_n {
        let x = node(i);
        let v = f.eval(x)?;
        if v < best_v || (v == best_v && x.abs() < best_x.abs()) {
            best_i = i;
            best_x = x;
            best_v = v;
        }
    }
    let coarse_best = best_v;

    let bracket_lo = node(best_i.saturating_sub(1));
    let bracket_hi = node((best_i + 1).min(last));

    // Golden section on the bracket, remembering the best point seen.
    let (mut a, mut b) = (bracket_lo, bracket_hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f.eval(c)?;
    let mut fd = f.eval(d)?;
    while b - a > tol {
        if fc < fd || (fc == fd && c.abs() <= d.abs()) {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f.eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f.eval(d)?;
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v < best_v || (v == best_v && x.abs() < best_x.abs()) {
                best_x = x;
                best_v = v;
            }
        }
    }
    let mid = 0.5 * (a + b);
    let fmid = f.eval(mid)?;
    if fmid < best_v || (fmid == best_v && mid.abs() < best_x.abs()) {
        best_x = mid;
        best_v = fmid;
    }

    // Central-difference polish on the coarse bracket.
    if bracket_hi > bracket_lo {
        let h = (span / last as f64) * 1e-3;
        let mut slope = |x: f64| -> Result<f64, NumericsError> {
            let xm = (x - h).max(lo);
            let xp = (x + h).min(hi);
            Ok(f.eval(xp)? - f.eval(xm)?)
        };
        let (mut l, mut r) = (bracket_lo, bracket_hi);
        if slope(l)? < 0.0 && slope(r)? > 0.0 {
            while r - l > tol {
                let m = 0.5 * (l + r);
                let g = slope(m)?;
                if g == 0.0 {
                    l = m;
                    r = m;
                } else if g < 0.0 {
                    l = m;
                } else {
                    r = m;
                }
            }
            let xp = 0.5 * (l + r);
            let vp = f.eval(xp)?;
            let slack = 16.0 * f64::EPSILON * best_v.abs().max(f64::MIN_POSITIVE);
            if vp <= best_v + slack && vp <= coarse_best {
                best_x = xp;
                best_v = vp;
            }
        }
    }

    // Zero is the smallest-magnitude candidate; take it on a tie.
    if lo <= 0.0 && hi >= 0.0 && best_x != 0.0 {
        let v0 = f.eval(0.0)?;
        if v0 <= best_v {
            best_x = 0.0;
            best_v = v0;
        }
    }

    Ok(MinimizeResult {
        argmin: best_x,
        min_value: best_v,
        evaluations: f.evaluations,
    })
}

/// Composite Simpson rule for `f` on `[lo, hi]` with `n_intervals` (even) panels.
pub fn integrate<F>(f: F, lo: f64, hi: f64, n_intervals: usize) -> Result<f64, NumericsError>
where
    F: Fn(f64) -> f64,
{
    check_simpson_args(lo, hi, n_intervals)?;
    let h = (hi - lo) / n_intervals as f64;
    let mut values = Vec::with_capacity(n_intervals + 1);
    for i in 0..=n_intervals {
        let x = if i == n_intervals { hi } else { lo + h * i as f64 };
        let v = f(x);
        if v.is_nan() {
            return Err(NumericsError::NanIntegrand { x });
        }
        values.push(v);
    }
    simpson(&values, h)
}

/// Composite Simpson rule on pre-sampled equally spaced values.
///
/// `values.len() - 1` must be even and at least 2.
pub fn simpson(values: &[f64], h: f64) -> Result<f64, NumericsError> {
    let n = values.len().saturating_sub(1);
    if n < 2 || !n.is_multiple_of(2) {
        return Err(NumericsError::InvalidArgument(format!(
            "Simpson needs an even number >= 2 of intervals, got {n}"
        )));
    }
    if let Some(i) = values.iter().position(|v| v.is_nan()) {
        return Err(NumericsError::NanIntegrand { x: h * i as f64 });
    }
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    Ok(h / 3.0 * (values[0] + values[n] + 4.0 * odd + 2.0 * even))
}

fn check_simpson_args(lo: f64, hi: f64, n_intervals: usize) -> Result<(), NumericsError> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(NumericsError::InvalidArgument(format!(
            "need finite lo <= hi, got [{lo}, {hi}]"
        )));
    }
    if n_intervals < 2 || !n_intervals.is_multiple_of(2) {
        return Err(NumericsError::InvalidArgument(format!(
            "n_intervals must be even and >= 2, got {n_intervals}"
        )));
    }
    Ok(())
}

/// Uniform time grid on `[0, horizon]` used for schedules and quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    horizon: f64,
}

impl TimeGrid {
    /// `n_intervals + 1` nodes `t_i = horizon * i / n_intervals`; the interval
    /// count must be even so that Simpson applies on the grid.
    pub fn uniform(horizon: f64, n_intervals: usize) -> Result<Self, NumericsError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(NumericsError::InvalidArgument(format!(
                "horizon must be > 0, got {horizon}"
            )));
        }
        check_simpson_args(0.0, horizon, n_intervals)?;
        let times = (0..=n_intervals)
            .map(|i| uniform_node(horizon, i, n_intervals))
            .collect();
        Ok(Self { times, horizon })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_intervals() as f64
    }

    /// Simpson integral of values sampled on this grid.
    pub fn integrate_samples(&self, values: &[f64]) -> Result<f64, NumericsError> {
        if values.len() != self.times.len() {
            return Err(NumericsError::InvalidArgument(format!(
                "expected {} samples, got {}",
                self.times.len(),
                values.len()
            )));
        }
        simpson(values, self.step())
    }
}

/// The `i`-th of `n + 1` uniform nodes on `[0, horizon]`, with the last node
/// exactly equal to `horizon`.
pub fn uniform_node(horizon: f64, i: usize, n: usize) -> f64 {
    if i == n {
        horizon
    } else {
        horizon * (i as f64) / (n as f64)
    }
}

/// Pairwise (cascade) summation with a fixed split, so the result only depends
/// on the order of `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean and unbiased sample variance, both via pairwise summation.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    (mean, pairwise_sum(&sq) / (n - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_minimum() {
        let r = minimize_scalar(|z| (z + 1.0) * (z + 1.0), -2.0, 0.0, 1e-10, 256).unwrap();
        assert!((r.argmin + 1.0).abs() <= 1e-10);
        assert!(r.min_value <= 1e-18);
    }

    #[test]
    fn abs_kink() {
        let r = minimize_scalar(f64::abs, -1.0, 1.0, 1e-12, 256).unwrap();
        assert!(r.argmin.abs() <= 1e-12, "argmin {}", r.argmin);
    }

    #[test]
    fn boundary_minimum() {
        let r = minimize_scalar(|z| z, 0.0, 3.0, 1e-10, 16).unwrap();
        assert_eq!(r.argmin, 0.0);
        let r = minimize_scalar(|z| -z, 0.0, 3.0, 1e-10, 16).unwrap();
        assert!((r.argmin - 3.0).abs() <= 1e-10);
    }

    #[test]
    fn ties_prefer_small_magnitude() {
        let r = minimize_scalar(|_| 1.0, -4.0, 2.0, 1e-9, 7).unwrap();
        assert_eq!(r.argmin, 0.0);
    }

    #[test]
    fn flat_objective_is_polished() {
        // Large offset with tiny curvature: value comparisons alone stall.
        let f = |z: f64| 0.86 + 9.3e-5 * (z + 123.456_789) * (z + 123.456_789);
        let r = minimize_scalar(f, -310.0, 1.0, 1e-7, 256).unwrap();
        assert!((r.argmin + 123.456_789).abs() < 1e-6, "argmin {}", r.argmin);
    }

    #[test]
    fn nan_is_reported() {
        let e = minimize_scalar(|z| if z > 0.5 { f64::NAN } else { z }, 0.0, 1.0, 1e-9, 8);
        assert!(matches!(e, Err(NumericsError::NanObjective { .. })));
        let e = integrate(|x| if x > 0.5 { f64::NAN } else { x }, 0.0, 1.0, 4);
        assert!(matches!(e, Err(NumericsError::NanIntegrand { .. })));
    }

    #[test]
    fn bad_arguments() {
        assert!(minimize_scalar(|z| z, 1.0, 0.0, 1e-9, 8).is_err());
        assert!(minimize_scalar(|z| z, 0.0, 1.0, 0.0, 8).is_err());
        assert!(minimize_scalar(|z| z, 0.0, 1.0, 1e-9, 2).is_err());
        assert!(integrate(|x| x, 0.0, 1.0, 3).is_err());
        assert!(integrate(|x| x, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn simpson_exact_on_cubics() {
        assert_relative_eq!(
            integrate(|x| x * x, 0.0, 1.0, 2).unwrap(),
            1.0 / 3.0,
            max_relative = 1e-15
        );
        let v = integrate(|x| 2.0 * x * x * x - x + 4.0, -1.0, 3.0, 8).unwrap();
        assert_relative_eq!(
            v,
            2.0 * (81.0 - 1.0) / 4.0 - (9.0 - 1.0) / 2.0 + 16.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn simpson_tau_squared() {
        let (t, delta) = (5.5, -55.44);
        let v = integrate(|s| delta * delta * (t - s) * (t - s), 0.0, t, 1024).unwrap();
        assert_relative_eq!(v, delta * delta * t * t * t / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn grid_nodes() {
        let g = TimeGrid::uniform(5.5, 8).unwrap();
        assert_eq!(g.times().len(), 9);
        assert_eq!(g.times()[0], 0.0);
        assert_eq!(*g.times().last().unwrap(), 5.5);
        assert!(TimeGrid::uniform(5.5, 7).is_err());
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
        let (m, var) = mean_and_variance(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert_relative_eq!(var, 5.0 / 3.0, max_relative = 1e-15);
    }
}
