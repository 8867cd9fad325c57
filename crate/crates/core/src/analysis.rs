//! Thermalization analysis: stretched and multi-exponential fits, the 1/e
//! lifetime proxy, cusp detection and regime segmentation, harmonic spectra
//! of the oscillatory approach, decay-rate scaling fits, and the measurement
//! throughput-gain formula.
//!
//! Fitting protocol, fixed for reproducibility: damped least squares with
//! analytic Jacobians, initialized from the trace maximum, the 1/e estimate
//! and exponent 1/2; convergence when the relative parameter change drops
//! below 1e-8, giving up after 200 iterations.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Inverse, LeastSquaresSvd, SolveH};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{moving_average, AcquisitionError, DecayTrace};

pub const FIT_TOLERANCE: f64 = 1e-8;
pub const FIT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("fit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("degenerate trace: {0}")]
    DegenerateTrace(String),
    #[error("trace never crosses 1/e of its plateau value")]
    NoCrossing,
    #[error("no significant changepoint in sqrt-time coordinates")]
    NoCusp,
    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("need at least {needed} sweep points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error(transparent)]
    Filter(#[from] AcquisitionError),
    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

/// Serializable summary shared by every fit, emitted as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub errors: BTreeMap<String, f64>,
    pub residual_rms: f64,
    pub n_points: usize,
    pub settings: serde_json::Value,
}

// ---------------------------------------------------------------------------
// Damped least squares
// ---------------------------------------------------------------------------

struct LmOutcome {
    params: Array1<f64>,
    cost: f64,
}

/// Minimize ‖r(p)‖² given residuals and an analytic Jacobian. The damping
/// scales the normal-equation diagonal, shrinking on accepted steps and
/// growing on rejected ones.
fn damped_least_squares(
    initial: Array1<f64>,
    mut eval: impl FnMut(&Array1<f64>) -> (Array1<f64>, Array2<f64>),
) -> Result<LmOutcome, AnalysisError> {
    let n = initial.len();
    let mut params = initial;
    let (mut residual, mut jacobian) = eval(&params);
    let mut cost = residual.dot(&residual);
    let mut lambda = 1e-3;
    for iteration in 0..FIT_MAX_ITERATIONS {
        let jt = jacobian.t();
        let gradient = jt.dot(&residual);
        let normal = jt.dot(&jacobian);
        let diag_floor = 1e-12
            * (0..n)
                .map(|d| normal[[d, d]])
                .fold(0.0f64, f64::max)
                .max(1e-300);
        loop {
            let mut damped = normal.clone();
            for d in 0..n {
                damped[[d, d]] += lambda * damped[[d, d]].max(diag_floor);
            }
            let step = match damped.solveh(&gradient.mapv(|g| -g)) {
                Ok(step) => step,
                Err(_) => {
                    lambda *= 10.0;
                    if lambda > 1e15 {
                        return Err(AnalysisError::NonConvergence {
                            iterations: iteration,
                        });
                    }
                    continue;
                }
            };
            let trial = &params + &step;
            let (trial_residual, trial_jacobian) = eval(&trial);
            let trial_cost = trial_residual.dot(&trial_residual);
            if trial_cost.is_finite() && trial_cost <= cost {
                let relative_change = step
                    .iter()
                    .zip(trial.iter())
                    .map(|(s, p)| (s / p.abs().max(1e-12)).abs())
                    .fold(0.0f64, f64::max);
                let cost_drop = cost - trial_cost;
                params = trial;
                residual = trial_residual;
                jacobian = trial_jacobian;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                // Converged when parameters settle, or when the cost is flat
                // (redundant directions can drift forever on over-complete
                // models without improving the fit).
                if relative_change < FIT_TOLERANCE
                    || cost_drop <= 1e-9 * cost.max(1e-300)
                {
                    return Ok(LmOutcome { params, cost });
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e15 {
                // Stuck: no downhill step exists at any damping, which is
                // convergence to machine precision for smooth models.
                return Ok(LmOutcome { params, cost });
            }
        }
    }
    Err(AnalysisError::NonConvergence {
        iterations: FIT_MAX_ITERATIONS,
    })
}

/// Lawson-Hanson nonnegative least squares for the small multi-exponential
/// amplitude solve.
fn nnls(design: &Array2<f64>, target: &Array1<f64>) -> Result<Array1<f64>, AnalysisError> {
    let n = design.ncols();
    let mut passive = vec![false; n];
    let mut x = Array1::<f64>::zeros(n);
    let scale = design.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale * target.len() as f64;
    for _ in 0..(10 * n.max(1)) {
        let gradient = design.t().dot(&(target - &design.dot(&x)));
        let candidate = (0..n)
            .filter(|i| !passive[*i] && gradient[*i] > tol)
            .max_by(|a, b| gradient[*a].total_cmp(&gradient[*b]));
        let Some(entering) = candidate else { break };
        passive[entering] = true;
        for _ in 0..(10 * n) {
            let cols: Vec<usize> = (0..n).filter(|i| passive[*i]).collect();
            let sub = design.select(Axis(1), &cols);
            let z = sub.least_squares(target)?.solution;
            if z.iter().all(|v| *v > 0.0) {
                x.fill(0.0);
                for (k, &c) in cols.iter().enumerate() {
                    x[c] = z[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &c) in cols.iter().enumerate() {
                if z[k] <= 0.0 {
                    let denom = x[c] - z[k];
                    if denom > 0.0 {
                        alpha = alpha.min(x[c] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                x[c] += alpha * (z[k] - x[c]);
            }
            for &c in &cols {
                if x[c] <= 1e-14 * scale.max(1.0) {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
        }
    }
    Ok(x)
}

fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - slope * x - intercept;
            e * e
        })
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r_squared)
}

fn logspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

// ---------------------------------------------------------------------------
// Stretched exponential
// ---------------------------------------------------------------------------

/// Least-squares fit of A·exp[−(t/T)^α].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StretchedFit {
    pub amplitude: f64,
    pub lifetime_s: f64,
    pub exponent: f64,
    pub residual_rms: f64,
    /// Covariance over (amplitude, lifetime, exponent); exponent entries are
    /// zero when the exponent was held fixed.
    pub covariance: [[f64; 3]; 3],
}

impl StretchedFit {
    pub fn evaluate(&self, t: f64) -> f64 {
        self.amplitude * (-(t / self.lifetime_s).powf(self.exponent)).exp()
    }

    pub fn report(&self, n_points: usize, alpha_fixed: Option<f64>) -> FitReport {
        let params = BTreeMap::from([
            ("amplitude".to_string(), self.amplitude),
            ("lifetime_s".to_string(), self.lifetime_s),
            ("exponent".to_string(), self.exponent),
        ]);
        let errors = BTreeMap::from([
            ("amplitude".to_string(), self.covariance[0][0].max(0.0).sqrt()),
            ("lifetime_s".to_string(), self.covariance[1][1].max(0.0).sqrt()),
            ("exponent".to_string(), self.covariance[2][2].max(0.0).sqrt()),
        ]);
        FitReport {
            model: "stretched_exponential".into(),
            params,
            errors,
            residual_rms: self.residual_rms,
            n_points,
            settings: serde_json::json!({
                "alpha_fixed": alpha_fixed,
                "tolerance": FIT_TOLERANCE,
                "max_iterations": FIT_MAX_ITERATIONS,
            }),
        }
    }
}

fn check_fittable(trace: &DecayTrace, min_points: usize) -> Result<(), AnalysisError> {
    trace.validate()?;
    if trace.len() < min_points {
        return Err(AnalysisError::DegenerateTrace(format!(
            "{} points, need at least {min_points}",
            trace.len()
        )));
    }
    let max = trace.amplitudes.iter().cloned().fold(0.0f64, f64::max);
    let min = trace.amplitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        return Err(AnalysisError::DegenerateTrace("all amplitudes zero".into()));
    }
    if max - min <= 1e-12 * max {
        return Err(AnalysisError::DegenerateTrace(
            "constant trace has an unbounded lifetime".into(),
        ));
    }
    Ok(())
}

fn one_over_e_estimate(trace: &DecayTrace) -> Option<f64> {
    let (start, &reference) = trace
        .amplitudes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    let threshold = reference / std::f64::consts::E;
    for i in (start + 1)..trace.len() {
        if trace.amplitudes[i] < threshold {
            let (a0, a1) = (trace.amplitudes[i - 1], trace.amplitudes[i]);
            let (t0, t1) = (trace.times[i - 1], trace.times[i]);
            return Some(t0 + (a0 - threshold) / (a0 - a1) * (t1 - t0));
        }
    }
    None
}

/// Time of the first downward crossing of (plateau value)/e, by linear
/// interpolation. The plateau reference is the trace maximum, which for a
/// survival trace is the initial point.
pub fn one_over_e_lifetime(trace: &DecayTrace) -> Result<f64, AnalysisError> {
    trace.validate()?;
    if trace.amplitudes.iter().cloned().fold(0.0f64, f64::max) <= 0.0 {
        return Err(AnalysisError::DegenerateTrace("all amplitudes zero".into()));
    }
    one_over_e_estimate(trace).ok_or(AnalysisError::NoCrossing)
}

/// Fit A·exp[−(t/T)^α] with optional fixed exponent. Internally the
/// parameters live in log space, which keeps them positive without
/// constraints.
pub fn fit_stretched_exponential(
    trace: &DecayTrace,
    alpha_fixed: Option<f64>,
) -> Result<StretchedFit, AnalysisError> {
    check_fittable(trace, 10)?;
    if let Some(alpha) = alpha_fixed {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(AnalysisError::DegenerateTrace(format!(
                "fixed exponent {alpha} outside (0, 2]"
            )));
        }
    }
    let times = &trace.times;
    let values = &trace.amplitudes;
    let m = times.len();
    let amp0 = values.iter().cloned().fold(0.0f64, f64::max);
    let life0 = one_over_e_estimate(trace)
        .unwrap_or(times[m - 1] - times[0])
        .max(f64::MIN_POSITIVE);
    let alpha0 = alpha_fixed.unwrap_or(0.5);
    let free = if alpha_fixed.is_some() { 2 } else { 3 };

    let initial = Array1::from(
        [amp0.ln(), life0.ln(), alpha0.ln()][..free].to_vec(),
    );
    let eval = |p: &Array1<f64>| {
        let (a, t2) = (p[0].exp(), p[1].exp());
        let alpha = if free == 3 { p[2].exp() } else { alpha0 };
        let mut residual = Array1::zeros(m);
        let mut jacobian = Array2::zeros((m, free));
        for i in 0..m {
            let u = (times[i] / t2).powf(alpha);
            let f = a * (-u).exp();
            residual[i] = f - values[i];
            jacobian[[i, 0]] = f;
            jacobian[[i, 1]] = f * alpha * u;
            if free == 3 {
                jacobian[[i, 2]] = if times[i] > 0.0 && u > 0.0 {
                    -f * alpha * u * (times[i] / t2).ln()
                } else {
                    0.0
                };
            }
        }
        (residual, jacobian)
    };
    let outcome = damped_least_squares(initial, eval)?;
    let amplitude = outcome.params[0].exp();
    let lifetime_s = outcome.params[1].exp();
    let exponent = if free == 3 {
        outcome.params[2].exp()
    } else {
        alpha0
    };
    if exponent > 2.0 {
        return Err(AnalysisError::DegenerateTrace(format!(
            "fitted exponent {exponent:.3} outside (0, 2]"
        )));
    }

    // Covariance in the original parameters: the log-space Jacobian divided
    // column-wise by the parameter value.
    let (residual, log_jacobian) = eval(&outcome.params);
    let scales = [amplitude, lifetime_s, exponent];
    let mut jac = log_jacobian;
    for (c, scale) in scales.iter().enumerate().take(free) {
        for i in 0..m {
            jac[[i, c]] /= scale;
        }
    }
    let sigma2 = residual.dot(&residual) / (m - free).max(1) as f64;
    let mut covariance = [[0.0; 3]; 3];
    if let Ok(inv) = jac.t().dot(&jac).inv() {
        for r in 0..free {
            for c in 0..free {
                covariance[r][c] = sigma2 * inv[[r, c]];
            }
        }
    }
    Ok(StretchedFit {
        amplitude,
        lifetime_s,
        exponent,
        residual_rms: (outcome.cost / m as f64).sqrt(),
        covariance,
    })
}

// ---------------------------------------------------------------------------
// Multi-exponential
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub amplitude: f64,
    pub tau_s: f64,
}

/// Nonnegative sum of exponentials, terms sorted by ascending time constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExpFit {
    pub terms: Vec<ExpTerm>,
    pub residual_rms: f64,
}

impl MultiExpFit {
    pub fn evaluate(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| term.amplitude * (-t / term.tau_s).exp())
            .sum()
    }

    pub fn report(&self, n_points: usize) -> FitReport {
        let mut params = BTreeMap::new();
        for (i, term) in self.terms.iter().enumerate() {
            params.insert(format!("amplitude_{}", i + 1), term.amplitude);
            params.insert(format!("tau_{}_s", i + 1), term.tau_s);
        }
        FitReport {
            model: "multi_exponential".into(),
            params,
            errors: BTreeMap::new(),
            residual_rms: self.residual_rms,
            n_points,
            settings: serde_json::json!({
                "k": self.terms.len(),
                "tolerance": FIT_TOLERANCE,
                "max_iterations": FIT_MAX_ITERATIONS,
            }),
        }
    }
}

fn initial_tau_grid(trace: &DecayTrace, k: usize) -> Vec<f64> {
    let span = trace.times[trace.len() - 1] - trace.times[0];
    let step = span / (trace.len() - 1) as f64;
    logspace(step.max(span * 1e-4), 2.0 * span, k)
}

/// Joint damped least squares over log-amplitudes and log-time-constants;
/// NNLS on the initial grid seeds the amplitudes. Logs keep every term
/// positive without constraints, with inactive amplitudes free to vanish.
fn fit_multi_core(trace: &DecayTrace, k: usize) -> Result<MultiExpFit, AnalysisError> {
    let times = &trace.times;
    let values = Array1::from(trace.amplitudes.clone());
    let m = times.len();
    let taus0 = initial_tau_grid(trace, k);
    let mut grid = Array2::zeros((m, k));
    for (j, tau) in taus0.iter().enumerate() {
        for i in 0..m {
            grid[[i, j]] = (-times[i] / tau).exp();
        }
    }
    let amps0 = nnls(&grid, &values)?;
    let peak = values.iter().cloned().fold(0.0f64, f64::max);
    let floor = 1e-10 * peak;
    let mut initial = Array1::zeros(2 * k);
    for j in 0..k {
        initial[j] = amps0[j].max(floor).ln();
        initial[k + j] = taus0[j].ln();
    }
    let eval = |p: &Array1<f64>| {
        let mut residual = values.mapv(|v| -v);
        let mut jacobian = Array2::zeros((m, 2 * k));
        for j in 0..k {
            let (amp, tau) = (p[j].exp(), p[k + j].exp());
            for i in 0..m {
                let term = amp * (-times[i] / tau).exp();
                residual[i] += term;
                jacobian[[i, j]] = term;
                jacobian[[i, k + j]] = term * times[i] / tau;
            }
        }
        (residual, jacobian)
    };
    let outcome = damped_least_squares(initial, eval)?;
    let mut terms: Vec<ExpTerm> = (0..k)
        .map(|j| ExpTerm {
            amplitude: outcome.params[j].exp(),
            tau_s: outcome.params[k + j].exp(),
        })
        .collect();
    terms.sort_by(|a, b| a.tau_s.total_cmp(&b.tau_s).then(a.amplitude.total_cmp(&b.amplitude)));
    Ok(MultiExpFit {
        terms,
        residual_rms: (outcome.cost / m as f64).sqrt(),
    })
}

/// Fit a nonnegative sum of `k` exponentials. The result never fits worse
/// than the best single exponential: if the refinement stalls above that
/// residual, the single-term solution is embedded instead.
pub fn fit_multi_exponential(trace: &DecayTrace, k: usize) -> Result<MultiExpFit, AnalysisError> {
    if k == 0 {
        return Err(AnalysisError::DegenerateTrace("k must be positive".into()));
    }
    check_fittable(trace, 5 * k)?;
    let fit = fit_multi_core(trace, k)?;
    if k == 1 {
        return Ok(fit);
    }
    let single = fit_multi_core(trace, 1)?;
    if single.residual_rms < fit.residual_rms {
        let mut taus = initial_tau_grid(trace, k);
        let nearest = (0..k)
            .min_by(|a, b| {
                let da = (taus[*a].ln() - single.terms[0].tau_s.ln()).abs();
                let db = (taus[*b].ln() - single.terms[0].tau_s.ln()).abs();
                da.total_cmp(&db)
            })
            .unwrap();
        taus[nearest] = single.terms[0].tau_s;
        let mut terms: Vec<ExpTerm> = taus
            .into_iter()
            .enumerate()
            .map(|(j, tau_s)| ExpTerm {
                amplitude: if j == nearest {
                    single.terms[0].amplitude
                } else {
                    0.0
                },
                tau_s,
            })
            .collect();
        terms.sort_by(|a, b| a.tau_s.total_cmp(&b.tau_s));
        return Ok(MultiExpFit {
            terms,
            residual_rms: single.residual_rms,
        });
    }
    Ok(fit)
}

// ---------------------------------------------------------------------------
// Cusp detection and regime segmentation
// ---------------------------------------------------------------------------

/// Two-segment changepoint in (√t, ln s) coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuspFit {
    pub cusp_time_s: f64,
    pub rms_single: f64,
    pub rms_hinge: f64,
}

impl CuspFit {
    /// Fractional RMS reduction of the hinge over the single line.
    pub fn improvement(&self) -> f64 {
        1.0 - self.rms_hinge / self.rms_single
    }
}

fn fit_rms(basis: &Array2<f64>, ys: &Array1<f64>) -> Result<f64, AnalysisError> {
    let solution = basis.least_squares(ys)?.solution;
    let residual = basis.dot(&solution) - ys;
    Ok((residual.dot(&residual) / ys.len() as f64).sqrt())
}

/// Changepoint via continuous piecewise-linear (hinge) least squares over
/// (√t, ln s). Accepted only when the hinge reduces the RMS by more than 20%
/// relative to a single line; returns the breakpoint abscissa squared.
pub fn detect_cusp(trace: &DecayTrace) -> Result<CuspFit, AnalysisError> {
    trace.validate()?;
    let points: Vec<(f64, f64)> = trace
        .times
        .iter()
        .zip(&trace.amplitudes)
        .filter(|(_, a)| **a > 0.0)
        .map(|(t, a)| (t.sqrt(), a.ln()))
        .collect();
    if points.len() < 8 {
        return Err(AnalysisError::DegenerateTrace(format!(
            "{} usable points, need at least 8",
            points.len()
        )));
    }
    let first_positive = points
        .iter()
        .map(|(x, _)| x * x)
        .find(|t| *t > 0.0)
        .unwrap_or(0.0);
    let last = points[points.len() - 1].0.powi(2);
    if first_positive <= 0.0 || last / first_positive < 10.0 {
        return Err(AnalysisError::DegenerateTrace(
            "trace spans less than a decade in time".into(),
        ));
    }
    let n = points.len();
    let xs = Array1::from_iter(points.iter().map(|(x, _)| *x));
    let ys = Array1::from_iter(points.iter().map(|(_, y)| *y));
    let mut line = Array2::ones((n, 2));
    line.column_mut(1).assign(&xs);
    let rms_single = fit_rms(&line, &ys)?;

    let mut best: Option<(f64, f64)> = None;
    for knot_index in 2..n.saturating_sub(3) {
        let knot = xs[knot_index];
        let mut hinge = Array2::ones((n, 3));
        hinge.column_mut(1).assign(&xs);
        for i in 0..n {
            hinge[[i, 2]] = (xs[i] - knot).max(0.0);
        }
        let rms = fit_rms(&hinge, &ys)?;
        if best.is_none_or(|(_, b)| rms < b) {
            best = Some((knot, rms));
        }
    }
    let (knot, rms_hinge) = best.ok_or(AnalysisError::NoCusp)?;
    // A straight line fits to machine noise; don't promote that to a cusp.
    let y_scale = ys.iter().fold(0.0f64, |m, y| m.max(y.abs())).max(1e-300);
    if rms_single <= 1e-12 * y_scale || rms_hinge.is_nan() || rms_hinge >= 0.8 * rms_single {
        return Err(AnalysisError::NoCusp);
    }
    Ok(CuspFit {
        cusp_time_s: knot * knot,
        rms_single,
        rms_hinge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    I,
    II,
    III,
    IV,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationOptions {
    /// Normalized amplitude below which the trace counts as featureless.
    pub epsilon_infinity: f64,
    /// Departure of the local exponent from 1/2 that opens regime III.
    pub alpha_departure: f64,
    /// Sliding-window width (points) for the local exponent estimate.
    pub alpha_window: usize,
    /// Optional moving-average window applied before segmentation.
    pub smoothing_window_s: Option<f64>,
}

impl Default for SegmentationOptions {
    fn default() -> Self {
        Self {
            epsilon_infinity: 0.02,
            alpha_departure: 0.15,
            alpha_window: 9,
            smoothing_window_s: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSegmentation {
    pub cusp_time_s: Option<f64>,
    pub boundary_i_ii_s: Option<f64>,
    pub boundary_ii_iii_s: Option<f64>,
    pub boundary_iii_iv_s: Option<f64>,
    pub labels: Vec<Regime>,
}

/// Local stretching exponent: slope of ln(−ln s) against ln t in a sliding
/// window. NaN where the estimate is undefined (plateau or nonpositive data).
fn local_exponents(times: &[f64], normalized: &[f64], window: usize) -> Vec<f64> {
    let n = times.len();
    let reach = window.max(3) / 2;
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(reach);
            let hi = (j + reach).min(n - 1);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for i in lo..=hi {
                // The estimate needs measurable decay; skip plateau points.
                if times[i] > 0.0 && normalized[i] > 0.0 && normalized[i] < 0.9 {
                    xs.push(times[i].ln());
                    ys.push((-normalized[i].ln()).ln());
                }
            }
            if xs.len() < 3 || xs[xs.len() - 1] - xs[0] < 1e-12 {
                return f64::NAN;
            }
            linear_regression(&xs, &ys).0
        })
        .collect()
}

/// Label the trace into thermalization regimes: the oscillatory approach (I)
/// up to the cusp, the slowly decaying plateau (II), unconstrained decay
/// (III) where the local exponent departs from 1/2, and the featureless tail
/// (IV) below the infinite-temperature threshold. Absent regimes leave their
/// boundaries unset.
pub fn segment_regimes(
    trace: &DecayTrace,
    options: &SegmentationOptions,
) -> Result<RegimeSegmentation, AnalysisError> {
    trace.validate()?;
    let smoothed = match options.smoothing_window_s {
        Some(window) => moving_average(trace, window)?,
        None => trace.clone(),
    };
    let reference = smoothed.amplitudes.iter().cloned().fold(0.0f64, f64::max);
    if reference <= 0.0 {
        return Err(AnalysisError::DegenerateTrace("all amplitudes zero".into()));
    }
    let normalized: Vec<f64> = smoothed.amplitudes.iter().map(|a| a / reference).collect();
    let cusp_time_s = detect_cusp(&smoothed).ok().map(|c| c.cusp_time_s);
    let alphas = local_exponents(&smoothed.times, &normalized, options.alpha_window);

    let mut regime = if cusp_time_s.is_some() {
        Regime::I
    } else {
        Regime::II
    };
    let mut boundary_ii_iii_s = None;
    let mut boundary_iii_iv_s = None;
    let labels: Vec<Regime> = smoothed
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            if regime == Regime::I && cusp_time_s.is_some_and(|cusp| t > cusp) {
                regime = Regime::II;
            }
            if regime == Regime::II
                && alphas[j].is_finite()
                && (alphas[j] - 0.5).abs() > options.alpha_departure
            {
                regime = Regime::III;
                boundary_ii_iii_s = Some(t);
            }
            // The featureless tail opens only after the oscillatory approach,
            // which may itself dip below threshold; this keeps boundaries
            // ordered.
            if matches!(regime, Regime::II | Regime::III)
                && normalized[j] < options.epsilon_infinity
            {
                regime = Regime::IV;
                boundary_iii_iv_s = Some(t);
            }
            regime
        })
        .collect();
    Ok(RegimeSegmentation {
        cusp_time_s,
        boundary_i_ii_s: cusp_time_s,
        boundary_ii_iii_s,
        boundary_iii_iv_s,
        labels,
    })
}

// ---------------------------------------------------------------------------
// Harmonic spectra
// ---------------------------------------------------------------------------

/// Spectral peaks of the regime-I oscillations under per-pulse sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpectrum {
    pub frequencies_hz: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Harmonic index relative to the primary (largest) peak.
    pub harmonic_indices: Vec<u32>,
    pub drive_period_s: f64,
}

impl HarmonicSpectrum {
    /// Frequency of the largest peak.
    pub fn primary_frequency_hz(&self) -> Option<f64> {
        self.harmonic_indices
            .iter()
            .position(|n| *n == 1)
            .map(|i| self.frequencies_hz[i])
    }
}

/// Linearly detrended FFT of a per-pulse sampled signal; local maxima above
/// the noise floor are returned with harmonic indices relative to the
/// primary peak. Frequencies live in (0, 1/(2τ)].
pub fn harmonic_spectrum(values: &[f64], tau_s: f64) -> Result<HarmonicSpectrum, AnalysisError> {
    if values.len() < 64 {
        return Err(AnalysisError::InsufficientData {
            needed: 64,
            got: values.len(),
        });
    }
    if !(tau_s > 0.0 && tau_s.is_finite()) {
        return Err(AnalysisError::DegenerateTrace(format!(
            "drive period {tau_s} s must be positive"
        )));
    }
    let n = values.len();
    let indices: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let (slope, intercept, _) = linear_regression(&indices, values);
    let mut buffer: Vec<Complex<f64>> = values
        .iter()
        .enumerate()
        .map(|(i, v)| Complex::new(v - slope * i as f64 - intercept, 0.0))
        .collect();
    rustfft::FftPlanner::new()
        .plan_fft_forward(n)
        .process(&mut buffer);
    let half = n / 2;
    let magnitudes: Vec<f64> = (1..=half).map(|k| buffer[k].norm()).collect();
    let mut sorted = magnitudes.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let peak_max = sorted[sorted.len() - 1];
    let threshold = (5.0 * median).max(0.02 * peak_max);

    // Local maxima above the floor; the Nyquist bin only has a left neighbor.
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for (idx, &mag) in magnitudes.iter().enumerate() {
        if mag < threshold {
            continue;
        }
        let left = if idx == 0 { 0.0 } else { magnitudes[idx - 1] };
        let right = if idx + 1 < magnitudes.len() {
            magnitudes[idx + 1]
        } else {
            0.0
        };
        if mag > left && mag >= right {
            let k = idx + 1;
            peaks.push((k as f64 / (n as f64 * tau_s), 2.0 * mag / n as f64));
        }
    }
    if peaks.is_empty() {
        return Err(AnalysisError::InsufficientData { needed: 1, got: 0 });
    }
    let primary = peaks
        .iter()
        .cloned()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    // Index peaks against the primary; sub-primary leakage rounds to n = 0
    // and is dropped, duplicates keep the largest amplitude.
    let mut by_index: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for (freq, amp) in peaks {
        let n_rel = (freq / primary.0).round();
        if n_rel < 0.5 {
            continue;
        }
        let key = n_rel as u32;
        let entry = by_index.entry(key).or_insert((freq, amp));
        if amp > entry.1 {
            *entry = (freq, amp);
        }
    }
    let mut frequencies_hz = Vec::new();
    let mut amplitudes = Vec::new();
    let mut harmonic_indices = Vec::new();
    for (idx, (freq, amp)) in by_index {
        harmonic_indices.push(idx);
        frequencies_hz.push(freq);
        amplitudes.push(amp);
    }
    Ok(HarmonicSpectrum {
        frequencies_hz,
        amplitudes,
        harmonic_indices,
        drive_period_s: tau_s,
    })
}

/// Per-harmonic slopes of peak frequency against ϑ/(2πτ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSlopes {
    pub harmonic_indices: Vec<u32>,
    pub slopes: Vec<f64>,
    /// Slopes normalized to the first harmonic; empty unless the first
    /// harmonic and at least one other were fit.
    pub ratios: Vec<f64>,
}

/// Fit each harmonic's peak frequency against ϑ/(2πτ) with a line through
/// the origin, across a sweep of flip angles.
pub fn harmonic_slope_fit(
    sweep: &[(f64, HarmonicSpectrum)],
) -> Result<HarmonicSlopes, AnalysisError> {
    if sweep.len() < 4 {
        return Err(AnalysisError::TooFewPoints {
            needed: 4,
            got: sweep.len(),
        });
    }
    let mut per_harmonic: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for (theta, spectrum) in sweep {
        let x = theta / (std::f64::consts::TAU * spectrum.drive_period_s);
        for (i, &n) in spectrum.harmonic_indices.iter().enumerate() {
            per_harmonic
                .entry(n)
                .or_default()
                .push((x, spectrum.frequencies_hz[i]));
        }
    }
    let mut harmonic_indices = Vec::new();
    let mut slopes = Vec::new();
    for (n, points) in per_harmonic {
        if points.len() < 2 {
            continue;
        }
        let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
        let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
        harmonic_indices.push(n);
        slopes.push(sxy / sxx);
    }
    if harmonic_indices.is_empty() {
        return Err(AnalysisError::TooFewPoints {
            needed: 2,
            got: 0,
        });
    }
    let ratios = match harmonic_indices.iter().position(|n| *n == 1) {
        Some(first) if harmonic_indices.len() > 1 => {
            slopes.iter().map(|s| s / slopes[first]).collect()
        }
        _ => Vec::new(),
    };
    Ok(HarmonicSlopes {
        harmonic_indices,
        slopes,
        ratios,
    })
}

// ---------------------------------------------------------------------------
// Scaling fits and throughput
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingAxes {
    /// ln(1/T₂′) against the dimensionless drive period Jτ.
    SemilogRateVsPeriod,
    /// ln T₂′ against ln ω.
    LoglogLifetimeVsFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub axes: ScalingAxes,
}

/// Linear scaling fit of extracted lifetimes across a sweep. The abscissa is
/// the sweep value (Jτ for semilog, ω for loglog).
pub fn decay_rate_scaling(
    points: &[(f64, StretchedFit)],
    axes: ScalingAxes,
) -> Result<ScalingFit, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::TooFewPoints {
            needed: 3,
            got: points.len(),
        });
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for (value, fit) in points {
        match axes {
            ScalingAxes::SemilogRateVsPeriod => {
                xs.push(*value);
                ys.push(-fit.lifetime_s.ln());
            }
            ScalingAxes::LoglogLifetimeVsFrequency => {
                xs.push(value.ln());
                ys.push(fit.lifetime_s.ln());
            }
        }
    }
    let (slope, intercept, r_squared) = linear_regression(&xs, &ys);
    if !(slope.is_finite() && intercept.is_finite()) {
        return Err(AnalysisError::DegenerateTrace(
            "scaling fit produced non-finite parameters".into(),
        ));
    }
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
        axes,
    })
}

/// Measurement throughput gain ½·ε²·(T₁ ratio)²·(T₂ ratio).
pub fn throughput_gain(epsilon: f64, t1_ratio: f64, t2_ratio: f64) -> f64 {
    0.5 * epsilon * epsilon * t1_ratio * t1_ratio * t2_ratio
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::assemble_trace;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn stretched_trace(
        amplitude: f64,
        lifetime: f64,
        alpha: f64,
        t_max: f64,
        n: usize,
    ) -> DecayTrace {
        let times: Vec<f64> = (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect();
        let amplitudes = times
            .iter()
            .map(|t| amplitude * (-(t / lifetime).powf(alpha)).exp())
            .collect();
        DecayTrace::new(times, amplitudes).unwrap()
    }

    #[test]
    fn noiseless_stretched_fit_recovers_generator_parameters() {
        let trace = stretched_trace(1.0, 353.0, 0.5, 3200.0, 120);
        let fit = fit_stretched_exponential(&trace, None).unwrap();
        assert_relative_eq!(fit.amplitude, 1.0, max_relative = 1e-3);
        assert_relative_eq!(fit.lifetime_s, 353.0, max_relative = 1e-3);
        assert_relative_eq!(fit.exponent, 0.5, max_relative = 1e-3);
        assert!(fit.residual_rms < 1e-8);
    }

    #[test]
    fn plain_exponential_nests_into_the_stretched_model() {
        let trace = stretched_trace(2.0, 5.0, 1.0, 25.0, 60);
        let fit = fit_stretched_exponential(&trace, Some(1.0)).unwrap();
        // Oracle: log-linear regression rate of ln y vs t.
        let ys: Vec<f64> = trace.amplitudes.iter().map(|a| a.ln()).collect();
        let (slope, _, _) = linear_regression(&trace.times, &ys);
        assert_relative_eq!(fit.lifetime_s, -1.0 / slope, max_relative = 1e-3);
        let free = fit_stretched_exponential(&trace, None).unwrap();
        assert_relative_eq!(free.exponent, 1.0, max_relative = 1e-4);
    }

    #[test]
    fn stretched_fit_handles_one_percent_noise_across_seeds() {
        for seed in 0..100u64 {
            let mut rng = StdRng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 0.01).unwrap();
            let clean = stretched_trace(1.0, 353.0, 0.5, 3200.0, 120);
            let noisy = DecayTrace::new(
                clean.times.clone(),
                clean
                    .amplitudes
                    .iter()
                    .map(|a| (a * (1.0 + noise.sample(&mut rng))).max(0.0))
                    .collect(),
            )
            .unwrap();
            let fit = fit_stretched_exponential(&noisy, None).unwrap();
            assert_relative_eq!(fit.amplitude, 1.0, max_relative = 0.05);
            assert_relative_eq!(fit.lifetime_s, 353.0, max_relative = 0.05);
            assert_relative_eq!(fit.exponent, 0.5, max_relative = 0.05);
        }
    }

    #[test]
    fn degenerate_traces_are_rejected() {
        let constant = DecayTrace::new(vec![0.0, 1.0, 2.0], vec![1.0; 3]).unwrap();
        assert!(matches!(
            fit_stretched_exponential(&constant, None),
            Err(AnalysisError::DegenerateTrace(_))
        ));
        let short = stretched_trace(1.0, 1.0, 0.5, 2.0, 5);
        assert!(matches!(
            fit_stretched_exponential(&short, None),
            Err(AnalysisError::DegenerateTrace(_))
        ));
    }

    #[test]
    fn fit_report_serializes_and_carries_parameter_errors() {
        let trace = stretched_trace(1.0, 2.0, 0.5, 18.0, 80);
        let fit = fit_stretched_exponential(&trace, None).unwrap();
        let report = fit.report(trace.len(), None);
        let json = serde_json::to_string(&report).unwrap();
        let back: FitReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        assert_eq!(back.model, "stretched_exponential");
        assert_eq!(back.n_points, 80);
        assert!(back.params["lifetime_s"] > 0.0);
        assert!(back.errors["lifetime_s"] >= 0.0);
    }

    #[test]
    fn fit_is_idempotent_on_its_own_model_evaluation() {
        let trace = stretched_trace(1.3, 0.7, 0.62, 6.0, 90);
        let fit = fit_stretched_exponential(&trace, None).unwrap();
        let resampled = DecayTrace::new(
            trace.times.clone(),
            trace.times.iter().map(|t| fit.evaluate(*t)).collect(),
        )
        .unwrap();
        let refit = fit_stretched_exponential(&resampled, None).unwrap();
        assert_relative_eq!(refit.amplitude, fit.amplitude, max_relative = 1e-6);
        assert_relative_eq!(refit.lifetime_s, fit.lifetime_s, max_relative = 1e-6);
        assert_relative_eq!(refit.exponent, fit.exponent, max_relative = 1e-6);
    }

    #[test]
    fn two_exponential_data_is_recovered_by_a_two_term_fit() {
        let times: Vec<f64> = logspace(1e-3, 5.0, 150);
        let amplitudes: Vec<f64> = times
            .iter()
            .map(|t| 1.0 * (-t / 0.05).exp() + 0.5 * (-t / 0.9).exp())
            .collect();
        let trace = DecayTrace::new(times, amplitudes).unwrap();
        let fit = fit_multi_exponential(&trace, 2).unwrap();
        assert_relative_eq!(fit.terms[0].tau_s, 0.05, max_relative = 0.01);
        assert_relative_eq!(fit.terms[0].amplitude, 1.0, max_relative = 0.01);
        assert_relative_eq!(fit.terms[1].tau_s, 0.9, max_relative = 0.01);
        assert_relative_eq!(fit.terms[1].amplitude, 0.5, max_relative = 0.01);
    }

    #[test]
    fn single_term_fit_matches_a_plain_exponential() {
        let trace = stretched_trace(2.5, 0.8, 1.0, 4.0, 60);
        let fit = fit_multi_exponential(&trace, 1).unwrap();
        assert_eq!(fit.terms.len(), 1);
        assert_relative_eq!(fit.terms[0].tau_s, 0.8, max_relative = 1e-3);
        assert_relative_eq!(fit.terms[0].amplitude, 2.5, max_relative = 1e-3);
    }

    #[test]
    fn five_terms_never_fit_worse_than_one_on_stretched_data() {
        let trace = stretched_trace(1.0, 1.0, 0.5, 9.0, 120);
        let five = fit_multi_exponential(&trace, 5).unwrap();
        let one = fit_multi_exponential(&trace, 1).unwrap();
        assert!(five.residual_rms <= one.residual_rms * (1.0 + 1e-12));
        assert!(five
            .terms
            .windows(2)
            .all(|w| w[0].tau_s <= w[1].tau_s));
        assert!(five.terms.iter().all(|t| t.amplitude >= 0.0 && t.tau_s > 0.0));
    }

    #[test]
    fn one_over_e_lifetime_interpolates_the_crossing() {
        let exp = stretched_trace(1.0, 3.0, 1.0, 15.0, 200);
        let step = exp.times[1] - exp.times[0];
        assert_abs_diff_eq!(one_over_e_lifetime(&exp).unwrap(), 3.0, epsilon = step);

        // A stretched trace with exponent 1/2 crosses 1/e exactly at T.
        let stretched = stretched_trace(1.0, 353.0, 0.5, 3200.0, 400);
        let step = stretched.times[1] - stretched.times[0];
        assert_abs_diff_eq!(
            one_over_e_lifetime(&stretched).unwrap(),
            353.0,
            epsilon = step
        );

        let truncated = stretched_trace(1.0, 10.0, 1.0, 2.0, 50);
        assert!(matches!(
            one_over_e_lifetime(&truncated),
            Err(AnalysisError::NoCrossing)
        ));
    }

    #[test]
    fn one_over_e_lifetime_ignores_amplitude_scale() {
        let trace = stretched_trace(1.0, 2.0, 0.7, 12.0, 150);
        let scaled = DecayTrace::new(
            trace.times.clone(),
            trace.amplitudes.iter().map(|a| 223.0 * a).collect(),
        )
        .unwrap();
        assert_relative_eq!(
            one_over_e_lifetime(&trace).unwrap(),
            one_over_e_lifetime(&scaled).unwrap(),
            max_relative = 1e-12
        );
    }

    fn two_slope_trace(break_s: f64, seed: Option<u64>) -> DecayTrace {
        // Steep decay up to the break, then a gentler slope, both linear in
        // (√t, ln s). The signal sits near 1/e at the break.
        let times = logspace(break_s / 40.0, break_s * 20.0, 90);
        let (a, b) = (1.0 / break_s.sqrt(), 0.25 / break_s.sqrt());
        let knot = break_s.sqrt();
        let mut rng = seed.map(StdRng::seed_from_u64);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let amplitudes = times
            .iter()
            .map(|t| {
                let x = t.sqrt();
                let ln_s = if x <= knot {
                    -a * x
                } else {
                    -a * knot - b * (x - knot)
                };
                let jitter = rng
                    .as_mut()
                    .map(|r| 1.0 + noise.sample(r))
                    .unwrap_or(1.0);
                (ln_s.exp() * jitter).max(1e-12)
            })
            .collect();
        DecayTrace::new(times, amplitudes).unwrap()
    }

    #[test]
    fn cusp_is_recovered_from_two_slope_data() {
        let trace = two_slope_trace(9.2e-3, None);
        let cusp = detect_cusp(&trace).unwrap();
        assert_relative_eq!(cusp.cusp_time_s, 9.2e-3, max_relative = 0.2);
        assert!(cusp.improvement() > 0.2);
    }

    #[test]
    fn cusp_recovery_survives_one_percent_noise() {
        for seed in 0..20u64 {
            let trace = two_slope_trace(9.2e-3, Some(seed));
            let cusp = detect_cusp(&trace).unwrap();
            assert_relative_eq!(cusp.cusp_time_s, 9.2e-3, max_relative = 0.2);
        }
    }

    #[test]
    fn smooth_stretched_decay_has_no_cusp() {
        let times = logspace(1e-3, 1.0, 80);
        let amplitudes = times.iter().map(|t| (-(t / 0.05).sqrt()).exp()).collect();
        let trace = DecayTrace::new(times, amplitudes).unwrap();
        assert!(matches!(detect_cusp(&trace), Err(AnalysisError::NoCusp)));
    }

    #[test]
    fn cusp_time_scales_with_the_time_axis() {
        let trace = two_slope_trace(9.2e-3, None);
        let lambda = 7.3;
        let scaled = DecayTrace::new(
            trace.times.iter().map(|t| lambda * t).collect(),
            trace.amplitudes.clone(),
        )
        .unwrap();
        let t0 = detect_cusp(&trace).unwrap().cusp_time_s;
        let t1 = detect_cusp(&scaled).unwrap().cusp_time_s;
        assert_relative_eq!(t1, lambda * t0, max_relative = 1e-9);
    }

    #[test]
    fn segmentation_boundaries_are_ordered_and_match_the_cusp() {
        let trace = two_slope_trace(9.2e-3, None);
        let seg = segment_regimes(&trace, &SegmentationOptions::default()).unwrap();
        assert_eq!(seg.cusp_time_s, seg.boundary_i_ii_s);
        assert_eq!(
            seg.cusp_time_s.unwrap(),
            detect_cusp(&trace).unwrap().cusp_time_s
        );
        let bounds: Vec<f64> = [
            seg.boundary_i_ii_s,
            seg.boundary_ii_iii_s,
            seg.boundary_iii_iv_s,
        ]
        .into_iter()
        .flatten()
        .collect();
        assert!(bounds.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(seg.labels.len(), trace.len());
        assert_eq!(seg.labels[0], Regime::I);
    }

    #[test]
    fn deep_decay_crosses_the_infinite_temperature_threshold() {
        // s(t) = exp(-sqrt(t/0.05)) falls below 0.02 at t = 0.05 ln(50)^2.
        let tau = 1e-3;
        let amplitudes: Vec<f64> = (0..4000)
            .map(|k| (-(k as f64 * tau / 0.05).sqrt()).exp())
            .collect();
        let trace = assemble_trace(&amplitudes, tau).unwrap();
        let seg = segment_regimes(&trace, &SegmentationOptions::default()).unwrap();
        assert_eq!(*seg.labels.last().unwrap(), Regime::IV);
        let expected = 0.05 * 50.0f64.ln().powi(2);
        assert_abs_diff_eq!(seg.boundary_iii_iv_s.unwrap(), expected, epsilon = 0.05);
    }

    #[test]
    fn shallow_decay_never_reaches_regime_iv() {
        // Truncated well above the 0.02 floor.
        let tau = 1e-3;
        let amplitudes: Vec<f64> = (0..800)
            .map(|k| (-(k as f64 * tau / 0.5).sqrt()).exp())
            .collect();
        let trace = assemble_trace(&amplitudes, tau).unwrap();
        let seg = segment_regimes(&trace, &SegmentationOptions::default()).unwrap();
        assert!(seg.boundary_iii_iv_s.is_none());
        assert!(seg.labels.iter().all(|l| *l != Regime::IV));
    }

    #[test]
    fn injected_sinusoid_lands_on_its_exact_bin() {
        let n = 256;
        let tau = 1e-4;
        let f = 10.0 / (n as f64 * tau);
        let values: Vec<f64> = (0..n)
            .map(|i| 0.3 + 0.1 * (std::f64::consts::TAU * f * i as f64 * tau).cos())
            .collect();
        let spectrum = harmonic_spectrum(&values, tau).unwrap();
        assert_eq!(spectrum.harmonic_indices, vec![1]);
        assert_relative_eq!(spectrum.frequencies_hz[0], f, max_relative = 1e-12);
        // Detrending perturbs the bin amplitude at the 1e-4 level: the index
        // regression against a cosine has a small but nonzero slope.
        assert_relative_eq!(spectrum.amplitudes[0], 0.1, max_relative = 1e-3);
    }

    #[test]
    fn spectrum_primary_ignores_scale_and_offset() {
        let n = 128;
        let tau = 2e-4;
        let f = 9.0 / (n as f64 * tau);
        let base: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * f * i as f64 * tau).cos())
            .collect();
        let shifted: Vec<f64> = base.iter().map(|v| 42.0 + 17.0 * v).collect();
        let a = harmonic_spectrum(&base, tau).unwrap();
        let b = harmonic_spectrum(&shifted, tau).unwrap();
        assert_eq!(
            a.primary_frequency_hz().unwrap(),
            b.primary_frequency_hz().unwrap()
        );
    }

    #[test]
    fn short_records_are_rejected() {
        assert!(matches!(
            harmonic_spectrum(&[0.0; 32], 1e-4),
            Err(AnalysisError::InsufficientData { needed: 64, got: 32 })
        ));
    }

    #[test]
    fn synthetic_harmonic_peaks_give_exact_slope_ratios() {
        let tau = 1e-4;
        let n = 512;
        let angles = [0.3, 0.45, 0.6, 0.75];
        let sweep: Vec<(f64, HarmonicSpectrum)> = angles
            .iter()
            .map(|theta| {
                let f1 = theta / (std::f64::consts::TAU * tau);
                // Round each harmonic onto an exact bin, as a clean FFT would.
                let on_bin = |f: f64| (f * n as f64 * tau).round() / (n as f64 * tau);
                let spectrum = HarmonicSpectrum {
                    frequencies_hz: vec![on_bin(f1), on_bin(2.0 * f1), on_bin(3.0 * f1)],
                    amplitudes: vec![1.0, 0.4, 0.2],
                    harmonic_indices: vec![1, 2, 3],
                    drive_period_s: tau,
                };
                (*theta, spectrum)
            })
            .collect();
        let slopes = harmonic_slope_fit(&sweep).unwrap();
        assert_eq!(slopes.harmonic_indices, vec![1, 2, 3]);
        assert_relative_eq!(slopes.ratios[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(slopes.ratios[1], 2.0, max_relative = 5e-3);
        assert_relative_eq!(slopes.ratios[2], 3.0, max_relative = 5e-3);
    }

    #[test]
    fn single_harmonic_sweeps_fit_one_slope_without_ratios() {
        let tau = 1e-4;
        let sweep: Vec<(f64, HarmonicSpectrum)> = [0.3, 0.4, 0.5, 0.6]
            .iter()
            .map(|theta| {
                let spectrum = HarmonicSpectrum {
                    frequencies_hz: vec![theta / (std::f64::consts::TAU * tau)],
                    amplitudes: vec![1.0],
                    harmonic_indices: vec![1],
                    drive_period_s: tau,
                };
                (*theta, spectrum)
            })
            .collect();
        let slopes = harmonic_slope_fit(&sweep).unwrap();
        assert_eq!(slopes.slopes.len(), 1);
        assert_relative_eq!(slopes.slopes[0], 1.0, max_relative = 1e-12);
        assert!(slopes.ratios.is_empty());
        assert!(matches!(
            harmonic_slope_fit(&sweep[..3]),
            Err(AnalysisError::TooFewPoints { needed: 4, got: 3 })
        ));
    }

    fn fit_with_lifetime(lifetime: f64) -> StretchedFit {
        StretchedFit {
            amplitude: 1.0,
            lifetime_s: lifetime,
            exponent: 0.5,
            residual_rms: 0.0,
            covariance: [[0.0; 3]; 3],
        }
    }

    #[test]
    fn semilog_scaling_recovers_a_synthetic_rate_law() {
        let points: Vec<(f64, StretchedFit)> = [0.02f64, 0.05, 0.1, 0.2, 0.4]
            .iter()
            .map(|zeta| {
                let rate = 0.3 * (6.5 * *zeta).exp();
                (*zeta, fit_with_lifetime(1.0 / rate))
            })
            .collect();
        let fit = decay_rate_scaling(&points, ScalingAxes::SemilogRateVsPeriod).unwrap();
        assert_relative_eq!(fit.slope, 6.5, max_relative = 1e-6);
        assert_relative_eq!(fit.intercept, 0.3f64.ln(), max_relative = 1e-6);
        assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn loglog_scaling_recovers_a_power_law() {
        let points: Vec<(f64, StretchedFit)> = [1e3, 3e3, 1e4, 3e4]
            .iter()
            .map(|omega| (*omega, fit_with_lifetime(2e-9 * omega * omega)))
            .collect();
        let fit = decay_rate_scaling(&points, ScalingAxes::LoglogLifetimeVsFrequency).unwrap();
        assert_relative_eq!(fit.slope, 2.0, max_relative = 1e-6);
        assert!(matches!(
            decay_rate_scaling(&points[..2], ScalingAxes::LoglogLifetimeVsFrequency),
            Err(AnalysisError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn scaling_slope_ignores_a_common_lifetime_factor() {
        let base: Vec<(f64, StretchedFit)> = [0.05f64, 0.1, 0.2, 0.3]
            .iter()
            .map(|z| (*z, fit_with_lifetime((5.0 * *z).exp())))
            .collect();
        let scaled: Vec<(f64, StretchedFit)> = base
            .iter()
            .map(|(z, f)| (*z, fit_with_lifetime(17.0 * f.lifetime_s)))
            .collect();
        let a = decay_rate_scaling(&base, ScalingAxes::SemilogRateVsPeriod).unwrap();
        let b = decay_rate_scaling(&scaled, ScalingAxes::SemilogRateVsPeriod).unwrap();
        assert_relative_eq!(a.slope, b.slope, max_relative = 1e-9);
        assert_abs_diff_eq!(b.intercept, a.intercept - 17.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn throughput_gain_matches_its_closed_form() {
        assert_eq!(throughput_gain(1.0, 1.0, 1.0), 0.5);
        let gain = throughput_gain(223.0, 21.2, 90.9 / 1.5e-3);
        assert!(gain >= 1e10, "paper-scale inputs give {gain:.3e}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn throughput_gain_is_homogeneous_and_monotone(
            eps in 0.1..300.0f64,
            t1 in 0.1..100.0f64,
            t2 in 0.1..1e5f64,
            c in 1.0..10.0f64,
        ) {
            let g = throughput_gain(eps, t1, t2);
            prop_assert!((throughput_gain(eps, t1, c * t2) - c * g).abs() <= 1e-9 * c * g);
            prop_assert!((throughput_gain(c * eps, t1, t2) - c * c * g).abs() <= 1e-6 * c * c * g);
            prop_assert!((throughput_gain(eps, c * t1, t2) - c * c * g).abs() <= 1e-6 * c * c * g);
            prop_assert!(throughput_gain(eps + 0.1, t1, t2) > g);
        }

        #[test]
        fn stretched_fit_scales_linearly_with_amplitude(scale in 0.1..50.0f64) {
            let trace = stretched_trace(1.0, 2.0, 0.5, 18.0, 60);
            let scaled = DecayTrace::new(
                trace.times.clone(),
                trace.amplitudes.iter().map(|a| scale * a).collect(),
            )
            .unwrap();
            let base = fit_stretched_exponential(&trace, None).unwrap();
            let fit = fit_stretched_exponential(&scaled, None).unwrap();
            prop_assert!((fit.amplitude - scale * base.amplitude).abs() <= 1e-6 * scale);
            prop_assert!((fit.lifetime_s - base.lifetime_s).abs() <= 1e-6 * base.lifetime_s);
            prop_assert!((fit.exponent - base.exponent).abs() <= 1e-6);
        }
    }
}
