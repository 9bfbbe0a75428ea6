//! Checks of runs against the linear convergence theory: approximation
//! quality of the Hessian estimates, the admissible condition on that
//! quality, the stepsize window, the contraction factor, and per-epoch rate
//! fitting on traces.

use nalgebra::Cholesky;

use crate::simulator::{EpochIndex, Trace};
use crate::worker::{HessianApprox, WorkerState};
use crate::{DenseMatrix, Error, Result, DEFAULT_DENSE_CAP};

/// Extreme generalized eigenvalues of `(H, B)`: `ε_d I ⪯ B^{-1/2} H B^{-1/2} ⪯ ε_u I`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ApproxQuality {
    pub eps_d: f64,
    pub eps_u: f64,
    pub eps: f64,
}

impl ApproxQuality {
    fn new(eps_d: f64, eps_u: f64) -> Self {
        Self { eps_d, eps_u, eps: eps_u / eps_d }
    }
}

fn check_square(m: &DenseMatrix) -> Result<usize> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(Error::DimensionMismatch { expected: d, got: m.ncols() });
    }
    if d > DEFAULT_DENSE_CAP {
        return Err(Error::DimensionTooLarge { dim: d, cap: DEFAULT_DENSE_CAP });
    }
    Ok(d)
}

/// Smallest and largest eigenvalue of `L⁻¹ H L⁻ᵀ` where `B = L Lᵀ`.
pub fn estimate_assumption2(b: &DenseMatrix, h: &DenseMatrix) -> Result<ApproxQuality> {
    let d = check_square(b)?;
    if h.shape() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, got: h.nrows() });
    }
    let chol = Cholesky::new(b.clone()).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let left = l.solve_lower_triangular(h).ok_or(Error::NotPositiveDefinite)?;
    let mut m = l.solve_lower_triangular(&left.transpose()).ok_or(Error::NotPositiveDefinite)?;
    m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigenvalues();
    Ok(ApproxQuality::new(eig.min(), eig.max()))
}

/// Threshold of the admissibility condition on `ε` and whether it holds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Condition13 {
    pub threshold: f64,
    pub holds: bool,
}

/// `ε < ½ [1 + 1/κ + √((1 + 1/κ)² + 4/κ)]`.
pub fn check_condition13(eps: f64, kappa: f64) -> Condition13 {
    let threshold = condition13_threshold(kappa);
    Condition13 { threshold, holds: eps < threshold }
}

pub fn condition13_threshold(kappa: f64) -> f64 {
    let a = 1.0 + 1.0 / kappa;
    0.5 * (a + (a * a + 4.0 / kappa).sqrt())
}

/// Open interval of admissible constant stepsizes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepsizeWindow {
    pub lo: f64,
    pub hi: f64,
}

impl StepsizeWindow {
    pub fn is_empty(&self) -> bool {
        !(self.lo < self.hi)
    }

    pub fn contains(&self, eta: f64) -> bool {
        self.lo < eta && eta < self.hi
    }

    pub fn midpoint(&self) -> Option<f64> {
        (!self.is_empty()).then_some(0.5 * (self.lo + self.hi))
    }
}

/// `((1/ε_d)(1 − 1/(εκ)), 2/(ε_d + ε_u))` with `ε = ε_u/ε_d`.
pub fn stepsize_window(eps_d: f64, eps_u: f64, kappa: f64) -> StepsizeWindow {
    let eps = eps_u / eps_d;
    StepsizeWindow { lo: (1.0 - 1.0 / (eps * kappa)) / eps_d, hi: 2.0 / (eps_d + eps_u) }
}

/// Eigenvalue range of the worker estimates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectrumBounds {
    pub lambda_d: f64,
    pub lambda_u: f64,
}

/// Which denominator the `μ` term of the contraction factor uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateVariant {
    /// `max{|1 − ηL/λ_d|, |1 − ημ/λ_u|}`.
    #[default]
    Derivation,
    /// `max{|1 − ηL/λ_d|, |1 − ημ/λ_d|}`.
    Displayed,
}

/// `ρ = √n · κ̃/(κ̃ + n − 1) · max{|1 − ηL/λ_d|, |1 − ημ/λ|}` with
/// `κ̃ = λ_u/λ_d`.
pub fn theoretical_rate(n: usize, bounds: SpectrumBounds, eta: f64, mu: f64, l: f64, variant: RateVariant) -> f64 {
    let SpectrumBounds { lambda_d, lambda_u } = bounds;
    let kt = lambda_u / lambda_d;
    let n = n as f64;
    let prefactor = n.sqrt() * kt / (kt + n - 1.0);
    let mu_scale = match variant {
        RateVariant::Derivation => lambda_u,
        RateVariant::Displayed => lambda_d,
    };
    prefactor * (1.0 - eta * l / lambda_d).abs().max((1.0 - eta * mu / mu_scale).abs())
}

/// Spectrum bounds kept as natural logarithms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LogSpectrumBounds {
    pub ln_lambda_d: f64,
    pub ln_lambda_u: f64,
}

impl LogSpectrumBounds {
    /// Plain values, if both are finite and nonzero in f64.
    pub fn to_bounds(&self) -> Option<SpectrumBounds> {
        let (d, u) = (self.ln_lambda_d.exp(), self.ln_lambda_u.exp());
        (d > 0.0 && d.is_finite() && u.is_finite()).then_some(SpectrumBounds { lambda_d: d, lambda_u: u })
    }
}

/// The a-priori bounds `λ_u = (m+d)L` and `λ_d = μ^{m+d} / ((m+d)L)^{m+d−1}`.
pub fn literature_lambda_bounds(m: usize, d: usize, mu: f64, l: f64) -> Result<LogSpectrumBounds> {
    if m == 0 || d == 0 {
        return Err(Error::Config("memory and dimension must be at least 1".into()));
    }
    if !(mu > 0.0 && l >= mu) {
        return Err(Error::Config(format!("need 0 < mu <= L, got {mu}, {l}")));
    }
    let k = (m + d) as f64;
    let ln_u = k.ln() + l.ln();
    Ok(LogSpectrumBounds { ln_lambda_d: k * mu.ln() - (k - 1.0) * ln_u, ln_lambda_u: ln_u })
}

/// Accumulates approximation quality and estimate spectra over snapshots of
/// the worker states taken along a run.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct TrajectoryQuality {
    pub snapshots: usize,
    pub quality: Option<ApproxQuality>,
    pub spectrum: Option<SpectrumBounds>,
}

impl TrajectoryQuality {
    /// Compares each estimate with the local Hessian at the worker's current
    /// point.
    pub fn observe<E: HessianApprox>(&mut self, workers: &[WorkerState<E>]) -> Result<()> {
        for w in workers {
            let b = w.estimate().to_dense();
            let h = w.shard().hessian(w.z())?;
            let q = estimate_assumption2(&b, &h)?;
            let eig = b.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            self.quality = Some(match self.quality {
                None => q,
                Some(p) => ApproxQuality::new(p.eps_d.min(q.eps_d), p.eps_u.max(q.eps_u)),
            });
            self.spectrum = Some(match self.spectrum {
                None => SpectrumBounds { lambda_d: lo, lambda_u: hi },
                Some(s) => SpectrumBounds { lambda_d: s.lambda_d.min(lo), lambda_u: s.lambda_u.max(hi) },
            });
        }
        self.snapshots += 1;
        Ok(())
    }
}

/// Observed per-epoch contraction against the theoretical factor.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RateReport {
    pub rho_theory: Option<f64>,
    pub rho_fitted: f64,
    pub epochs_used: usize,
    pub window: Option<StepsizeWindow>,
    /// `max ‖x^{t+1} − x*‖ / ‖x⁰ − x*‖` over `t` in each epoch.
    pub epoch_ratios: Vec<f64>,
    /// Set when the fitted rate exceeds 1, or exceeds the theoretical rate.
    pub violation: bool,
}

/// Slack allowed on each epoch ratio before a theoretical bound counts as
/// violated.
pub const RATE_SLACK: f64 = 1e-9;

/// Fits `ρ` from the distance column of a trace. For epoch `m`, counted
/// from 1, the bound covers `x^{t+1}` for `t ∈ [E_m, E_{m+1})`, and
/// `ρ_fitted = max_m ratio_m^{1/m}`.
pub fn fit_epoch_rate(
    trace: &Trace,
    epochs: &EpochIndex,
    rho_theory: Option<f64>,
    window: Option<StepsizeWindow>,
) -> Result<RateReport> {
    let dist: Vec<f64> = trace
        .rows
        .iter()
        .map(|r| r.dist_to_opt)
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config("trace has no distance to the optimum".into()))?;
    for (k, r) in trace.rows.iter().enumerate() {
        if r.t != k {
            return Err(Error::IncompatibleTraces("trace rows must be consecutive from t = 0".into()));
        }
    }
    let last_t = dist.len() - 1;
    let complete: Vec<(usize, usize)> = epochs
        .starts
        .windows(2)
        .map(|w| (w[0], w[1]))
        .filter(|&(_, end)| end <= last_t)
        .collect();
    if complete.len() < 3 {
        return Err(Error::InsufficientEpochs { needed: 3, got: complete.len() });
    }

    let d0 = dist[0];
    let mut ratios = Vec::with_capacity(complete.len());
    let mut rho_fitted: f64 = 0.0;
    let mut violation = false;
    for (k, &(start, end)) in complete.iter().enumerate() {
        let m = (k + 1) as f64;
        let worst = dist[start + 1..=end].iter().copied().fold(0.0, f64::max);
        let ratio = if d0 > 0.0 {
            worst / d0
        } else if worst > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        rho_fitted = rho_fitted.max(ratio.powf(1.0 / m));
        if let Some(rho) = rho_theory {
            violation |= ratio > rho.powf(m) + RATE_SLACK;
        }
        ratios.push(ratio);
    }
    violation |= rho_fitted > 1.0;

    Ok(RateReport {
        rho_theory,
        rho_fitted,
        epochs_used: complete.len(),
        window,
        epoch_ratios: ratios,
        violation,
    })
}
