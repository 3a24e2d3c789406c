//! Alternating mixture-model / factorization disaggregation.
//!
//! Each outer iteration runs EM on the current shiftable residual, extracts
//! the discrete shiftable levels from the total, refits the fixed-load
//! factorization to what is left, and recomputes the shiftable residual as
//! `X − WH`. The loop stops when the combined estimate `X̃ˢ + WH` changes by
//! less than `rel_tol` in relative Frobenius norm.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::gmm::{self, GmmState};
use crate::nmf::{self, NmfFactors};
use crate::stats;
use crate::types::{frobenius, LoadMatrix, LoadRole};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Nonzero mixture components; the pinned zero component is extra.
    pub n_gaussians: usize,
    pub n_bases: usize,
    pub seed: u64,
    pub variance_floor: f64,
    /// E+M cycles per outer iteration.
    pub em_inner_iters: usize,
    /// Factorization sweeps (coefficients then basis) per outer iteration.
    pub nmf_inner_iters: usize,
    pub drift_bound: f64,
    /// Smallest mixture mean treated as an appliance level. `None` uses the
    /// median entry of the total load.
    pub level_floor: Option<f64>,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            max_iters: 25,
            rel_tol: 1e-4,
            n_gaussians: 6,
            n_bases: 4,
            seed: 0,
            variance_floor: gmm::DEFAULT_VARIANCE_FLOOR,
            em_inner_iters: 1,
            nmf_inner_iters: 1,
            drift_bound: nmf::DEFAULT_DRIFT_BOUND,
            level_floor: None,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.rel_tol > 0.0) {
            return bad(format!("rel_tol must be positive, got {}", self.rel_tol));
        }
        if self.n_gaussians == 0 || self.n_bases == 0 {
            return bad("need at least one Gaussian and one basis".into());
        }
        if !(self.variance_floor > 0.0) {
            return bad(format!("variance_floor must be positive, got {}", self.variance_floor));
        }
        if self.em_inner_iters == 0 || self.nmf_inner_iters == 0 {
            return bad("inner iteration counts must be at least 1".into());
        }
        if !(self.drift_bound > 0.0) {
            return bad("drift_bound must be positive".into());
        }
        if let Some(l) = self.level_floor {
            if !(l >= 0.0) || !l.is_finite() {
                return bad(format!("level_floor must be finite and ≥ 0, got {l}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Factorization objective against the extracted fixed load.
    pub phi: f64,
    pub loglik: f64,
    pub drift: f64,
    /// Relative change of `X̃`; infinite on the first iteration.
    pub rel_change: f64,
    pub renormalized: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisaggResult {
    pub shiftable: LoadMatrix,
    pub fixed: LoadMatrix,
    pub total_estimate: LoadMatrix,
    pub gmm: GmmState,
    pub nmf: NmfFactors,
    pub iterations_run: usize,
    pub converged: bool,
    /// `‖X − X̃‖_F`.
    pub residual_norm: f64,
    pub diagnostics: Vec<IterationDiagnostics>,
}

impl DisaggResult {
    /// `|ΣX̃ − ΣX| / ΣX`.
    pub fn mass_error(&self, x: &LoadMatrix) -> f64 {
        let total = x.total();
        if total > 0.0 {
            (self.total_estimate.total() - total).abs() / total
        } else {
            0.0
        }
    }
}

/// Coarse starting split: on each day, load above the 75th percentile minus
/// the day's median is called shiftable.
pub fn initial_split(x: &LoadMatrix) -> Result<(LoadMatrix, LoadMatrix)> {
    let mut shift = Array2::zeros(x.values().dim());
    for (n, day) in x.values().axis_iter(Axis(1)).enumerate() {
        let mut v = day.to_vec();
        v.sort_by(f64::total_cmp);
        let med = stats::quantile_sorted(&v, 0.5);
        let q75 = stats::quantile_sorted(&v, 0.75);
        for (t, &xv) in day.iter().enumerate() {
            if xv > q75 {
                shift[[t, n]] = (xv - med).max(0.0);
            }
        }
    }
    let fixed = x.values() - &shift;
    Ok((
        LoadMatrix::new(shift, LoadRole::ShiftableEstimate)?,
        LoadMatrix::clamped(fixed, LoadRole::FixedEstimate)?.0,
    ))
}

pub fn run_hybrid(x: &LoadMatrix, cfg: &HybridConfig) -> Result<DisaggResult> {
    cfg.validate()?;
    if x.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("total load contains non-finite values".into()));
    }
    if x.n_days() == 0 || x.n_instants() == 0 {
        return Err(Error::Data("total load is empty".into()));
    }
    let (xs0, xf0) = initial_split(x)?;
    let floor = cfg
        .level_floor
        .unwrap_or_else(|| stats::median(&x.values().iter().copied().collect::<Vec<_>>()));
    let mut state = GmmState::initialize_above(&xs0, cfg.n_gaussians, cfg.variance_floor, Some(floor))?;
    let mut factors = nmf::init_factors(&xf0, cfg.n_bases, cfg.seed)?;

    let mut em_input = xs0;
    let mut prev: Option<Array2<f64>> = None;
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut latest = None;

    for iteration in 1..=cfg.max_iters {
        let (next, trace) = gmm::run_em(&state, &em_input, cfg.em_inner_iters)?;
        state = next;
        let (shift, fixed_extract) = state.extract_shiftable(x)?;

        let mut renormalized = false;
        for _ in 0..cfg.nmf_inner_iters {
            let (f, r) = factors.step(&fixed_extract, cfg.drift_bound)?;
            factors = f;
            renormalized |= r;
        }
        let wh = factors.reconstruction();
        em_input = LoadMatrix::clamped(x.values() - &wh, LoadRole::ShiftableEstimate)?.0;

        let estimate = shift.values() + &wh;
        let rel_change = match &prev {
            Some(p) => {
                let base = frobenius(p);
                let diff = frobenius(&(&estimate - p));
                if base > 0.0 {
                    diff / base
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        };
        let row = IterationDiagnostics {
            iteration,
            phi: factors.reconstruction_error(&fixed_extract)?,
            loglik: trace.last().copied().unwrap_or(f64::NAN),
            drift: factors.orthonormality_drift(),
            rel_change,
            renormalized,
        };
        log::debug!(
            "iteration {iteration}: phi {:.6e} loglik {:.6e} drift {:.2e} change {:.3e}",
            row.phi,
            row.loglik,
            row.drift,
            row.rel_change
        );
        diagnostics.push(row);
        prev = Some(estimate);
        latest = Some((shift, wh));
        if rel_change < cfg.rel_tol {
            converged = true;
            break;
        }
    }

    let (shift, wh) = latest.expect("at least one iteration runs");
    let total_estimate = shift.values() + &wh;
    let residual_norm = frobenius(&(x.values() - &total_estimate));
    let iterations_run = diagnostics.len();
    if !converged {
        log::warn!("disaggregation stopped at max_iters = {} without converging", cfg.max_iters);
    }
    Ok(DisaggResult {
        fixed: LoadMatrix::new(wh, LoadRole::FixedEstimate)?,
        total_estimate: LoadMatrix::new(total_estimate, LoadRole::Total)?,
        shiftable: shift,
        gmm: state,
        nmf: factors,
        iterations_run,
        converged,
        residual_norm,
        diagnostics,
    })
}

/// `X − X̃`, left unclamped.
pub fn residual_noise(x: &LoadMatrix, r: &DisaggResult) -> Result<Array2<f64>> {
    dim_check("residual instants", x.n_instants(), r.total_estimate.n_instants())?;
    dim_check("residual days", x.n_days(), r.total_estimate.n_days())?;
    Ok(x.values() - r.total_estimate.values())
}
