//! Consumer model and the ε-insensitive parameter fit.
//!
//! Fixed load per period is linear in temperature, `p + q·θ`. Shiftable load
//! follows the marginal-utility response `a/c + b + d·θ` of a shifted
//! log-Cobb-Douglas utility. Parameters are fitted by a single convex QP over
//! `[p; q; a; b; d; ξᶠ; ξˢ]`, where the two slack vectors absorb the
//! worst-case day of each period beyond the tolerance band.
//!
//! Only `a/c + b` is identifiable from data taken at one tariff, so the
//! regularizer decides the split between `a` and `b`. With equal weights the
//! split satisfies `b = a·c`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::qp::{self, QpProblem, QpStatus};
use crate::stats;
use crate::types::{CostVector, LoadMatrix, TemperatureMatrix, TimeGrid};

/// Default regularization weight for every parameter block.
pub const DEFAULT_GAMMA: f64 = 1e-4;

/// Default tolerance band as a fraction of the mean period load.
pub const DEFAULT_EPS_FRACTION: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl UtilityParams {
    pub fn new(a: Vec<f64>, b: Vec<f64>, d: Vec<f64>, p: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        let params = Self { a, b, d, p, q };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(n_periods: usize) -> Self {
        let z = vec![0.0; n_periods];
        Self {
            a: z.clone(),
            b: z.clone(),
            d: z.clone(),
            p: z.clone(),
            q: z,
        }
    }

    pub fn n_periods(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.a.len();
        for (name, v) in self.named() {
            dim_check(&format!("parameter vector {name}"), k, v.len())?;
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("parameter vector {name} is not finite")));
            }
        }
        // The QP enforces a ≥ 0 only up to solver tolerance.
        if let Some(bad) = self.a.iter().find(|&&x| x < -1e-9) {
            return Err(Error::Domain(format!("elasticity must be non-negative, got {bad}")));
        }
        Ok(())
    }

    /// `(name, vector)` pairs in report order.
    pub fn named(&self) -> [(&'static str, &[f64]); 5] {
        [
            ("a", &self.a),
            ("b", &self.b),
            ("d", &self.d),
            ("p", &self.p),
            ("q", &self.q),
        ]
    }
}

/// Per-vector medians over periods.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMedians {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub p: f64,
    pub q: f64,
}

impl ParamMedians {
    pub fn of(params: &UtilityParams) -> Self {
        Self {
            a: stats::median(&params.a),
            b: stats::median(&params.b),
            d: stats::median(&params.d),
            p: stats::median(&params.p),
            q: stats::median(&params.q),
        }
    }
}

/// Which parameter vectors are constrained to be non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamBounds {
    pub a: bool,
    pub b: bool,
    pub d: bool,
    pub p: bool,
    pub q: bool,
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self {
            a: true,
            b: false,
            d: false,
            p: false,
            q: false,
        }
    }
}

impl ParamBounds {
    pub fn none() -> Self {
        Self {
            a: false,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Fixed-load tolerance band per period; `None` means 5% of the mean
    /// fixed period load.
    pub eps_f: Option<f64>,
    /// Shiftable-load tolerance band; `None` means 5% of the mean shiftable
    /// period load.
    pub eps_s: Option<f64>,
    pub w_f: f64,
    pub w_s: f64,
    pub gamma_p: f64,
    pub gamma_q: f64,
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub gamma_d: f64,
    pub bounds: ParamBounds,
    pub pin_q_to_zero: bool,
    pub tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            eps_f: None,
            eps_s: None,
            w_f: 1.0,
            w_s: 1.0,
            gamma_p: DEFAULT_GAMMA,
            gamma_q: DEFAULT_GAMMA,
            gamma_a: DEFAULT_GAMMA,
            gamma_b: DEFAULT_GAMMA,
            gamma_d: DEFAULT_GAMMA,
            bounds: ParamBounds::default(),
            pin_q_to_zero: false,
            tol: qp::DEFAULT_TOL,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps_f", self.eps_f), ("eps_s", self.eps_s)] {
            if let Some(e) = v {
                if !(e >= 0.0) || !e.is_finite() {
                    return Err(Error::Config(format!("{name} must be a finite value ≥ 0, got {e}")));
                }
            }
        }
        let positives = [
            ("w_f", self.w_f),
            ("w_s", self.w_s),
            ("gamma_p", self.gamma_p),
            ("gamma_q", self.gamma_q),
            ("gamma_a", self.gamma_a),
            ("gamma_b", self.gamma_b),
            ("gamma_d", self.gamma_d),
            ("tol", self.tol),
        ];
        for (name, v) in positives {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Tolerance bands resolved against the data (periods × days sums).
    pub fn resolved_eps(&self, xs_agg: &Array2<f64>, xf_agg: &Array2<f64>) -> (f64, f64) {
        let default = |m: &Array2<f64>| {
            if m.is_empty() {
                0.0
            } else {
                DEFAULT_EPS_FRACTION * m.mean().unwrap_or(0.0)
            }
        };
        (
            self.eps_f.unwrap_or_else(|| default(xf_agg)),
            self.eps_s.unwrap_or_else(|| default(xs_agg)),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: UtilityParams,
    pub xi_f: Vec<f64>,
    pub xi_s: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub eps_f: f64,
    pub eps_s: f64,
    pub medians: ParamMedians,
}

/// `p + q·θ` per period.
pub fn predict_fixed(params: &UtilityParams, theta: &[f64]) -> Result<Vec<f64>> {
    dim_check("temperature vector", params.n_periods(), theta.len())?;
    Ok((0..theta.len()).map(|k| params.p[k] + params.q[k] * theta[k]).collect())
}

/// `a/c + b + d·θ` per period.
pub fn predict_shiftable(params: &UtilityParams, theta: &[f64], cost: &CostVector) -> Result<Vec<f64>> {
    let k = params.n_periods();
    dim_check("temperature vector", k, theta.len())?;
    dim_check("cost vector", k, cost.len())?;
    let c = cost.values();
    Ok((0..k)
        .map(|i| params.a[i] / c[i] + params.b[i] + params.d[i] * theta[i])
        .collect())
}

/// `Σ a·ln((xˢ − b − d·θ)₊ + 1)`.
pub fn utility(params: &UtilityParams, xs: &[f64], theta: &[f64]) -> Result<f64> {
    let k = params.n_periods();
    dim_check("shiftable vector", k, xs.len())?;
    dim_check("temperature vector", k, theta.len())?;
    Ok((0..k)
        .map(|i| {
            let excess = (xs[i] - params.b[i] - params.d[i] * theta[i]).max(0.0);
            params.a[i] * excess.ln_1p()
        })
        .sum())
}

/// Variable layout of the assembled QP.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub n_periods: usize,
}

impl Layout {
    pub fn p(&self, k: usize) -> usize {
        k
    }
    pub fn q(&self, k: usize) -> usize {
        self.n_periods + k
    }
    pub fn a(&self, k: usize) -> usize {
        2 * self.n_periods + k
    }
    pub fn b(&self, k: usize) -> usize {
        3 * self.n_periods + k
    }
    pub fn d(&self, k: usize) -> usize {
        4 * self.n_periods + k
    }
    pub fn xi_f(&self, k: usize) -> usize {
        5 * self.n_periods + k
    }
    pub fn xi_s(&self, k: usize) -> usize {
        6 * self.n_periods + k
    }
    pub fn n_vars(&self) -> usize {
        7 * self.n_periods
    }
}

/// Builds the fitting QP from period sums (periods × days).
///
/// Rows come in groups of four per (day, period): fixed upper, fixed lower,
/// shiftable upper, shiftable lower. Slacks get `ξ ≥ 0` bounds; `q` is
/// pinned to `[0, 0]` when requested.
pub fn assemble_qp(
    xs_agg: &Array2<f64>,
    xf_agg: &Array2<f64>,
    theta: &TemperatureMatrix,
    cost: &CostVector,
    cfg: &FitConfig,
) -> Result<QpProblem> {
    cfg.validate()?;
    let k = cost.len();
    let n = theta.n_days();
    dim_check("temperature periods", k, theta.n_periods())?;
    dim_check("shiftable sum periods", k, xs_agg.nrows())?;
    dim_check("shiftable sum days", n, xs_agg.ncols())?;
    dim_check("fixed sum periods", k, xf_agg.nrows())?;
    dim_check("fixed sum days", n, xf_agg.ncols())?;

    let lay = Layout { n_periods: k };
    let mut diag = vec![0.0; lay.n_vars()];
    for i in 0..k {
        diag[lay.p(i)] = cfg.gamma_p;
        diag[lay.q(i)] = cfg.gamma_q;
        diag[lay.a(i)] = cfg.gamma_a;
        diag[lay.b(i)] = cfg.gamma_b;
        diag[lay.d(i)] = cfg.gamma_d;
        diag[lay.xi_f(i)] = cfg.w_f * cfg.w_f;
        diag[lay.xi_s(i)] = cfg.w_s * cfg.w_s;
    }
    // The objective is xᵀDx, i.e. ½xᵀ(2D)x.
    let quad = Array2::from_diag(&ndarray::Array1::from(diag)) * 2.0;
    let mut prob = QpProblem::new(quad, ndarray::Array1::zeros(lay.n_vars()))?;

    let (eps_f, eps_s) = cfg.resolved_eps(xs_agg, xf_agg);
    let c = cost.values();
    let th = theta.values();
    for day in 0..n {
        for i in 0..k {
            let t = th[[i, day]];
            let xf = xf_agg[[i, day]];
            let xs = xs_agg[[i, day]];
            let inv_c = 1.0 / c[i];
            prob.push_row(
                vec![(lay.p(i), -1.0), (lay.q(i), -t), (lay.xi_f(i), -1.0)],
                eps_f - xf,
            )?;
            prob.push_row(
                vec![(lay.p(i), 1.0), (lay.q(i), t), (lay.xi_f(i), -1.0)],
                eps_f + xf,
            )?;
            prob.push_row(
                vec![
                    (lay.a(i), -inv_c),
                    (lay.b(i), -1.0),
                    (lay.d(i), -t),
                    (lay.xi_s(i), -1.0),
                ],
                eps_s - xs,
            )?;
            prob.push_row(
                vec![
                    (lay.a(i), inv_c),
                    (lay.b(i), 1.0),
                    (lay.d(i), t),
                    (lay.xi_s(i), -1.0),
                ],
                eps_s + xs,
            )?;
        }
    }

    for i in 0..k {
        prob.set_bounds(lay.xi_f(i), 0.0, f64::INFINITY)?;
        prob.set_bounds(lay.xi_s(i), 0.0, f64::INFINITY)?;
        let b = cfg.bounds;
        for (on, var) in [
            (b.a, lay.a(i)),
            (b.b, lay.b(i)),
            (b.d, lay.d(i)),
            (b.p, lay.p(i)),
            (b.q, lay.q(i)),
        ] {
            if on {
                prob.set_bounds(var, 0.0, f64::INFINITY)?;
            }
        }
        if cfg.pin_q_to_zero {
            prob.set_bounds(lay.q(i), 0.0, 0.0)?;
        }
    }
    Ok(prob)
}

/// Fits the model to a shiftable/fixed split. Works the same on metered
/// components and on disaggregated estimates.
pub fn fit(
    shiftable: &LoadMatrix,
    fixed: &LoadMatrix,
    theta: &TemperatureMatrix,
    cost: &CostVector,
    cfg: &FitConfig,
    grid: &TimeGrid,
) -> Result<FitResult> {
    dim_check("fixed load days", shiftable.n_days(), fixed.n_days())?;
    dim_check("temperature days", shiftable.n_days(), theta.n_days())?;
    let xs_agg = grid.period_sums(shiftable)?;
    let xf_agg = grid.period_sums(fixed)?;
    fit_period_sums(&xs_agg, &xf_agg, theta, cost, cfg)
}

/// [`fit`] on precomputed period sums (periods × days).
pub fn fit_period_sums(
    xs_agg: &Array2<f64>,
    xf_agg: &Array2<f64>,
    theta: &TemperatureMatrix,
    cost: &CostVector,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let prob = assemble_qp(xs_agg, xf_agg, theta, cost, cfg)?;
    let sol = qp::solve_default(&prob);
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Inaccurate => log::warn!(
            "fit accepted with KKT residual {:e} (tolerance {:e})",
            sol.kkt_residual,
            cfg.tol
        ),
        QpStatus::Infeasible => return Err(Error::Solver("fitting QP reported infeasible".into())),
        QpStatus::IterationLimit => {
            return Err(Error::Solver(format!(
                "fitting QP hit its iteration limit after {} steps",
                sol.iterations
            )))
        }
    }
    let k = cost.len();
    let lay = Layout { n_periods: k };
    let take = |f: fn(&Layout, usize) -> usize| -> Vec<f64> { (0..k).map(|i| sol.x[f(&lay, i)]).collect() };
    let mut params = UtilityParams {
        a: take(Layout::a),
        b: take(Layout::b),
        d: take(Layout::d),
        p: take(Layout::p),
        q: take(Layout::q),
    };
    // Bounds hold to solver precision; snap the tiny negatives.
    for v in params.a.iter_mut() {
        *v = v.max(0.0);
    }
    let (eps_f, eps_s) = cfg.resolved_eps(xs_agg, xf_agg);
    Ok(FitResult {
        medians: ParamMedians::of(&params),
        xi_f: take(Layout::xi_f).into_iter().map(|v| v.max(0.0)).collect(),
        xi_s: take(Layout::xi_s).into_iter().map(|v| v.max(0.0)).collect(),
        params,
        objective: sol.objective.max(0.0),
        kkt_residual: sol.kkt_residual,
        status: sol.status,
        iterations: sol.iterations,
        eps_f,
        eps_s,
    })
}

/// One row of the real-versus-disaggregated comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub parameter: String,
    pub median_real: f64,
    pub median_disagg: f64,
    /// Pearson correlation across periods; `None` when undefined (for
    /// example a pinned `q`).
    pub corr: Option<f64>,
}

pub fn compare_fits(real: &UtilityParams, disagg: &UtilityParams) -> Vec<ComparisonRow> {
    real.named()
        .into_iter()
        .zip(disagg.named())
        .map(|((name, r), (_, d))| ComparisonRow {
            parameter: name.to_string(),
            median_real: stats::median(r),
            median_disagg: stats::median(d),
            corr: stats::pearson(r, d),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single(a: f64, b: f64, d: f64, p: f64, q: f64) -> UtilityParams {
        UtilityParams::new(vec![a], vec![b], vec![d], vec![p], vec![q]).unwrap()
    }

    #[test]
    fn fixed_prediction_examples() {
        let params = single(0.0, 0.0, 0.0, 2.0, 0.1);
        assert_relative_eq!(predict_fixed(&params, &[30.0]).unwrap()[0], 5.0, epsilon = 1e-12);
        assert_eq!(predict_fixed(&params, &[0.0]).unwrap(), vec![2.0]);
        let flat = single(0.0, 0.0, 0.0, 3.5, 0.0);
        assert_eq!(predict_fixed(&flat, &[-12.0]).unwrap(), vec![3.5]);
        assert!(predict_fixed(&flat, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn shiftable_prediction_examples() {
        let params = single(2.0, 1.0, 0.1, 0.0, 0.0);
        let c = CostVector::new(vec![0.5]).unwrap();
        assert_relative_eq!(predict_shiftable(&params, &[30.0], &c).unwrap()[0], 8.0, epsilon = 1e-12);

        let inert = single(0.0, 1.5, 0.2, 0.0, 0.0);
        assert_relative_eq!(predict_shiftable(&inert, &[10.0], &c).unwrap()[0], 3.5, epsilon = 1e-12);

        let cheap = single(1.0, 1.0, 0.1, 0.0, 0.0);
        let huge = CostVector::new(vec![1e9]).unwrap();
        assert!((predict_shiftable(&cheap, &[30.0], &huge).unwrap()[0] - 4.0).abs() < 1e-8);

        assert!(CostVector::new(vec![0.0]).is_err());
        assert!(CostVector::new(vec![-1.0]).is_err());
    }

    #[test]
    fn utility_examples() {
        let params = single(1.0, 2.0, 0.5, 0.0, 0.0);
        let base = 2.0 + 0.5 * 4.0;
        assert_eq!(utility(&params, &[base], &[4.0]).unwrap(), 0.0);
        assert_eq!(utility(&params, &[base - 1.0], &[4.0]).unwrap(), 0.0);
        let u = utility(&params, &[base + std::f64::consts::E - 1.0], &[4.0]).unwrap();
        assert_relative_eq!(u, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn marginal_utility_equals_price_one_below_the_printed_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let a = rng.random_range(0.5..5.0);
            let b = rng.random_range(0.0..3.0);
            let d = rng.random_range(-0.2..0.2);
            let c = rng.random_range(0.05..0.6);
            let th = rng.random_range(10.0..35.0);
            let params = single(a, b, d, 0.0, 0.0);
            let x0 = a / c + b + d * th - 1.0;
            let h = 1e-5 * x0.abs().max(1.0);
            let up = utility(&params, &[x0 + h], &[th]).unwrap();
            let down = utility(&params, &[x0 - h], &[th]).unwrap();
            let deriv = (up - down) / (2.0 * h);
            assert!((deriv - c).abs() <= 1e-6 * c, "{deriv} vs {c}");
        }
    }

    proptest! {
        #[test]
        fn utility_is_monotone_and_concave(
            a in 0.0f64..5.0,
            b in -2.0f64..4.0,
            d in -0.5f64..0.5,
            th in -5.0f64..40.0,
            start in 0.0f64..50.0,
            step in 1e-3f64..2.0,
        ) {
            let params = single(a, b, d, 0.0, 0.0);
            let u = |x: f64| utility(&params, &[x], &[th]).unwrap();
            // Monotone everywhere, including across the clamp.
            let x0 = start - 25.0;
            prop_assert!(u(x0 + step) - u(x0) >= -1e-12);
            // Concave above baseline; the clamp leaves a convex kink at it.
            let base = b + d * th;
            let (u0, u1, u2) = (u(base + start), u(base + start + step), u(base + start + 2.0 * step));
            prop_assert!(u1 - u0 >= -1e-12);
            prop_assert!(u2 - u1 >= -1e-12);
            prop_assert!(u2 - 2.0 * u1 + u0 <= 1e-12);
        }
    }

    fn rand_theta(rng: &mut ChaCha8Rng, k: usize, n: usize) -> TemperatureMatrix {
        TemperatureMatrix::new(Array2::from_shape_fn((k, n), |_| rng.random_range(15.0..35.0))).unwrap()
    }

    #[test]
    fn counting_oracle_for_the_assembled_program() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (k, n) = (24, 61);
        let theta = rand_theta(&mut rng, k, n);
        let cost = CostVector::new(vec![0.2; k]).unwrap();
        let xs = Array2::from_elem((k, n), 10.0);
        let xf = Array2::from_elem((k, n), 30.0);
        let cfg = FitConfig {
            bounds: ParamBounds::none(),
            ..FitConfig::default()
        };
        let prob = assemble_qp(&xs, &xf, &theta, &cost, &cfg).unwrap();
        assert_eq!(prob.n_vars(), 168);
        assert_eq!(prob.n_rows(), 4 * 24 * 61);
        assert_eq!(prob.n_finite_bounds(), 48);
        // Strict convexity: the quadratic form factors.
        assert!(qp::cholesky(prob.quad()).is_ok());
    }

    #[test]
    fn wide_tolerance_makes_zero_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (k, n) = (4, 9);
        let theta = rand_theta(&mut rng, k, n);
        let cost = CostVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let xs = Array2::from_shape_fn((k, n), |_| rng.random_range(0.0..5.0));
        let xf = Array2::from_shape_fn((k, n), |_| rng.random_range(0.0..5.0));
        let cfg = FitConfig {
            eps_f: Some(10.0),
            eps_s: Some(10.0),
            ..FitConfig::default()
        };
        let fit = fit_period_sums(&xs, &xf, &theta, &cost, &cfg).unwrap();
        assert!(fit.objective.abs() < 1e-12);
        for (_, v) in fit.params.named() {
            assert!(v.iter().all(|x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn no_samples_leaves_only_the_regularizer() {
        let theta = TemperatureMatrix::new(Array2::zeros((3, 0))).unwrap();
        let cost = CostVector::new(vec![0.1; 3]).unwrap();
        let empty = Array2::zeros((3, 0));
        let fit = fit_period_sums(&empty, &empty, &theta, &cost, &FitConfig::default()).unwrap();
        assert_eq!(fit.objective, 0.0);
        assert!(fit.params.named().iter().all(|(_, v)| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            FitConfig { gamma_a: 0.0, ..FitConfig::default() },
            FitConfig { w_s: -1.0, ..FitConfig::default() },
            FitConfig { eps_f: Some(-0.1), ..FitConfig::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }

    fn forward(truth: &UtilityParams, theta: &TemperatureMatrix, cost: &CostVector) -> (Array2<f64>, Array2<f64>) {
        let (k, n) = (theta.n_periods(), theta.n_days());
        let mut xs = Array2::zeros((k, n));
        let mut xf = Array2::zeros((k, n));
        for day in 0..n {
            let th = theta.day(day);
            let s = predict_shiftable(truth, &th, cost).unwrap();
            let f = predict_fixed(truth, &th).unwrap();
            for i in 0..k {
                xs[[i, day]] = s[i];
                xf[[i, day]] = f[i];
            }
        }
        (xs, xf)
    }

    fn identifiable_truth(rng: &mut ChaCha8Rng, cost: &CostVector) -> UtilityParams {
        let k = cost.len();
        let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..3.0)).collect();
        // b = a·c is the split the equal-weight regularizer picks.
        let b = a.iter().zip(cost.values()).map(|(a, c)| a * c).collect();
        let d = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let p = (0..k).map(|_| rng.random_range(10.0..40.0)).collect();
        let q = (0..k).map(|_| rng.random_range(-0.3..0.3)).collect();
        UtilityParams::new(a, b, d, p, q).unwrap()
    }

    #[test]
    fn exact_data_recovers_the_generating_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (k, n) = (6, 20);
        let cost = CostVector::new((0..k).map(|_| rng.random_range(0.1..0.5)).collect()).unwrap();
        let truth = identifiable_truth(&mut rng, &cost);
        let theta = rand_theta(&mut rng, k, n);
        let (xs, xf) = forward(&truth, &theta, &cost);
        let gamma = 1e-8;
        let cfg = FitConfig {
            eps_f: Some(0.0),
            eps_s: Some(0.0),
            gamma_a: gamma,
            gamma_b: gamma,
            gamma_d: gamma,
            gamma_p: gamma,
            gamma_q: gamma,
            ..FitConfig::default()
        };
        let fit = fit_period_sums(&xs, &xf, &theta, &cost, &cfg).unwrap();
        assert_eq!(fit.status, QpStatus::Optimal);
        for ((name, got), (_, want)) in fit.params.named().iter().zip(truth.named()) {
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-3, "{name}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn pinned_q_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (k, n) = (5, 15);
        let cost = CostVector::new(vec![0.2; k]).unwrap();
        let truth = identifiable_truth(&mut rng, &cost);
        let theta = rand_theta(&mut rng, k, n);
        let (xs, xf) = forward(&truth, &theta, &cost);
        let cfg = FitConfig {
            pin_q_to_zero: true,
            ..FitConfig::default()
        };
        let fit = fit_period_sums(&xs, &xf, &theta, &cost, &cfg).unwrap();
        assert!(fit.params.q.iter().all(|&q| q == 0.0));
        assert!(fit.kkt_residual <= 1e-6);
    }

    #[test]
    fn slack_matches_worst_day_excess() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, n) = (3, 12);
        let cost = CostVector::new(vec![0.3; k]).unwrap();
        let theta = rand_theta(&mut rng, k, n);
        let xs = Array2::from_shape_fn((k, n), |_| rng.random_range(0.0..20.0));
        let xf = Array2::from_shape_fn((k, n), |_| rng.random_range(5.0..30.0));
        let cfg = FitConfig {
            eps_f: Some(0.5),
            eps_s: Some(0.5),
            ..FitConfig::default()
        };
        let fit = fit_period_sums(&xs, &xf, &theta, &cost, &cfg).unwrap();
        for day_k in 0..k {
            let mut worst_f: f64 = 0.0;
            let mut worst_s: f64 = 0.0;
            for day in 0..n {
                let th = theta.day(day);
                let f = predict_fixed(&fit.params, &th).unwrap()[day_k];
                let s = predict_shiftable(&fit.params, &th, &cost).unwrap()[day_k];
                worst_f = worst_f.max((xf[[day_k, day]] - f).abs() - 0.5);
                worst_s = worst_s.max((xs[[day_k, day]] - s).abs() - 0.5);
            }
            assert!((fit.xi_f[day_k] - worst_f.max(0.0)).abs() < 1e-5);
            assert!((fit.xi_s[day_k] - worst_s.max(0.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn full_size_fit_passes_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (k, n) = (24, 61);
        let cost = CostVector::new((0..k).map(|_| rng.random_range(0.1..0.4)).collect()).unwrap();
        let truth = identifiable_truth(&mut rng, &cost);
        let theta = rand_theta(&mut rng, k, n);
        let (mut xs, mut xf) = forward(&truth, &theta, &cost);
        xs.mapv_inplace(|v| (v + rng.random_range(-2.0..2.0)).max(0.0));
        xf.mapv_inplace(|v| (v + rng.random_range(-2.0..2.0)).max(0.0));
        let fit = fit_period_sums(&xs, &xf, &theta, &cost, &FitConfig::default()).unwrap();
        assert_eq!(fit.status, QpStatus::Optimal);
        assert!(fit.kkt_residual <= 1e-6);
        assert!(fit.params.a.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn comparison_rows_follow_report_order() {
        let a = single(1.0, 2.0, 3.0, 4.0, 0.0);
        let rows = compare_fits(&a, &a);
        let names: Vec<_> = rows.iter().map(|r| r.parameter.as_str()).collect();
        assert_eq!(names, ["a", "b", "d", "p", "q"]);
        assert_eq!(rows[3].median_real, 4.0);
        // Single period: correlation is undefined.
        assert!(rows.iter().all(|r| r.corr.is_none()));
    }
}
