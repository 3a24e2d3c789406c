//! Dense strictly convex QP with sparse inequality rows and variable bounds.
//!
//! Problems have the form
//!
//! ```text
//! minimize   ½ xᵀ Q x + cᵀ x
//! subject to A x ≤ u,   lower ≤ x ≤ upper
//! ```
//!
//! The solver is the Goldfarb-Idnani dual active-set method. It starts from
//! the unconstrained minimizer and adds the most violated constraint each
//! round, so it never needs a feasible starting point. The factorization
//! `J = L⁻ᵀ` (with `Q = L Lᵀ`) and the triangular `R` are kept up to date with
//! Givens rotations as constraints enter and leave the active set.
//!
//! Variables whose lower and upper bounds coincide are substituted out
//! before solving, so they come back exactly at their pinned value.

use std::fmt::Write as _;

use ndarray::{Array1, Array2};

use crate::error::{dim_check, Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;

/// One sparse row of the constraint matrix: `(column, coefficient)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    quad: Array2<f64>,
    linear: Array1<f64>,
    rows: Vec<SparseRow>,
    rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    /// The active-set loop finished but the independent KKT check exceeded `tol`.
    Inaccurate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: Array1<f64>,
    /// Multipliers of the rows of `A`, one per row.
    pub duals: Array1<f64>,
    /// Multipliers of `x ≥ lower`.
    pub lower_duals: Array1<f64>,
    /// Multipliers of `x ≤ upper`.
    pub upper_duals: Array1<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    dim_check("cholesky: square matrix", n, a.ncols())?;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Domain(format!(
                "matrix is not positive definite (pivot {j} = {diag})"
            )));
        }
        let d = diag.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

impl QpProblem {
    /// An unconstrained problem. `quad` must be symmetric positive definite.
    pub fn new(quad: Array2<f64>, linear: Array1<f64>) -> Result<Self> {
        let n = quad.nrows();
        dim_check("quadratic term columns", n, quad.ncols())?;
        dim_check("linear term length", n, linear.len())?;
        if quad.iter().chain(linear.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("QP data must be finite".into()));
        }
        let scale = quad.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (quad[[i, j]] - quad[[j, i]]).abs() > 1e-12 * scale {
                    return Err(Error::Domain(format!(
                        "quadratic term is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        cholesky(&quad)?;
        Ok(Self {
            quad,
            linear,
            rows: Vec::new(),
            rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        })
    }

    /// Builds a problem from a dense constraint matrix.
    pub fn from_dense(
        quad: Array2<f64>,
        linear: Array1<f64>,
        a: &Array2<f64>,
        u: &[f64],
    ) -> Result<Self> {
        let mut p = Self::new(quad, linear)?;
        dim_check("constraint matrix columns", p.n_vars(), a.ncols())?;
        dim_check("constraint bounds", a.nrows(), u.len())?;
        for (row, &rhs) in a.rows().into_iter().zip(u) {
            let sparse: SparseRow = row
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(j, v)| (j, *v))
                .collect();
            p.push_row(sparse, rhs)?;
        }
        Ok(p)
    }

    /// Appends the constraint `Σ coef·x[col] ≤ rhs`.
    pub fn push_row(&mut self, row: SparseRow, rhs: f64) -> Result<()> {
        let n = self.n_vars();
        for &(j, v) in &row {
            if j >= n {
                return Err(Error::Index { index: j, len: n });
            }
            if !v.is_finite() {
                return Err(Error::Domain("constraint coefficient must be finite".into()));
            }
        }
        if rhs.is_nan() {
            return Err(Error::Domain("constraint bound is NaN".into()));
        }
        self.rows.push(row);
        self.rhs.push(rhs);
        Ok(())
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) -> Result<()> {
        let n = self.n_vars();
        if var >= n {
            return Err(Error::Index { index: var, len: n });
        }
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::Domain(format!(
                "bounds for variable {var} are inconsistent: [{lower}, {upper}]"
            )));
        }
        self.lower[var] = lower;
        self.upper[var] = upper;
        Ok(())
    }

    pub fn n_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn quad(&self) -> &Array2<f64> {
        &self.quad
    }

    pub fn linear(&self) -> &Array1<f64> {
        &self.linear
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn lower_bounds(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper_bounds(&self) -> &[f64] {
        &self.upper
    }

    /// Number of finite variable bounds.
    pub fn n_finite_bounds(&self) -> usize {
        self.lower.iter().chain(&self.upper).filter(|b| b.is_finite()).count()
    }

    pub fn objective(&self, x: &Array1<f64>) -> f64 {
        0.5 * x.dot(&self.quad.dot(x)) + self.linear.dot(x)
    }

    /// `A x` for the stored rows.
    pub fn row_products(&self, x: &Array1<f64>) -> Array1<f64> {
        self.rows.iter().map(|r| dot_sparse(r, x.as_slice().unwrap())).collect()
    }

    /// Largest violation of any row or bound at `x` (zero when feasible).
    pub fn max_violation(&self, x: &Array1<f64>) -> f64 {
        let rows = self
            .row_products(x)
            .iter()
            .zip(&self.rhs)
            .fold(0.0f64, |m, (ax, u)| m.max(ax - u));
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .fold(rows, |m, (xi, (lo, hi))| m.max(lo - xi).max(xi - hi))
    }

    /// Plain-text dump: header, dense quadratic block, linear term, bounds,
    /// then one line per constraint (`rhs nnz col:coef ...`).
    pub fn to_debug_text(&self) -> String {
        let n = self.n_vars();
        let mut s = format!("qp {n} {}\nquad\n", self.n_rows());
        for row in self.quad.rows() {
            push_joined(&mut s, row.iter());
        }
        s.push_str("linear\n");
        push_joined(&mut s, self.linear.iter());
        s.push_str("bounds\n");
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            let _ = writeln!(s, "{lo} {hi}");
        }
        s.push_str("rows\n");
        for (row, rhs) in self.rows.iter().zip(&self.rhs) {
            let _ = write!(s, "{rhs} {}", row.len());
            for (j, v) in row {
                let _ = write!(s, " {j}:{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_debug_text(text: &str) -> Result<Self> {
        let mut cur = Cursor { lines: text.lines(), line: 0 };

        let header = cur.next("header")?;
        let head: Vec<&str> = header.split_whitespace().collect();
        if head.len() != 3 || head[0] != "qp" {
            return Err(cur.bad("expected `qp <n> <m>`"));
        }
        let n: usize = head[1].parse().map_err(|_| cur.bad("bad variable count"))?;
        let m: usize = head[2].parse().map_err(|_| cur.bad("bad row count"))?;

        cur.section("quad")?;
        let mut quad = Array2::zeros((n, n));
        for i in 0..n {
            let vals = cur.numbers("quadratic row")?;
            if vals.len() != n {
                return Err(cur.bad("quadratic row has the wrong length"));
            }
            quad.row_mut(i).assign(&Array1::from(vals));
        }
        cur.section("linear")?;
        let linear = cur.numbers("linear term")?;
        if linear.len() != n {
            return Err(cur.bad("linear term has the wrong length"));
        }
        let mut p = Self::new(quad, Array1::from(linear))?;

        cur.section("bounds")?;
        for i in 0..n {
            let vals = cur.numbers("bounds")?;
            if vals.len() != 2 {
                return Err(cur.bad("expected `lower upper`"));
            }
            p.set_bounds(i, vals[0], vals[1])?;
        }
        cur.section("rows")?;
        for _ in 0..m {
            let l = cur.next("constraint row")?;
            let mut toks = l.split_whitespace();
            let rhs = cur.number(toks.next().unwrap_or(""))?;
            let nnz: usize = toks
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| cur.bad("bad nonzero count"))?;
            let mut row = Vec::with_capacity(nnz);
            for tok in toks {
                let (j, v) = tok.split_once(':').ok_or_else(|| cur.bad("expected col:coef"))?;
                let j: usize = j.parse().map_err(|_| cur.bad("bad column"))?;
                row.push((j, cur.number(v)?));
            }
            if row.len() != nnz {
                return Err(cur.bad("nonzero count does not match"));
            }
            p.push_row(row, rhs)?;
        }
        Ok(p)
    }
}

struct Cursor<'a> {
    lines: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn bad(&self, msg: &str) -> Error {
        Error::Data(format!("QP text line {}: {msg}", self.line))
    }

    fn next(&mut self, expect: &str) -> Result<&'a str> {
        self.line += 1;
        self.lines
            .next()
            .ok_or_else(|| Error::Data(format!("QP text ended early, expected {expect}")))
    }

    fn section(&mut self, name: &str) -> Result<()> {
        if self.next(name)?.trim() != name {
            return Err(self.bad(&format!("expected section `{name}`")));
        }
        Ok(())
    }

    fn number(&self, tok: &str) -> Result<f64> {
        tok.parse().map_err(|_| self.bad(&format!("bad number {tok:?}")))
    }

    fn numbers(&mut self, expect: &str) -> Result<Vec<f64>> {
        let l = self.next(expect)?;
        l.split_whitespace().map(|t| self.number(t)).collect()
    }
}

fn push_joined<'a>(s: &mut String, vals: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in vals {
        if !first {
            s.push(' ');
        }
        first = false;
        let _ = write!(s, "{v}");
    }
    s.push('\n');
}

fn dot_sparse(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * x[j]).sum()
}

/// Independent optimality check. Returns the largest of primal violation,
/// dual negativity, the ∞-norm of the Lagrangian gradient, and the largest
/// complementarity product.
pub fn kkt_check(p: &QpProblem, s: &QpSolution) -> f64 {
    let n = p.n_vars();
    if s.x.len() != n
        || s.duals.len() != p.n_rows()
        || s.lower_duals.len() != n
        || s.upper_duals.len() != n
    {
        return f64::INFINITY;
    }
    let ax = p.row_products(&s.x);
    let mut grad = p.quad.dot(&s.x) + &p.linear;
    for (row, &lam) in p.rows.iter().zip(s.duals.iter()) {
        for &(j, v) in row {
            grad[j] += lam * v;
        }
    }
    let mut worst = 0.0f64;
    for i in 0..p.n_rows() {
        let slack = p.rhs[i] - ax[i];
        worst = worst
            .max(-slack)
            .max(-s.duals[i])
            .max(comp(s.duals[i], slack));
    }
    for j in 0..n {
        grad[j] += s.upper_duals[j] - s.lower_duals[j];
        let lo_slack = s.x[j] - p.lower[j];
        let hi_slack = p.upper[j] - s.x[j];
        worst = worst
            .max(-lo_slack)
            .max(-hi_slack)
            .max(-s.lower_duals[j])
            .max(-s.upper_duals[j])
            .max(comp(s.lower_duals[j], lo_slack))
            .max(comp(s.upper_duals[j], hi_slack));
    }
    grad.iter().fold(worst, |m, g| m.max(g.abs()))
}

/// `|λ · slack|`, treating a zero multiplier on an infinite bound as zero.
fn comp(lam: f64, slack: f64) -> f64 {
    if lam == 0.0 {
        0.0
    } else {
        (lam * slack).abs()
    }
}

pub fn solve_default(p: &QpProblem) -> QpSolution {
    solve(p, DEFAULT_TOL, 10 * (p.n_vars() + p.n_rows() + p.n_finite_bounds()))
}

/// Solves `p`. Never fails outright: infeasibility and exhausted budgets are
/// reported through [`QpSolution::status`].
pub fn solve(p: &QpProblem, tol: f64, max_iter: usize) -> QpSolution {
    let n = p.n_vars();
    let fixed: Vec<bool> = (0..n).map(|j| p.lower[j] == p.upper[j]).collect();
    let free: Vec<usize> = (0..n).filter(|&j| !fixed[j]).collect();
    let mut x = Array1::from_iter((0..n).map(|j| if fixed[j] { p.lower[j] } else { 0.0 }));

    // Reduced problem over the free variables.
    let nf = free.len();
    let mut pos = vec![usize::MAX; n];
    for (k, &j) in free.iter().enumerate() {
        pos[j] = k;
    }
    let mut rq = Array2::zeros((nf, nf));
    let mut rc = Array1::zeros(nf);
    for (a, &i) in free.iter().enumerate() {
        let mut c = p.linear[i];
        for j in 0..n {
            if fixed[j] {
                c += p.quad[[i, j]] * x[j];
            }
        }
        rc[a] = c;
        for (b, &j) in free.iter().enumerate() {
            rq[[a, b]] = p.quad[[i, j]];
        }
    }

    // Every constraint as a reduced sparse row with an origin tag.
    let mut cons: Vec<Constraint> = Vec::new();
    let mut infeasible_fixed = false;
    for (i, (row, &rhs)) in p.rows.iter().zip(&p.rhs).enumerate() {
        let mut r = Vec::new();
        let mut u = rhs;
        for &(j, v) in row {
            if fixed[j] {
                u -= v * x[j];
            } else if v != 0.0 {
                r.push((pos[j], v));
            }
        }
        if r.is_empty() {
            infeasible_fixed |= u < -tol;
            continue;
        }
        cons.push(Constraint::new(r, u, Origin::Row(i)));
    }
    for &j in &free {
        if p.upper[j].is_finite() {
            cons.push(Constraint::new(vec![(pos[j], 1.0)], p.upper[j], Origin::Upper(j)));
        }
        if p.lower[j].is_finite() {
            cons.push(Constraint::new(vec![(pos[j], -1.0)], -p.lower[j], Origin::Lower(j)));
        }
    }

    let mut duals = Array1::zeros(p.n_rows());
    let mut lower_duals = Array1::zeros(n);
    let mut upper_duals = Array1::zeros(n);

    let (status, iterations) = if infeasible_fixed {
        (QpStatus::Infeasible, 0)
    } else {
        // Constraint ordering only matters for tie-breaking; rows come first so
        // "lowest index" refers to the caller's numbering.
        let out = dual_active_set(&rq, &rc, &cons, tol * 1e-3, max_iter);
        for (k, &j) in free.iter().enumerate() {
            x[j] = out.x[k];
        }
        for (&c, &u) in out.active.iter().zip(&out.u) {
            match cons[c].origin {
                Origin::Row(i) => duals[i] = u,
                Origin::Upper(j) => upper_duals[j] = u,
                Origin::Lower(j) => lower_duals[j] = u,
            }
        }
        (out.status, out.iterations)
    };

    // Pinned variables: their bound multipliers come from stationarity.
    if free.len() < n {
        let mut grad = p.quad.dot(&x) + &p.linear;
        for (row, &lam) in p.rows.iter().zip(duals.iter()) {
            if lam != 0.0 {
                for &(j, v) in row {
                    grad[j] += lam * v;
                }
            }
        }
        for j in (0..n).filter(|&j| fixed[j]) {
            if grad[j] > 0.0 {
                lower_duals[j] = grad[j];
            } else {
                upper_duals[j] = -grad[j];
            }
        }
    }

    let mut sol = QpSolution {
        objective: p.objective(&x),
        x,
        duals,
        lower_duals,
        upper_duals,
        kkt_residual: 0.0,
        iterations,
        status,
    };
    sol.kkt_residual = kkt_check(p, &sol);
    if sol.status == QpStatus::Optimal && !(sol.kkt_residual <= tol) {
        log::warn!(
            "QP finished with KKT residual {:e} above tolerance {:e}",
            sol.kkt_residual,
            tol
        );
        sol.status = QpStatus::Inaccurate;
    }
    sol
}

#[derive(Clone, Copy, Debug)]
enum Origin {
    Row(usize),
    Upper(usize),
    Lower(usize),
}

struct Constraint {
    /// Coefficients of `a` in `aᵀx ≤ u`.
    row: Vec<(usize, f64)>,
    rhs: f64,
    norm: f64,
    origin: Origin,
}

impl Constraint {
    fn new(row: Vec<(usize, f64)>, rhs: f64, origin: Origin) -> Self {
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        Self { row, rhs, norm, origin }
    }
}

struct DualOutcome {
    x: Array1<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
    iterations: usize,
    status: QpStatus,
}

/// Goldfarb-Idnani iterations on `½xᵀGx + cᵀx` subject to `aᵢᵀx ≤ uᵢ`.
///
/// Internally each constraint is read as `nᵢᵀx ≥ bᵢ` with `nᵢ = −aᵢ`.
/// The invariant is `Jᵀ N_active = [R; 0]`.
fn dual_active_set(
    g: &Array2<f64>,
    c: &Array1<f64>,
    cons: &[Constraint],
    feas_tol: f64,
    max_iter: usize,
) -> DualOutcome {
    let n = c.len();
    let l = cholesky(g).expect("quadratic term was validated as positive definite");
    let mut j = lower_inverse(&l).reversed_axes();
    let mut x = -j.dot(&j.t().dot(c));
    let mut r = Array2::<f64>::zeros((n, n));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut is_active = vec![false; cons.len()];

    let done = |x, active, u, iterations, status| DualOutcome { x, active, u, iterations, status };

    loop {
        // Pick the most violated constraint, scaled by its row norm.
        let xs = x.as_slice().unwrap();
        let mut pick: Option<(usize, f64)> = None;
        for (i, con) in cons.iter().enumerate() {
            if is_active[i] {
                continue;
            }
            let viol = dot_sparse(&con.row, xs) - con.rhs;
            if viol > feas_tol {
                let score = viol / con.norm;
                if pick.is_none_or(|(_, best)| score > best) {
                    pick = Some((i, score));
                }
            }
        }
        let Some((pidx, _)) = pick else {
            return done(x, active, u, iterations, QpStatus::Optimal);
        };
        let np: Vec<(usize, f64)> = cons[pidx].row.iter().map(|&(k, v)| (k, -v)).collect();
        let bp = -cons[pidx].rhs;
        let mut u_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return done(x, active, u, iterations - 1, QpStatus::IterationLimit);
            }
            let q = active.len();
            // d = Jᵀ n_p
            let mut d = Array1::<f64>::zeros(n);
            for col in 0..n {
                d[col] = np.iter().map(|&(k, v)| j[[k, col]] * v).sum();
            }
            let d2_sq: f64 = d.iter().skip(q).map(|v| v * v).sum();
            let d_sq: f64 = d.iter().map(|v| v * v).sum();
            let dependent = d2_sq <= 1e-24 * d_sq.max(f64::MIN_POSITIVE);
            let mut z = Array1::<f64>::zeros(n);
            if !dependent {
                for col in q..n {
                    let dc = d[col];
                    if dc != 0.0 {
                        z.scaled_add(dc, &j.column(col));
                    }
                }
            }
            // r = R⁻¹ d₁ by back substitution.
            let mut rv = vec![0.0; q];
            for i in (0..q).rev() {
                let mut s = d[i];
                for k in i + 1..q {
                    s -= r[[i, k]] * rv[k];
                }
                rv[i] = s / r[[i, i]];
            }

            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &rk) in rv.iter().enumerate() {
                if rk > 0.0 {
                    let ratio = u[k] / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            let s_p = dot_sparse(&np, x.as_slice().unwrap()) - bp;
            let t2 = if dependent {
                f64::INFINITY
            } else {
                (-s_p / d2_sq).max(0.0)
            };

            if t1.is_infinite() && t2.is_infinite() {
                return done(x, active, u, iterations, QpStatus::Infeasible);
            }
            let t = t1.min(t2);
            for (uk, rk) in u.iter_mut().zip(&rv) {
                *uk -= t * rk;
            }
            u_p += t;
            if t2.is_finite() {
                x.scaled_add(t, &z);
            }

            if t2 <= t1 {
                add_constraint(&mut j, &mut r, &mut d, q);
                active.push(pidx);
                u.push(u_p);
                is_active[pidx] = true;
                break;
            }
            let k = drop.expect("partial step implies a blocking multiplier");
            is_active[active[k]] = false;
            drop_constraint(&mut j, &mut r, k, q);
            active.remove(k);
            u.remove(k);
        }
    }
}

/// Rotates `d[q..]` into `d[q]`, applying the same rotations to the columns
/// of `J`, then stores `d[..=q]` as the new last column of `R`.
fn add_constraint(j: &mut Array2<f64>, r: &mut Array2<f64>, d: &mut Array1<f64>, q: usize) {
    let n = d.len();
    for k in (q + 1..n).rev() {
        if d[k] == 0.0 {
            continue;
        }
        let h = d[k - 1].hypot(d[k]);
        let (cs, sn) = (d[k - 1] / h, d[k] / h);
        d[k - 1] = h;
        d[k] = 0.0;
        rotate_columns(j, k - 1, k, cs, sn);
    }
    for i in 0..=q {
        r[[i, q]] = d[i];
    }
}

/// Removes column `k` of the `q`-column `R` and restores triangularity.
fn drop_constraint(j: &mut Array2<f64>, r: &mut Array2<f64>, k: usize, q: usize) {
    for col in k..q - 1 {
        for row in 0..q {
            r[[row, col]] = r[[row, col + 1]];
        }
    }
    for row in 0..q {
        r[[row, q - 1]] = 0.0;
    }
    for i in k..q - 1 {
        let (a, b) = (r[[i, i]], r[[i + 1, i]]);
        if b == 0.0 {
            continue;
        }
        let h = a.hypot(b);
        let (cs, sn) = (a / h, b / h);
        for col in i..q - 1 {
            let (ri, rn) = (r[[i, col]], r[[i + 1, col]]);
            r[[i, col]] = cs * ri + sn * rn;
            r[[i + 1, col]] = -sn * ri + cs * rn;
        }
        rotate_columns(j, i, i + 1, cs, sn);
    }
}

fn rotate_columns(j: &mut Array2<f64>, a: usize, b: usize, cs: f64, sn: f64) {
    for row in 0..j.nrows() {
        let (ja, jb) = (j[[row, a]], j[[row, b]]);
        j[[row, a]] = cs * ja + sn * jb;
        j[[row, b]] = -sn * ja + cs * jb;
    }
}

fn lower_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for col in 0..n {
        inv[[col, col]] = 1.0 / l[[col, col]];
        for i in col + 1..n {
            let mut s = 0.0;
            for k in col..i {
                s -= l[[i, k]] * inv[[k, col]];
            }
            inv[[i, col]] = s / l[[i, i]];
        }
    }
    inv
}
