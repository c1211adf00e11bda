//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' P x + q' x
//!     subject to  E x  = e
//!                 A x <= b
//!                 lower <= x <= upper
//! ```
//!
//! The dual method starts from the unconstrained minimizer and adds violated
//! constraints one at a time, so every iterate is dual feasible and the final
//! active constraints hold to rounding error. A merely positive semidefinite
//! `P` is handled with an outer proximal-point loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained program of dimension `n`.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_rhs = rhs;
        self
    }

    pub fn with_inequalities(mut self, matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_rhs = rhs;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    pub fn check_dimensions(&self) -> Result<(), String> {
        let n = self.dim();
        let ok = self.hessian.shape() == (n, n)
            && self.eq_matrix.ncols() == n
            && self.eq_matrix.nrows() == self.eq_rhs.len()
            && self.ineq_matrix.ncols() == n
            && self.ineq_matrix.nrows() == self.ineq_rhs.len()
            && self.lower.len() == n
            && self.upper.len() == n;
        if !ok {
            return Err("inconsistent QP dimensions".into());
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-9 * self.hessian.amax().max(1.0) {
            return Err(format!("hessian not symmetric (max asymmetry {asym:e})"));
        }
        Ok(())
    }

    /// Largest violation of any constraint at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if !self.eq_rhs.is_empty() {
            worst = worst.max((&self.eq_matrix * x - &self.eq_rhs).amax());
        }
        if !self.ineq_rhs.is_empty() {
            let r = &self.ineq_matrix * x - &self.ineq_rhs;
            worst = worst.max(r.max().max(0.0));
        }
        for i in 0..self.dim() {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIter => "max_iter",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    /// Multipliers for `E x = e` (any sign).
    pub eq_multipliers: DVector<f64>,
    /// Multipliers for `A x <= b` (nonnegative).
    pub ineq_multipliers: DVector<f64>,
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// KKT residuals of `sol` for `qp`, with the Lagrangian
/// `f(x) + mu'(Ex - e) + lambda'(Ax - b) + nu_u'(x - u) + nu_l'(l - x)`.
pub fn kkt_residuals(qp: &QuadraticProgram, sol: &Solution) -> KktResiduals {
    let x = &sol.x;
    let mut grad = &qp.hessian * x + &qp.linear;
    if !qp.eq_rhs.is_empty() {
        grad += qp.eq_matrix.transpose() * &sol.eq_multipliers;
    }
    if !qp.ineq_rhs.is_empty() {
        grad += qp.ineq_matrix.transpose() * &sol.ineq_multipliers;
    }
    grad += &sol.upper_multipliers - &sol.lower_multipliers;

    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for (i, l) in sol.ineq_multipliers.iter().enumerate() {
        dual = dual.max(-l);
        let slack = qp.ineq_matrix.row(i).dot(&x.transpose()) - qp.ineq_rhs[i];
        comp = comp.max((l * slack).abs());
    }
    for i in 0..qp.dim() {
        let (lu, ll) = (sol.upper_multipliers[i], sol.lower_multipliers[i]);
        dual = dual.max(-lu).max(-ll);
        if lu != 0.0 {
            comp = comp.max((lu * (x[i] - qp.upper[i])).abs());
        }
        if ll != 0.0 {
            comp = comp.max((ll * (qp.lower[i] - x[i])).abs());
        }
    }
    KktResiduals {
        stationarity: grad.amax(),
        primal: qp.max_violation(x),
        dual,
        complementarity: comp,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverSettings {
    /// Constraint violation (in units of the normalized constraint) below
    /// which a constraint counts as satisfied.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 4000,
        }
    }
}

/// Solve `qp` with constraint tolerance `tol` and the default iteration cap.
pub fn solve(qp: &QuadraticProgram, tol: f64) -> Solution {
    solve_with(
        qp,
        &SolverSettings {
            tol,
            ..Default::default()
        },
    )
}

pub fn solve_with(qp: &QuadraticProgram, settings: &SolverSettings) -> Solution {
    let rows = Rows::from_program(qp);
    if let Some(chol) = qp.hessian.clone().cholesky() {
        let mut sol = dual_active_set(&chol, &qp.linear, &rows, settings);
        finish(qp, &rows, &mut sol);
        return sol;
    }
    proximal(qp, &rows, settings)
}

/// Outer proximal-point iterations for a singular Hessian:
/// `x+ = argmin f(x) + rho/2 |x - x_k|^2`.
fn proximal(qp: &QuadraticProgram, rows: &Rows, settings: &SolverSettings) -> Solution {
    let n = qp.dim();
    let scale = qp.hessian.diagonal().amax().max(1.0);
    let rho = 1e-6 * scale;
    let regularized = &qp.hessian + DMatrix::identity(n, n) * rho;
    let chol = match regularized.cholesky() {
        Some(c) => c,
        None => {
            // Indefinite: not a convex program.
            let mut sol = empty_solution(n, rows, SolveStatus::Infeasible);
            finish(qp, rows, &mut sol);
            return sol;
        }
    };
    let mut x = DVector::zeros(n);
    let mut total = 0;
    let mut last = empty_solution(n, rows, SolveStatus::MaxIter);
    for _ in 0..500 {
        let q = &qp.linear - &x * rho;
        let sol = dual_active_set(&chol, &q, rows, settings);
        total += sol.iterations;
        if sol.status != SolveStatus::Optimal {
            last = sol;
            break;
        }
        let step = (&sol.x - &x).amax();
        x = sol.x.clone();
        last = sol;
        if step <= 1e-13 * x.amax().max(1.0) {
            break;
        }
    }
    last.iterations = total;
    finish(qp, rows, &mut last);
    last
}

fn empty_solution(n: usize, rows: &Rows, status: SolveStatus) -> Solution {
    Solution {
        x: DVector::zeros(n),
        objective: f64::NAN,
        status,
        eq_multipliers: DVector::zeros(0),
        ineq_multipliers: DVector::zeros(0),
        lower_multipliers: DVector::zeros(0),
        upper_multipliers: DVector::zeros(0),
        iterations: 0,
    }
    .with_raw(vec![0.0; rows.len()])
}

impl Solution {
    fn with_raw(mut self, raw: Vec<f64>) -> Self {
        // stash raw multipliers in ineq_multipliers until `finish` splits them
        self.ineq_multipliers = DVector::from_vec(raw);
        self
    }
}

/// Map the GI multipliers (one per internal row) back onto the program's
/// constraint groups and recompute the objective.
fn finish(qp: &QuadraticProgram, rows: &Rows, sol: &mut Solution) {
    let raw = std::mem::replace(&mut sol.ineq_multipliers, DVector::zeros(0));
    let n = qp.dim();
    let mut eq = DVector::zeros(qp.eq_rhs.len());
    let mut ineq = DVector::zeros(qp.ineq_rhs.len());
    let mut lo = DVector::zeros(n);
    let mut up = DVector::zeros(n);
    for (r, u) in rows.origin.iter().zip(raw.iter()) {
        match *r {
            // row stored as +e_row with equality n'x = b: P x + q = n u
            RowOrigin::Eq(i) => eq[i] = -u,
            RowOrigin::Ineq(i) => ineq[i] = *u,
            RowOrigin::Lower(i) => lo[i] = *u,
            RowOrigin::Upper(i) => up[i] = *u,
        }
    }
    sol.eq_multipliers = eq;
    sol.ineq_multipliers = ineq;
    sol.lower_multipliers = lo;
    sol.upper_multipliers = up;
    if sol.status == SolveStatus::Optimal || sol.x.iter().all(|v| v.is_finite()) {
        sol.objective = qp.objective(&sol.x);
    }
}

#[derive(Clone, Copy, Debug)]
enum RowOrigin {
    Eq(usize),
    Ineq(usize),
    Lower(usize),
    Upper(usize),
}

/// Constraints in GI form `n' x >= b`, equalities first.
struct Rows {
    normals: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    norms: Vec<f64>,
    origin: Vec<RowOrigin>,
    n_eq: usize,
}

impl Rows {
    fn from_program(qp: &QuadraticProgram) -> Self {
        let n = qp.dim();
        let mut rows = Rows {
            normals: Vec::new(),
            rhs: Vec::new(),
            norms: Vec::new(),
            origin: Vec::new(),
            n_eq: qp.eq_rhs.len(),
        };
        for i in 0..qp.eq_rhs.len() {
            let v: Vec<f64> = qp.eq_matrix.row(i).iter().copied().collect();
            rows.push(v, qp.eq_rhs[i], RowOrigin::Eq(i));
        }
        for i in 0..qp.ineq_rhs.len() {
            let v: Vec<f64> = qp.ineq_matrix.row(i).iter().map(|a| -a).collect();
            rows.push(v, -qp.ineq_rhs[i], RowOrigin::Ineq(i));
        }
        for i in 0..n {
            if qp.lower[i].is_finite() {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                rows.push(v, qp.lower[i], RowOrigin::Lower(i));
            }
            if qp.upper[i].is_finite() {
                let mut v = vec![0.0; n];
                v[i] = -1.0;
                rows.push(v, -qp.upper[i], RowOrigin::Upper(i));
            }
        }
        rows
    }

    fn push(&mut self, normal: Vec<f64>, rhs: f64, origin: RowOrigin) {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.normals.push(normal);
        self.rhs.push(rhs);
        self.norms.push(norm);
        self.origin.push(origin);
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn slack(&self, i: usize, x: &DVector<f64>) -> f64 {
        dot(&self.normals[i], x.as_slice()) - self.rhs[i]
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Givens rotation zeroing `b` in `(a, b)`; returns `(c, s, h)`.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = a.hypot(b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    let rows = m.nrows();
    for r in 0..rows {
        let a = m[(r, i)];
        let b = m[(r, j)];
        m[(r, i)] = c * a + s * b;
        m[(r, j)] = -s * a + c * b;
    }
}

fn dual_active_set(
    chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
    q: &DVector<f64>,
    rows: &Rows,
    settings: &SolverSettings,
) -> Solution {
    let n = q.len();
    let m = rows.len();
    // J = L^{-T}, so that J J' = P^{-1}.
    let l = chol.l();
    let mut jmat = l
        .transpose()
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .expect("cholesky factor is nonsingular");
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut x = -chol.solve(q);

    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut sign: Vec<f64> = vec![1.0; m];
    let mut u: Vec<f64> = Vec::with_capacity(n);
    let mut is_active = vec![false; m];
    let mut iterations = 0usize;
    let mut next_eq = 0usize;

    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut rvec = vec![0.0; n];

    let status = 'outer: loop {
        // choose the constraint to add
        let p = if next_eq < rows.n_eq {
            let p = next_eq;
            next_eq += 1;
            if rows.slack(p, &x) > 0.0 {
                sign[p] = -1.0;
            }
            p
        } else {
            let mut worst = -settings.tol;
            let mut pick = None;
            for i in rows.n_eq..m {
                if is_active[i] || rows.norms[i] == 0.0 {
                    continue;
                }
                let s = rows.slack(i, &x) / rows.norms[i];
                if s < worst {
                    worst = s;
                    pick = Some(i);
                }
            }
            match pick {
                Some(p) => p,
                None => break SolveStatus::Optimal,
            }
        };

        let np: Vec<f64> = rows.normals[p].iter().map(|v| v * sign[p]).collect();
        let bp = rows.rhs[p] * sign[p];
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                break 'outer SolveStatus::MaxIter;
            }
            let qa = active.len();
            // d = J' n_p
            for (j, dj) in d.iter_mut().enumerate() {
                *dj = dot(jmat.column(j).as_slice(), &np);
            }
            // z = J2 d2
            z.iter_mut().for_each(|v| *v = 0.0);
            for j in qa..n {
                let col = jmat.column(j);
                let dj = d[j];
                for (zi, cij) in z.iter_mut().zip(col.iter()) {
                    *zi += cij * dj;
                }
            }
            // r = R^{-1} d1
            for i in (0..qa).rev() {
                let mut acc = d[i];
                for k in i + 1..qa {
                    acc -= r[(i, k)] * rvec[k];
                }
                rvec[i] = acc / r[(i, i)];
            }

            // dual step length
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..qa {
                if active[k] < rows.n_eq {
                    continue;
                }
                if rvec[k] > 0.0 {
                    let ratio = u[k] / rvec[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            // primal step length
            let ztn = dot(&z, &np);
            let dd: f64 = d.iter().map(|v| v * v).sum();
            let sp = dot(&np, x.as_slice()) - bp;
            let degenerate = ztn.abs() <= 1e-13 * dd.max(1e-300);
            if degenerate && p < rows.n_eq && sp.abs() <= settings.tol * rows.norms[p].max(1.0) {
                // linearly dependent equality that already holds
                continue 'outer;
            }
            let t2 = if degenerate {
                f64::INFINITY
            } else {
                (-sp / ztn).max(0.0)
            };

            let t = t1.min(t2);
            if !t.is_finite() {
                break 'outer SolveStatus::Infeasible;
            }
            for k in 0..qa {
                u[k] -= t * rvec[k];
            }
            u_plus += t;
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(z.iter()) {
                    *xi += t * zi;
                }
            }

            if t2 <= t1 {
                // full step: add p
                for j in (qa + 1..n).rev() {
                    let (c, s, h) = givens(d[j - 1], d[j]);
                    if s == 0.0 {
                        continue;
                    }
                    d[j - 1] = h;
                    d[j] = 0.0;
                    rotate_columns(&mut jmat, j - 1, j, c, s);
                }
                for i in 0..=qa {
                    r[(i, qa)] = d[i];
                }
                active.push(p);
                u.push(u_plus);
                is_active[p] = true;
                continue 'outer;
            }

            // partial step: drop the blocking constraint and retry p
            let k = drop_at.expect("finite dual step has a blocking constraint");
            is_active[active[k]] = false;
            active.remove(k);
            u.remove(k);
            for col in k..qa - 1 {
                for row in 0..qa {
                    r[(row, col)] = r[(row, col + 1)];
                }
            }
            for row in 0..qa {
                r[(row, qa - 1)] = 0.0;
            }
            for col in k..qa - 1 {
                let (c, s, h) = givens(r[(col, col)], r[(col + 1, col)]);
                if s == 0.0 {
                    continue;
                }
                r[(col, col)] = h;
                r[(col + 1, col)] = 0.0;
                for cc in col + 1..qa - 1 {
                    let a = r[(col, cc)];
                    let b = r[(col + 1, cc)];
                    r[(col, cc)] = c * a + s * b;
                    r[(col + 1, cc)] = -s * a + c * b;
                }
                rotate_columns(&mut jmat, col, col + 1, c, s);
            }
        }
    };

    let mut raw = vec![0.0; m];
    for (k, &row) in active.iter().enumerate() {
        raw[row] = u[k] * sign[row];
    }
    Solution {
        x,
        objective: f64::NAN,
        status,
        eq_multipliers: DVector::zeros(0),
        ineq_multipliers: DVector::zeros(0),
        lower_multipliers: DVector::zeros(0),
        upper_multipliers: DVector::zeros(0),
        iterations,
    }
    .with_raw(raw)
}
