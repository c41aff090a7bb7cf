//! Dantzig-type estimation of the projection matrix `W`.
//!
//! Each column solves
//!
//! ```text
//! minimise ||w||_1  subject to  ||b - A w||_inf <= lambda
//! ```
//!
//! with `A = H_bb` (nuisance Hessian block) and `b` a column of `H_bg`. The
//! solver runs a bounded-variable primal simplex on the dual linear program
//!
//! ```text
//! maximise b'u - lambda ||u||_1  subject to  ||A u||_inf <= 1
//! ```
//!
//! written with split variables `u = u+ - u-` and a bounded slack
//! `s = A u in [-1, 1]`. `u = 0` is dual feasible, so no phase one is needed,
//! and the optimal multipliers of `A u - s = 0` are the primal `w`. An
//! unbounded dual certifies that no `w` meets the constraint.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FadsError, Result};

/// Multiplier `c'` in the default `lambda2 = c' * C'_{n, p_m, q}`.
pub const DEFAULT_LAMBDA2_SCALE: f64 = 0.5;
pub const DEFAULT_TOL: f64 = 1e-9;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-12;

/// `C'_{n, p_m, q}` from the projection rate, `q` nuisance columns.
pub fn lambda2_rate_constant(n: usize, p_m: usize, p_rest: usize) -> f64 {
    let (n, pm, pr) = (n as f64, p_m as f64, p_rest as f64);
    ((pm.ln() * n.ln() / n).sqrt() + (n.ln() / pm).sqrt() + 1.0) * (pr.ln() / n).sqrt()
}

pub fn lambda2_rate(n: usize, p_m: usize, p_rest: usize, scale: f64) -> f64 {
    scale * lambda2_rate_constant(n, p_m, p_rest)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionMatrix {
    /// `W`, q x K over the q nuisance columns.
    #[serde(skip)]
    pub w: DMatrix<f64>,
    pub lambda2: f64,
    /// `||h_bg,k - h_bb w_k||_inf` per column.
    pub feasibility: Vec<f64>,
    pub l1_norms: Vec<f64>,
    pub pivots: Vec<usize>,
}

impl ProjectionMatrix {
    /// The zero projection (no decorrelation).
    pub fn zeros(rows: usize, cols: usize, lambda2: f64) -> Self {
        ProjectionMatrix {
            w: DMatrix::zeros(rows, cols),
            lambda2,
            feasibility: vec![0.0; cols],
            l1_norms: vec![0.0; cols],
            pivots: vec![0; cols],
        }
    }
}

/// One Dantzig column: returns `(w, pivots)`.
pub fn dantzig_column(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lambda: f64,
    tol: f64,
    column: usize,
) -> Result<(DVector<f64>, usize)> {
    let m = a.nrows();
    if !a.is_square() || b.len() != m {
        return Err(FadsError::Dimension(format!(
            "Dantzig system is {}x{} with right-hand side {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(FadsError::InvalidInput("lambda2 must be nonnegative".into()));
    }
    if b.amax() <= lambda {
        return Ok((DVector::zeros(m), 0));
    }
    let mut lp = DualSimplex::new(a, b, lambda);
    let budget = 50 * m + 1000;
    let outcome = lp.solve(budget);
    let w = lp.multipliers();
    let residual = (b - a * &w).amax();
    match outcome {
        Outcome::Optimal if residual <= lambda + tol => Ok((w, lp.pivots)),
        _ => Err(FadsError::Infeasible {
            column,
            residual,
            lambda2: lambda,
        }),
    }
}

/// Solves every column of `h_bg` against `h_bb`.
pub fn estimate_projection(
    h_bb: &DMatrix<f64>,
    h_bg: &DMatrix<f64>,
    lambda2: f64,
    tol: f64,
) -> Result<ProjectionMatrix> {
    if h_bg.nrows() != h_bb.nrows() {
        return Err(FadsError::Dimension(format!(
            "H_bg has {} rows, H_bb is {}x{}",
            h_bg.nrows(),
            h_bb.nrows(),
            h_bb.ncols()
        )));
    }
    let cols: Vec<(DVector<f64>, usize)> = (0..h_bg.ncols())
        .into_par_iter()
        .map(|k| dantzig_column(h_bb, &h_bg.column(k).into_owned(), lambda2, tol, k))
        .collect::<Result<_>>()?;
    let mut w = DMatrix::zeros(h_bb.nrows(), h_bg.ncols());
    let mut feasibility = Vec::new();
    let mut l1_norms = Vec::new();
    let mut pivots = Vec::new();
    for (k, (col, piv)) in cols.into_iter().enumerate() {
        feasibility.push((h_bg.column(k) - h_bb * &col).amax());
        l1_norms.push(col.lp_norm(1));
        pivots.push(piv);
        w.set_column(k, &col);
    }
    Ok(ProjectionMatrix {
        w,
        lambda2,
        feasibility,
        l1_norms,
        pivots,
    })
}

enum Outcome {
    Optimal,
    Unbounded,
    Budget,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Var {
    Plus(usize),
    Minus(usize),
    Slack(usize),
}

/// Dense tableau for `A u+ - A u- - s = 0`, `u+- >= 0`, `s in [-1, 1]`.
///
/// Only `B^{-1}[A | -I]` is stored: the `u-` columns are the negated `u+`
/// columns.
struct DualSimplex<'a> {
    m: usize,
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    lambda: f64,
    /// m x 2m: columns `0..m` are `u+`, `m..2m` are slacks.
    tab: DMatrix<f64>,
    /// Reduced costs of the stored columns.
    cost: DVector<f64>,
    basis: Vec<Var>,
    value: DVector<f64>,
    /// Nonbasic slack sitting at its upper bound (+1) rather than -1.
    slack_at_upper: Vec<bool>,
    is_basic: Vec<bool>,
    pivots: usize,
}

impl<'a> DualSimplex<'a> {
    fn new(a: &'a DMatrix<f64>, b: &'a DVector<f64>, lambda: f64) -> Self {
        let m = a.nrows();
        // Initial basis is the slacks with B = -I, so B^{-1}[A | -I] = [-A | I].
        let mut tab = DMatrix::zeros(m, 2 * m);
        tab.columns_mut(0, m).copy_from(&(-a));
        tab.columns_mut(m, m).fill_with_identity();
        let mut cost = DVector::zeros(2 * m);
        for j in 0..m {
            cost[j] = b[j] - lambda;
        }
        let mut is_basic = vec![false; 3 * m];
        is_basic[2 * m..].iter_mut().for_each(|v| *v = true);
        DualSimplex {
            m,
            a,
            b,
            lambda,
            tab,
            cost,
            basis: (0..m).map(Var::Slack).collect(),
            value: DVector::zeros(m),
            slack_at_upper: vec![false; m],
            is_basic,
            pivots: 0,
        }
    }

    fn id(&self, v: Var) -> usize {
        match v {
            Var::Plus(j) => j,
            Var::Minus(j) => self.m + j,
            Var::Slack(i) => 2 * self.m + i,
        }
    }

    fn reduced_cost(&self, v: Var) -> f64 {
        match v {
            Var::Plus(j) => self.cost[j],
            Var::Minus(j) => -2.0 * self.lambda - self.cost[j],
            Var::Slack(i) => self.cost[self.m + i],
        }
    }

    fn column(&self, v: Var) -> DVector<f64> {
        match v {
            Var::Plus(j) => self.tab.column(j).into_owned(),
            Var::Minus(j) => -self.tab.column(j),
            Var::Slack(i) => self.tab.column(self.m + i).into_owned(),
        }
    }

    fn bounds(v: Var) -> (f64, f64) {
        match v {
            Var::Slack(_) => (-1.0, 1.0),
            _ => (0.0, f64::INFINITY),
        }
    }

    /// Entering variable and its direction (+1 increase, -1 decrease).
    fn choose_entering(&self, bland: bool) -> Option<(Var, f64)> {
        let mut best: Option<(Var, f64, f64)> = None;
        let candidates = (0..self.m)
            .flat_map(|j| [Var::Plus(j), Var::Minus(j)])
            .chain((0..self.m).map(Var::Slack));
        for v in candidates {
            if self.is_basic[self.id(v)] {
                continue;
            }
            let d = self.reduced_cost(v);
            let dir = match v {
                Var::Slack(i) if self.slack_at_upper[i] => {
                    if d < -COST_TOL {
                        -1.0
                    } else {
                        continue;
                    }
                }
                _ => {
                    if d > COST_TOL {
                        1.0
                    } else {
                        continue;
                    }
                }
            };
            if bland {
                return Some((v, dir));
            }
            if best.is_none_or(|(_, _, s)| d.abs() > s) {
                best = Some((v, dir, d.abs()));
            }
        }
        best.map(|(v, dir, _)| (v, dir))
    }

    fn solve(&mut self, budget: usize) -> Outcome {
        let mut degenerate_run = 0;
        while self.pivots < budget {
            let bland = degenerate_run > 50;
            let Some((enter, dir)) = self.choose_entering(bland) else {
                return Outcome::Optimal;
            };
            let alpha = self.column(enter);
            let (lo, hi) = Self::bounds(enter);
            // step limit from the entering variable's own range
            let mut theta = hi - lo;
            let mut leave: Option<usize> = None;
            for r in 0..self.m {
                let rate = dir * alpha[r];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let (blo, bhi) = Self::bounds(self.basis[r]);
                let room = if rate > 0.0 {
                    self.value[r] - blo
                } else {
                    bhi - self.value[r]
                };
                let t = room.max(0.0) / rate.abs();
                let better = match leave {
                    None => t < theta,
                    Some(l) => {
                        t < theta - 1e-12
                            || (t <= theta + 1e-12 && rate.abs() > (dir * alpha[l]).abs())
                    }
                };
                if better {
                    theta = t;
                    leave = Some(r);
                }
            }
            if theta.is_infinite() {
                return Outcome::Unbounded;
            }
            degenerate_run = if theta <= 1e-12 { degenerate_run + 1 } else { 0 };
            self.value.axpy(-dir * theta, &alpha, 1.0);
            self.pivots += 1;
            match leave {
                None => {
                    // bound flip of a slack
                    if let Var::Slack(i) = enter {
                        self.slack_at_upper[i] = !self.slack_at_upper[i];
                    }
                }
                Some(r) => {
                    let entering_value = match enter {
                        Var::Slack(i) => {
                            (if self.slack_at_upper[i] { 1.0 } else { -1.0 }) + dir * theta
                        }
                        _ => dir * theta,
                    };
                    let leaving = self.basis[r];
                    if let Var::Slack(i) = leaving {
                        self.slack_at_upper[i] = dir * alpha[r] < 0.0;
                    }
                    let lid = self.id(leaving);
                    let eid = self.id(enter);
                    self.is_basic[lid] = false;
                    self.is_basic[eid] = true;
                    self.basis[r] = enter;
                    self.value[r] = entering_value;
                    self.pivot(r, enter, &alpha);
                }
            }
        }
        Outcome::Budget
    }

    fn pivot(&mut self, r: usize, enter: Var, alpha: &DVector<f64>) {
        let piv = alpha[r];
        let row = self.tab.row(r).transpose() / piv;
        let mut others = alpha.clone();
        others[r] = 0.0;
        self.tab.ger(-1.0, &others, &row, 1.0);
        self.tab.set_row(r, &row.transpose());
        let d = self.reduced_cost(enter);
        self.cost.axpy(-d, &row, 1.0);
    }

    /// Multipliers `y = B^{-T} c_B`, recomputed from a fresh factorisation of
    /// the final basis so that tableau drift does not leak into `w`.
    fn multipliers(&self) -> DVector<f64> {
        let m = self.m;
        let mut basis = DMatrix::zeros(m, m);
        let mut cb = DVector::zeros(m);
        for (r, v) in self.basis.iter().enumerate() {
            match *v {
                Var::Plus(j) => {
                    basis.set_column(r, &self.a.column(j));
                    cb[r] = self.b[j] - self.lambda;
                }
                Var::Minus(j) => {
                    basis.set_column(r, &(-self.a.column(j)));
                    cb[r] = -self.b[j] - self.lambda;
                }
                Var::Slack(i) => basis[(i, r)] = -1.0,
            }
        }
        match basis.transpose().lu().solve(&cb) {
            Some(y) => y,
            None => DVector::from_iterator(m, (0..m).map(|i| self.cost[m + i])),
        }
    }
}
