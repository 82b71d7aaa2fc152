//! Small dense linear programs in standard form
//! `min cᵀx  s.t.  Ax = b, x ≥ 0`,
//! solved by a two-phase tableau simplex.
//!
//! Pivoting uses Dantzig's rule and falls back to Bland's rule during long
//! runs of degenerate pivots. Once the optimal basis is known, the basic
//! solution and the duals are recomputed from the original data with an LU
//! factorization, so accumulated tableau round-off does not leak into the
//! result.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct StandardLp {
    pub a: DMatrix<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    /// Equality-constraint duals: `Aᵀy ≤ c` with `bᵀy` equal to the optimum.
    pub y: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

#[derive(Debug, Clone)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-11;
const DEGENERATE_STREAK: usize = 50;

struct Tableau {
    rows: usize,
    width: usize, // structural + artificial columns, rhs stored separately
    t: Vec<f64>,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    cost_rhs: f64,
    basis: Vec<usize>,
    active: Vec<bool>,
}

impl Tableau {
    fn at(&self, r: usize, j: usize) -> f64 {
        self.t[r * self.width + j]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(pr, pc);
        for v in &mut self.t[pr * w..(pr + 1) * w] {
            *v *= inv;
        }
        self.rhs[pr] *= inv;
        let (prow, prhs) = (self.t[pr * w..(pr + 1) * w].to_vec(), self.rhs[pr]);
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f != 0.0 {
                let row = &mut self.t[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&prow) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
                self.rhs[r] -= f * prhs;
            }
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for (v, p) in self.cost.iter_mut().zip(&prow) {
                *v -= f * p;
            }
            self.cost[pc] = 0.0;
            self.cost_rhs -= f * prhs;
        }
        self.basis[pr] = pc;
    }

    /// Runs simplex pivots over columns `< allowed`. Returns false if unbounded.
    fn optimize(&mut self, allowed: usize, pivots: &mut usize, cap: usize) -> Result<bool> {
        let mut streak = 0usize;
        loop {
            let bland = streak >= DEGENERATE_STREAK;
            let mut enter = None;
            let mut best = -COST_TOL;
            for j in 0..allowed {
                let d = self.cost[j];
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(pc) = enter else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                if !self.active[r] {
                    continue;
                }
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs[r].max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12
                                || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, ratio)) = leave else {
                return Ok(false);
            };
            streak = if ratio <= 1e-12 { streak + 1 } else { 0 };
            self.pivot(pr, pc);
            *pivots += 1;
            if *pivots > cap {
                return Err(Error::Lp {
                    reason: format!("pivot limit {cap} reached"),
                    best: None,
                });
            }
        }
    }
}

pub fn solve(lp: &StandardLp) -> Result<LpOutcome> {
    let (m, n) = lp.a.shape();
    if lp.b.len() != m || lp.c.len() != n {
        return Err(Error::Dimension("LP data shapes disagree".into()));
    }
    let width = n + m;
    let mut t = vec![0.0; m * width];
    let mut rhs = vec![0.0; m];
    let mut sign = vec![1.0; m];
    for r in 0..m {
        if lp.b[r] < 0.0 {
            sign[r] = -1.0;
        }
        for j in 0..n {
            t[r * width + j] = sign[r] * lp.a[(r, j)];
        }
        t[r * width + n + r] = 1.0;
        rhs[r] = sign[r] * lp.b[r];
    }
    // Phase one: minimise the sum of artificials.
    let mut cost = vec![0.0; width];
    let mut cost_rhs = 0.0;
    for r in 0..m {
        for j in 0..n {
            cost[j] -= t[r * width + j];
        }
        cost_rhs -= rhs[r];
    }
    let mut tab = Tableau {
        rows: m,
        width,
        t,
        rhs,
        cost,
        cost_rhs,
        basis: (n..n + m).collect(),
        active: vec![true; m],
    };
    let cap = 50 * (m + n) + 1000;
    let mut pivots = 0;
    tab.optimize(n, &mut pivots, cap)?;
    let b_scale = lp.b.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if -tab.cost_rhs > 1e-9 * b_scale {
        return Ok(LpOutcome::Infeasible);
    }
    // Drive remaining artificials out of the basis; rows where that is
    // impossible are redundant.
    for r in 0..m {
        if tab.basis[r] < n {
            continue;
        }
        let col = (0..n)
            .filter(|&j| !tab.basis.contains(&j))
            .max_by(|&a, &b| tab.at(r, a).abs().total_cmp(&tab.at(r, b).abs()));
        match col {
            Some(j) if tab.at(r, j).abs() > PIVOT_TOL => tab.pivot(r, j),
            _ => tab.active[r] = false,
        }
    }
    // Phase two cost row: c_j − c_Bᵀ(B⁻¹A)_j.
    tab.cost = vec![0.0; width];
    tab.cost[..n].copy_from_slice(&lp.c);
    tab.cost_rhs = 0.0;
    for r in 0..m {
        if !tab.active[r] {
            continue;
        }
        let cb = if tab.basis[r] < n { lp.c[tab.basis[r]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..width {
                tab.cost[j] -= cb * tab.t[r * width + j];
            }
            tab.cost_rhs -= cb * tab.rhs[r];
        }
    }
    if !tab.optimize(n, &mut pivots, cap)? {
        return Ok(LpOutcome::Unbounded);
    }
    polish(lp, &tab, &sign, pivots)
}

/// Recomputes `x_B` and `y` for the final basis from the original data.
fn polish(lp: &StandardLp, tab: &Tableau, sign: &[f64], pivots: usize) -> Result<LpOutcome> {
    let (m, n) = lp.a.shape();
    let rows: Vec<usize> = (0..m).filter(|&r| tab.active[r]).collect();
    let cols: Vec<usize> = rows.iter().map(|&r| tab.basis[r]).collect();
    let k = rows.len();
    let basis = DMatrix::from_fn(k, k, |i, j| lp.a[(rows[i], cols[j])]);
    let rhs = DVector::from_fn(k, |i, _| lp.b[rows[i]]);
    let cb = DVector::from_fn(k, |j, _| lp.c[cols[j]]);
    let lu = basis.clone().lu();
    let xb = lu.solve(&rhs);
    let yk = basis.transpose().lu().solve(&cb);
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    match (xb, yk) {
        (Some(xb), Some(yk)) => {
            for (j, &c) in cols.iter().enumerate() {
                x[c] = xb[j];
            }
            for (i, &r) in rows.iter().enumerate() {
                y[r] = yk[i];
            }
        }
        _ => {
            // Singular basis in the original data: fall back to the tableau.
            for r in 0..m {
                if tab.active[r] && tab.basis[r] < n {
                    x[tab.basis[r]] = tab.rhs[r];
                }
            }
            for r in 0..m {
                // Reduced cost of artificial r is −y_r (in flipped row sign).
                y[r] = -tab.cost[n + r] * sign[r];
            }
        }
    }
    let objective = lp.c.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal(LpSolution {
        x,
        y,
        objective,
        pivots,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(out: LpOutcome) -> LpSolution {
        match out {
            LpOutcome::Optimal(s) => s,
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 (optimum 36 at (2, 6)).
        let a = DMatrix::from_row_slice(3, 5, &[
            1.0, 0.0, 1.0, 0.0, 0.0,
            0.0, 2.0, 0.0, 1.0, 0.0,
            3.0, 2.0, 0.0, 0.0, 1.0,
        ]);
        let lp = StandardLp { a, b: vec![4.0, 12.0, 18.0], c: vec![-3.0, -5.0, 0.0, 0.0, 0.0] };
        let s = optimal(solve(&lp).unwrap());
        assert!((s.objective + 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
        // Strong duality and dual feasibility.
        let by: f64 = lp.b.iter().zip(&s.y).map(|(b, y)| b * y).sum();
        assert!((by - s.objective).abs() < 1e-10);
        for j in 0..5 {
            let aty: f64 = (0..3).map(|i| lp.a[(i, j)] * s.y[i]).sum();
            assert!(aty <= lp.c[j] + 1e-10);
        }
    }

    #[test]
    fn negative_rhs_and_redundant_rows() {
        // x1 + x2 = -(-2) written with a negative row, plus a duplicated row.
        let a = DMatrix::from_row_slice(3, 3, &[
            -1.0, -1.0, 0.0,
            1.0, 1.0, 0.0,
            0.0, 1.0, 1.0,
        ]);
        let lp = StandardLp { a, b: vec![-2.0, 2.0, 3.0], c: vec![1.0, 2.0, 0.5] };
        let s = optimal(solve(&lp).unwrap());
        // x1 = 2, x2 = 0, x3 = 3 gives 3.5; any mass moved to x2 costs more.
        assert!((s.objective - 3.5).abs() < 1e-10, "{}", s.objective);
        let by: f64 = lp.b.iter().zip(&s.y).map(|(b, y)| b * y).sum();
        assert!((by - s.objective).abs() < 1e-10);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let lp = StandardLp { a, b: vec![1.0, 2.0], c: vec![1.0, 1.0] };
        assert!(matches!(solve(&lp).unwrap(), LpOutcome::Infeasible));
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let lp = StandardLp { a, b: vec![1.0], c: vec![-1.0, 0.0] };
        assert!(matches!(solve(&lp).unwrap(), LpOutcome::Unbounded));
    }
}
