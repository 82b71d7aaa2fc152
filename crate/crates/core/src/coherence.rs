//! Mutual coherence, generalized mutual coherence and the "good" weight
//! matrix used by the analytic LISTA-CP parameters.
//!
//! The generalized coherence is a min-max over matrices `W` with
//! `W_iᵀA_i = 1`. Its constraints only couple `W_i` with itself, so it splits
//! into one small problem per column:
//!
//! ```text
//! t_i = min_w max_{j≠i} |wᵀA_j|   s.t.  wᵀA_i = 1
//! ```
//!
//! By LP duality `t_i = 1 / min{‖z‖₁ : Σ_{j≠i} z_j A_j = A_i}`, a basis-pursuit
//! problem with only `m` equality rows. We solve that with the dense simplex
//! and read `w` off its dual: the dual optimum `y` satisfies `|A_jᵀy| ≤ 1` and
//! `A_iᵀy = ‖z‖₁`, so `w = y / A_iᵀy` is feasible with value `1/‖z‖₁`. The
//! primal `z` doubles as a certificate: any feasible `w` obeys
//! `1 = Σ z_j wᵀA_j ≤ ‖z‖₁·max_j |wᵀA_j|`.
//!
//! The max-entry minimisation that selects a good matrix also decouples: the
//! global constraint `max_{i≠j}|W_iᵀA_j| = μ̃` is met as soon as every column
//! satisfies `≤ μ̃` (the column attaining `μ̃` keeps equality), and
//! `max |W_ij|` is minimised by minimising each column's `‖W_i‖_∞`.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_inf, DenseMatrix};
use crate::lp::{self, LpOutcome, StandardLp};
use crate::parallel;
use crate::rng::{self, Domain};

pub const UNIT_NORM_TOL: f64 = 1e-8;
/// Slack on the cross-coherence constraint when minimising entries.
pub const PHASE2_SLACK: f64 = 1e-9;

fn check_unit_columns(a: &DenseMatrix) -> Result<()> {
    for (j, n) in a.column_norms().into_iter().enumerate() {
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Precondition(format!(
                "column {j} has norm {n}, expected unit norm"
            )));
        }
    }
    Ok(())
}

/// `max_{i≠j} |A_iᵀA_j|` for a column-normalized `A`.
pub fn mutual_coherence(a: &DenseMatrix) -> Result<f64> {
    check_unit_columns(a)?;
    let gram = a.as_dmatrix().tr_mul(a.as_dmatrix());
    let mut mu = 0.0f64;
    for j in 0..a.cols() {
        for i in 0..a.cols() {
            if i != j {
                mu = mu.max(gram[(i, j)].abs());
            }
        }
    }
    Ok(mu)
}

/// Largest `|wᵀA_j|` over `j ≠ i`.
pub fn cross_coherence(a: &DenseMatrix, i: usize, w: &[f64]) -> f64 {
    (0..a.cols())
        .filter(|&j| j != i)
        .map(|j| dot(w, a.col(j)).abs())
        .fold(0.0, f64::max)
}

/// Solution of the per-column minimax problem.
#[derive(Debug, Clone)]
pub struct ColumnOptimum {
    pub w: Vec<f64>,
    /// `max_{j≠i} |wᵀA_j|`, evaluated directly from `w`.
    pub t: f64,
    /// `1/‖z‖₁` from the basis-pursuit primal; a lower bound on the optimum
    /// up to the primal residual.
    pub lower_bound: f64,
}

fn others(n: usize, i: usize) -> impl Iterator<Item = usize> {
    (0..n).filter(move |&j| j != i)
}

/// Projection residual of `A_i` off the span of the other columns.
fn orthogonal_residual(a: &DenseMatrix, i: usize) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    let cols: Vec<usize> = others(n, i).collect();
    let ao = DMatrix::from_fn(m, cols.len(), |r, c| a[(r, cols[c])]);
    let svd = ao.svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let ai = a.column(i).into_owned();
    let mut r = ai.clone();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > smax * 1e-12 * (m.max(n) as f64) {
            let uk = u.column(k);
            let c = uk.dot(&ai);
            r -= uk * c;
        }
    }
    r.as_slice().to_vec()
}

/// `argmin_w max_{j≠i} |wᵀA_j|` subject to `wᵀA_i = 1`.
pub fn column_minimax_lp(a: &DenseMatrix, i: usize) -> Result<ColumnOptimum> {
    check_unit_columns(a)?;
    let (m, n) = (a.rows(), a.cols());
    if i >= n {
        return Err(Error::Dimension(format!("column {i} out of range for {n} columns")));
    }
    let cols: Vec<usize> = others(n, i).collect();
    let k = cols.len();
    let bp = DMatrix::from_fn(m, 2 * k, |r, c| {
        if c < k {
            a[(r, cols[c])]
        } else {
            -a[(r, cols[c - k])]
        }
    });
    let lp = StandardLp {
        a: bp,
        b: a.col(i).to_vec(),
        c: vec![1.0; 2 * k],
    };
    match lp::solve(&lp)? {
        LpOutcome::Optimal(sol) => {
            let beta = dot(&sol.y, a.col(i));
            if !(beta > 0.0) {
                return Err(Error::Lp {
                    reason: format!("degenerate dual for column {i}"),
                    best: None,
                });
            }
            let w: Vec<f64> = sol.y.iter().map(|v| v / beta).collect();
            let t = cross_coherence(a, i, &w);
            let l1: f64 = (0..k).map(|c| (sol.x[c] - sol.x[c + k]).abs()).sum();
            Ok(ColumnOptimum {
                w,
                t,
                lower_bound: 1.0 / l1,
            })
        }
        LpOutcome::Infeasible => {
            // A_i is outside the span of the others: annihilate them exactly.
            let r = orthogonal_residual(a, i);
            let scale = dot(&r, a.col(i));
            let w: Vec<f64> = r.iter().map(|v| v / scale).collect();
            let t = cross_coherence(a, i, &w);
            Ok(ColumnOptimum {
                w,
                t,
                lower_bound: 0.0,
            })
        }
        LpOutcome::Unbounded => Err(Error::Lp {
            reason: format!("basis pursuit for column {i} reported unbounded"),
            best: None,
        }),
    }
}

/// `argmin ‖w‖_∞` subject to `wᵀA_i = 1` and `max_{j≠i}|wᵀA_j| ≤ tau`.
///
/// Solved through its dual, whose equality rows are the `m` coordinates of
/// `w` plus one normalisation row.
pub fn min_entry_weight(a: &DenseMatrix, i: usize, tau: f64) -> Result<Option<Vec<f64>>> {
    let (m, n) = (a.rows(), a.cols());
    let cols: Vec<usize> = others(n, i).collect();
    let k = cols.len();
    // Column blocks: ν⁺, ν⁻, α (k), β (k), γ (m), δ (m), slack.
    let width = 2 + 2 * k + 2 * m + 1;
    let mut mat = DMatrix::zeros(m + 1, width);
    let mut c = vec![0.0; width];
    for r in 0..m {
        mat[(r, 0)] = a[(r, i)];
        mat[(r, 1)] = -a[(r, i)];
    }
    c[0] = -1.0;
    c[1] = 1.0;
    for (q, &j) in cols.iter().enumerate() {
        for r in 0..m {
            mat[(r, 2 + q)] = -a[(r, j)];
            mat[(r, 2 + k + q)] = a[(r, j)];
        }
        c[2 + q] = tau;
        c[2 + k + q] = tau;
    }
    for r in 0..m {
        mat[(r, 2 + 2 * k + r)] = -1.0;
        mat[(m, 2 + 2 * k + r)] = 1.0;
        mat[(r, 2 + 2 * k + m + r)] = 1.0;
        mat[(m, 2 + 2 * k + m + r)] = 1.0;
    }
    mat[(m, width - 1)] = 1.0;
    let mut b = vec![0.0; m + 1];
    b[m] = 1.0;
    match lp::solve(&StandardLp { a: mat, b, c })? {
        LpOutcome::Optimal(sol) => {
            let w: Vec<f64> = sol.y[..m].iter().map(|v| -v).collect();
            let s = dot(&w, a.col(i));
            if !(s.abs() > 1e-12) {
                return Ok(None);
            }
            Ok(Some(w.into_iter().map(|v| v / s).collect()))
        }
        _ => Ok(None),
    }
}

#[derive(Debug, Clone)]
pub struct CoherenceReport {
    pub mu: f64,
    pub mu_tilde: f64,
    pub w_good: DenseMatrix,
    pub c_w: f64,
    pub s_max_admissible: usize,
    /// Per-column minimax values `t_i`.
    pub column_t: Vec<f64>,
    /// Per-column basis-pursuit lower bounds.
    pub column_lower: Vec<f64>,
}

/// JSON-facing summary of a [`CoherenceReport`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoherenceSummary {
    pub mu: f64,
    pub mu_tilde: f64,
    pub c_w: f64,
    pub s_max_admissible: usize,
    pub w_good_path: Option<String>,
}

impl CoherenceReport {
    pub fn summary(&self, w_good_path: Option<String>) -> CoherenceSummary {
        CoherenceSummary {
            mu: self.mu,
            mu_tilde: self.mu_tilde,
            c_w: self.c_w,
            s_max_admissible: self.s_max_admissible,
            w_good_path,
        }
    }

    /// Largest `|W̃_iᵀA_j|`, `i ≠ j`, of the assembled matrix.
    pub fn realized_cross(&self, a: &DenseMatrix) -> f64 {
        (0..a.cols())
            .map(|i| cross_coherence(a, i, self.w_good.col(i)))
            .fold(0.0, f64::max)
    }
}

/// Largest integer `s` with `s < (1 + 1/μ̃)/2`, capped at `n`.
pub fn s_max_admissible(mu_tilde: f64, n: usize) -> usize {
    if mu_tilde <= 0.0 {
        return n;
    }
    let bound = (1.0 + 1.0 / mu_tilde) / 2.0;
    ((bound.ceil() - 1.0).max(0.0) as usize).min(n)
}

pub fn generalized_coherence(a: &DenseMatrix) -> Result<CoherenceReport> {
    let mu = mutual_coherence(a)?;
    let n = a.cols();
    let phase1 = parallel::map_indexed(n, |i| column_minimax_lp(a, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mu_tilde = phase1.iter().map(|c| c.t).fold(0.0, f64::max);
    let tau = mu_tilde + PHASE2_SLACK;
    let cols = parallel::map_indexed(n, |i| -> Result<Vec<f64>> {
        let fallback = &phase1[i].w;
        let Some(w) = min_entry_weight(a, i, tau)? else {
            return Ok(fallback.clone());
        };
        let ok = cross_coherence(a, i, &w) <= mu_tilde + 2.0 * PHASE2_SLACK
            && norm_inf(&w) <= norm_inf(fallback) + 1e-12
            && (dot(&w, a.col(i)) - 1.0).abs() <= 1e-9;
        Ok(if ok { w } else { fallback.clone() })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let data: Vec<f64> = cols.concat();
    let w_good = DenseMatrix::new(a.rows(), n, data)?;
    let c_w = norm_inf(w_good.data());
    Ok(CoherenceReport {
        mu,
        mu_tilde,
        w_good,
        c_w,
        s_max_admissible: s_max_admissible(mu_tilde, n),
        column_t: phase1.iter().map(|c| c.t).collect(),
        column_lower: phase1.iter().map(|c| c.lower_bound).collect(),
    })
}

/// Search budget for [`verify_optimality`].
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub starts: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            starts: 50,
            steps: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleVerdict {
    pub confirmed: bool,
    /// Smallest objective value the search reached.
    pub best_found: f64,
}

/// Projected subgradient search for a point beating `t` by more than 1e-6.
///
/// Independent of the LP: it only evaluates `max_{j≠i}|wᵀA_j|` on the
/// hyperplane `wᵀA_i = 1`. Also rejects claims where `w` itself does not
/// attain `t`.
pub fn oracle_search(a: &DenseMatrix, i: usize, w: &[f64], t: f64, cfg: &OracleConfig) -> OracleVerdict {
    let (m, n) = (a.rows(), a.cols());
    let ai = a.col(i);
    let aa = dot(ai, ai);
    let claimed = cross_coherence(a, i, w);
    let mut best = claimed;
    if (dot(w, ai) - 1.0).abs() > 1e-9 || claimed > t + 1e-6 {
        return OracleVerdict {
            confirmed: false,
            best_found: best,
        };
    }
    let cols: Vec<usize> = others(n, i).collect();
    let k = cols.len();
    // gram[p][q] = A_pᵀA_q over the other columns; h = A_oᵀA_i.
    let gram: Vec<f64> = (0..k * k)
        .map(|pq| dot(a.col(cols[pq / k]), a.col(cols[pq % k])))
        .collect();
    let h: Vec<f64> = cols.iter().map(|&j| dot(a.col(j), ai)).collect();
    let dir_norm: Vec<f64> = (0..k)
        .map(|p| (gram[p * k + p] - h[p] * h[p] / aa).max(0.0).sqrt())
        .collect();

    let mut r = rng::stream(cfg.seed, Domain::Oracle, i as u64);
    for start in 0..cfg.starts {
        let mut x: Vec<f64> = if start == 0 {
            w.to_vec()
        } else {
            (0..m)
                .map(|_| r.sample::<f64, _>(StandardNormal) / (m as f64).sqrt())
                .collect()
        };
        let shift = (1.0 - dot(&x, ai)) / aa;
        x.iter_mut().zip(ai).for_each(|(v, q)| *v += shift * q);
        let mut u: Vec<f64> = cols.iter().map(|&j| dot(&x, a.col(j))).collect();
        let step0 = 0.5;
        for step in 0..cfg.steps {
            if step % 512 == 511 {
                for (uq, &j) in u.iter_mut().zip(&cols) {
                    *uq = dot(&x, a.col(j));
                }
            }
            let (p, val) = u
                .iter()
                .enumerate()
                .fold((0, -1.0), |(bp, bv), (q, v)| if v.abs() > bv { (q, v.abs()) } else { (bp, bv) });
            if val < best - 1e-9 {
                let exact = u
                    .iter()
                    .zip(&cols)
                    .map(|(_, &j)| dot(&x, a.col(j)).abs())
                    .fold(0.0, f64::max);
                best = best.min(exact);
                if best < t - 1e-6 {
                    return OracleVerdict {
                        confirmed: false,
                        best_found: best,
                    };
                }
            }
            if dir_norm[p] < 1e-12 {
                break;
            }
            let sgn = u[p].signum();
            let eta = step0 / ((step + 1) as f64).sqrt() / dir_norm[p];
            // x -= eta * sgn * (A_p - (h_p/aa) A_i), kept on the hyperplane.
            let coef = sgn * eta;
            let jp = cols[p];
            let proj = h[p] / aa;
            for ((xv, &ap), &aiv) in x.iter_mut().zip(a.col(jp)).zip(ai) {
                *xv -= coef * (ap - proj * aiv);
            }
            for q in 0..k {
                u[q] -= coef * (gram[q * k + p] - proj * h[q]);
            }
        }
    }
    OracleVerdict {
        confirmed: true,
        best_found: best,
    }
}

/// True when the subgradient search finds nothing below `t − 1e-6`.
pub fn verify_optimality(a: &DenseMatrix, i: usize, w: &[f64], t: f64, cfg: &OracleConfig) -> bool {
    oracle_search(a, i, w, t, cfg).confirmed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{gen_dictionary, ProblemConfig};
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn hand_example() -> DenseMatrix {
        DenseMatrix::from_row_slice(2, 3, &[1.0, 0.0, FRAC_1_SQRT_2, 0.0, 1.0, FRAC_1_SQRT_2]).unwrap()
    }

    fn random_dict(m: usize, n: usize, seed: u64) -> DenseMatrix {
        gen_dictionary(&ProblemConfig { m, n, ..ProblemConfig::paper_scale(seed) }).unwrap()
    }

    fn quick() -> OracleConfig {
        OracleConfig { starts: 8, steps: 4000, seed: 1 }
    }

    #[test]
    fn mutual_coherence_examples() {
        assert_eq!(mutual_coherence(&DenseMatrix::identity(3)).unwrap(), 0.0);
        let dup = DenseMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(mutual_coherence(&dup).unwrap(), 1.0);
        assert!((mutual_coherence(&hand_example()).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
        let bad = DenseMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(mutual_coherence(&bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn orthonormal_columns_are_annihilated() {
        let q = DenseMatrix::identity(3);
        for i in 0..3 {
            let opt = column_minimax_lp(&q, i).unwrap();
            assert!(opt.t.abs() < 1e-12);
            for (w, e) in opt.w.iter().zip(q.col(i)) {
                assert!((w - e).abs() < 1e-12);
            }
            assert!(verify_optimality(&q, i, &opt.w, 0.0, &quick()));
        }
    }

    #[test]
    fn hand_solved_columns() {
        // Column 0: w = (1, y), minimise max(|y|, |1+y|/√2) -> y = -1/(1+√2).
        let a = hand_example();
        let c0 = column_minimax_lp(&a, 0).unwrap();
        assert!((c0.t - 1.0 / (1.0 + SQRT_2)).abs() < 1e-9);
        assert!((c0.lower_bound - c0.t).abs() < 1e-9);
        let c1 = column_minimax_lp(&a, 1).unwrap();
        assert!((c1.t - 1.0 / (1.0 + SQRT_2)).abs() < 1e-9);
        // Column 2: minimise max(|x|, |y|) with (x + y)/√2 = 1.
        let c2 = column_minimax_lp(&a, 2).unwrap();
        assert!((c2.t - FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((c2.w[0] - FRAC_1_SQRT_2).abs() < 1e-9 && (c2.w[1] - FRAC_1_SQRT_2).abs() < 1e-9);
        for (i, c) in [c0, c1, c2].iter().enumerate() {
            assert!((dot(&c.w, a.col(i)) - 1.0).abs() < 1e-9);
            assert!(verify_optimality(&a, i, &c.w, c.t, &OracleConfig::default()));
        }
    }

    #[test]
    fn oracle_refutes_inflated_claims() {
        let a = hand_example();
        let c0 = column_minimax_lp(&a, 0).unwrap();
        // A feasible but worse point, claimed with an inflated value.
        let w = vec![1.0, 0.3];
        let t = cross_coherence(&a, 0, &w);
        assert!(t > c0.t + 0.1);
        assert!(!verify_optimality(&a, 0, &w, t, &quick()));
        // The optimum with a value below what it attains is also rejected.
        assert!(!verify_optimality(&a, 0, &c0.w, c0.t - 0.1, &quick()));
        let a = random_dict(6, 12, 3);
        let opt = column_minimax_lp(&a, 4).unwrap();
        let w: Vec<f64> = opt.w.iter().enumerate().map(|(k, v)| v + if k == 0 { 0.2 } else { 0.0 }).collect();
        let s = dot(&w, a.col(4));
        let w: Vec<f64> = w.iter().map(|v| v / s).collect();
        let tw = cross_coherence(&a, 4, &w);
        assert!(!verify_optimality(&a, 4, &w, tw.max(opt.t + 0.1), &quick()));
    }

    #[test]
    fn hand_example_report() {
        let a = hand_example();
        let rep = generalized_coherence(&a).unwrap();
        assert!((rep.mu_tilde - FRAC_1_SQRT_2).abs() < 1e-9);
        assert!((rep.mu - FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(rep.s_max_admissible, 1);
        check_membership(&a, &rep);
    }

    #[test]
    fn orthonormal_report() {
        let q = DenseMatrix::identity(4);
        let rep = generalized_coherence(&q).unwrap();
        assert!(rep.mu_tilde < 1e-12);
        for (w, e) in rep.w_good.data().iter().zip(q.data()) {
            assert!((w - e).abs() < 1e-8);
        }
        assert!((rep.c_w - 1.0).abs() < 1e-8);
        assert_eq!(rep.s_max_admissible, 4);
    }

    fn check_membership(a: &DenseMatrix, rep: &CoherenceReport) {
        let g = rep.w_good.as_dmatrix().tr_mul(a.as_dmatrix());
        for i in 0..a.cols() {
            assert!((g[(i, i)] - 1.0).abs() <= 1e-8);
            for j in 0..a.cols() {
                if i != j {
                    assert!(g[(i, j)].abs() <= rep.mu_tilde + 2e-9);
                }
            }
        }
        assert!(rep.mu_tilde <= rep.mu + 1e-8);
    }

    #[test]
    fn random_dictionary_report() {
        let a = random_dict(20, 40, 11);
        let rep = generalized_coherence(&a).unwrap();
        check_membership(&a, &rep);
        assert!(rep.realized_cross(&a) <= rep.mu_tilde + 2e-9);
        for (t, lb) in rep.column_t.iter().zip(&rep.column_lower) {
            assert!((t - lb).abs() < 1e-9, "duality gap {t} vs {lb}");
        }
        // Phase two never raises the largest entry above the phase-one weights.
        let phase1_max = (0..a.cols())
            .map(|i| norm_inf(&column_minimax_lp(&a, i).unwrap().w))
            .fold(0.0, f64::max);
        assert!(rep.c_w <= phase1_max + 1e-12);
    }

    #[test]
    fn sign_flips_leave_coherence_unchanged() {
        let a = random_dict(8, 16, 5);
        let mut flipped = a.as_dmatrix().clone();
        for j in (0..16).step_by(3) {
            flipped.column_mut(j).neg_mut();
        }
        let flipped = DenseMatrix::from_dmatrix(flipped).unwrap();
        let r1 = generalized_coherence(&a).unwrap();
        let r2 = generalized_coherence(&flipped).unwrap();
        assert_eq!(mutual_coherence(&a).unwrap(), mutual_coherence(&flipped).unwrap());
        assert!((r1.mu_tilde - r2.mu_tilde).abs() < 1e-9);
    }

    #[test]
    fn admissible_sparsity() {
        assert_eq!(s_max_admissible(0.162, 128), 3);
        assert_eq!(s_max_admissible(0.2, 128), 2);
        assert_eq!(s_max_admissible(0.1, 128), 5);
        assert_eq!(s_max_admissible(0.0, 9), 9);
    }
}
