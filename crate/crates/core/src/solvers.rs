//! Classical LASSO solvers: ISTA, FISTA and ISTA with a decaying λ.
//!
//! All three start from `x⁰ = 0` and keep every iterate so that per-iteration
//! NMSE curves can be drawn afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm1, spectral_norm, shrink, DenseMatrix, Vector};

/// Step constant `L` in `x + (1/L)·Aᵀ(b − Ax)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepConstant {
    /// `‖A‖₂²` inflated by a relative `1e-6` so the power-iteration estimate
    /// (which approaches from below) is still an upper bound.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step: StepConstant,
}

impl SolverConfig {
    pub fn new(lambda: f64, max_iters: usize) -> Self {
        Self {
            lambda,
            max_iters,
            step: StepConstant::Auto,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("need at least one iteration".into()));
        }
        Ok(())
    }
}

pub const AUTO_L_MARGIN: f64 = 1e-6;

/// `‖A‖₂²`.
pub fn lipschitz_l(a: &DenseMatrix) -> Result<f64> {
    Ok(spectral_norm(a)?.value.powi(2))
}

/// Resolves the step constant and whether it is below `‖A‖₂²`.
pub fn resolve_step(a: &DenseMatrix, step: StepConstant) -> Result<(f64, bool)> {
    let lip = lipschitz_l(a)?;
    match step {
        StepConstant::Auto => Ok((lip * (1.0 + AUTO_L_MARGIN), false)),
        StepConstant::Fixed(l) if l > 0.0 && l.is_finite() => Ok((l, l < lip * (1.0 - 1e-12))),
        StepConstant::Fixed(l) => Err(Error::Config(format!("step constant must be > 0, got {l}"))),
    }
}

#[derive(Debug, Clone)]
pub struct IterateTrace {
    /// `x⁰ … x^K`.
    pub iterates: Vec<Vector>,
    /// LASSO objective at each iterate, using the λ in force at that point.
    pub objectives: Vec<f64>,
    /// λ in force when each iterate was produced (`lambdas[0]` is the initial λ).
    pub lambdas: Vec<f64>,
    pub l: f64,
    /// Set when `L < ‖A‖₂²`, where monotone descent is not guaranteed.
    pub step_warning: bool,
}

impl IterateTrace {
    pub fn last(&self) -> &Vector {
        self.iterates.last().expect("trace always holds x0")
    }
}

/// `½‖b − Ax‖² + λ‖x‖₁`.
pub fn lasso_objective(a: &DenseMatrix, b: &Vector, x: &Vector, lambda: f64) -> f64 {
    let r = b - a.as_dmatrix() * x;
    0.5 * r.norm_squared() + lambda * norm1(x.as_slice())
}

fn check_dims(a: &DenseMatrix, b: &Vector) -> Result<()> {
    if a.rows() != b.len() {
        return Err(Error::Dimension(format!(
            "A has {} rows but b has length {}",
            a.rows(),
            b.len()
        )));
    }
    Ok(())
}

/// One proximal-gradient step from `x` with threshold `theta`.
fn prox_step(a: &DenseMatrix, b: &Vector, x: &Vector, l: f64, theta: f64) -> Vector {
    let r = b - a.as_dmatrix() * x;
    let g = a.as_dmatrix().tr_mul(&r);
    let mut v = x + g / l;
    v.iter_mut().for_each(|e| *e = shrink(*e, theta));
    v
}

pub fn ista(a: &DenseMatrix, b: &Vector, cfg: &SolverConfig) -> Result<IterateTrace> {
    cfg.validate()?;
    check_dims(a, b)?;
    let (l, step_warning) = resolve_step(a, cfg.step)?;
    let theta = cfg.lambda / l;
    let mut x = Vector::zeros(a.cols());
    let mut iterates = vec![x.clone()];
    let mut objectives = vec![lasso_objective(a, b, &x, cfg.lambda)];
    for _ in 0..cfg.max_iters {
        x = prox_step(a, b, &x, l, theta);
        objectives.push(lasso_objective(a, b, &x, cfg.lambda));
        iterates.push(x.clone());
    }
    Ok(IterateTrace {
        iterates,
        objectives,
        lambdas: vec![cfg.lambda; cfg.max_iters + 1],
        l,
        step_warning,
    })
}

/// Beck–Teboulle FISTA without restart.
pub fn fista(a: &DenseMatrix, b: &Vector, cfg: &SolverConfig) -> Result<IterateTrace> {
    cfg.validate()?;
    check_dims(a, b)?;
    let (l, step_warning) = resolve_step(a, cfg.step)?;
    let theta = cfg.lambda / l;
    let mut x = Vector::zeros(a.cols());
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut iterates = vec![x.clone()];
    let mut objectives = vec![lasso_objective(a, b, &x, cfg.lambda)];
    for _ in 0..cfg.max_iters {
        let next = prox_step(a, b, &y, l, theta);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
        objectives.push(lasso_objective(a, b, &x, cfg.lambda));
        iterates.push(x.clone());
    }
    Ok(IterateTrace {
        iterates,
        objectives,
        lambdas: vec![cfg.lambda; cfg.max_iters + 1],
        l,
        step_warning,
    })
}

/// Norm used in the displacement test of [`adaptive_ista`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementNorm {
    #[default]
    L2,
    Linf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub lambda0: f64,
    pub eps0: f64,
    pub max_iters: usize,
    pub step: StepConstant,
    #[serde(default)]
    pub norm: DisplacementNorm,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            lambda0: 0.2,
            eps0: 0.05,
            max_iters: 16,
            step: StepConstant::Auto,
            norm: DisplacementNorm::L2,
        }
    }
}

/// ISTA whose λ and displacement tolerance ε halve together whenever
/// `‖x^k − x^{k−1}‖ < ε^k` (ℓ2 unless configured otherwise).
pub fn adaptive_ista(a: &DenseMatrix, b: &Vector, cfg: &AdaptiveConfig) -> Result<IterateTrace> {
    if !(cfg.lambda0 > 0.0 && cfg.eps0 > 0.0) {
        return Err(Error::Config("lambda0 and eps0 must be > 0".into()));
    }
    if cfg.max_iters == 0 {
        return Err(Error::Config("need at least one iteration".into()));
    }
    check_dims(a, b)?;
    let (l, step_warning) = resolve_step(a, cfg.step)?;
    let (mut lambda, mut eps) = (cfg.lambda0, cfg.eps0);
    let mut x = Vector::zeros(a.cols());
    let mut iterates = vec![x.clone()];
    let mut objectives = vec![lasso_objective(a, b, &x, lambda)];
    let mut lambdas = vec![lambda];
    for _ in 0..cfg.max_iters {
        let next = prox_step(a, b, &x, l, lambda / l);
        objectives.push(lasso_objective(a, b, &next, lambda));
        lambdas.push(lambda);
        let d = &next - &x;
        let moved = match cfg.norm {
            DisplacementNorm::L2 => d.norm(),
            DisplacementNorm::Linf => d.amax(),
        };
        x = next;
        iterates.push(x.clone());
        if moved < eps {
            lambda *= 0.5;
            eps *= 0.5;
        }
    }
    Ok(IterateTrace {
        iterates,
        objectives,
        lambdas,
        l,
        step_warning,
    })
}
