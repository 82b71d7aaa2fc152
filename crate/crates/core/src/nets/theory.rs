//! Analytic LISTA-CP parameters with a certified linear error bound.
//!
//! Every layer uses the good weight `W̃` and the threshold
//! `θ^k = μ̃·e^k + C_W·σ`, where `e^k` bounds `sup ‖x^k − x*‖₁` over all
//! `s`-sparse signals with entries bounded by `B` and noise with
//! `‖ε‖₁ ≤ σ`. The bound follows the recursion
//!
//! ```text
//! e⁰ = sB,   e^{k+1} = (2μ̃s − μ̃)·e^k + 2sC_W·σ
//! ```
//!
//! which contracts whenever `s < (1 + 1/μ̃)/2`. Using `e^k` in place of the
//! (uncomputable) supremum keeps the thresholds at least as large as the
//! supremum-based ones, so no off-support entry is ever activated and the
//! recursion remains a valid bound.

use serde::{Deserialize, Serialize};

use super::{forward, LayerParams, LayerWeights, NetworkParams};
use crate::coherence::{s_max_admissible, CoherenceReport};
use crate::error::{Error, Result};
use crate::linalg::{norm1, DenseMatrix};
use crate::problem::SignalSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCertificate {
    pub mu_tilde: f64,
    pub c_w: f64,
    pub s: usize,
    pub b: f64,
    pub sigma: f64,
    /// Contraction factor `2μ̃s − μ̃`.
    pub ratio: f64,
    /// `−ln(ratio)`.
    pub c: f64,
    /// `2sC_W / (1 + μ̃ − 2μ̃s)`.
    pub big_c: f64,
    /// `e⁰ … e^K`.
    pub e_bounds: Vec<f64>,
    /// `θ⁰ … θ^{K−1}`.
    pub thetas: Vec<f64>,
    /// Whether `B_lower ≥ 2Cσ`, when a lower magnitude bound is known.
    pub snr_condition: Option<bool>,
}

impl TheoryCertificate {
    pub fn new(mu_tilde: f64, c_w: f64, s: usize, b: f64, sigma: f64, layers: usize) -> Result<Self> {
        if !(b > 0.0) || !(sigma >= 0.0) || !(mu_tilde >= 0.0) || !(c_w >= 0.0) {
            return Err(Error::Config("certificate needs B > 0, sigma >= 0, mu_tilde >= 0, C_W >= 0".into()));
        }
        if s == 0 || layers == 0 {
            return Err(Error::Config("certificate needs s >= 1 and at least one layer".into()));
        }
        let s_max = s_max_admissible(mu_tilde, usize::MAX);
        if s > s_max {
            return Err(Error::Inadmissible { s, s_max });
        }
        let sf = s as f64;
        let ratio = 2.0 * mu_tilde * sf - mu_tilde;
        let c = -ratio.ln();
        let big_c = 2.0 * sf * c_w / (1.0 + mu_tilde - 2.0 * mu_tilde * sf);
        let mut e_bounds = Vec::with_capacity(layers + 1);
        let mut thetas = Vec::with_capacity(layers);
        let mut e = sf * b;
        for _ in 0..layers {
            e_bounds.push(e);
            thetas.push(mu_tilde * e + c_w * sigma);
            e = ratio * e + 2.0 * sf * c_w * sigma;
        }
        e_bounds.push(e);
        Ok(Self {
            mu_tilde,
            c_w,
            s,
            b,
            sigma,
            ratio,
            c,
            big_c,
            e_bounds,
            thetas,
            snr_condition: None,
        })
    }

    /// Records whether the lower magnitude bound clears `2Cσ`.
    pub fn with_lower_bound(mut self, b_lower: f64) -> Self {
        self.snr_condition = Some(b_lower >= 2.0 * self.big_c * self.sigma);
        self
    }

    /// `sB·exp(−ck) + Cσ`, the closed-form envelope of `e^k`.
    pub fn envelope(&self, k: usize) -> f64 {
        self.s as f64 * self.b * self.ratio.powi(k as i32) + self.big_c * self.sigma
    }

    pub fn layers(&self) -> usize {
        self.thetas.len()
    }
}

/// How the per-layer thresholds are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Thresholds from the certificate recursion.
    #[default]
    Certificate,
    /// Thresholds from the worst ℓ1 error seen on a calibration batch,
    /// inflated by 5%.
    Calibrated,
}

pub const CALIBRATION_INFLATION: f64 = 1.05;

/// The `μ̃` to certify with: the reported value, or the realized cross
/// coherence of `W̃` when round-off leaves it slightly above.
pub fn certified_mu(a: &DenseMatrix, report: &CoherenceReport) -> f64 {
    report.mu_tilde.max(report.realized_cross(a))
}

/// Coupled parameters with `W^k = W̃` and certificate thresholds.
pub fn make_theory_params(
    a: &DenseMatrix,
    report: &CoherenceReport,
    s: usize,
    b: f64,
    sigma: f64,
    layers: usize,
) -> Result<(NetworkParams, TheoryCertificate)> {
    if report.w_good.rows() != a.rows() || report.w_good.cols() != a.cols() {
        return Err(Error::Dimension("coherence report does not match the dictionary".into()));
    }
    if s > report.s_max_admissible {
        return Err(Error::Inadmissible {
            s,
            s_max: report.s_max_admissible,
        });
    }
    let cert = TheoryCertificate::new(certified_mu(a, report), report.c_w, s, b, sigma, layers)?;
    let params = params_from(report, &cert.thetas, "theory")?;
    Ok((params, cert))
}

fn params_from(report: &CoherenceReport, thetas: &[f64], provenance: &str) -> Result<NetworkParams> {
    let layers = thetas
        .iter()
        .map(|&theta| LayerParams {
            weights: LayerWeights::Coupled {
                w: report.w_good.clone(),
            },
            theta,
            ss_count: 0,
        })
        .collect();
    NetworkParams::new(layers, 0, provenance)
}

/// Data-driven thresholds: layer by layer, `θ^k = μ̃·1.05·max ‖x^k − x*‖₁ + C_Wσ`
/// over the calibration samples, each layer evaluated with the thresholds
/// already fixed for the layers before it. Support counts come from
/// `ss_counts` (zeros for plain CP).
pub fn calibrate_thresholds(
    a: &DenseMatrix,
    report: &CoherenceReport,
    sigma: f64,
    layers: usize,
    ss_counts: &[usize],
    calibration: &[SignalSample],
) -> Result<NetworkParams> {
    if calibration.is_empty() {
        return Err(Error::Config("calibration needs at least one sample".into()));
    }
    let mu = certified_mu(a, report);
    let mut thetas: Vec<f64> = Vec::with_capacity(layers);
    for k in 0..layers {
        let worst = if k == 0 {
            calibration
                .iter()
                .map(|s| norm1(s.x_star.as_slice()))
                .fold(0.0, f64::max)
        } else {
            let mut p = params_from(report, &thetas, "calibrated")?;
            for (l, &c) in p.layers.iter_mut().zip(ss_counts) {
                l.ss_count = c;
            }
            let mut worst = 0.0f64;
            for s in calibration {
                let tr = forward(&p, a, &s.b)?;
                worst = worst.max(norm1((tr.last() - &s.x_star).as_slice()));
            }
            worst
        };
        thetas.push(mu * CALIBRATION_INFLATION * worst + report.c_w * sigma);
    }
    let mut p = params_from(report, &thetas, "calibrated")?;
    for (l, &c) in p.layers.iter_mut().zip(ss_counts) {
        l.ss_count = c;
    }
    Ok(p)
}
