//! Browser bindings: threshold shapes, classical solver convergence and the
//! analytic LISTA-CP / CPSS certificate, each returned as JSON for plotting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;
use wasm_bindgen::prelude::*;

use uilab_core::harness::{run_in, Algo, ExperimentConfig, Workspace};
use uilab_core::operators::{soft_threshold, ss_threshold};
use uilab_core::problem::{MagnitudeMode, ProblemConfig, SparsityMode};

#[derive(Debug, Serialize)]
pub struct Curve {
    pub x: Vec<f64>,
    pub soft: Vec<f64>,
    pub trusted: Vec<f64>,
}

/// `η_θ(v)` and its support-selecting form with every entry trusted, on a
/// grid over `[-range, range]`.
pub fn threshold_curve_data(theta: f64, range: f64, points: usize) -> Result<Curve, String> {
    if points < 2 || !(range > 0.0) {
        return Err("need at least two points and a positive range".into());
    }
    let x: Vec<f64> = (0..points)
        .map(|i| -range + 2.0 * range * i as f64 / (points - 1) as f64)
        .collect();
    let soft = soft_threshold(&x, theta).map_err(|e| e.to_string())?;
    let trusted = ss_threshold(&x, theta, points).map_err(|e| e.to_string())?;
    Ok(Curve { x, soft, trusted })
}

#[derive(Debug, Serialize)]
pub struct Series {
    pub name: String,
    pub nmse_db: Vec<f64>,
}

/// Per-iteration NMSE of ISTA, FISTA and adaptive ISTA.
pub fn classical_data(m: usize, n: usize, p_b: f64, lambda: f64, iters: usize, seed: u64) -> Result<Vec<Series>, String> {
    let problem = ProblemConfig {
        m,
        n,
        sparsity: SparsityMode::Bernoulli { p_b },
        ..ProblemConfig::paper_scale(seed)
    };
    let mut cfg = ExperimentConfig::new(problem, Algo::Ista, iters);
    cfg.test_size = 100;
    cfg.classical.lambda = lambda;
    let mut ws = Workspace::build(&cfg).map_err(|e| e.to_string())?;
    [Algo::Ista, Algo::Fista, Algo::Adaptive]
        .into_iter()
        .map(|algo| {
            let out = run_in(&ExperimentConfig { algo, ..cfg.clone() }, &mut ws).map_err(|e| e.to_string())?;
            Ok(Series {
                name: algo.name().into(),
                nmse_db: out.table.rows.iter().map(|r| r.nmse_db).collect(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct TheoryData {
    pub mu_tilde: f64,
    pub s_max: usize,
    pub bound: Vec<f64>,
    pub cp: Vec<f64>,
    pub cpss: Vec<f64>,
    pub cp_nmse_db: Vec<f64>,
    pub cpss_nmse_db: Vec<f64>,
}

/// Worst-case ℓ1 error per layer of the analytic networks against the
/// certified bound.
pub fn theory_data(m: usize, n: usize, s: usize, layers: usize, p_max: f64, seed: u64) -> Result<TheoryData, String> {
    let problem = ProblemConfig {
        m,
        n,
        sparsity: SparsityMode::FixedS { s },
        magnitude: MagnitudeMode::Bounded { b: 2.0, b_lower: 0.5 },
        ..ProblemConfig::paper_scale(seed)
    };
    let mut cfg = ExperimentConfig::new(problem, Algo::TheoryCp, layers);
    cfg.test_size = 200;
    cfg.schedule.p_max = Some(p_max);
    let mut ws = Workspace::build(&cfg).map_err(|e| e.to_string())?;
    let cp = run_in(&cfg, &mut ws).map_err(|e| e.to_string())?;
    let ss = run_in(&ExperimentConfig { algo: Algo::TheoryCpss, ..cfg }, &mut ws).map_err(|e| e.to_string())?;
    let report = ws.coherence.as_ref().expect("theory runs compute coherence");
    let cert = cp.certificate.expect("theory runs carry a certificate");
    Ok(TheoryData {
        mu_tilde: report.mu_tilde,
        s_max: report.s_max_admissible,
        bound: cert.e_bounds,
        cp: cp.table.sup_errors(),
        cpss: ss.table.sup_errors(),
        cp_nmse_db: cp.table.rows.iter().map(|r| r.nmse_db).collect(),
        cpss_nmse_db: ss.table.rows.iter().map(|r| r.nmse_db).collect(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn threshold_curve(theta: f64, range: f64, points: usize) -> Result<String, JsValue> {
    to_js(threshold_curve_data(theta, range, points))
}

#[wasm_bindgen]
pub fn classical(m: usize, n: usize, p_b: f64, lambda: f64, iters: usize, seed: u64) -> Result<String, JsValue> {
    to_js(classical_data(m, n, p_b, lambda, iters, seed))
}

#[wasm_bindgen]
pub fn theory(m: usize, n: usize, s: usize, layers: usize, p_max: f64, seed: u64) -> Result<String, JsValue> {
    to_js(theory_data(m, n, s, layers, p_max, seed))
}
