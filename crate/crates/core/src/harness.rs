//! Experiment orchestration: build or load the dictionary, obtain iterates
//! for the requested algorithm on a fixed test set, and tabulate per-layer
//! error statistics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coherence::{generalized_coherence, CoherenceReport};
use crate::error::{Error, Result};
use crate::io::{matrix_hash, read_matrix};
use crate::linalg::{norm1, DenseMatrix, Vector};
use crate::nets::theory::{calibrate_thresholds, make_theory_params, TheoryCertificate, ThresholdMode};
use crate::nets::{
    coupling_residual, empirical_rate, forward, init_params, load_params, w2_norm, NetworkParams, Variant,
    DEFAULT_RATE_FLOOR,
};
use crate::operators::SupportSchedule;
use crate::parallel;
use crate::problem::{build_dictionary, NmseAccumulator, ProblemConfig, SampleSet, SignalSample, SparsityMode};
use crate::rng::Domain;
use crate::solvers::{adaptive_ista, fista, ista, resolve_step, AdaptiveConfig, DisplacementNorm, SolverConfig, StepConstant};
use crate::trainer::{stagewise_train, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ista,
    Fista,
    Adaptive,
    Lista,
    ListaCp,
    ListaSs,
    ListaCpss,
    TheoryCp,
    TheoryCpss,
}

impl Algo {
    pub fn is_classical(self) -> bool {
        matches!(self, Algo::Ista | Algo::Fista | Algo::Adaptive)
    }

    pub fn is_theory(self) -> bool {
        matches!(self, Algo::TheoryCp | Algo::TheoryCpss)
    }

    pub fn is_trained(self) -> bool {
        matches!(self, Algo::Lista | Algo::ListaCp | Algo::ListaSs | Algo::ListaCpss)
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Algo::Lista | Algo::ListaSs => Some(Variant::Full),
            Algo::ListaCp | Algo::ListaCpss | Algo::TheoryCp | Algo::TheoryCpss => Some(Variant::Coupled),
            _ => None,
        }
    }

    pub fn uses_selection(self) -> bool {
        matches!(self, Algo::ListaSs | Algo::ListaCpss | Algo::TheoryCpss)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algo::Ista => "ista",
            Algo::Fista => "fista",
            Algo::Adaptive => "adaptive",
            Algo::Lista => "lista",
            Algo::ListaCp => "lista_cp",
            Algo::ListaSs => "lista_ss",
            Algo::ListaCpss => "lista_cpss",
            Algo::TheoryCp => "theory_cp",
            Algo::TheoryCpss => "theory_cpss",
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

/// Trusted-support percentages; `p_max` defaults to 12 for LISTA-SS and 13
/// for the coupled variants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub p: f64,
    pub p_max: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { p: 1.2, p_max: None }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self, algo: Algo, n: usize) -> Result<SupportSchedule> {
        if !algo.uses_selection() {
            return Ok(SupportSchedule::none(n));
        }
        let p_max = self.p_max.unwrap_or(if algo == Algo::ListaSs { 12.0 } else { 13.0 });
        SupportSchedule::new(self.p, p_max, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassicalConfig {
    pub lambda: f64,
    pub step: StepConstant,
    pub lambda0: f64,
    pub eps0: f64,
    pub displacement_norm: DisplacementNorm,
}

impl Default for ClassicalConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            step: StepConstant::Auto,
            lambda0: 0.2,
            eps0: 0.05,
            displacement_norm: DisplacementNorm::L2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TheoryConfig {
    /// Magnitude bound `B`; defaults to the problem's bound.
    pub b: Option<f64>,
    /// Noise budget `σ ≥ ‖ε‖₁`; defaults to the largest value in the test set.
    pub sigma: Option<f64>,
    pub thresholds: ThresholdMode,
    pub calibration_size: usize,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            b: None,
            sigma: None,
            thresholds: ThresholdMode::Certificate,
            calibration_size: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub algo: Algo,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub classical: ClassicalConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    /// Dictionary file to use instead of generating one.
    #[serde(default)]
    pub dictionary: Option<PathBuf>,
    /// Parameter directory to evaluate instead of training.
    #[serde(default)]
    pub params: Option<PathBuf>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_test_size() -> usize {
    1000
}

impl ExperimentConfig {
    pub fn new(problem: ProblemConfig, algo: Algo, k: usize) -> Self {
        Self {
            problem,
            algo,
            k,
            schedule: ScheduleConfig::default(),
            classical: ClassicalConfig::default(),
            train: TrainConfig::default(),
            theory: TheoryConfig::default(),
            test_size: default_test_size(),
            dictionary: None,
            params: None,
            output: None,
        }
    }

    /// 64x128, three nonzeros in `[0.5, 2]`, sixteen layers.
    pub fn desk_theory(algo: Algo, seed: u64) -> Self {
        Self::new(ProblemConfig::desk_theory(seed), algo, 16)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if self.test_size == 0 {
            return Err(Error::Config("test_size must be >= 1".into()));
        }
        if self.algo.is_trained() && self.params.is_none() {
            self.train.validate()?;
        }
        if self.algo.is_theory() {
            if !matches!(self.problem.sparsity, SparsityMode::FixedS { .. }) {
                return Err(Error::Config("theory runs need a fixed sparsity s".into()));
            }
            if self.theory.b.is_none() && self.problem.magnitude_bound().is_none() {
                return Err(Error::Config("theory runs need bounded magnitudes or an explicit b".into()));
            }
        }
        self.schedule.resolve(self.algo, self.problem.n)?;
        Ok(())
    }
}

/// Dictionary and test set shared by paired runs.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub a: DenseMatrix,
    pub test: SampleSet,
    pub coherence: Option<CoherenceReport>,
}

impl Workspace {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let a = match &cfg.dictionary {
            Some(p) => read_matrix(p)?,
            None => build_dictionary(&cfg.problem)?,
        };
        if a.rows() != cfg.problem.m || a.cols() != cfg.problem.n {
            return Err(Error::Dimension(format!(
                "dictionary is {}x{}, problem says {}x{}",
                a.rows(),
                a.cols(),
                cfg.problem.m,
                cfg.problem.n
            )));
        }
        let test = SampleSet::generate(&a, &cfg.problem, Domain::Test, cfg.test_size)?;
        Ok(Self {
            a,
            test,
            coherence: None,
        })
    }

    pub fn coherence(&mut self) -> Result<&CoherenceReport> {
        if self.coherence.is_none() {
            self.coherence = Some(generalized_coherence(&self.a)?);
        }
        Ok(self.coherence.as_ref().unwrap())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub layer: usize,
    pub nmse_db: f64,
    pub sup_l1_err: f64,
    pub bound_l1: Option<f64>,
    pub theta: Option<f64>,
    pub coupling_residual: Option<f64>,
    pub mean_ss_in_support: Option<f64>,
}

/// Provenance written next to every table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub algo: Algo,
    #[serde(rename = "K")]
    pub k: usize,
    pub matrix_hash: String,
    pub sample_hash: String,
    pub test_size: usize,
    /// Per row, samples whose iterate has a nonzero outside the true support.
    pub support_violations: Vec<usize>,
    pub certificate: Option<TheoryCertificate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub meta: TableMeta,
}

pub const CSV_HEADER: &str = "layer,nmse_db,sup_l1_err,bound_l1,theta,coupling_residual,mean_ss_in_support";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Format(format!("bad number {s:?}")))
}

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{},{},{}",
                r.layer,
                r.nmse_db,
                r.sup_l1_err,
                opt(r.bound_l1),
                opt(r.theta),
                opt(r.coupling_residual),
                opt(r.mean_ss_in_support)
            );
        }
        s
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<ResultRow>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(CSV_HEADER) {
            return Err(Error::Format("missing result table header".into()));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let f: Vec<&str> = l.trim().split(',').collect();
                if f.len() != 7 {
                    return Err(Error::Format(format!("expected 7 fields, got {}", f.len())));
                }
                let num = |s: &str| -> Result<f64> { parse_opt(s)?.ok_or_else(|| Error::Format("empty field".into())) };
                Ok(ResultRow {
                    layer: f[0].parse().map_err(|_| Error::Format(format!("bad layer {:?}", f[0])))?,
                    nmse_db: num(f[1])?,
                    sup_l1_err: num(f[2])?,
                    bound_l1: parse_opt(f[3])?,
                    theta: parse_opt(f[4])?,
                    coupling_residual: parse_opt(f[5])?,
                    mean_ss_in_support: parse_opt(f[6])?,
                })
            })
            .collect()
    }

    /// Writes `path` and the sidecar `path.meta.json`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_csv())?;
        std::fs::write(meta_path(path), serde_json::to_string_pretty(&self.meta)? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let rows = Self::rows_from_csv(&std::fs::read_to_string(path)?)?;
        let meta = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)?;
        Ok(Self { rows, meta })
    }

    pub fn final_nmse(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.nmse_db)
    }

    pub fn sup_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sup_l1_err).collect()
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Per-layer columns that depend on the method rather than on the samples.
#[derive(Debug, Clone, Default)]
pub struct LayerColumns {
    pub bound: Option<Vec<f64>>,
    /// Indexed by layer `k = 0..K`; used for rows `1..=K`.
    pub theta: Option<Vec<f64>>,
    pub coupling_residual: Option<Vec<f64>>,
    pub track_selection: bool,
}

/// Iterates of one sample together with the trusted sets, if any.
pub struct SampleRun {
    pub iterates: Vec<Vector>,
    pub selected: Option<Vec<Vec<usize>>>,
}

/// Builds the table from per-sample iterates.
pub fn tabulate(
    samples: &[SignalSample],
    runs: &[SampleRun],
    columns: &LayerColumns,
    meta: TableMeta,
) -> Result<ResultTable> {
    if samples.len() != runs.len() || samples.is_empty() {
        return Err(Error::Dimension("need one run per sample".into()));
    }
    let depth = runs[0].iterates.len();
    let mut rows = Vec::with_capacity(depth);
    let mut violations = Vec::with_capacity(depth);
    for k in 0..depth {
        let mut acc = NmseAccumulator::default();
        let mut sup = 0.0f64;
        let mut bad = 0;
        let mut ss_total = 0usize;
        for (s, r) in samples.iter().zip(runs) {
            let x = &r.iterates[k];
            acc.add(x.as_slice(), s.x_star.as_slice());
            sup = sup.max(norm1((x - &s.x_star).as_slice()));
            if x.iter().enumerate().any(|(i, &v)| v != 0.0 && s.support.binary_search(&i).is_err()) {
                bad += 1;
            }
            if k > 0 {
                if let Some(sel) = &r.selected {
                    ss_total += sel[k - 1]
                        .iter()
                        .filter(|i| x[**i] != 0.0 && s.support.binary_search(i).is_ok())
                        .count();
                }
            }
        }
        let prev = k.checked_sub(1);
        rows.push(ResultRow {
            layer: k,
            nmse_db: acc.db()?,
            sup_l1_err: sup,
            bound_l1: columns.bound.as_ref().map(|b| b[k]),
            theta: prev.and_then(|p| columns.theta.as_ref().map(|t| t[p])),
            coupling_residual: prev.and_then(|p| columns.coupling_residual.as_ref().map(|t| t[p])),
            mean_ss_in_support: prev
                .filter(|_| columns.track_selection)
                .map(|_| ss_total as f64 / samples.len() as f64),
        });
        violations.push(bad);
    }
    Ok(ResultTable {
        rows,
        meta: TableMeta {
            support_violations: violations,
            ..meta
        },
    })
}

/// Everything produced by one experiment.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub table: ResultTable,
    pub params: Option<NetworkParams>,
    pub certificate: Option<TheoryCertificate>,
    pub log: Option<TrainLog>,
}

fn blank_meta(cfg: &ExperimentConfig, ws: &Workspace) -> TableMeta {
    TableMeta {
        algo: cfg.algo,
        k: cfg.k,
        matrix_hash: matrix_hash(&ws.a),
        sample_hash: ws.test.hash(),
        test_size: ws.test.len(),
        support_violations: Vec::new(),
        certificate: None,
    }
}

/// Evaluates a network on the workspace's test set.
pub fn evaluate_network(params: &NetworkParams, ws: &Workspace, meta: TableMeta, bound: Option<Vec<f64>>) -> Result<ResultTable> {
    let a = &ws.a;
    let samples = &ws.test.samples;
    let runs = parallel::map_indexed(samples.len(), |i| {
        forward(params, a, &samples[i].b).map(|t| SampleRun {
            iterates: t.iterates,
            selected: Some(t.selected),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let residuals = match params.variant() {
        Variant::Full => Some(
            (0..params.depth())
                .map(|k| coupling_residual(params, a, k))
                .collect::<Result<Vec<_>>>()?,
        ),
        Variant::Coupled => None,
    };
    let columns = LayerColumns {
        bound,
        theta: Some(params.thetas()),
        coupling_residual: residuals,
        track_selection: params.uses_support_selection(),
    };
    tabulate(samples, &runs, &columns, meta)
}

fn classical(cfg: &ExperimentConfig, ws: &Workspace) -> Result<ResultTable> {
    let a = &ws.a;
    let (l, _) = resolve_step(a, cfg.classical.step)?;
    let samples = &ws.test.samples;
    let k = cfg.k;
    let c = cfg.classical;
    let runs = parallel::map_indexed(samples.len(), |i| {
        let b = &samples[i].b;
        let tr = match cfg.algo {
            Algo::Ista => ista(a, b, &SolverConfig { lambda: c.lambda, max_iters: k, step: StepConstant::Fixed(l) }),
            Algo::Fista => fista(a, b, &SolverConfig { lambda: c.lambda, max_iters: k, step: StepConstant::Fixed(l) }),
            _ => adaptive_ista(
                a,
                b,
                &AdaptiveConfig {
                    lambda0: c.lambda0,
                    eps0: c.eps0,
                    max_iters: k,
                    step: StepConstant::Fixed(l),
                    norm: c.displacement_norm,
                },
            ),
        }?;
        Ok((tr.iterates, tr.lambdas))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    // The threshold column is only meaningful when it is shared by all samples.
    let lam0 = &runs[0].1;
    let theta = runs
        .iter()
        .all(|r| &r.1 == lam0)
        .then(|| lam0[..k].iter().map(|v| v / l).collect());
    let runs: Vec<SampleRun> = runs
        .into_iter()
        .map(|(iterates, _)| SampleRun { iterates, selected: None })
        .collect();
    let columns = LayerColumns {
        theta,
        ..LayerColumns::default()
    };
    tabulate(samples, &runs, &columns, blank_meta(cfg, ws))
}

/// Parameters of a theory run plus the certificate they satisfy.
pub fn theory_params(cfg: &ExperimentConfig, ws: &mut Workspace) -> Result<(NetworkParams, TheoryCertificate)> {
    let SparsityMode::FixedS { s } = cfg.problem.sparsity else {
        return Err(Error::Config("theory runs need a fixed sparsity s".into()));
    };
    let b = cfg
        .theory
        .b
        .or(cfg.problem.magnitude_bound())
        .ok_or_else(|| Error::Config("theory runs need a magnitude bound".into()))?;
    let sigma = cfg.theory.sigma.unwrap_or_else(|| ws.test.max_noise_l1());
    let schedule = cfg.schedule.resolve(cfg.algo, cfg.problem.n)?;
    let a = ws.a.clone();
    let report = ws.coherence()?;
    let (params, mut cert) = make_theory_params(&a, report, s, b, sigma, cfg.k)?;
    if let crate::problem::MagnitudeMode::Bounded { b_lower, .. } = cfg.problem.magnitude {
        cert = cert.with_lower_bound(b_lower);
    }
    let params = match cfg.theory.thresholds {
        ThresholdMode::Certificate => params.with_schedule(&schedule),
        ThresholdMode::Calibrated => {
            let cal = SampleSet::generate(&a, &cfg.problem, Domain::Calibration, cfg.theory.calibration_size)?;
            calibrate_thresholds(&a, report, sigma, cfg.k, &schedule.counts(cfg.k), &cal.samples)?
        }
    };
    Ok((params, cert))
}

/// Runs `cfg` against a prepared workspace.
pub fn run_in(cfg: &ExperimentConfig, ws: &mut Workspace) -> Result<Outcome> {
    cfg.validate()?;
    if cfg.algo.is_classical() {
        return Ok(Outcome {
            table: classical(cfg, ws)?,
            params: None,
            certificate: None,
            log: None,
        });
    }
    if cfg.algo.is_theory() {
        let (params, cert) = theory_params(cfg, ws)?;
        let meta = TableMeta {
            certificate: Some(cert.clone()),
            ..blank_meta(cfg, ws)
        };
        let table = evaluate_network(&params, ws, meta, Some(cert.e_bounds.clone()))?;
        return Ok(Outcome {
            table,
            params: Some(params),
            certificate: Some(cert),
            log: None,
        });
    }
    let variant = cfg.algo.variant().expect("trained algorithms have a variant");
    let schedule = cfg.schedule.resolve(cfg.algo, cfg.problem.n)?;
    let (params, log) = match &cfg.params {
        Some(dir) => {
            let p = load_params(dir)?;
            if p.variant() != variant || p.depth() != cfg.k {
                return Err(Error::Config(format!(
                    "stored network is {:?} with {} layers, config wants {variant:?} with {}",
                    p.variant(),
                    p.depth(),
                    cfg.k
                )));
            }
            (p, None)
        }
        None => {
            let (l, _) = resolve_step(&ws.a, StepConstant::Auto)?;
            let init = init_params(&ws.a, variant, cfg.k, l, cfg.train.lambda0, Some(&schedule))?;
            let mut log = TrainLog::default();
            let p = stagewise_train(init, &ws.a, &cfg.problem, &cfg.train, &mut log)?;
            (p, Some(log))
        }
    };
    let table = evaluate_network(&params, ws, blank_meta(cfg, ws), None)?;
    Ok(Outcome {
        table,
        params: Some(params),
        certificate: None,
        log,
    })
}

/// Builds the workspace, runs, and writes the table when an output path is
/// configured.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut ws = Workspace::build(cfg)?;
    let out = run_in(cfg, &mut ws)?;
    if let Some(path) = &cfg.output {
        out.table.write(path)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub coupling_residual: f64,
    pub theta: f64,
    pub w2_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub layers: Vec<LayerDiagnostics>,
    /// False when the checkpoint is not a trained network, in which case no
    /// trend is asserted.
    pub applicable: bool,
    pub residual_trend: Option<bool>,
    pub theta_trend: Option<bool>,
}

impl NecessityReport {
    pub fn passed(&self) -> Option<bool> {
        Some(self.residual_trend? && self.theta_trend?)
    }
}

fn head_tail_ratio(v: &[f64], span: usize) -> f64 {
    let head = v[..span].iter().sum::<f64>() / span as f64;
    let tail = v[v.len() - span..].iter().sum::<f64>() / span as f64;
    tail / head
}

/// Coupling residual, threshold and `‖W₂‖₂` per layer of a checkpoint, with
/// the decay checks: the mean over the last four layers must be below half
/// the mean over the first four, for both residual and threshold.
pub fn validate_theorem1(params: &NetworkParams, a: &DenseMatrix) -> Result<NecessityReport> {
    params.check(a)?;
    let full = params.to_full(a);
    let layers = (0..full.depth())
        .map(|k| {
            Ok(LayerDiagnostics {
                layer: k,
                coupling_residual: coupling_residual(&full, a, k)?,
                theta: full.layers[k].theta,
                w2_norm: w2_norm(&full, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let applicable = params.provenance == "trained" && params.variant() == Variant::Full && params.depth() >= 2;
    let (mut residual_trend, mut theta_trend) = (None, None);
    if applicable {
        let span = (params.depth() / 2).min(4);
        let res: Vec<f64> = layers.iter().map(|l| l.coupling_residual).collect();
        let th: Vec<f64> = layers.iter().map(|l| l.theta).collect();
        residual_trend = Some(head_tail_ratio(&res, span) < 0.5);
        theta_trend = Some(head_tail_ratio(&th, span) < 0.5);
    }
    Ok(NecessityReport {
        layers,
        applicable,
        residual_trend,
        theta_trend,
    })
}

pub const RATE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateVerdict {
    /// Rows whose sup ℓ1 error exceeds the bound.
    pub violations: Vec<usize>,
    /// Fitted rate; infinite when the error vanishes within two layers.
    pub c_emp: f64,
    pub c: f64,
    pub passed: bool,
    pub message: String,
}

/// Checks every row against the certificate bound and the fitted rate
/// against `c − 0.05`.
pub fn certify_linear_rate(table: &ResultTable, cert: &TheoryCertificate) -> RateVerdict {
    let violations: Vec<usize> = table
        .rows
        .iter()
        .filter(|r| r.layer >= cert.e_bounds.len() || r.sup_l1_err > cert.e_bounds[r.layer])
        .map(|r| r.layer)
        .collect();
    let c_emp = empirical_rate(&table.sup_errors(), DEFAULT_RATE_FLOOR).unwrap_or(f64::INFINITY);
    let rate_ok = c_emp >= cert.c - RATE_TOLERANCE;
    let passed = violations.is_empty() && rate_ok;
    let message = if !violations.is_empty() {
        format!("bound violated at layer(s) {violations:?}")
    } else if !rate_ok {
        format!("empirical rate {c_emp:.4} below {:.4} - {RATE_TOLERANCE}", cert.c)
    } else {
        format!("all layers within bound; rate {c_emp:.4} vs certified {:.4}", cert.c)
    };
    RateVerdict {
        violations,
        c_emp,
        c: cert.c,
        passed,
        message,
    }
}

pub const SS_SLACK: f64 = 1e-12;
pub const SS_IMPROVEMENT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsVerdict {
    /// Rows where the support-selecting run is worse than allowed.
    pub worse: Vec<usize>,
    /// Rows where it improves the sup ℓ1 error by at least 1%.
    pub improved: Vec<usize>,
    /// Whether the support-selecting run trusted any true-support entry.
    pub selection_active: bool,
    pub no_worse: bool,
}

/// Layer-wise comparison of paired runs with and without support selection.
pub fn compare_ss(cp: &ResultTable, cpss: &ResultTable) -> Result<SsVerdict> {
    if cp.meta.matrix_hash != cpss.meta.matrix_hash || cp.meta.sample_hash != cpss.meta.sample_hash {
        return Err(Error::Precondition("tables come from different dictionaries or sample sets".into()));
    }
    if cp.rows.len() != cpss.rows.len() {
        return Err(Error::Dimension("tables have different depths".into()));
    }
    let mut worse = Vec::new();
    let mut improved = Vec::new();
    for (a, b) in cp.rows.iter().zip(&cpss.rows) {
        if b.sup_l1_err > a.sup_l1_err + SS_SLACK {
            worse.push(a.layer);
        }
        if a.sup_l1_err > 0.0 && (a.sup_l1_err - b.sup_l1_err) >= SS_IMPROVEMENT * a.sup_l1_err {
            improved.push(a.layer);
        }
    }
    let selection_active = cpss.rows.iter().any(|r| r.mean_ss_in_support.unwrap_or(0.0) > 0.0);
    Ok(SsVerdict {
        no_worse: worse.is_empty(),
        worse,
        improved,
        selection_active,
    })
}
