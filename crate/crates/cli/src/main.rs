use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use uilab_core::coherence::generalized_coherence;
use uilab_core::harness::{
    certify_linear_rate, compare_ss, run_in, validate_theorem1, Algo, ExperimentConfig, ResultTable, Workspace,
};
use uilab_core::io::{matrix_hash, read_matrix, write_matrix};
use uilab_core::nets::{load_params, save_params};
use uilab_core::problem::{build_dictionary, ProblemConfig, SampleSet, SparsityMode};
use uilab_core::rng::Domain;
use uilab_core::solvers::DisplacementNorm;

#[derive(Parser)]
#[command(name = "uilab", version, about = "Sparse recovery with unrolled ISTA networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dictionary and report the hashes of it and its test set.
    Gen {
        #[command(flatten)]
        exp: ExpArgs,
        /// Where to write the dictionary (.bin or .csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Mutual and generalized coherence of a dictionary.
    Coherence {
        #[command(flatten)]
        exp: ExpArgs,
        /// Where to write the good weight matrix.
        #[arg(long)]
        w_out: Option<PathBuf>,
    },
    /// ISTA, FISTA or adaptive ISTA on the test set.
    Classical(RunArgs),
    /// Analytic LISTA-CP / CPSS parameters with their error certificate.
    TheoryRun(RunArgs),
    /// Stage-wise training of a LISTA variant.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Directory for the trained parameters.
        #[arg(long)]
        save: Option<PathBuf>,
        /// Training log CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate stored parameters on the test set.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        params: PathBuf,
    },
    /// Coupling residual and threshold trends of a full-weight checkpoint.
    ValidateNecessity {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long)]
        params: PathBuf,
    },
    /// Check a theory-run table against its certificate.
    CertifyRate {
        /// Table written by `theory-run`; the certificate is read from its sidecar.
        #[arg(long)]
        table: PathBuf,
    },
    /// Compare paired runs with and without support selection.
    CompareSs {
        #[arg(long, requires = "cpss")]
        cp: Option<PathBuf>,
        #[arg(long, requires = "cp")]
        cpss: Option<PathBuf>,
        /// Run both theory variants from this configuration instead.
        #[command(flatten)]
        exp: ExpArgs,
        /// Directory for the paired tables when running them.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Summarize result tables.
    Report {
        tables: Vec<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct ExpArgs {
    /// Experiment configuration (JSON); flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Fixed number of nonzeros.
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    p_b: Option<f64>,
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    condition_number: Option<f64>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Displacement norm of the adaptive rule: l2 or linf.
    #[arg(long, value_parser = parse_norm)]
    displacement_norm: Option<DisplacementNorm>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    p_max: Option<f64>,
    #[arg(long)]
    alpha0: Option<f64>,
    #[arg(long)]
    steps_per_stage: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Dictionary file to load instead of generating.
    #[arg(long)]
    dictionary: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    exp: ExpArgs,
    /// Result table CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_norm(s: &str) -> std::result::Result<DisplacementNorm, String> {
    match s {
        "l2" => Ok(DisplacementNorm::L2),
        "linf" => Ok(DisplacementNorm::Linf),
        _ => Err(format!("unknown norm {s:?}, expected l2 or linf")),
    }
}

impl ExpArgs {
    fn load(&self, default_algo: Algo) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => {
                let algo = self.algo.unwrap_or(default_algo);
                let seed = self.seed.unwrap_or(0);
                if algo.is_theory() {
                    ExperimentConfig::desk_theory(algo, seed)
                } else {
                    ExperimentConfig::new(ProblemConfig::paper_scale(seed), algo, 16)
                }
            }
        };
        if let Some(a) = self.algo {
            cfg.algo = a;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        let pr = &mut cfg.problem;
        if let Some(v) = self.seed {
            pr.seed = v;
        }
        if let Some(v) = self.m {
            pr.m = v;
        }
        if let Some(v) = self.n {
            pr.n = v;
        }
        if let Some(s) = self.s {
            pr.sparsity = SparsityMode::FixedS { s };
        }
        if let Some(p_b) = self.p_b {
            pr.sparsity = SparsityMode::Bernoulli { p_b };
        }
        if self.snr_db.is_some() {
            pr.snr_db = self.snr_db;
        }
        if self.condition_number.is_some() {
            pr.condition_number = self.condition_number;
        }
        if let Some(v) = self.test_size {
            cfg.test_size = v;
        }
        if let Some(v) = self.lambda {
            cfg.classical.lambda = v;
        }
        if let Some(v) = self.displacement_norm {
            cfg.classical.displacement_norm = v;
        }
        if let Some(v) = self.p {
            cfg.schedule.p = v;
        }
        if self.p_max.is_some() {
            cfg.schedule.p_max = self.p_max;
        }
        if let Some(v) = self.alpha0 {
            cfg.train.alpha0 = v;
        }
        if let Some(v) = self.steps_per_stage {
            cfg.train.steps_per_stage = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if self.dictionary.is_some() {
            cfg.dictionary = self.dictionary.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(table: &ResultTable, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            table.write(p)?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{}", table.to_csv()),
    }
    Ok(())
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Gen { exp, out } => {
            let cfg = exp.load(Algo::Ista)?;
            let a = build_dictionary(&cfg.problem)?;
            write_matrix(&out, &a)?;
            let test = SampleSet::generate(&a, &cfg.problem, Domain::Test, cfg.test_size)?;
            print_json(&serde_json::json!({
                "dictionary": out,
                "m": a.rows(),
                "n": a.cols(),
                "matrix_hash": matrix_hash(&a),
                "sample_hash": test.hash(),
                "test_size": test.len(),
                "condition_number": a.condition_number(),
            }))?;
        }
        Cmd::Coherence { exp, w_out } => {
            let cfg = exp.load(Algo::TheoryCp)?;
            let a = match &cfg.dictionary {
                Some(p) => read_matrix(p)?,
                None => build_dictionary(&cfg.problem)?,
            };
            let report = generalized_coherence(&a)?;
            if let Some(p) = &w_out {
                write_matrix(p, &report.w_good)?;
            }
            print_json(&report.summary(w_out.map(|p| p.display().to_string())))?;
        }
        Cmd::Classical(r) => {
            let cfg = r.exp.load(Algo::Ista)?;
            if !cfg.algo.is_classical() {
                bail!("classical runs ista, fista or adaptive, not {}", cfg.algo.name());
            }
            let mut ws = Workspace::build(&cfg)?;
            emit(&run_in(&cfg, &mut ws)?.table, r.out.as_deref())?;
        }
        Cmd::TheoryRun(r) => {
            let cfg = r.exp.load(Algo::TheoryCp)?;
            if !cfg.algo.is_theory() {
                bail!("theory-run needs theory_cp or theory_cpss, not {}", cfg.algo.name());
            }
            let mut ws = Workspace::build(&cfg)?;
            let out = run_in(&cfg, &mut ws)?;
            emit(&out.table, r.out.as_deref())?;
            if let Some(cert) = &out.certificate {
                let v = certify_linear_rate(&out.table, cert);
                eprintln!("{}", v.message);
            }
        }
        Cmd::Train { run: r, save, log } => {
            let mut cfg = r.exp.load(Algo::ListaCp)?;
            if !cfg.algo.is_trained() {
                bail!("train needs a lista variant, not {}", cfg.algo.name());
            }
            cfg.params = None;
            let mut ws = Workspace::build(&cfg)?;
            let out = run_in(&cfg, &mut ws)?;
            if let (Some(dir), Some(p)) = (&save, &out.params) {
                save_params(dir, p)?;
                fs::write(dir.join("train_config.json"), serde_json::to_string_pretty(&cfg.train)?)?;
                eprintln!("saved parameters to {}", dir.display());
            }
            if let (Some(path), Some(l)) = (&log, &out.log) {
                l.write_csv(path)?;
            }
            emit(&out.table, r.out.as_deref())?;
        }
        Cmd::Eval { run: r, params } => {
            let mut cfg = r.exp.load(Algo::ListaCp)?;
            let p = load_params(&params)?;
            cfg.k = p.depth();
            cfg.params = Some(params);
            let mut ws = Workspace::build(&cfg)?;
            emit(&run_in(&cfg, &mut ws)?.table, r.out.as_deref())?;
        }
        Cmd::ValidateNecessity { exp, params } => {
            let cfg = exp.load(Algo::Lista)?;
            let ws = Workspace::build(&ExperimentConfig { test_size: 1, ..cfg })?;
            let report = validate_theorem1(&load_params(&params)?, &ws.a)?;
            print_json(&report)?;
            return Ok(report.passed().unwrap_or(true));
        }
        Cmd::CertifyRate { table } => {
            let t = ResultTable::read(&table)?;
            let Some(cert) = &t.meta.certificate else {
                bail!("{} carries no certificate; was it written by theory-run?", table.display());
            };
            let v = certify_linear_rate(&t, cert);
            print_json(&v)?;
            return Ok(v.passed);
        }
        Cmd::CompareSs { cp, cpss, exp, out_dir } => {
            let (a, b) = match (cp, cpss) {
                (Some(cp), Some(cpss)) => (ResultTable::read(cp)?, ResultTable::read(cpss)?),
                _ => {
                    let cfg = exp.load(Algo::TheoryCp)?;
                    let cp_cfg = ExperimentConfig { algo: Algo::TheoryCp, ..cfg.clone() };
                    let ss_cfg = ExperimentConfig { algo: Algo::TheoryCpss, ..cfg };
                    let mut ws = Workspace::build(&cp_cfg)?;
                    let a = run_in(&cp_cfg, &mut ws)?.table;
                    let b = run_in(&ss_cfg, &mut ws)?.table;
                    if let Some(dir) = &out_dir {
                        a.write(dir.join("theory_cp.csv"))?;
                        b.write(dir.join("theory_cpss.csv"))?;
                    }
                    (a, b)
                }
            };
            let v = compare_ss(&a, &b)?;
            print_json(&v)?;
            return Ok(v.no_worse);
        }
        Cmd::Report { tables } => {
            if tables.is_empty() {
                bail!("no tables given");
            }
            println!("| table | algo | K | final nmse (dB) | final sup l1 | bound ok |");
            println!("|---|---|---|---|---|---|");
            for p in &tables {
                let t = ResultTable::read(p)?;
                let last = t.rows.last().context("empty table")?;
                let bound = if t.rows.iter().all(|r| r.bound_l1.is_none()) {
                    "-".to_string()
                } else {
                    t.rows
                        .iter()
                        .all(|r| r.bound_l1.is_none_or(|b| r.sup_l1_err <= b))
                        .to_string()
                };
                println!(
                    "| {} | {} | {} | {:.2} | {:.3e} | {} |",
                    p.display(),
                    t.meta.algo.name(),
                    t.meta.k,
                    last.nmse_db,
                    last.sup_l1_err,
                    bound
                );
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
