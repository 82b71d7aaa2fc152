//! Hand-written reverse mode through the unrolled recurrences, plain SGD and
//! the layer-by-layer three-stage schedule.
//!
//! Minibatches are processed as matrices (one column per sample) so each
//! layer costs a handful of GEMMs. The loss on a batch is the mean over its
//! columns of `‖x^T − x*‖₂²`.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Vector};
use crate::nets::{pre_activation, LayerParams, LayerTrace, LayerWeights, NetworkParams};
use crate::operators::{selection_mask, ss_scalar};
use crate::problem::{sample_signal, NmseAccumulator, ProblemConfig, SampleSet, SignalSample};
use crate::rng::Domain;

/// `‖x − x*‖₂²`.
pub fn loss_mse(x: &Vector, x_star: &Vector) -> Result<f64> {
    if x.len() != x_star.len() {
        return Err(Error::Dimension(format!(
            "loss needs equal lengths, got {} and {}",
            x.len(),
            x_star.len()
        )));
    }
    Ok(x.iter().zip(x_star.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    /// Same shape as the layer's weights.
    pub weights: LayerWeights,
    pub theta: f64,
}

/// Gradients for every layer; layers outside the differentiated range hold
/// zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
}

impl ParamGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| LayerGrad {
                weights: zero_weights(&l.weights),
                theta: 0.0,
            })
            .collect();
        Self { layers }
    }

    /// Every gradient entry, layer by layer, in the same order as
    /// [`flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            push_weights(&l.weights, &mut out);
            out.push(l.theta);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

fn zero_weights(w: &LayerWeights) -> LayerWeights {
    match w {
        LayerWeights::Full { w1, w2 } => LayerWeights::Full {
            w1: DenseMatrix::zeros(w1.rows(), w1.cols()),
            w2: DenseMatrix::zeros(w2.rows(), w2.cols()),
        },
        LayerWeights::Coupled { w } => LayerWeights::Coupled {
            w: DenseMatrix::zeros(w.rows(), w.cols()),
        },
    }
}

fn push_weights(w: &LayerWeights, out: &mut Vec<f64>) {
    match w {
        LayerWeights::Full { w1, w2 } => {
            out.extend_from_slice(w1.data());
            out.extend_from_slice(w2.data());
        }
        LayerWeights::Coupled { w } => out.extend_from_slice(w.data()),
    }
}

/// Every parameter entry in the order used by [`ParamGrads::flatten`].
pub fn flatten_params(params: &NetworkParams) -> Vec<f64> {
    let mut out = Vec::new();
    for l in &params.layers {
        push_weights(&l.weights, &mut out);
        out.push(l.theta);
    }
    out
}

/// Inverse of [`flatten_params`]; thresholds are taken as given.
pub fn unflatten_params(template: &NetworkParams, flat: &[f64]) -> Result<NetworkParams> {
    let mut it = flat.iter().copied();
    let mut take = |rows: usize, cols: usize| -> Result<DenseMatrix> {
        let v: Vec<f64> = it.by_ref().take(rows * cols).collect();
        DenseMatrix::new(rows, cols, v)
    };
    let mut layers = Vec::with_capacity(template.depth());
    for l in &template.layers {
        let weights = match &l.weights {
            LayerWeights::Full { w1, w2 } => LayerWeights::Full {
                w1: take(w1.rows(), w1.cols())?,
                w2: take(w2.rows(), w2.cols())?,
            },
            LayerWeights::Coupled { w } => LayerWeights::Coupled {
                w: take(w.rows(), w.cols())?,
            },
        };
        let theta = take(1, 1)?[(0, 0)];
        layers.push(LayerParams {
            weights,
            theta,
            ss_count: l.ss_count,
        });
    }
    NetworkParams::new(layers, template.seed, template.provenance.clone())
}

/// Forward state of a minibatch: `x^k` and `v^k` as n×batch matrices, plus
/// the trusted-entry masks (column-major, empty for layers without
/// selection).
#[derive(Debug, Clone)]
pub struct BatchCache {
    pub xs: Vec<DMatrix<f64>>,
    pub vs: Vec<DMatrix<f64>>,
    pub masks: Vec<Vec<bool>>,
}

fn batch_pre_activation(layer: &LayerParams, a: &DenseMatrix, b: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    match &layer.weights {
        LayerWeights::Full { w1, w2 } => w1.as_dmatrix() * b + w2.as_dmatrix() * x,
        LayerWeights::Coupled { w } => {
            let r = b - a.as_dmatrix() * x;
            x + w.as_dmatrix().tr_mul(&r)
        }
    }
}

/// Runs the first `layers` layers on every column of `b`.
pub fn forward_batch(params: &NetworkParams, a: &DenseMatrix, b: &DMatrix<f64>, layers: usize) -> Result<BatchCache> {
    params.check(a)?;
    if b.nrows() != a.rows() || layers > params.depth() {
        return Err(Error::Dimension("batch does not match the network".into()));
    }
    let n = a.cols();
    let bs = b.ncols();
    let mut xs = vec![DMatrix::zeros(n, bs)];
    let mut vs = Vec::with_capacity(layers);
    let mut masks = Vec::with_capacity(layers);
    for layer in &params.layers[..layers] {
        let v = batch_pre_activation(layer, a, b, xs.last().unwrap());
        let mut x = v.clone();
        let mut mask = Vec::new();
        if layer.ss_count > 0 {
            mask = vec![false; n * bs];
            for j in 0..bs {
                let col = &v.as_slice()[j * n..(j + 1) * n];
                selection_mask(col, layer.ss_count, &mut mask[j * n..(j + 1) * n]);
            }
        }
        let th = layer.theta;
        for (i, e) in x.as_mut_slice().iter_mut().enumerate() {
            *e = ss_scalar(*e, th, mask.get(i).copied().unwrap_or(false));
        }
        xs.push(x);
        vs.push(v);
        masks.push(mask);
    }
    Ok(BatchCache { xs, vs, masks })
}

/// Reverse pass for the mean loss on `x^{loss_layer}`. Gradients are
/// produced for layers `first..loss_layer`; earlier layers are treated as
/// constants and get zeros.
pub fn backward_batch(
    cache: &BatchCache,
    params: &NetworkParams,
    a: &DenseMatrix,
    b: &DMatrix<f64>,
    x_star: &DMatrix<f64>,
    loss_layer: usize,
    first: usize,
) -> Result<ParamGrads> {
    if loss_layer == 0 || loss_layer > cache.vs.len() || first >= loss_layer {
        return Err(Error::Precondition(format!(
            "cannot differentiate layers {first}..{loss_layer} of a {}-layer cache",
            cache.vs.len()
        )));
    }
    let bs = b.ncols() as f64;
    let mut grads = ParamGrads::zeros_like(params);
    let mut g = (&cache.xs[loss_layer] - x_star) * (2.0 / bs);
    for k in (first..loss_layer).rev() {
        let layer = &params.layers[k];
        let v = &cache.vs[k];
        let mask = &cache.masks[k];
        let th = layer.theta;
        let mut dtheta = 0.0;
        for (i, (gi, &vi)) in g.as_mut_slice().iter_mut().zip(v.as_slice()).enumerate() {
            if vi.abs() > th {
                if !mask.get(i).copied().unwrap_or(false) {
                    dtheta -= vi.signum() * *gi;
                }
            } else {
                *gi = 0.0;
            }
        }
        let dv = g;
        let x = &cache.xs[k];
        let (dw, next) = match &layer.weights {
            LayerWeights::Full { w2, .. } => {
                let d1 = &dv * b.transpose();
                let d2 = &dv * x.transpose();
                let next = (k > first).then(|| w2.as_dmatrix().tr_mul(&dv));
                (
                    LayerWeights::Full {
                        w1: DenseMatrix::from_trusted(d1),
                        w2: DenseMatrix::from_trusted(d2),
                    },
                    next,
                )
            }
            LayerWeights::Coupled { w } => {
                let r = b - a.as_dmatrix() * x;
                let d = &r * dv.transpose();
                let next = (k > first).then(|| &dv - a.as_dmatrix().tr_mul(&(w.as_dmatrix() * &dv)));
                (LayerWeights::Coupled { w: DenseMatrix::from_trusted(d) }, next)
            }
        };
        grads.layers[k] = LayerGrad { weights: dw, theta: dtheta };
        match next {
            Some(n) => g = n,
            None => break,
        }
    }
    Ok(grads)
}

/// Gradients of `‖x^{loss_layer} − x*‖₂²` for a single sample, given the
/// trace from the matching forward pass.
pub fn backward(
    trace: &LayerTrace,
    params: &NetworkParams,
    a: &DenseMatrix,
    sample: &SignalSample,
    loss_layer: usize,
) -> Result<ParamGrads> {
    params.check(a)?;
    if trace.iterates.len() != params.depth() + 1 || trace.selected.len() != params.depth() {
        return Err(Error::Dimension("trace depth does not match the network".into()));
    }
    let n = a.cols();
    let mut cache = BatchCache {
        xs: Vec::with_capacity(loss_layer + 1),
        vs: Vec::with_capacity(loss_layer),
        masks: Vec::with_capacity(loss_layer),
    };
    cache.xs.push(DMatrix::from_column_slice(n, 1, trace.iterates[0].as_slice()));
    for k in 0..loss_layer.min(params.depth()) {
        let layer = &params.layers[k];
        let v = pre_activation(layer, a, &sample.b, &trace.iterates[k]);
        let mut mask = Vec::new();
        if layer.ss_count > 0 {
            mask = vec![false; n];
            trace.selected[k].iter().for_each(|&i| mask[i] = true);
        }
        let consistent = v
            .iter()
            .zip(trace.iterates[k + 1].iter())
            .enumerate()
            .all(|(i, (&vi, &xi))| ss_scalar(vi, layer.theta, mask.get(i).copied().unwrap_or(false)) == xi);
        if !consistent {
            return Err(Error::Precondition(format!(
                "trace does not come from these parameters (layer {k})"
            )));
        }
        cache.vs.push(DMatrix::from_column_slice(n, 1, v.as_slice()));
        cache.masks.push(mask);
        cache.xs.push(DMatrix::from_column_slice(n, 1, trace.iterates[k + 1].as_slice()));
    }
    let b = DMatrix::from_column_slice(a.rows(), 1, sample.b.as_slice());
    let xs = DMatrix::from_column_slice(n, 1, sample.x_star.as_slice());
    backward_batch(&cache, params, a, &b, &xs, loss_layer, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub alpha0: f64,
    pub batch_size: usize,
    pub steps_per_stage: usize,
    pub decay_gamma: f64,
    pub validation_size: usize,
    pub seed: u64,
    /// Heavy-ball coefficient; 0 is plain SGD.
    pub momentum: f64,
    /// Stop a stage after this many evaluations without improvement.
    pub early_stop_patience: Option<usize>,
    /// Validation NMSE is logged every this many steps and at stage end.
    pub eval_every: usize,
    /// `λ₀` of the ISTA-equivalent initialization.
    pub lambda0: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha0: 2e-2,
            batch_size: 64,
            steps_per_stage: 4000,
            decay_gamma: 0.3,
            validation_size: 1000,
            seed: 0,
            momentum: 0.0,
            early_stop_patience: None,
            eval_every: 500,
            lambda0: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::Config(format!("alpha0 must be > 0, got {}", self.alpha0)));
        }
        if !(self.decay_gamma > 0.0 && self.decay_gamma <= 1.0) {
            return Err(Error::Config(format!("decay_gamma must lie in (0,1], got {}", self.decay_gamma)));
        }
        if self.batch_size == 0 || self.validation_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size, validation_size and eval_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        Ok(())
    }

    /// Base rate of stage 1, 2 or 3.
    pub fn stage_rate(&self, stage: usize) -> f64 {
        match stage {
            1 => self.alpha0,
            2 => 0.2 * self.alpha0,
            _ => 0.02 * self.alpha0,
        }
    }
}

/// Per-layer rate multipliers, all starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningMultipliers {
    pub values: Vec<f64>,
    pub gamma: f64,
}

impl LearningMultipliers {
    pub fn new(layers: usize, gamma: f64) -> Self {
        Self {
            values: vec![1.0; layers],
            gamma,
        }
    }

    /// Called when the block of layer `tau` is done: decays layers `0..=tau`.
    pub fn complete_layer(&mut self, tau: usize) {
        for v in &mut self.values[..=tau] {
            *v *= self.gamma;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: usize,
    pub layer: usize,
    pub minibatch_loss: f64,
    pub validation_nmse_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,stage,layer,minibatch_loss,validation_nmse_db\n");
        for r in &self.rows {
            let v = r.validation_nmse_db.map(|v| format!("{v:.10e}")).unwrap_or_default();
            s.push_str(&format!("{},{},{},{:.10e},{}\n", r.step, r.stage, r.layer, r.minibatch_loss, v));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Minibatch losses of one stage, in step order.
    pub fn stage_losses(&self, layer: usize, stage: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.layer == layer && r.stage == stage)
            .map(|r| r.minibatch_loss)
            .collect()
    }
}

/// Mutable training state: parameters, multipliers, the position in the
/// training stream and the fixed validation set.
pub struct StageTrainer<'a> {
    pub params: NetworkParams,
    pub multipliers: LearningMultipliers,
    a: &'a DenseMatrix,
    problem: ProblemConfig,
    cfg: TrainConfig,
    validation: SampleSet,
    next_sample: u64,
    step: usize,
    velocity: Option<ParamGrads>,
}

impl<'a> StageTrainer<'a> {
    pub fn new(init: NetworkParams, a: &'a DenseMatrix, problem: &ProblemConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        init.check(a)?;
        let problem = ProblemConfig {
            seed: cfg.seed,
            ..problem.clone()
        };
        let validation = SampleSet::generate(a, &problem, Domain::Validation, cfg.validation_size)?;
        let mut params = init;
        params.seed = cfg.seed;
        let multipliers = LearningMultipliers::new(params.depth(), cfg.decay_gamma);
        Ok(Self {
            params,
            multipliers,
            a,
            problem,
            cfg: cfg.clone(),
            validation,
            next_sample: 0,
            step: 0,
            velocity: None,
        })
    }

    fn minibatch(&mut self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (m, n, bs) = (self.a.rows(), self.a.cols(), self.cfg.batch_size);
        let mut b = DMatrix::zeros(m, bs);
        let mut xs = DMatrix::zeros(n, bs);
        for j in 0..bs {
            let s = sample_signal(self.a, &self.problem, Domain::Train, self.next_sample)?;
            self.next_sample += 1;
            b.column_mut(j).copy_from(&s.b);
            xs.column_mut(j).copy_from(&s.x_star);
        }
        Ok((b, xs))
    }

    /// NMSE of `x^layers` on the validation set.
    pub fn validation_nmse(&self, layers: usize) -> Result<f64> {
        let (m, n) = (self.a.rows(), self.a.cols());
        let mut acc = NmseAccumulator::default();
        for chunk in self.validation.samples.chunks(256) {
            let mut b = DMatrix::zeros(m, chunk.len());
            for (j, s) in chunk.iter().enumerate() {
                b.column_mut(j).copy_from(&s.b);
            }
            let cache = forward_batch(&self.params, self.a, &b, layers)?;
            let x = &cache.xs[layers];
            for (j, s) in chunk.iter().enumerate() {
                acc.add(&x.as_slice()[j * n..(j + 1) * n], s.x_star.as_slice());
            }
        }
        acc.db()
    }

    /// Stage 1 trains layer `tau` alone; stages 2 and 3 train layers
    /// `0..=tau`. The loss is always on `x^{tau+1}`.
    pub fn run_stage(&mut self, tau: usize, stage: usize, log: &mut TrainLog) -> Result<()> {
        if tau >= self.params.depth() || !(1..=3).contains(&stage) {
            return Err(Error::Config(format!("no stage {stage} for layer {tau}")));
        }
        let first = if stage == 1 { tau } else { 0 };
        let rate = self.cfg.stage_rate(stage);
        let mut best = f64::INFINITY;
        let mut stale = 0;
        for i in 0..self.cfg.steps_per_stage {
            let (b, xs) = self.minibatch()?;
            let cache = forward_batch(&self.params, self.a, &b, tau + 1)?;
            let diff = &cache.xs[tau + 1] - &xs;
            let loss = diff.norm_squared() / b.ncols() as f64;
            let step = self.step;
            self.step += 1;
            let last = i + 1 == self.cfg.steps_per_stage;
            let evaluate = (i + 1) % self.cfg.eval_every == 0 || last;
            let mut row = LogRow {
                step,
                stage,
                layer: tau,
                minibatch_loss: loss,
                validation_nmse_db: None,
            };
            if !loss.is_finite() {
                log.rows.push(row);
                return Err(Error::Diverged { step, layer: tau, stage });
            }
            let grads = backward_batch(&cache, &self.params, self.a, &b, &xs, tau + 1, first)?;
            if !grads.is_finite() {
                log.rows.push(row);
                return Err(Error::Diverged { step, layer: tau, stage });
            }
            self.apply(&grads, first..=tau, rate);
            if evaluate {
                let v = self.validation_nmse(tau + 1)?;
                row.validation_nmse_db = Some(v);
                log.rows.push(row);
                if let Some(patience) = self.cfg.early_stop_patience {
                    if v < best {
                        best = v;
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= patience {
                            break;
                        }
                    }
                }
            } else {
                log.rows.push(row);
            }
        }
        Ok(())
    }

    fn apply(&mut self, grads: &ParamGrads, range: std::ops::RangeInclusive<usize>, rate: f64) {
        let mu = self.cfg.momentum;
        let dir = if mu > 0.0 {
            let v = self.velocity.get_or_insert_with(|| ParamGrads::zeros_like(&self.params));
            for k in range.clone() {
                let (vl, gl) = (&mut v.layers[k], &grads.layers[k]);
                vl.theta = mu * vl.theta + gl.theta;
                axpy_weights(&mut vl.weights, &gl.weights, mu, 1.0);
            }
            v.clone()
        } else {
            grads.clone()
        };
        for k in range {
            let lr = rate * self.multipliers.values[k];
            let layer = &mut self.params.layers[k];
            axpy_weights(&mut layer.weights, &dir.layers[k].weights, 1.0, -lr);
            layer.theta = (layer.theta - lr * dir.layers[k].theta).max(0.0);
        }
    }

    /// Runs the three stages of layer `tau` and decays the multipliers.
    pub fn train_layer(&mut self, tau: usize, log: &mut TrainLog) -> Result<()> {
        for stage in 1..=3 {
            self.run_stage(tau, stage, log)?;
        }
        self.multipliers.complete_layer(tau);
        Ok(())
    }

    pub fn into_params(mut self) -> NetworkParams {
        self.params.provenance = "trained".into();
        self.params
    }
}

/// `dst ← s·dst + t·src` entrywise.
fn axpy_weights(dst: &mut LayerWeights, src: &LayerWeights, s: f64, t: f64) {
    let f = |d: &mut DenseMatrix, g: &DenseMatrix| {
        let mut m = std::mem::replace(d, DenseMatrix::zeros(0, 0)).into_dmatrix();
        m.zip_apply(g.as_dmatrix(), |a, b| *a = s * *a + t * b);
        *d = DenseMatrix::from_trusted(m);
    };
    match (dst, src) {
        (LayerWeights::Full { w1, w2 }, LayerWeights::Full { w1: g1, w2: g2 }) => {
            f(w1, g1);
            f(w2, g2);
        }
        (LayerWeights::Coupled { w }, LayerWeights::Coupled { w: g }) => f(w, g),
        _ => unreachable!("gradient variant always mirrors the parameters"),
    }
}

/// Layer-by-layer training of every layer in `init`. The log is filled as
/// training proceeds, so it is complete up to the failing step when
/// training diverges.
pub fn stagewise_train(
    init: NetworkParams,
    a: &DenseMatrix,
    problem: &ProblemConfig,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<NetworkParams> {
    if cfg.steps_per_stage == 0 {
        cfg.validate()?;
        init.check(a)?;
        return Ok(init);
    }
    let mut t = StageTrainer::new(init, a, problem, cfg)?;
    for tau in 0..t.params.depth() {
        t.train_layer(tau, log)?;
    }
    Ok(t.into_params())
}


/// Central-difference gradient of `‖x^{loss_layer} − x*‖₂²`, entry order as
/// in [`flatten_params`].
pub fn numeric_gradient(
    params: &NetworkParams,
    a: &DenseMatrix,
    sample: &SignalSample,
    loss_layer: usize,
    h: f64,
) -> Result<Vec<f64>> {
    let base = flatten_params(params);
    let eval = |flat: &[f64]| -> Result<f64> {
        let p = unflatten_params(params, flat)?;
        let tr = crate::nets::forward(&p, a, &sample.b)?;
        loss_mse(&tr.iterates[loss_layer], &sample.x_star)
    };
    let mut out = Vec::with_capacity(base.len());
    let mut work = base.clone();
    for i in 0..base.len() {
        work[i] = base[i] + h;
        let up = eval(&work)?;
        work[i] = base[i] - h;
        let down = eval(&work)?;
        work[i] = base[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Distance of the forward pass from the nearest kink: the smallest
/// `||v_i| − θ|` over all layers, and for selecting layers also the gap in
/// magnitude between the last trusted and first untrusted entry.
pub fn kink_margin(params: &NetworkParams, a: &DenseMatrix, b: &Vector) -> Result<f64> {
    let tr = crate::nets::forward(params, a, b)?;
    let mut margin = f64::INFINITY;
    for (k, layer) in params.layers.iter().enumerate() {
        let v = pre_activation(layer, a, b, &tr.iterates[k]);
        for &vi in v.iter() {
            margin = margin.min((vi.abs() - layer.theta).abs());
        }
        let c = layer.ss_count;
        if c > 0 && c < v.len() {
            let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
            mags.sort_by(|x, y| y.total_cmp(x));
            margin = margin.min(mags[c - 1] - mags[c]);
        }
    }
    Ok(margin)
}
