//! Unrolled ISTA networks.
//!
//! Four forward maps share one recurrence. With `v^k` the pre-activation,
//!
//! * full weights:    `v^k = W₁^k b + W₂^k x^k`
//! * coupled weights: `v^k = x^k + (W^k)ᵀ(b − A x^k)`
//!
//! and `x^{k+1}` is the soft threshold of `v^k` by `θ^k`, or its
//! support-selecting variant when the layer trusts `ss_count > 0` entries.

mod store;
pub mod theory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm1, norm2, shrink, spectral_norm, DenseMatrix, Vector};
use crate::operators::{selection_mask, ss_scalar, SupportSchedule};

pub use store::{load_params, save_params, Manifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Independent `W₁` (n×m) and `W₂` (n×n) per layer.
    Full,
    /// A single `W` (m×n) per layer with `W₂ = I − WᵀA` implied.
    Coupled,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Full { w1: DenseMatrix, w2: DenseMatrix },
    Coupled { w: DenseMatrix },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: LayerWeights,
    pub theta: f64,
    pub ss_count: usize,
}

impl LayerParams {
    pub fn variant(&self) -> Variant {
        match self.weights {
            LayerWeights::Full { .. } => Variant::Full,
            LayerWeights::Coupled { .. } => Variant::Coupled,
        }
    }

    fn check(&self, m: usize, n: usize) -> Result<()> {
        let ok = match &self.weights {
            LayerWeights::Full { w1, w2 } => {
                w1.rows() == n && w1.cols() == m && w2.rows() == n && w2.cols() == n
            }
            LayerWeights::Coupled { w } => w.rows() == m && w.cols() == n,
        };
        if !ok {
            return Err(Error::Dimension(format!(
                "layer weights do not match an m={m}, n={n} problem"
            )));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return Err(Error::Precondition(format!("threshold {} is not >= 0", self.theta)));
        }
        if self.ss_count > n {
            return Err(Error::Precondition(format!("ss_count {} exceeds n={n}", self.ss_count)));
        }
        Ok(())
    }
}

/// Per-layer parameters of an unrolled network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    pub seed: u64,
    /// Where the parameters came from, e.g. `init`, `trained`, `theory`.
    pub provenance: String,
}

impl NetworkParams {
    pub fn new(layers: Vec<LayerParams>, seed: u64, provenance: impl Into<String>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::Config("a network needs at least one layer".into()));
        };
        let v = first.variant();
        if layers.iter().any(|l| l.variant() != v) {
            return Err(Error::Config("all layers must share one weight variant".into()));
        }
        Ok(Self {
            layers,
            seed,
            provenance: provenance.into(),
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn variant(&self) -> Variant {
        self.layers[0].variant()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.theta).collect()
    }

    pub fn ss_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.ss_count).collect()
    }

    pub fn uses_support_selection(&self) -> bool {
        self.layers.iter().any(|l| l.ss_count > 0)
    }

    /// Replaces every layer's trusted-support count from a schedule.
    pub fn with_schedule(mut self, schedule: &SupportSchedule) -> Self {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.ss_count = schedule.pk_count(k);
        }
        self
    }

    /// Problem size `(m, n)` implied by the weights.
    pub fn dims(&self) -> (usize, usize) {
        match &self.layers[0].weights {
            LayerWeights::Full { w1, .. } => (w1.cols(), w1.rows()),
            LayerWeights::Coupled { w } => (w.rows(), w.cols()),
        }
    }

    pub fn check(&self, a: &DenseMatrix) -> Result<()> {
        let (m, n) = (a.rows(), a.cols());
        if self.dims() != (m, n) {
            return Err(Error::Dimension(format!(
                "network is for {:?} but dictionary is {m}x{n}",
                self.dims()
            )));
        }
        self.layers.iter().try_for_each(|l| l.check(m, n))
    }

    /// Expands coupled weights into `W₁ = Wᵀ`, `W₂ = I − WᵀA`.
    pub fn to_full(&self, a: &DenseMatrix) -> Self {
        let n = a.cols();
        let layers = self
            .layers
            .iter()
            .map(|l| match &l.weights {
                LayerWeights::Full { .. } => l.clone(),
                LayerWeights::Coupled { w } => {
                    let w1 = w.as_dmatrix().transpose();
                    let w2 = nalgebra::DMatrix::identity(n, n) - &w1 * a.as_dmatrix();
                    LayerParams {
                        weights: LayerWeights::Full {
                            w1: DenseMatrix::from_trusted(w1),
                            w2: DenseMatrix::from_trusted(w2),
                        },
                        theta: l.theta,
                        ss_count: l.ss_count,
                    }
                }
            })
            .collect();
        Self {
            layers,
            seed: self.seed,
            provenance: self.provenance.clone(),
        }
    }
}

/// Iterates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `x⁰ = 0, x¹, …, x^K`.
    pub iterates: Vec<Vector>,
    /// Indices trusted by support selection at each layer (empty without it).
    pub selected: Vec<Vec<usize>>,
}

impl LayerTrace {
    pub fn last(&self) -> &Vector {
        self.iterates.last().expect("trace holds x0")
    }

    pub fn l1_errors(&self, x_star: &Vector) -> Vec<f64> {
        self.iterates.iter().map(|x| norm1((x - x_star).as_slice())).collect()
    }

    pub fn l2_errors(&self, x_star: &Vector) -> Vec<f64> {
        self.iterates.iter().map(|x| norm2((x - x_star).as_slice())).collect()
    }

    pub fn supports(&self) -> Vec<Vec<usize>> {
        self.iterates
            .iter()
            .map(|x| (0..x.len()).filter(|&i| x[i] != 0.0).collect())
            .collect()
    }

    /// `|S^k|` per layer: entries of the true support that are nonzero in
    /// `x^{k+1}` and were trusted by the selection at layer `k`.
    pub fn selected_in_support(&self, support: &[usize]) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .map(|(k, sel)| {
                let next = &self.iterates[k + 1];
                sel.iter()
                    .filter(|i| next[**i] != 0.0 && support.binary_search(i).is_ok())
                    .count()
            })
            .collect()
    }
}

/// Pre-activation of layer `k` at iterate `x`.
pub(crate) fn pre_activation(layer: &LayerParams, a: &DenseMatrix, b: &Vector, x: &Vector) -> Vector {
    match &layer.weights {
        LayerWeights::Full { w1, w2 } => w1.as_dmatrix() * b + w2.as_dmatrix() * x,
        LayerWeights::Coupled { w } => {
            let r = b - a.as_dmatrix() * x;
            x + w.as_dmatrix().tr_mul(&r)
        }
    }
}

/// Applies the layer's threshold in place; returns the trusted indices.
pub(crate) fn activate(v: &mut Vector, theta: f64, ss_count: usize, mask: &mut [bool]) -> Vec<usize> {
    if ss_count == 0 {
        v.iter_mut().for_each(|e| *e = shrink(*e, theta));
        return Vec::new();
    }
    selection_mask(v.as_slice(), ss_count, mask);
    for (e, &sel) in v.iter_mut().zip(mask.iter()) {
        *e = ss_scalar(*e, theta, sel);
    }
    (0..mask.len()).filter(|&i| mask[i]).collect()
}

/// Runs any variant; support selection is used wherever `ss_count > 0`.
pub fn forward(params: &NetworkParams, a: &DenseMatrix, b: &Vector) -> Result<LayerTrace> {
    params.check(a)?;
    if b.len() != a.rows() {
        return Err(Error::Dimension(format!(
            "observation has length {}, expected {}",
            b.len(),
            a.rows()
        )));
    }
    let n = a.cols();
    let mut x = Vector::zeros(n);
    let mut iterates = Vec::with_capacity(params.depth() + 1);
    let mut selected = Vec::with_capacity(params.depth());
    let mut mask = vec![false; n];
    iterates.push(x.clone());
    for layer in &params.layers {
        let mut v = pre_activation(layer, a, b, &x);
        selected.push(activate(&mut v, layer.theta, layer.ss_count, &mut mask));
        x = v;
        iterates.push(x.clone());
    }
    Ok(LayerTrace { iterates, selected })
}

fn require(params: &NetworkParams, variant: Variant, selection: bool, name: &str) -> Result<()> {
    if params.variant() != variant {
        return Err(Error::Precondition(format!("{name} needs {variant:?} weights")));
    }
    if !selection && params.uses_support_selection() {
        return Err(Error::Precondition(format!("{name} does not use support selection")));
    }
    Ok(())
}

/// `x^{k+1} = η_θ(W₁b + W₂x^k)`.
pub fn forward_lista(params: &NetworkParams, a: &DenseMatrix, b: &Vector) -> Result<LayerTrace> {
    require(params, Variant::Full, false, "LISTA")?;
    forward(params, a, b)
}

/// `x^{k+1} = η_θ(x^k + Wᵀ(b − Ax^k))`.
pub fn forward_lista_cp(params: &NetworkParams, a: &DenseMatrix, b: &Vector) -> Result<LayerTrace> {
    require(params, Variant::Coupled, false, "LISTA-CP")?;
    forward(params, a, b)
}

pub fn forward_lista_ss(params: &NetworkParams, a: &DenseMatrix, b: &Vector) -> Result<LayerTrace> {
    require(params, Variant::Full, true, "LISTA-SS")?;
    forward(params, a, b)
}

pub fn forward_lista_cpss(params: &NetworkParams, a: &DenseMatrix, b: &Vector) -> Result<LayerTrace> {
    require(params, Variant::Coupled, true, "LISTA-CPSS")?;
    forward(params, a, b)
}

/// ISTA-equivalent parameters: `W₁ = Aᵀ/L`, `W₂ = I − AᵀA/L` (or `W = A/L`
/// when coupled) and `θ = λ₀/L` at every layer.
pub fn init_params(
    a: &DenseMatrix,
    variant: Variant,
    layers: usize,
    l: f64,
    lambda0: f64,
    schedule: Option<&SupportSchedule>,
) -> Result<NetworkParams> {
    if layers == 0 {
        return Err(Error::Config("need at least one layer".into()));
    }
    if !(l > 0.0) || !(lambda0 >= 0.0) {
        return Err(Error::Config("need L > 0 and lambda0 >= 0".into()));
    }
    let n = a.cols();
    let weights = match variant {
        Variant::Full => {
            let w1 = a.as_dmatrix().transpose() / l;
            let w2 = nalgebra::DMatrix::identity(n, n) - &w1 * a.as_dmatrix();
            LayerWeights::Full {
                w1: DenseMatrix::from_trusted(w1),
                w2: DenseMatrix::from_trusted(w2),
            }
        }
        Variant::Coupled => LayerWeights::Coupled { w: a.scaled(1.0 / l) },
    };
    let layers = (0..layers)
        .map(|k| LayerParams {
            weights: weights.clone(),
            theta: lambda0 / l,
            ss_count: schedule.map_or(0, |s| s.pk_count(k)),
        })
        .collect();
    NetworkParams::new(layers, 0, "init")
}

/// `‖W₂^k − (I − W₁^k A)‖₂` for a full-weight layer.
pub fn coupling_residual(params: &NetworkParams, a: &DenseMatrix, k: usize) -> Result<f64> {
    let layer = params
        .layers
        .get(k)
        .ok_or_else(|| Error::Dimension(format!("layer {k} out of range")))?;
    let LayerWeights::Full { w1, w2 } = &layer.weights else {
        return Err(Error::Precondition("coupling residual needs full weights".into()));
    };
    let n = a.cols();
    let d = w2.as_dmatrix() - (nalgebra::DMatrix::identity(n, n) - w1.as_dmatrix() * a.as_dmatrix());
    Ok(spectral_norm(&d)?.value)
}

/// `‖W₂^k‖₂` for a full-weight layer.
pub fn w2_norm(params: &NetworkParams, k: usize) -> Result<f64> {
    match &params.layers[k].weights {
        LayerWeights::Full { w2, .. } => Ok(spectral_norm(w2)?.value),
        LayerWeights::Coupled { .. } => Err(Error::Precondition("W2 norm needs full weights".into())),
    }
}

pub const DEFAULT_RATE_FLOOR: f64 = 1e-12;

/// Negated least-squares slope of `ln(error)` against the layer index, over
/// layers whose error exceeds `floor`.
pub fn empirical_rate(errors: &[f64], floor: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > floor)
        .map(|(k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Precondition(format!(
            "rate fit needs at least 3 layers above the floor, found {}",
            pts.len()
        )));
    }
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    Ok(-sxy / sxx)
}
