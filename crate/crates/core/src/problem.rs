//! Dictionaries, sparse signals, noise and the NMSE metric.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{norm2, DenseMatrix, Vector};
use crate::parallel;
use crate::rng::{self, Domain, Rng};

/// How the support of `x*` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityMode {
    /// Each entry is nonzero independently with probability `p_b`.
    Bernoulli { p_b: f64 },
    /// Exactly `s` nonzeros at uniformly chosen positions.
    FixedS { s: usize },
}

/// How nonzero magnitudes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeMode {
    /// Standard Gaussian values.
    Gaussian,
    /// `|x_i|` uniform on `[b_lower, b]` with a random sign.
    Bounded { b: f64, b_lower: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub m: usize,
    pub n: usize,
    pub sparsity: SparsityMode,
    pub magnitude: MagnitudeMode,
    /// `None` means noiseless.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub condition_number: Option<f64>,
    pub seed: u64,
}

impl ProblemConfig {
    /// 250x500, Bernoulli(0.1) support with Gaussian values, noiseless.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            m: 250,
            n: 500,
            sparsity: SparsityMode::Bernoulli { p_b: 0.1 },
            magnitude: MagnitudeMode::Gaussian,
            snr_db: None,
            condition_number: None,
            seed,
        }
    }

    /// 64x128 with exactly 3 nonzeros bounded in `[0.5, 2]`.
    pub fn desk_theory(seed: u64) -> Self {
        Self {
            m: 64,
            n: 128,
            sparsity: SparsityMode::FixedS { s: 3 },
            magnitude: MagnitudeMode::Bounded { b: 2.0, b_lower: 0.5 },
            snr_db: None,
            condition_number: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(Error::Config(format!(
                "need 0 < m < n, got m={} n={}",
                self.m, self.n
            )));
        }
        match self.sparsity {
            SparsityMode::Bernoulli { p_b } if !(p_b > 0.0 && p_b < 1.0) => {
                return Err(Error::Config(format!("p_b must lie in (0,1), got {p_b}")));
            }
            SparsityMode::FixedS { s } if s < 2 || s > self.n => {
                return Err(Error::Config(format!(
                    "s must satisfy 2 <= s <= n={}, got {s}",
                    self.n
                )));
            }
            _ => {}
        }
        if let MagnitudeMode::Bounded { b, b_lower } = self.magnitude {
            if !(b_lower >= 0.0 && b_lower < b && b.is_finite()) {
                return Err(Error::Config(format!(
                    "bounded magnitudes need 0 <= b_lower < b, got [{b_lower}, {b}]"
                )));
            }
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::Config("snr_db is NaN".into()));
            }
        }
        if let Some(k) = self.condition_number {
            if !(k >= 1.0) || !k.is_finite() {
                return Err(Error::Config(format!("condition number must be >= 1, got {k}")));
            }
        }
        Ok(())
    }

    /// Largest possible magnitude of a nonzero, when bounded.
    pub fn magnitude_bound(&self) -> Option<f64> {
        match self.magnitude {
            MagnitudeMode::Bounded { b, .. } => Some(b),
            MagnitudeMode::Gaussian => None,
        }
    }
}

fn gaussian_matrix(cfg: &ProblemConfig) -> DMatrix<f64> {
    let mut r = rng::stream(cfg.seed, Domain::Dictionary, 0);
    let scale = 1.0 / (cfg.m as f64).sqrt();
    let data: Vec<f64> = (0..cfg.m * cfg.n)
        .map(|_| scale * r.sample::<f64, _>(StandardNormal))
        .collect();
    DMatrix::from_vec(cfg.m, cfg.n, data)
}

fn normalize_columns(mut a: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
    a
}

/// Gaussian `N(0, 1/m)` dictionary with unit-norm columns.
pub fn gen_dictionary(cfg: &ProblemConfig) -> Result<DenseMatrix> {
    cfg.validate()?;
    if cfg.condition_number.is_some() {
        return Err(Error::Config(
            "gen_dictionary draws well-conditioned matrices; use gen_ill_conditioned".into(),
        ));
    }
    DenseMatrix::from_dmatrix(normalize_columns(gaussian_matrix(cfg)))
}

#[derive(Debug, Clone)]
pub struct IllConditioned {
    pub matrix: DenseMatrix,
    pub nominal_kappa: f64,
    /// Condition number after column normalization.
    pub realized_kappa: f64,
}

/// Replaces the singular values of `g` by a geometric sequence running from
/// its largest singular value down to `largest / kappa`.
pub fn shape_spectrum(g: &DMatrix<f64>, kappa: f64) -> Result<DMatrix<f64>> {
    if !(kappa >= 1.0) {
        return Err(Error::Config(format!("condition number must be >= 1, got {kappa}")));
    }
    let svd = g.clone().svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Precondition("SVD failed to produce factors".into())),
    };
    let r = svd.singular_values.len();
    let top = svd.singular_values.max();
    let shaped = DVector::from_fn(r, |i, _| {
        if r == 1 {
            top
        } else {
            top * kappa.powf(-(i as f64) / (r as f64 - 1.0))
        }
    });
    // nalgebra returns singular values unsorted; reorder so the largest
    // shaped value meets the largest original direction.
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut sigma = DVector::zeros(r);
    for (rank, &idx) in order.iter().enumerate() {
        sigma[idx] = shaped[rank];
    }
    Ok(u * DMatrix::from_diagonal(&sigma) * vt)
}

/// Gaussian dictionary with a prescribed spectrum, then column-normalized.
pub fn gen_ill_conditioned(cfg: &ProblemConfig) -> Result<IllConditioned> {
    cfg.validate()?;
    let kappa = cfg
        .condition_number
        .ok_or_else(|| Error::Config("condition_number is required".into()))?;
    let shaped = shape_spectrum(&gaussian_matrix(cfg), kappa)?;
    let matrix = DenseMatrix::from_dmatrix(normalize_columns(shaped))?;
    let realized_kappa = matrix.condition_number();
    Ok(IllConditioned {
        matrix,
        nominal_kappa: kappa,
        realized_kappa,
    })
}

/// Dispatches on `condition_number`.
pub fn build_dictionary(cfg: &ProblemConfig) -> Result<DenseMatrix> {
    if cfg.condition_number.is_some() {
        Ok(gen_ill_conditioned(cfg)?.matrix)
    } else {
        gen_dictionary(cfg)
    }
}

/// Ground truth, noise and observation for one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSample {
    pub x_star: Vector,
    pub eps: Vector,
    pub b: Vector,
    pub support: Vec<usize>,
}

/// Scales a Gaussian draw so that `‖clean‖/‖ε‖` hits `snr_db` exactly.
pub fn apply_noise(clean: &[f64], snr_db: Option<f64>, rng: &mut Rng) -> Vec<f64> {
    let m = clean.len();
    let Some(snr) = snr_db.filter(|s| s.is_finite()) else {
        return vec![0.0; m];
    };
    let z: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let energy = norm2(clean);
    let nz = norm2(&z);
    if energy == 0.0 || nz == 0.0 {
        return vec![0.0; m];
    }
    let scale = energy * 10f64.powf(-snr / 20.0) / nz;
    z.into_iter().map(|v| v * scale).collect()
}

/// Draws sample `index` of the given domain.
pub fn sample_signal(
    a: &DenseMatrix,
    cfg: &ProblemConfig,
    domain: Domain,
    index: u64,
) -> Result<SignalSample> {
    if a.rows() != cfg.m || a.cols() != cfg.n {
        return Err(Error::Dimension(format!(
            "dictionary is {}x{}, config says {}x{}",
            a.rows(),
            a.cols(),
            cfg.m,
            cfg.n
        )));
    }
    let n = cfg.n;
    let mut r = rng::stream(cfg.seed, domain, index);

    let mut support: Vec<usize> = match cfg.sparsity {
        SparsityMode::Bernoulli { p_b } => (0..n).filter(|_| r.random::<f64>() < p_b).collect(),
        SparsityMode::FixedS { s } => {
            if s > n {
                return Err(Error::Config(format!("s={s} exceeds n={n}")));
            }
            index::sample(&mut r, n, s).into_vec()
        }
    };
    support.sort_unstable();

    let mut x_star = Vector::zeros(n);
    for &i in &support {
        x_star[i] = match cfg.magnitude {
            MagnitudeMode::Gaussian => r.sample(StandardNormal),
            MagnitudeMode::Bounded { b, b_lower } => {
                let mag = r.random_range(b_lower..=b);
                if r.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
        };
    }
    // A Gaussian draw of exactly zero would break support == nnz(x*).
    support.retain(|&i| x_star[i] != 0.0);

    let clean = a.as_dmatrix() * &x_star;
    let eps = Vector::from_vec(apply_noise(clean.as_slice(), cfg.snr_db, &mut r));
    let b = clean + &eps;
    Ok(SignalSample {
        x_star,
        eps,
        b,
        support,
    })
}

/// A fixed, reproducible list of samples.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub samples: Vec<SignalSample>,
    pub generator_seed: u64,
}

impl SampleSet {
    pub fn generate(a: &DenseMatrix, cfg: &ProblemConfig, domain: Domain, count: usize) -> Result<Self> {
        cfg.validate()?;
        let samples = parallel::map_indexed(count, |i| sample_signal(a, cfg, domain, i as u64))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            generator_seed: cfg.seed,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest `‖ε‖₁` in the set.
    pub fn max_noise_l1(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.eps.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// SHA-256 over the bit patterns of every `x*` and `b`.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            for v in s.x_star.iter().chain(s.b.iter()) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub const NMSE_FLOOR_DB: f64 = -320.0;

/// Accumulates squared error and signal energy across samples.
#[derive(Debug, Clone, Copy, Default)]
pub struct NmseAccumulator {
    pub err: f64,
    pub energy: f64,
}

impl NmseAccumulator {
    pub fn add(&mut self, estimate: &[f64], truth: &[f64]) {
        for (e, t) in estimate.iter().zip(truth) {
            self.err += (e - t) * (e - t);
            self.energy += t * t;
        }
    }

    pub fn db(&self) -> Result<f64> {
        if self.energy == 0.0 {
            return Err(Error::UndefinedMetric(
                "every ground-truth vector is zero".into(),
            ));
        }
        if self.err == 0.0 {
            return Ok(NMSE_FLOOR_DB);
        }
        Ok((10.0 * (self.err / self.energy).log10()).max(NMSE_FLOOR_DB))
    }
}

/// `10·log10(Σ‖x̂−x*‖² / Σ‖x*‖²)`, clamped below at -320 dB.
pub fn nmse_db(estimates: &[Vector], truths: &[Vector]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "nmse needs equal nonempty lists, got {} and {}",
            estimates.len(),
            truths.len()
        )));
    }
    let mut acc = NmseAccumulator::default();
    for (e, t) in estimates.iter().zip(truths) {
        if e.len() != t.len() {
            return Err(Error::Dimension("estimate and truth lengths differ".into()));
        }
        acc.add(e.as_slice(), t.as_slice());
    }
    acc.db()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ProblemConfig {
        ProblemConfig {
            m: 20,
            n: 40,
            ..ProblemConfig::paper_scale(seed)
        }
    }

    #[test]
    fn paper_scale_columns_are_unit_norm() {
        let a = gen_dictionary(&ProblemConfig::paper_scale(1)).unwrap();
        for n in a.column_norms() {
            assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn two_by_two_is_well_defined() {
        // m < n is required, so the smallest square-ish case is a 2x3 draw
        // and its leading 2x2 block.
        let cfg = ProblemConfig { m: 2, n: 3, ..small(4) };
        let a = gen_dictionary(&cfg).unwrap();
        let sub = DenseMatrix::from_dmatrix(a.columns(0, 2).into_owned()).unwrap();
        assert!(sub.condition_number().is_finite());
        for n in sub.column_norms() {
            assert!((n - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn entries_are_centered() {
        // Independent check: the pre-normalization draw is N(0, 1/m), so
        // entry*sqrt(m) has mean 0 and variance 1; over 125000 entries the
        // standard error is ~0.003. Normalization rescales columns by ~1.
        let cfg = ProblemConfig::paper_scale(1);
        let a = gen_dictionary(&cfg).unwrap();
        let mean: f64 = a.iter().map(|v| v * (cfg.m as f64).sqrt()).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn dictionary_is_deterministic() {
        let cfg = small(9);
        assert_eq!(gen_dictionary(&cfg).unwrap(), gen_dictionary(&cfg).unwrap());
        assert_ne!(gen_dictionary(&cfg).unwrap(), gen_dictionary(&small(10)).unwrap());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(1);
        cfg.m = 40;
        assert!(matches!(gen_dictionary(&cfg), Err(Error::Config(_))));
        let cfg = ProblemConfig { sparsity: SparsityMode::FixedS { s: 41 }, ..small(1) };
        assert!(cfg.validate().is_err());
        let cfg = ProblemConfig { sparsity: SparsityMode::Bernoulli { p_b: 1.0 }, ..small(1) };
        assert!(cfg.validate().is_err());
        let cfg = ProblemConfig { condition_number: Some(0.5), ..small(1) };
        assert!(gen_ill_conditioned(&cfg).is_err());
        let cfg = ProblemConfig { condition_number: Some(5.0), ..small(1) };
        assert!(gen_dictionary(&cfg).is_err());
    }

    #[test]
    fn unit_kappa_flattens_the_spectrum() {
        let cfg = small(2);
        let shaped = shape_spectrum(&gaussian_matrix(&cfg), 1.0).unwrap();
        let sv = shaped.singular_values();
        let (lo, hi) = (sv.min(), sv.max());
        assert!((hi - lo) / hi < 1e-12);
    }

    #[test]
    fn shaped_spectrum_is_geometric() {
        let cfg = small(2);
        let shaped = shape_spectrum(&gaussian_matrix(&cfg), 10.0).unwrap();
        let sv = shaped.singular_values();
        assert!((sv.max() / sv.min() - 10.0).abs() < 1e-8);
    }

    #[test]
    fn ill_conditioned_is_non_degenerate() {
        let cfg = ProblemConfig { condition_number: Some(5.0), ..small(3) };
        let ill = gen_ill_conditioned(&cfg).unwrap();
        assert!(ill.realized_kappa > 1.0);
        for n in ill.matrix.column_norms() {
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bernoulli_support_size_within_binomial_band() {
        // 1000 samples of Binomial(500, 0.1): sd of the mean is
        // sqrt(500*0.1*0.9/1000) ~ 0.21, so [45, 55] is far wider than 3 sd.
        let cfg = ProblemConfig::paper_scale(5);
        let a = gen_dictionary(&cfg).unwrap();
        let set = SampleSet::generate(&a, &cfg, Domain::Test, 1000).unwrap();
        let mean = set.samples.iter().map(|s| s.support.len()).sum::<usize>() as f64 / 1000.0;
        assert!((45.0..=55.0).contains(&mean), "mean support {mean}");
    }

    #[test]
    fn fixed_s_bounded_samples() {
        let cfg = ProblemConfig {
            sparsity: SparsityMode::FixedS { s: 4 },
            magnitude: MagnitudeMode::Bounded { b: 2.0, b_lower: 0.5 },
            ..small(6)
        };
        let a = gen_dictionary(&cfg).unwrap();
        for i in 0..50 {
            let s = sample_signal(&a, &cfg, Domain::Test, i).unwrap();
            assert_eq!(s.support.len(), 4);
            let nnz: Vec<usize> = (0..cfg.n).filter(|&j| s.x_star[j] != 0.0).collect();
            assert_eq!(nnz, s.support);
            for &j in &s.support {
                assert!((0.5..=2.0).contains(&s.x_star[j].abs()));
            }
        }
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let cfg = small(7);
        let a = gen_dictionary(&cfg).unwrap();
        let s = sample_signal(&a, &cfg, Domain::Test, 0).unwrap();
        assert!(s.eps.iter().all(|&v| v == 0.0));
        assert_eq!(s.b, a.as_dmatrix() * &s.x_star);
    }

    #[test]
    fn noisy_observation_is_recomputable() {
        let cfg = ProblemConfig { snr_db: Some(30.0), ..small(7) };
        let a = gen_dictionary(&cfg).unwrap();
        let s = sample_signal(&a, &cfg, Domain::Test, 11).unwrap();
        assert_eq!(s.b, a.as_dmatrix() * &s.x_star + &s.eps);
        assert_eq!(s, sample_signal(&a, &cfg, Domain::Test, 11).unwrap());
    }

    #[test]
    fn noise_scaling_is_exact() {
        let mut r = rng::stream(1, Domain::Misc, 0);
        let clean = vec![0.6, 0.8];
        assert_eq!(apply_noise(&clean, None, &mut r), vec![0.0, 0.0]);
        assert_eq!(apply_noise(&clean, Some(f64::INFINITY), &mut r), vec![0.0, 0.0]);
        let eps = apply_noise(&clean, Some(20.0), &mut r);
        assert!((norm2(&eps) - 0.1).abs() < 1e-12);
        let clean: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let eps = apply_noise(&clean, Some(40.0), &mut r);
        let snr = 10.0 * (norm2(&clean).powi(2) / norm2(&eps).powi(2)).log10();
        assert!((snr - 40.0).abs() < 1e-9);
        assert_eq!(apply_noise(&[0.0, 0.0], Some(10.0), &mut r), vec![0.0, 0.0]);
    }

    #[test]
    fn nmse_reference_values() {
        let truths = vec![Vector::from_vec(vec![1.0, -2.0]), Vector::from_vec(vec![0.0, 3.0])];
        let zeros = vec![Vector::zeros(2), Vector::zeros(2)];
        assert_eq!(nmse_db(&zeros, &truths).unwrap(), 0.0);
        let tenth: Vec<Vector> = truths.iter().map(|t| t * 1.1).collect();
        assert!((nmse_db(&tenth, &truths).unwrap() + 20.0).abs() < 1e-9);
        assert_eq!(nmse_db(&truths, &truths).unwrap(), NMSE_FLOOR_DB);
        assert!(matches!(nmse_db(&zeros, &zeros), Err(Error::UndefinedMetric(_))));
        assert!(nmse_db(&zeros[..1], &truths).is_err());
    }
}
