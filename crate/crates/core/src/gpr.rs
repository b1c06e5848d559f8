//! Gaussian process regression over 2-D survey coordinates.
//!
//! Squared-exponential kernel `k(a, b) = σ_f² exp(−‖a − b‖² / 2ℓ²)` with a
//! constant mean equal to the training-target average. Fitting factors
//! `K + σ_n² I = L Lᵀ` once; predictions reuse the factor.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point2 = [f64; 2];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GprError {
    #[error("kernel matrix is not positive definite even with jitter {max_jitter:e}")]
    SingularKernel { max_jitter: f64 },
    #[error("duplicate training input at ({x}, {y})")]
    DuplicateInput { x: f64, y: f64 },
    #[error("need at least {needed} training points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("non-finite training data")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GprHyperparams {
    /// σ_f, dB.
    pub signal_std: f64,
    /// ℓ, meters.
    pub length_scale: f64,
    /// σ_n, dB.
    pub noise_std: f64,
}

impl GprHyperparams {
    pub const DEFAULT: GprHyperparams = GprHyperparams { signal_std: 6.0, length_scale: 3.0, noise_std: 2.0 };

    pub fn new(signal_std: f64, length_scale: f64, noise_std: f64) -> Result<Self, GprError> {
        let hp = GprHyperparams { signal_std, length_scale, noise_std };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), GprError> {
        let ok = self.signal_std.is_finite()
            && self.signal_std > 0.0
            && self.length_scale.is_finite()
            && self.length_scale > 0.0
            && self.noise_std.is_finite()
            && self.noise_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(GprError::InvalidHyperparams(format!("{self:?}")))
        }
    }

    #[inline]
    pub fn kernel(&self, a: Point2, b: Point2) -> f64 {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        let sq = dx * dx + dy * dy;
        self.signal_std * self.signal_std * (-sq / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    /// The 45-candidate sweep: ℓ ∈ {1,2,3,5,8} m, σ_f ∈ {3,6,10} dB, σ_n ∈ {1,2,4} dB.
    pub fn default_grid() -> Vec<GprHyperparams> {
        let mut grid = Vec::with_capacity(45);
        for &length_scale in &[1.0, 2.0, 3.0, 5.0, 8.0] {
            for &signal_std in &[3.0, 6.0, 10.0] {
                for &noise_std in &[1.0, 2.0, 4.0] {
                    grid.push(GprHyperparams { signal_std, length_scale, noise_std });
                }
            }
        }
        grid
    }
}

impl Default for GprHyperparams {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Dense lower-triangular factor stored row-major in an `n × n` buffer.
#[derive(Debug, Clone, PartialEq)]
struct LowerFactor {
    n: usize,
    data: Vec<f64>,
}

impl LowerFactor {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Cholesky of a symmetric matrix (row-major, full storage). `None` if a
    /// pivot is not strictly positive.
    fn cholesky(a: &[f64], n: usize) -> Option<LowerFactor> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let row_j = j * n;
            let mut d = a[row_j + j];
            for k in 0..j {
                d -= l[row_j + k] * l[row_j + k];
            }
            if !(d > 0.0 && d.is_finite()) {
                return None;
            }
            let d = d.sqrt();
            l[row_j + j] = d;
            for i in (j + 1)..n {
                let row_i = i * n;
                let mut s = a[row_i + j];
                for k in 0..j {
                    s -= l[row_i + k] * l[row_j + k];
                }
                l[row_i + j] = s / d;
            }
        }
        Some(LowerFactor { n, data: l })
    }

    /// Solves `L x = b` in place.
    fn solve_lower(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = i * self.n;
            let s: f64 = self.data[row..row + i].iter().zip(&b[..i]).map(|(l, x)| l * x).sum();
            b[i] = (b[i] - s) / self.data[row + i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    fn solve_upper_transposed(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let s: f64 = ((i + 1)..self.n).map(|k| self.at(k, i) * b[k]).sum();
            b[i] = (b[i] - s) / self.at(i, i);
        }
    }

    fn log_det_half(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i).ln()).sum()
    }
}

/// Predictive mean and variance of the latent function at one probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone)]
pub struct GprModel {
    inputs: Vec<Point2>,
    centered_targets: Vec<f64>,
    target_offset: f64,
    hyperparams: GprHyperparams,
    factor: LowerFactor,
    alpha: Vec<f64>,
    jitter: f64,
}

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

/// Fits a GP to `points`. Inputs must be distinct; average duplicates first.
pub fn gpr_fit(points: &[(Point2, f64)], hyperparams: GprHyperparams) -> Result<GprModel, GprError> {
    hyperparams.validate()?;
    if points.is_empty() {
        return Err(GprError::InsufficientData { needed: 1, got: 0 });
    }
    if points.iter().any(|(p, v)| !(p[0].is_finite() && p[1].is_finite() && v.is_finite())) {
        return Err(GprError::NonFinite);
    }
    let mut sorted: Vec<Point2> = points.iter().map(|(p, _)| *p).collect();
    sorted.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(GprError::DuplicateInput { x: w[0][0], y: w[0][1] });
    }

    let n = points.len();
    let inputs: Vec<Point2> = points.iter().map(|(p, _)| *p).collect();
    let target_offset = points.iter().map(|(_, v)| v).sum::<f64>() / n as f64;
    let centered_targets: Vec<f64> = points.iter().map(|(_, v)| v - target_offset).collect();

    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = hyperparams.kernel(inputs[i], inputs[j]);
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let noise_var = hyperparams.noise_std * hyperparams.noise_std;
    let signal_var = hyperparams.signal_std * hyperparams.signal_std;

    let mut jitter = 0.0;
    let factor = loop {
        let mut a = gram.clone();
        for i in 0..n {
            a[i * n + i] += noise_var + jitter;
        }
        if let Some(f) = LowerFactor::cholesky(&a, n) {
            break f;
        }
        jitter = if jitter == 0.0 { JITTER_START * signal_var } else { jitter * 10.0 };
        if jitter > JITTER_MAX * signal_var * (1.0 + 1e-9) {
            return Err(GprError::SingularKernel { max_jitter: JITTER_MAX * signal_var });
        }
    };

    let mut alpha = centered_targets.clone();
    factor.solve_lower(&mut alpha);
    factor.solve_upper_transposed(&mut alpha);

    Ok(GprModel { inputs, centered_targets, target_offset, hyperparams, factor, alpha, jitter })
}

impl GprModel {
    pub fn hyperparams(&self) -> GprHyperparams {
        self.hyperparams
    }

    pub fn target_offset(&self) -> f64 {
        self.target_offset
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Diagonal jitter that was needed for the factorization (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn predict_one(&self, probe: Point2) -> Prediction {
        let mut v: Vec<f64> = self.inputs.iter().map(|&x| self.hyperparams.kernel(probe, x)).collect();
        let mean = v.iter().zip(&self.alpha).map(|(k, a)| k * a).sum::<f64>() + self.target_offset;
        self.factor.solve_lower(&mut v);
        let explained: f64 = v.iter().map(|x| x * x).sum();
        let prior = self.hyperparams.signal_std * self.hyperparams.signal_std;
        Prediction { mean, variance: (prior - explained).max(0.0) }
    }

    pub fn predict(&self, probes: &[Point2]) -> Vec<Prediction> {
        probes.iter().map(|&p| self.predict_one(p)).collect()
    }

    /// `log p(y | X) = −½ yᵀα − Σ log L_ii − (n/2) log 2π` on the centered targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let fit: f64 = self.centered_targets.iter().zip(&self.alpha).map(|(y, a)| y * a).sum();
        -0.5 * fit - self.factor.log_det_half() - 0.5 * n * (2.0 * PI).ln()
    }
}

/// Convenience wrapper mirroring [`GprModel::predict`].
pub fn gpr_predict(model: &GprModel, probes: &[Point2]) -> Vec<Prediction> {
    model.predict(probes)
}

/// Picks the candidate with the highest log marginal likelihood. Ties go to
/// the smallest ℓ, then σ_f, then σ_n. Candidates whose kernel cannot be
/// factored are skipped.
pub fn select_hyperparams(
    points: &[(Point2, f64)],
    candidates: &[GprHyperparams],
) -> Result<GprHyperparams, GprError> {
    if points.len() < 3 {
        return Err(GprError::InsufficientData { needed: 3, got: points.len() });
    }
    if candidates.is_empty() {
        return Err(GprError::InvalidHyperparams("empty candidate list".into()));
    }
    let mut ordered = candidates.to_vec();
    ordered.sort_by(|a, b| {
        a.length_scale
            .total_cmp(&b.length_scale)
            .then(a.signal_std.total_cmp(&b.signal_std))
            .then(a.noise_std.total_cmp(&b.noise_std))
    });

    let mut best: Option<(f64, GprHyperparams)> = None;
    let mut last_err = None;
    for hp in ordered {
        match gpr_fit(points, hp) {
            Ok(model) => {
                let lml = model.log_marginal_likelihood();
                if best.is_none_or(|(b, _)| lml > b) {
                    best = Some((lml, hp));
                }
            }
            Err(e @ GprError::SingularKernel { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.map(|(_, hp)| hp)
        .ok_or_else(|| last_err.unwrap_or(GprError::SingularKernel { max_jitter: JITTER_MAX }))
}
