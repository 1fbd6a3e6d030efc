//! Binary classifiers used to probe coordinate spaces: soft-margin SVMs
//! (linear and Gaussian RBF kernels) and k-nearest-neighbor voting under
//! four distance measures.
//!
//! The SVM dual is solved by pairwise coordinate ascent on maximal-violating
//! pairs, which is kernel-agnostic and needs no more memory than the kernel
//! matrix itself (training sets here are small enough to materialize it).

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// KKT/stopping tolerance of the dual solver.
pub const SVM_TOLERANCE: f64 = 1e-3;
/// Box constraint used for the reference experiments.
pub const PAPER_SVM_C: f64 = 4.0;
/// RBF width used for the reference experiments.
pub const PAPER_SVM_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match self {
            Kernel::Linear => x.iter().zip(y.iter()).map(|(a, b)| a * b).sum(),
            Kernel::Rbf { gamma } => {
                let sq: f64 = x
                    .iter()
                    .zip(y.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-gamma * sq).exp()
            }
        }
    }
}

/// A labeled point set: m×d coordinates with boolean (holds-label) targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoints {
    pub points: Array2<f64>,
    pub labels: Vec<bool>,
}

impl LabeledPoints {
    pub fn new(points: Array2<f64>, labels: Vec<bool>) -> Result<Self, ClassifyError> {
        if points.nrows() == 0 {
            return Err(ClassifyError::InvalidData("no training points".into()));
        }
        if points.nrows() != labels.len() {
            return Err(ClassifyError::InvalidData(format!(
                "{} points but {} labels",
                points.nrows(),
                labels.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(ClassifyError::InvalidData("non-finite coordinate".into()));
        }
        Ok(Self { points, labels })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }
}

/// A trained soft-margin SVM. Only support points (nonzero dual weight) are
/// retained; `coefficients[t]` is `alpha_t * y_t`.
#[derive(Debug, Clone)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    pub coefficients: Vec<f64>,
    pub support: Array2<f64>,
    pub bias: f64,
    /// Set when the training data held a single class; the model is the
    /// constant classifier for that class.
    pub degenerate: bool,
}

/// Decision value of the (possibly degenerate) model.
pub fn svm_decision(model: &SvmModel, x: ArrayView1<f64>) -> f64 {
    let mut f = model.bias;
    for (coef, row) in model.coefficients.iter().zip(model.support.rows()) {
        f += coef * model.kernel.eval(row, x);
    }
    f
}

/// Sign of the decision value; an exact tie goes to the negative class.
pub fn svm_predict(model: &SvmModel, x: ArrayView1<f64>) -> bool {
    svm_decision(model, x) > 0.0
}

/// Solves the soft-margin dual to tolerance [`SVM_TOLERANCE`].
///
/// Single-class data yields a degenerate constant classifier with a warning
/// instead of an error: rare labels and small splits make this a routine
/// situation for the evaluation harness.
pub fn svm_train(
    data: &LabeledPoints,
    kernel: Kernel,
    c: f64,
) -> Result<SvmModel, ClassifyError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(ClassifyError::InvalidParameter(format!(
            "C must be positive and finite, got {c}"
        )));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(ClassifyError::InvalidParameter(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
    }
    let m = data.len();
    let positives = data.labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == m {
        log::warn!("svm_train: single-class training data, returning constant classifier");
        return Ok(SvmModel {
            kernel,
            c,
            coefficients: Vec::new(),
            support: Array2::zeros((0, data.dim())),
            bias: if positives == m { 1.0 } else { -1.0 },
            degenerate: true,
        });
    }

    let y: Vec<f64> = data.labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    // Full kernel matrix; the evaluation protocol trains on a few thousand
    // points at most.
    let mut kmat = vec![0.0; m * m];
    for t in 0..m {
        for s in t..m {
            let v = kernel.eval(data.points.row(t), data.points.row(s));
            kmat[t * m + s] = v;
            kmat[s * m + t] = v;
        }
    }

    let mut alpha = vec![0.0f64; m];
    // Gradient of the dual objective 1/2 a'Qa - 1'a, with Q_ts = y_t y_s K_ts.
    let mut grad = vec![-1.0f64; m];

    let max_iterations = 50_000 + 200 * m;
    let mut iterations = 0usize;
    let (mut up_val, mut low_val);
    loop {
        // Maximal violating pair over v_t = -y_t * grad_t.
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        up_val = f64::NEG_INFINITY;
        low_val = f64::INFINITY;
        for t in 0..m {
            let v = -y[t] * grad[t];
            let in_up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (y[t] < 0.0 && alpha[t] < c) || (y[t] > 0.0 && alpha[t] > 0.0);
            if in_up && v > up_val {
                up_val = v;
                i = t;
            }
            if in_low && v < low_val {
                low_val = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || up_val - low_val <= SVM_TOLERANCE {
            break;
        }
        if iterations >= max_iterations {
            log::warn!(
                "svm_train: iteration budget exhausted with KKT gap {:.3e}",
                up_val - low_val
            );
            break;
        }
        iterations += 1;

        // Two-variable update along y_i da_i = -y_j da_j = t, preserving the
        // equality constraint exactly.
        let quad = (kmat[i * m + i] + kmat[j * m + j] - 2.0 * kmat[i * m + j]).max(1e-12);
        let mut t_step = (up_val - low_val) / quad;
        // Box limits for alpha_i moving by y_i*t and alpha_j by -y_j*t.
        let limit = |yv: f64, a: f64, dir: f64| -> f64 {
            // alpha' = a + yv*dir*t must stay in [0, c]
            if yv * dir > 0.0 {
                c - a
            } else {
                a
            }
        };
        t_step = t_step.min(limit(y[i], alpha[i], 1.0));
        t_step = t_step.min(limit(y[j], alpha[j], -1.0));
        if !(t_step > 0.0) {
            break;
        }
        let da_i = y[i] * t_step;
        let da_j = -y[j] * t_step;
        alpha[i] = (alpha[i] + da_i).clamp(0.0, c);
        alpha[j] = (alpha[j] + da_j).clamp(0.0, c);
        for t in 0..m {
            grad[t] += y[t] * y[i] * kmat[t * m + i] * da_i + y[t] * y[j] * kmat[t * m + j] * da_j;
        }
    }
    let bias = (up_val.min(f64::MAX) + low_val.max(f64::MIN)) / 2.0;
    let bias = if bias.is_finite() { bias } else { 0.0 };

    let kept: Vec<usize> = (0..m).filter(|&t| alpha[t] > 1e-12 * c).collect();
    let mut support = Array2::zeros((kept.len(), data.dim()));
    let mut coefficients = Vec::with_capacity(kept.len());
    for (row, &t) in kept.iter().enumerate() {
        support.row_mut(row).assign(&data.points.row(t));
        coefficients.push(alpha[t] * y[t]);
    }
    Ok(SvmModel {
        kernel,
        c,
        coefficients,
        support,
        bias,
        degenerate: false,
    })
}

/// Distance measures for the nearest-neighbor classifiers.
#[derive(Debug, Clone, PartialEq)]
pub enum DistanceKind {
    Euclidean,
    /// Differences are divided by the per-dimension standard deviation of
    /// the training data; build via [`DistanceKind::standardized_euclidean`].
    StandardizedEuclidean { scale: Vec<f64> },
    /// Negated dot product; not a metric, but ranks neighbors the way the
    /// rating model itself would score them.
    NegativeScalarProduct,
    /// One minus the cosine similarity.
    Cosine,
}

impl DistanceKind {
    /// Fits the standardized-Euclidean scale vector (population standard
    /// deviation per dimension). Zero-variance dimensions fall back to a
    /// unit scale with a warning.
    pub fn standardized_euclidean(train: &Array2<f64>) -> Self {
        let n = train.nrows().max(1) as f64;
        let scale: Vec<f64> = train
            .columns()
            .into_iter()
            .map(|col| {
                let mean = col.sum() / n;
                let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    log::warn!("standardized euclidean: zero-variance dimension, using scale 1");
                    1.0
                }
            })
            .collect();
        DistanceKind::StandardizedEuclidean { scale }
    }

    pub fn id(&self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "Eucl",
            DistanceKind::StandardizedEuclidean { .. } => "sEucl",
            DistanceKind::NegativeScalarProduct => "scal",
            DistanceKind::Cosine => "cos",
        }
    }
}

/// The distance value under `kind`. A zero vector under the cosine measure
/// maps to the maximum cosine distance (2) with a warning.
pub fn knn_distance(kind: &DistanceKind, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    match kind {
        DistanceKind::Euclidean => x
            .iter()
            .zip(y.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        DistanceKind::StandardizedEuclidean { scale } => x
            .iter()
            .zip(y.iter())
            .zip(scale.iter())
            .map(|((a, b), s)| {
                let d = (a - b) / s;
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        DistanceKind::NegativeScalarProduct => {
            -x.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>()
        }
        DistanceKind::Cosine => {
            let dot: f64 = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
            let nx: f64 = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let ny: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                log::warn!("cosine distance of a zero vector defined as the maximum (2.0)");
                return 2.0;
            }
            1.0 - dot / (nx * ny)
        }
    }
}

/// Majority label among the `k` nearest training points; distance ties break
/// toward the lower training index. `k` must be odd (no vote ties) and no
/// larger than the training set.
pub fn knn_classify(
    train: &LabeledPoints,
    kind: &DistanceKind,
    k: usize,
    query: ArrayView1<f64>,
) -> bool {
    assert!(k >= 1 && k % 2 == 1, "k must be odd, got {k}");
    assert!(
        k <= train.len(),
        "k = {k} exceeds training size {}",
        train.len()
    );
    let mut scored: Vec<(f64, usize)> = train
        .points
        .rows()
        .into_iter()
        .enumerate()
        .map(|(t, row)| (knn_distance(kind, query, row), t))
        .collect();
    scored.select_nth_unstable_by(k - 1, |a, b| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    });
    let votes = scored[..k]
        .iter()
        .filter(|&&(_, t)| train.labels[t])
        .count();
    2 * votes > k
}
