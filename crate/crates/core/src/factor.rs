//! Factor-model training.
//!
//! Three models over the observed ratings: a regularized SVD-style
//! factorization, its bias-augmented variant (global mean plus per-item and
//! per-user deviations), and a non-negative factorization. All are fit by
//! minimizing the sum of squared errors plus a per-observation ridge penalty,
//! using full-batch descent with per-parameter curvature scaling and
//! step-halving.

use std::io::{Read, Write};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::RatingDataset;
use crate::rng;
use crate::snapshot::{self, SnapshotError};

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("index ({item}, {user}) out of range for ({items}, {users})")]
    IndexOutOfRange {
        item: usize,
        user: usize,
        items: usize,
        users: usize,
    },
    #[error("factorization shaped ({fi}, {fu}) does not match dataset ({di}, {du})")]
    DimensionMismatch {
        fi: usize,
        fu: usize,
        di: usize,
        du: usize,
    },
    #[error("invalid factorization: {0}")]
    InvalidModel(String),
    #[error("all {restarts} restarts diverged")]
    Diverged { restarts: usize },
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Svd,
    DeltaSvd,
    Nnmf,
}

impl ModelKind {
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Svd => "SVD",
            ModelKind::DeltaSvd => "dSVD",
            ModelKind::Nnmf => "NNMF",
        }
    }
}

/// Global mean and per-item/per-user deviations (bias-augmented model only).
#[derive(Debug, Clone, PartialEq)]
pub struct BiasTerms {
    /// Mean of all observed training ratings; held fixed during training.
    pub mean: f64,
    pub item: Vec<f64>,
    pub user: Vec<f64>,
}

/// A trained factor model.
///
/// `item_factors` is I×d (row per item). `user_factors` is stored U×d — row
/// `u` is the user's vector, i.e. column `u` of the logical d×U user matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub kind: ModelKind,
    pub item_factors: Array2<f64>,
    pub user_factors: Array2<f64>,
    /// Present iff `kind == DeltaSvd`.
    pub bias: Option<BiasTerms>,
    pub lambda: f64,
    pub seed: u64,
}

impl Factorization {
    pub fn new(
        kind: ModelKind,
        item_factors: Array2<f64>,
        user_factors: Array2<f64>,
        bias: Option<BiasTerms>,
        lambda: f64,
        seed: u64,
    ) -> Result<Self, FactorError> {
        let f = Self {
            kind,
            item_factors,
            user_factors,
            bias,
            lambda,
            seed,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), FactorError> {
        if self.item_factors.ncols() != self.user_factors.ncols() {
            return Err(FactorError::InvalidModel(format!(
                "item factors have d={}, user factors d={}",
                self.item_factors.ncols(),
                self.user_factors.ncols()
            )));
        }
        let finite = |m: &Array2<f64>| m.iter().all(|x| x.is_finite());
        if !finite(&self.item_factors) || !finite(&self.user_factors) {
            return Err(FactorError::InvalidModel("non-finite factor entry".into()));
        }
        match (self.kind, &self.bias) {
            (ModelKind::DeltaSvd, None) => {
                return Err(FactorError::InvalidModel(
                    "bias terms required for the delta model".into(),
                ))
            }
            (ModelKind::DeltaSvd, Some(b)) => {
                if b.item.len() != self.item_factors.nrows()
                    || b.user.len() != self.user_factors.nrows()
                {
                    return Err(FactorError::InvalidModel("bias length mismatch".into()));
                }
                if !b.mean.is_finite()
                    || b.item.iter().chain(b.user.iter()).any(|x| !x.is_finite())
                {
                    return Err(FactorError::InvalidModel("non-finite bias entry".into()));
                }
            }
            (_, Some(_)) => {
                return Err(FactorError::InvalidModel(
                    "bias terms only belong to the delta model".into(),
                ))
            }
            (_, None) => {}
        }
        if self.kind == ModelKind::Nnmf
            && self
                .item_factors
                .iter()
                .chain(self.user_factors.iter())
                .any(|&x| x < 0.0)
        {
            return Err(FactorError::InvalidModel(
                "negative entry in non-negative factorization".into(),
            ));
        }
        Ok(())
    }

    pub fn item_count(&self) -> usize {
        self.item_factors.nrows()
    }

    pub fn user_count(&self) -> usize {
        self.user_factors.nrows()
    }

    pub fn dim(&self) -> usize {
        self.item_factors.ncols()
    }

    /// The logical d×U user matrix (transposed copy of `user_factors`).
    pub fn user_matrix(&self) -> Array2<f64> {
        self.user_factors.t().to_owned()
    }

    fn check_dims(&self, ds: &RatingDataset) -> Result<(), FactorError> {
        if self.item_count() != ds.item_count() || self.user_count() != ds.user_count() {
            return Err(FactorError::DimensionMismatch {
                fi: self.item_count(),
                fu: self.user_count(),
                di: ds.item_count(),
                du: ds.user_count(),
            });
        }
        Ok(())
    }

    #[inline]
    fn predict_unchecked(&self, item: usize, user: usize) -> f64 {
        let a = self.item_factors.row(item);
        let b = self.user_factors.row(user);
        let mut dot = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            dot += x * y;
        }
        match &self.bias {
            Some(bias) => bias.mean + bias.item[item] + bias.user[user] + dot,
            None => dot,
        }
    }

    const MAGIC: &'static [u8; 4] = b"FSFM";
    const VERSION: u32 = 1;

    /// Portable binary snapshot. The user matrix is written in its logical
    /// row-major d×U layout.
    pub fn write_snapshot<W: Write>(&self, w: &mut W, provenance: &str) -> Result<(), FactorError> {
        snapshot::write_header(w, Self::MAGIC, Self::VERSION, provenance)?;
        snapshot::write_u8(
            w,
            match self.kind {
                ModelKind::Svd => 0,
                ModelKind::DeltaSvd => 1,
                ModelKind::Nnmf => 2,
            },
        )?;
        snapshot::write_u32(w, self.item_count() as u32)?;
        snapshot::write_u32(w, self.user_count() as u32)?;
        snapshot::write_u32(w, self.dim() as u32)?;
        snapshot::write_f64(w, self.lambda)?;
        snapshot::write_u64(w, self.seed)?;
        for &x in self.item_factors.iter() {
            snapshot::write_f64(w, x)?;
        }
        for r in 0..self.dim() {
            for u in 0..self.user_count() {
                snapshot::write_f64(w, self.user_factors[(u, r)])?;
            }
        }
        match &self.bias {
            None => snapshot::write_u8(w, 0)?,
            Some(b) => {
                snapshot::write_u8(w, 1)?;
                snapshot::write_f64(w, b.mean)?;
                for &x in b.item.iter().chain(b.user.iter()) {
                    snapshot::write_f64(w, x)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(Self, String), FactorError> {
        let provenance = snapshot::read_header(r, Self::MAGIC, Self::VERSION)?;
        let kind = match snapshot::read_u8(r)? {
            0 => ModelKind::Svd,
            1 => ModelKind::DeltaSvd,
            2 => ModelKind::Nnmf,
            k => {
                return Err(FactorError::Snapshot(SnapshotError::Corrupt(format!(
                    "unknown model kind {k}"
                ))))
            }
        };
        let items = snapshot::read_u32(r)? as usize;
        let users = snapshot::read_u32(r)? as usize;
        let d = snapshot::read_u32(r)? as usize;
        let lambda = snapshot::read_f64(r)?;
        let seed = snapshot::read_u64(r)?;
        let mut item_factors = Array2::zeros((items, d));
        for x in item_factors.iter_mut() {
            *x = snapshot::read_f64(r)?;
        }
        let mut user_factors = Array2::zeros((users, d));
        for row in 0..d {
            for u in 0..users {
                user_factors[(u, row)] = snapshot::read_f64(r)?;
            }
        }
        let bias = match snapshot::read_u8(r)? {
            0 => None,
            _ => {
                let mean = snapshot::read_f64(r)?;
                let mut item = vec![0.0; items];
                for x in &mut item {
                    *x = snapshot::read_f64(r)?;
                }
                let mut user = vec![0.0; users];
                for x in &mut user {
                    *x = snapshot::read_f64(r)?;
                }
                Some(BiasTerms { mean, item, user })
            }
        };
        let f = Self::new(kind, item_factors, user_factors, bias, lambda, seed)?;
        Ok((f, provenance))
    }

    /// CSV export: `item_factors.csv`, `user_factors.csv` (row per user),
    /// `biases.csv` when present, and `meta.csv`.
    pub fn export_csv(&self, dir: &std::path::Path) -> Result<(), FactorError> {
        std::fs::create_dir_all(dir)?;
        let join = |name: &str| dir.join(name);
        let mut meta = std::fs::File::create(join("meta.csv"))?;
        writeln!(meta, "kind,items,users,d,lambda,seed")?;
        writeln!(
            meta,
            "{},{},{},{},{},{}",
            self.kind.label(),
            self.item_count(),
            self.user_count(),
            self.dim(),
            self.lambda,
            self.seed
        )?;
        let write_matrix = |path: std::path::PathBuf,
                            key: &str,
                            m: &Array2<f64>|
         -> Result<(), FactorError> {
            let mut f = std::fs::File::create(path)?;
            write!(f, "{key}")?;
            for r in 0..m.ncols() {
                write!(f, ",f{r}")?;
            }
            writeln!(f)?;
            for (i, row) in m.rows().into_iter().enumerate() {
                write!(f, "{i}")?;
                for x in row.iter() {
                    write!(f, ",{x}")?;
                }
                writeln!(f)?;
            }
            Ok(())
        };
        write_matrix(join("item_factors.csv"), "item", &self.item_factors)?;
        write_matrix(join("user_factors.csv"), "user", &self.user_factors)?;
        if let Some(b) = &self.bias {
            let mut f = std::fs::File::create(join("biases.csv"))?;
            writeln!(f, "kind,index,value")?;
            writeln!(f, "mean,,{}", b.mean)?;
            for (i, x) in b.item.iter().enumerate() {
                writeln!(f, "item,{i},{x}")?;
            }
            for (u, x) in b.user.iter().enumerate() {
                writeln!(f, "user,{u},{x}")?;
            }
        }
        Ok(())
    }
}

/// How the per-item/per-user deviations enter the penalty of the delta model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaPenalty {
    /// Ridge penalty on the deviations (the default).
    #[default]
    Squared,
    /// The deviations enter the penalty linearly. Kept for fidelity
    /// experiments only: the objective is unbounded below in the deviations.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Relative objective improvement below which an epoch counts as
    /// converged; three consecutive such epochs stop training.
    pub tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Standard deviation (or upper bound, for the non-negative model) of
    /// the random initialization; defaults to `0.1 / sqrt(d)`.
    pub init_scale: Option<f64>,
    pub delta_penalty: DeltaPenalty,
}

impl TrainConfig {
    /// Dimensionalities used for the reference experiments.
    pub const PAPER_DIMS: [usize; 3] = [10, 50, 100];

    pub fn new(d: usize) -> Self {
        Self {
            d,
            lambda: 0.04,
            learning_rate: 1.0,
            max_epochs: 300,
            tolerance: 1e-5,
            restarts: 3,
            seed: 0,
            init_scale: None,
            delta_penalty: DeltaPenalty::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_max_epochs(mut self, max_epochs: usize) -> Self {
        self.max_epochs = max_epochs;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn effective_init_scale(&self) -> f64 {
        self.init_scale
            .unwrap_or_else(|| 0.1 / (self.d as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), FactorError> {
        let fail = |m: String| Err(FactorError::InvalidConfig(m));
        if self.d == 0 {
            return fail("d must be at least 1".into());
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.learning_rate > 0.0) {
            return fail(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        if !(self.tolerance > 0.0) {
            return fail(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.restarts == 0 {
            return fail("restarts must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if !(self.effective_init_scale() > 0.0) || !self.effective_init_scale().is_finite() {
            return fail(format!(
                "init_scale must be positive and finite, got {}",
                self.effective_init_scale()
            ));
        }
        Ok(())
    }
}

/// Exact partial derivatives of [`objective`] for every free parameter.
/// The global mean of the delta model is fixed, so it has no entry.
#[derive(Debug, Clone)]
pub struct FactorGradient {
    pub item_factors: Array2<f64>,
    pub user_factors: Array2<f64>,
    pub item_bias: Option<Vec<f64>>,
    pub user_bias: Option<Vec<f64>>,
}

impl FactorGradient {
    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        let m = self
            .item_factors
            .iter()
            .chain(self.user_factors.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let b = self
            .item_bias
            .iter()
            .chain(self.user_bias.iter())
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        m.max(b)
    }
}

/// Rating estimate for one (item, user) pair; never clamped to the scale.
pub fn predict(f: &Factorization, item: usize, user: usize) -> Result<f64, FactorError> {
    if item >= f.item_count() || user >= f.user_count() {
        return Err(FactorError::IndexOutOfRange {
            item,
            user,
            items: f.item_count(),
            users: f.user_count(),
        });
    }
    Ok(f.predict_unchecked(item, user))
}

/// Sum of squared errors over the observed ratings.
pub fn sse(ds: &RatingDataset, f: &Factorization) -> Result<f64, FactorError> {
    f.check_dims(ds)?;
    Ok(sse_by_item(&ds.by_item(), f))
}

/// Training objective: SSE plus the per-observation ridge penalty.
pub fn objective(ds: &RatingDataset, f: &Factorization) -> Result<f64, FactorError> {
    objective_with(ds, f, DeltaPenalty::Squared)
}

/// [`objective`] under an explicit deviation-penalty mode.
pub fn objective_with(
    ds: &RatingDataset,
    f: &Factorization,
    mode: DeltaPenalty,
) -> Result<f64, FactorError> {
    f.check_dims(ds)?;
    let by_item = ds.by_item();
    let item_counts: Vec<usize> = by_item.iter().map(Vec::len).collect();
    let user_counts = ds.ratings_per_user();
    Ok(sse_by_item(&by_item, f) + penalty(f, &item_counts, &user_counts, mode))
}

/// Gradient of [`objective`] with respect to every free parameter.
pub fn gradient(ds: &RatingDataset, f: &Factorization) -> Result<FactorGradient, FactorError> {
    gradient_with(ds, f, DeltaPenalty::Squared)
}

pub fn gradient_with(
    ds: &RatingDataset,
    f: &Factorization,
    mode: DeltaPenalty,
) -> Result<FactorGradient, FactorError> {
    f.check_dims(ds)?;
    let by_item = ds.by_item();
    let by_user = ds.by_user();
    Ok(gradient_parts(&by_item, &by_user, f, mode).0)
}

fn sse_by_item(by_item: &[Vec<(u32, f64)>], f: &Factorization) -> f64 {
    let per_item: Vec<f64> = by_item
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&(u, r)| {
                    let e = f.predict_unchecked(i, u as usize) - r;
                    e * e
                })
                .sum()
        })
        .collect();
    per_item.iter().sum()
}

/// The lambda-weighted penalty. Each parameter is counted once per observed
/// rating it participates in, so heavily rated items and active users are
/// penalized more strongly.
fn penalty(f: &Factorization, item_counts: &[usize], user_counts: &[usize], mode: DeltaPenalty) -> f64 {
    if f.lambda == 0.0 {
        return 0.0;
    }
    let item_part: f64 = f
        .item_factors
        .rows()
        .into_iter()
        .zip(item_counts)
        .map(|(row, &c)| c as f64 * row.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let user_part: f64 = f
        .user_factors
        .rows()
        .into_iter()
        .zip(user_counts)
        .map(|(row, &c)| c as f64 * row.iter().map(|x| x * x).sum::<f64>())
        .sum();
    let bias_part: f64 = match &f.bias {
        None => 0.0,
        Some(b) => {
            let term = |x: f64| match mode {
                DeltaPenalty::Squared => x * x,
                DeltaPenalty::Linear => x,
            };
            b.item
                .iter()
                .zip(item_counts)
                .map(|(&x, &c)| c as f64 * term(x))
                .sum::<f64>()
                + b.user
                    .iter()
                    .zip(user_counts)
                    .map(|(&x, &c)| c as f64 * term(x))
                    .sum::<f64>()
        }
    };
    f.lambda * (item_part + user_part + bias_part)
}

/// Gradient plus the diagonal curvature used for step scaling.
fn gradient_parts(
    by_item: &[Vec<(u32, f64)>],
    by_user: &[Vec<(u32, f64)>],
    f: &Factorization,
    mode: DeltaPenalty,
) -> (FactorGradient, FactorGradient) {
    let d = f.dim();
    let lambda = f.lambda;

    let item_rows: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = by_item
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let cnt = row.len() as f64;
            let a = f.item_factors.row(i);
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; d];
            let mut g_bias = 0.0;
            for &(u, r) in row {
                let u = u as usize;
                let e = f.predict_unchecked(i, u) - r;
                let b = f.user_factors.row(u);
                for r_idx in 0..d {
                    g[r_idx] += e * b[r_idx];
                    h[r_idx] += b[r_idx] * b[r_idx];
                }
                g_bias += e;
            }
            for r_idx in 0..d {
                g[r_idx] = 2.0 * (g[r_idx] + lambda * cnt * a[r_idx]);
                h[r_idx] = 2.0 * (h[r_idx] + lambda * cnt);
            }
            let (gb, hb) = match mode {
                DeltaPenalty::Squared => {
                    let delta = f.bias.as_ref().map_or(0.0, |b| b.item[i]);
                    (
                        2.0 * (g_bias + lambda * cnt * delta),
                        2.0 * (cnt + lambda * cnt),
                    )
                }
                DeltaPenalty::Linear => (2.0 * g_bias + lambda * cnt, 2.0 * cnt),
            };
            (g, h, gb, hb)
        })
        .collect();

    let user_rows: Vec<(Vec<f64>, Vec<f64>, f64, f64)> = by_user
        .par_iter()
        .enumerate()
        .map(|(u, col)| {
            let cnt = col.len() as f64;
            let b = f.user_factors.row(u);
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; d];
            let mut g_bias = 0.0;
            for &(i, r) in col {
                let i = i as usize;
                let e = f.predict_unchecked(i, u) - r;
                let a = f.item_factors.row(i);
                for r_idx in 0..d {
                    g[r_idx] += e * a[r_idx];
                    h[r_idx] += a[r_idx] * a[r_idx];
                }
                g_bias += e;
            }
            for r_idx in 0..d {
                g[r_idx] = 2.0 * (g[r_idx] + lambda * cnt * b[r_idx]);
                h[r_idx] = 2.0 * (h[r_idx] + lambda * cnt);
            }
            let (gb, hb) = match mode {
                DeltaPenalty::Squared => {
                    let delta = f.bias.as_ref().map_or(0.0, |bs| bs.user[u]);
                    (
                        2.0 * (g_bias + lambda * cnt * delta),
                        2.0 * (cnt + lambda * cnt),
                    )
                }
                DeltaPenalty::Linear => (2.0 * g_bias + lambda * cnt, 2.0 * cnt),
            };
            (g, h, gb, hb)
        })
        .collect();

    let items = by_item.len();
    let users = by_user.len();
    let mut g_item = Array2::zeros((items, d));
    let mut h_item = Array2::zeros((items, d));
    let mut g_item_bias = vec![0.0; items];
    let mut h_item_bias = vec![0.0; items];
    for (i, (g, h, gb, hb)) in item_rows.into_iter().enumerate() {
        for r_idx in 0..d {
            g_item[(i, r_idx)] = g[r_idx];
            h_item[(i, r_idx)] = h[r_idx];
        }
        g_item_bias[i] = gb;
        h_item_bias[i] = hb;
    }
    let mut g_user = Array2::zeros((users, d));
    let mut h_user = Array2::zeros((users, d));
    let mut g_user_bias = vec![0.0; users];
    let mut h_user_bias = vec![0.0; users];
    for (u, (g, h, gb, hb)) in user_rows.into_iter().enumerate() {
        for r_idx in 0..d {
            g_user[(u, r_idx)] = g[r_idx];
            h_user[(u, r_idx)] = h[r_idx];
        }
        g_user_bias[u] = gb;
        h_user_bias[u] = hb;
    }

    let has_bias = f.bias.is_some();
    (
        FactorGradient {
            item_factors: g_item,
            user_factors: g_user,
            item_bias: has_bias.then_some(g_item_bias),
            user_bias: has_bias.then_some(g_user_bias),
        },
        FactorGradient {
            item_factors: h_item,
            user_factors: h_user,
            item_bias: has_bias.then_some(h_item_bias),
            user_bias: has_bias.then_some(h_user_bias),
        },
    )
}

/// One accepted training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub sse: f64,
    pub step_scale: f64,
}

/// Per-epoch CSV training log.
pub fn write_training_log<W: Write>(epochs: &[EpochRecord], w: &mut W) -> std::io::Result<()> {
    writeln!(w, "epoch,objective,sse,step_scale")?;
    for e in epochs {
        writeln!(w, "{},{},{},{}", e.epoch, e.objective, e.sse, e.step_scale)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Factorization,
    /// Log of the winning restart, including the initial state as epoch 0.
    pub epochs: Vec<EpochRecord>,
    /// Index of the winning restart.
    pub restart: usize,
}

/// Trains a factor model and returns the restart with the lowest final
/// objective. Deterministic for a fixed config: reruns produce bitwise
/// identical factorizations regardless of thread count.
pub fn train(
    ds: &RatingDataset,
    kind: ModelKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, FactorError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(FactorError::EmptyDataset);
    }

    let by_item = ds.by_item();
    let by_user = ds.by_user();
    let item_counts: Vec<usize> = by_item.iter().map(Vec::len).collect();
    let user_counts: Vec<usize> = by_user.iter().map(Vec::len).collect();
    let mean = ds.mean_rating();

    let mut best: Option<(f64, TrainOutcome)> = None;
    let mut diverged = 0usize;
    for restart in 0..cfg.restarts {
        match run_restart(
            &by_item,
            &by_user,
            &item_counts,
            &user_counts,
            mean,
            kind,
            cfg,
            restart,
        ) {
            None => {
                log::warn!("restart {restart}: objective diverged, discarding");
                diverged += 1;
            }
            Some((obj, outcome)) => {
                if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                    best = Some((obj, outcome));
                }
            }
        }
    }
    match best {
        Some((_, outcome)) => {
            outcome.model.validate()?;
            Ok(outcome)
        }
        None => Err(FactorError::Diverged { restarts: diverged }),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_restart(
    by_item: &[Vec<(u32, f64)>],
    by_user: &[Vec<(u32, f64)>],
    item_counts: &[usize],
    user_counts: &[usize],
    mean: f64,
    kind: ModelKind,
    cfg: &TrainConfig,
    restart: usize,
) -> Option<(f64, TrainOutcome)> {
    let (items, users, d) = (by_item.len(), by_user.len(), cfg.d);
    let scale = cfg.effective_init_scale();
    let mut rng = rng::stream(cfg.seed, "factor-init", restart as u64);

    // A is filled row-major first, then B; the draw order is part of the
    // determinism contract.
    let mut draw = |nn: bool| {
        use rand::Rng;
        if nn {
            scale * (1.0 - rng.gen::<f64>())
        } else {
            scale * rng::normal(&mut rng)
        }
    };
    let nn = kind == ModelKind::Nnmf;
    let mut f = Factorization {
        kind,
        item_factors: Array2::from_shape_fn((items, d), |_| draw(nn)),
        user_factors: Array2::from_shape_fn((users, d), |_| draw(nn)),
        bias: (kind == ModelKind::DeltaSvd).then(|| BiasTerms {
            mean,
            item: vec![0.0; items],
            user: vec![0.0; users],
        }),
        lambda: cfg.lambda,
        seed: cfg.seed,
    };

    let mode = cfg.delta_penalty;
    let eval = |f: &Factorization| {
        let s = sse_by_item(by_item, f);
        (s + penalty(f, item_counts, user_counts, mode), s)
    };

    let (mut obj, mut s) = eval(&f);
    if !obj.is_finite() {
        return None;
    }
    let mut epochs = vec![EpochRecord {
        epoch: 0,
        objective: obj,
        sse: s,
        step_scale: 0.0,
    }];

    let mut step_scale = 1.0f64;
    let mut calm = 0u32;
    for epoch in 1..=cfg.max_epochs {
        let (g, h) = gradient_parts(by_item, by_user, &f, mode);

        // Newton-like direction from the diagonal curvature.
        let dir_mat = |g: &Array2<f64>, h: &Array2<f64>| {
            let mut dir = g.clone();
            dir.zip_mut_with(h, |gx, &hx| *gx /= hx.max(1e-12));
            dir
        };
        let dir_item = dir_mat(&g.item_factors, &h.item_factors);
        let dir_user = dir_mat(&g.user_factors, &h.user_factors);
        let dir_vec = |g: &Option<Vec<f64>>, h: &Option<Vec<f64>>| -> Option<Vec<f64>> {
            match (g, h) {
                (Some(g), Some(h)) => Some(
                    g.iter()
                        .zip(h)
                        .map(|(&gx, &hx)| gx / hx.max(1e-12))
                        .collect(),
                ),
                _ => None,
            }
        };
        let dir_item_bias = dir_vec(&g.item_bias, &h.item_bias);
        let dir_user_bias = dir_vec(&g.user_bias, &h.user_bias);

        // Step-halving keeps the accepted objective sequence non-increasing.
        let mut t = (step_scale * 2.0).min(1.0);
        let mut accepted = None;
        while t >= 1e-14 {
            let lr = cfg.learning_rate * t;
            let mut cand = f.clone();
            cand.item_factors.zip_mut_with(&dir_item, |x, &dx| *x -= lr * dx);
            cand.user_factors.zip_mut_with(&dir_user, |x, &dx| *x -= lr * dx);
            if let (Some(bias), Some(di), Some(du)) =
                (cand.bias.as_mut(), &dir_item_bias, &dir_user_bias)
            {
                for (x, &dx) in bias.item.iter_mut().zip(di) {
                    *x -= lr * dx;
                }
                for (x, &dx) in bias.user.iter_mut().zip(du) {
                    *x -= lr * dx;
                }
            }
            if nn {
                cand.item_factors.mapv_inplace(|x| x.max(0.0));
                cand.user_factors.mapv_inplace(|x| x.max(0.0));
            }
            let (cobj, csse) = eval(&cand);
            if cobj.is_finite() && cobj <= obj {
                accepted = Some((cand, cobj, csse, t));
                break;
            }
            t *= 0.5;
        }

        let Some((cand, cobj, csse, t)) = accepted else {
            // No step of any scale improves the objective; treat as
            // converged at numerical precision.
            break;
        };
        let improvement = (obj - cobj) / obj.max(f64::MIN_POSITIVE);
        f = cand;
        obj = cobj;
        s = csse;
        step_scale = t;
        epochs.push(EpochRecord {
            epoch,
            objective: obj,
            sse: s,
            step_scale: t,
        });
        if !obj.is_finite() {
            return None;
        }
        if improvement < cfg.tolerance {
            calm += 1;
            if calm >= 3 {
                break;
            }
        } else {
            calm = 0;
        }
    }

    Some((
        obj,
        TrainOutcome {
            model: f,
            epochs,
            restart,
        },
    ))
}
