//! Canonical coordinate spaces.
//!
//! A factorization pair (A, B) is only determined up to an invertible d×d
//! transform: (A·M, M⁻¹·B) fits exactly as well. This module maps any such
//! pair onto a canonical representative with orthogonal axes ordered by
//! importance, by computing the singular value decomposition of the product
//! A·B without ever forming the full I×U matrix: QR-decompose A and Bᵀ, take
//! the SVD of the small d×d core, and recombine.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use ndarray::Array2;
use thiserror::Error;

use crate::snapshot::{self, SnapshotError};

#[derive(Debug, Error)]
pub enum StandardizeError {
    #[error("non-finite entry in input matrix")]
    NonFinite,
    #[error("shape mismatch: A is {ai}x{ad}, B is {bd}x{bu}")]
    ShapeMismatch {
        ai: usize,
        ad: usize,
        bd: usize,
        bu: usize,
    },
    #[error("invalid coordinate space: {0}")]
    InvalidSpace(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Relative gap below which singular values count as coinciding; the
/// canonical form is then only unique per subspace.
const CLOSE_SINGULAR_GAP: f64 = 1e-9;
/// Singular values below `s_max * RANK_TOLERANCE` are treated as rank loss.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum StandardizeWarning {
    RankDeficient { requested: usize, effective: usize },
    CloseSingularValues { index: usize, relative_gap: f64 },
}

/// Standardized item coordinates: I×d with mutually orthogonal columns,
/// ordered by decreasing importance.
///
/// `column_scales[r]` is the squared norm of column `r`; for a factor space
/// this equals the r-th singular value of the product A·B.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateSpace {
    coords: Array2<f64>,
    column_scales: Vec<f64>,
    provenance: String,
}

impl CoordinateSpace {
    pub fn new(
        coords: Array2<f64>,
        column_scales: Vec<f64>,
        provenance: String,
    ) -> Result<Self, StandardizeError> {
        let space = Self {
            coords,
            column_scales,
            provenance,
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<(), StandardizeError> {
        let fail = |m: String| Err(StandardizeError::InvalidSpace(m));
        if self.coords.ncols() != self.column_scales.len() {
            return fail(format!(
                "{} columns but {} scales",
                self.coords.ncols(),
                self.column_scales.len()
            ));
        }
        if self.coords.iter().any(|x| !x.is_finite()) {
            return fail("non-finite coordinate".into());
        }
        for w in self.column_scales.windows(2) {
            if !(w[1] <= w[0]) {
                return fail(format!("scales not decreasing: {} < {}", w[0], w[1]));
            }
        }
        if self.column_scales.iter().any(|&s| !(s > 0.0)) {
            return fail("non-positive column scale".into());
        }
        // Gram matrix must be diagonal with the declared scales.
        let max_scale = self.column_scales.first().copied().unwrap_or(0.0);
        for r in 0..self.coords.ncols() {
            for s in r..self.coords.ncols() {
                let dot = self.coords.column(r).dot(&self.coords.column(s));
                if r == s {
                    let rel = (dot - self.column_scales[r]).abs()
                        / self.column_scales[r].max(f64::MIN_POSITIVE);
                    if rel > 1e-6 {
                        return fail(format!(
                            "column {r} norm^2 {dot} != scale {}",
                            self.column_scales[r]
                        ));
                    }
                } else if dot.abs() > 1e-8 * max_scale.max(f64::MIN_POSITIVE) {
                    return fail(format!("columns {r},{s} not orthogonal: {dot}"));
                }
            }
        }
        Ok(())
    }

    pub fn item_count(&self) -> usize {
        self.coords.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.coords
    }

    pub fn column_scales(&self) -> &[f64] {
        &self.column_scales
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    const MAGIC: &'static [u8; 4] = b"FSCS";
    const VERSION: u32 = 1;

    pub fn write_snapshot<W: Write>(
        &self,
        w: &mut W,
        config_hash: &str,
    ) -> Result<(), StandardizeError> {
        snapshot::write_header(w, Self::MAGIC, Self::VERSION, config_hash)?;
        snapshot::write_str(w, &self.provenance)?;
        snapshot::write_u32(w, self.coords.nrows() as u32)?;
        snapshot::write_u32(w, self.coords.ncols() as u32)?;
        for &s in &self.column_scales {
            snapshot::write_f64(w, s)?;
        }
        for &x in self.coords.iter() {
            snapshot::write_f64(w, x)?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(Self, String), StandardizeError> {
        let config_hash = snapshot::read_header(r, Self::MAGIC, Self::VERSION)?;
        let provenance = snapshot::read_str(r)?;
        let items = snapshot::read_u32(r)? as usize;
        let d = snapshot::read_u32(r)? as usize;
        let mut column_scales = vec![0.0; d];
        for s in &mut column_scales {
            *s = snapshot::read_f64(r)?;
        }
        let mut coords = Array2::zeros((items, d));
        for x in coords.iter_mut() {
            *x = snapshot::read_f64(r)?;
        }
        Ok((
            Self::new(coords, column_scales, provenance)?,
            config_hash,
        ))
    }

    /// CSV export with item external ids as row keys.
    pub fn write_csv<W: Write>(&self, w: &mut W, item_ids: &[String]) -> Result<(), StandardizeError> {
        if item_ids.len() != self.item_count() {
            return Err(StandardizeError::InvalidSpace(format!(
                "{} ids for {} items",
                item_ids.len(),
                self.item_count()
            )));
        }
        write!(w, "item_id")?;
        for r in 0..self.dim() {
            write!(w, ",c{r}")?;
        }
        writeln!(w)?;
        for (id, row) in item_ids.iter().zip(self.coords.rows()) {
            write!(w, "{id}")?;
            for x in row.iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Population variance of the item coordinates along each axis; verifies the
/// importance ordering.
pub fn column_variances(space: &CoordinateSpace) -> Vec<f64> {
    let n = space.item_count();
    if n == 0 {
        return vec![0.0; space.dim()];
    }
    space
        .coords
        .columns()
        .into_iter()
        .map(|col| {
            let mean = col.sum() / n as f64;
            col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Standardized {
    pub space: CoordinateSpace,
    /// The matching canonical user matrix, d×U.
    pub user_matrix: Array2<f64>,
    pub warnings: Vec<StandardizeWarning>,
}

/// Canonicalizes a factorization pair.
///
/// Returns (A′, B′) with A′·B′ = A·B, orthogonal item axes ordered by
/// decreasing singular value, and a deterministic per-column sign (the entry
/// of largest magnitude in each coordinate column is positive; ties go to
/// the lowest row index). Any pair (A·M, M⁻¹·B) maps to the same result.
pub fn standardize(a: &Array2<f64>, b: &Array2<f64>) -> Result<Standardized, StandardizeError> {
    if a.ncols() != b.nrows() {
        return Err(StandardizeError::ShapeMismatch {
            ai: a.nrows(),
            ad: a.ncols(),
            bd: b.nrows(),
            bu: b.ncols(),
        });
    }
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(StandardizeError::NonFinite);
    }
    let (items, d, users) = (a.nrows(), a.ncols(), b.ncols());

    let na = DMatrix::from_fn(items, d, |i, j| a[(i, j)]);
    let nbt = DMatrix::from_fn(users, d, |u, j| b[(j, u)]);

    // A = Qa Ra, Bᵀ = Qb Rb  =>  A·B = Qa (Ra Rbᵀ) Qbᵀ.
    let qr_a = na.qr();
    let qr_b = nbt.qr();
    let core = qr_a.r() * qr_b.r().transpose();

    let svd = core.svd(true, true);
    let u_core = svd.u.as_ref().expect("u requested");
    let vt_core = svd.v_t.as_ref().expect("v_t requested");
    let singular = &svd.singular_values;
    debug_assert!(singular.iter().zip(singular.iter().skip(1)).all(|(a, b)| a >= b));

    let mut warnings = Vec::new();
    let s_max = singular.iter().fold(0.0f64, |m, &s| m.max(s));
    let effective = singular
        .iter()
        .take_while(|&&s| s > s_max * RANK_TOLERANCE && s > 0.0)
        .count();
    let requested = singular.len().min(d);
    if effective < requested {
        log::warn!("standardize: rank {effective} below requested width {requested}");
        warnings.push(StandardizeWarning::RankDeficient {
            requested,
            effective,
        });
    }
    for i in 0..effective.saturating_sub(1) {
        let gap = (singular[i] - singular[i + 1]) / singular[i].max(f64::MIN_POSITIVE);
        if gap < CLOSE_SINGULAR_GAP {
            warnings.push(StandardizeWarning::CloseSingularValues {
                index: i,
                relative_gap: gap,
            });
        }
    }

    // A′ = Qa·U·S^{1/2}, B′ = S^{1/2}·Vᵀ·Qbᵀ, truncated to the effective rank.
    let qa = qr_a.q();
    let qb = qr_b.q();
    let mut coords = Array2::zeros((items, effective));
    for i in 0..items {
        for r in 0..effective {
            let mut acc = 0.0;
            for k in 0..u_core.nrows() {
                acc += qa[(i, k)] * u_core[(k, r)];
            }
            coords[(i, r)] = acc * singular[r].sqrt();
        }
    }
    let mut user_matrix = Array2::zeros((effective, users));
    for r in 0..effective {
        for u in 0..users {
            let mut acc = 0.0;
            for k in 0..vt_core.ncols() {
                acc += vt_core[(r, k)] * qb[(u, k)];
            }
            user_matrix[(r, u)] = acc * singular[r].sqrt();
        }
    }
    fix_signs(&mut coords, Some(&mut user_matrix));

    let column_scales: Vec<f64> = singular.iter().take(effective).copied().collect();
    Ok(Standardized {
        space: CoordinateSpace::new(coords, column_scales, String::new())?,
        user_matrix,
        warnings,
    })
}

/// Rotates centered points onto their principal axes: columns ordered by
/// decreasing variance, signs fixed by the standard convention. Distances
/// between rows are preserved. Used to bring non-factor embeddings into the
/// same canonical form as standardized factor spaces.
pub fn principal_axes(
    points: &Array2<f64>,
    provenance: impl Into<String>,
) -> Result<CoordinateSpace, StandardizeError> {
    if points.iter().any(|x| !x.is_finite()) {
        return Err(StandardizeError::NonFinite);
    }
    let (n, d) = (points.nrows(), points.ncols());
    let mut centered = points.clone();
    for mut col in centered.columns_mut() {
        let mean = col.sum() / n.max(1) as f64;
        col.mapv_inplace(|x| x - mean);
    }
    let m = DMatrix::from_fn(n, d, |i, j| centered[(i, j)]);
    let svd = m.svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let singular = &svd.singular_values;
    let s_max = singular.iter().fold(0.0f64, |m, &s| m.max(s));
    let effective = singular
        .iter()
        .take_while(|&&s| s > s_max * RANK_TOLERANCE && s > 0.0)
        .count();

    let mut coords = Array2::zeros((n, effective));
    for i in 0..n {
        for r in 0..effective {
            coords[(i, r)] = u[(i, r)] * singular[r];
        }
    }
    fix_signs(&mut coords, None);
    let column_scales: Vec<f64> = singular
        .iter()
        .take(effective)
        .map(|&s| s * s)
        .collect();
    CoordinateSpace::new(coords, column_scales, provenance.into())
}

/// Flips column signs so the entry of largest magnitude in each column is
/// positive (ties: lowest row index wins); the matching user-matrix row is
/// flipped along.
fn fix_signs(coords: &mut Array2<f64>, mut user_matrix: Option<&mut Array2<f64>>) {
    for r in 0..coords.ncols() {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for (i, &x) in coords.column(r).iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if coords[(best, r)] < 0.0 {
            coords.column_mut(r).mapv_inplace(|x| -x);
            if let Some(b) = user_matrix.as_deref_mut() {
                b.row_mut(r).mapv_inplace(|x| -x);
            }
        }
    }
}
