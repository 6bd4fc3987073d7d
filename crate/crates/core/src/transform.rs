//! Transformation values and projections onto transformation classes.
//!
//! Points are row vectors and transforms act by right multiplication,
//! `x' = x · T`. A homogeneous transform therefore stores its linear block
//! in the top-left `d × d` corner, the translation as the bottom row and
//! `(0, …, 0, 1)ᵀ` as the last column.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition number above which a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Linear,
    Homogeneous,
}

impl Kind {
    /// Side length of the stored matrix for dimension `dim`.
    pub fn size(self, dim: usize) -> usize {
        match self {
            Kind::Linear => dim,
            Kind::Homogeneous => dim + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformClass {
    Linear,
    Affine,
    Similarity,
    Euclidean,
    Rigid,
}

impl TransformClass {
    pub const ALL: [TransformClass; 5] = [
        TransformClass::Affine,
        TransformClass::Linear,
        TransformClass::Similarity,
        TransformClass::Euclidean,
        TransformClass::Rigid,
    ];

    /// Storage kind used for ground truth of this class: linear maps carry
    /// no translation, every other class is homogeneous.
    pub fn natural_kind(self) -> Kind {
        match self {
            TransformClass::Linear => Kind::Linear,
            _ => Kind::Homogeneous,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TransformClass::Linear => "linear",
            TransformClass::Affine => "affine",
            TransformClass::Similarity => "similarity",
            TransformClass::Euclidean => "euclidean",
            TransformClass::Rigid => "rigid",
        }
    }
}

impl fmt::Display for TransformClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransformClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(TransformClass::Linear),
            "affine" => Ok(TransformClass::Affine),
            "similarity" => Ok(TransformClass::Similarity),
            "euclidean" => Ok(TransformClass::Euclidean),
            "rigid" => Ok(TransformClass::Rigid),
            other => Err(Error::Parse(format!("unknown transform class '{other}'"))),
        }
    }
}

/// How the isotropic scale is read off the singular values of a linear block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleMode {
    /// Geometric mean of the singular values.
    #[default]
    Geometric,
    /// Arithmetic mean; the least-squares similarity scale.
    Arithmetic,
}

impl FromStr for ScaleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "geometric" => Ok(ScaleMode::Geometric),
            "arithmetic" => Ok(ScaleMode::Arithmetic),
            other => Err(Error::Parse(format!("unknown scale mode '{other}'"))),
        }
    }
}

/// An invertible linear or affine transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct Transform {
    dim: usize,
    kind: Kind,
    matrix: DMatrix<f64>,
}

impl Transform {
    /// Wraps a raw matrix, checking its size and, for homogeneous transforms,
    /// that the last column is exactly `(0, …, 0, 1)ᵀ`.
    pub fn from_matrix(dim: usize, kind: Kind, matrix: DMatrix<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("dimension must be positive".into()));
        }
        let size = kind.size(dim);
        if matrix.nrows() != size || matrix.ncols() != size {
            return Err(Error::Contract(format!(
                "{kind:?} transform of dimension {dim} needs a {size}x{size} matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("transform matrix has non-finite entries".into()));
        }
        if kind == Kind::Homogeneous {
            for r in 0..dim {
                if matrix[(r, dim)] != 0.0 {
                    return Err(Error::Contract(
                        "homogeneous transform must have last column (0, ..., 0, 1)".into(),
                    ));
                }
            }
            if matrix[(dim, dim)] != 1.0 {
                return Err(Error::Contract(
                    "homogeneous transform must have last column (0, ..., 0, 1)".into(),
                ));
            }
        }
        Ok(Self { dim, kind, matrix })
    }

    pub fn identity(dim: usize, kind: Kind) -> Self {
        let size = kind.size(dim);
        Self {
            dim,
            kind,
            matrix: DMatrix::identity(size, size),
        }
    }

    pub fn linear(a: DMatrix<f64>) -> Result<Self> {
        let dim = a.nrows();
        Self::from_matrix(dim, Kind::Linear, a)
    }

    /// Builds `[[A, 0], [t, 1]]`.
    pub fn homogeneous(a: &DMatrix<f64>, t: &RowDVector<f64>) -> Result<Self> {
        let dim = a.nrows();
        if a.ncols() != dim || t.len() != dim {
            return Err(Error::Contract(format!(
                "linear block {}x{} and translation of length {} do not match",
                a.nrows(),
                a.ncols(),
                t.len()
            )));
        }
        let mut m = DMatrix::zeros(dim + 1, dim + 1);
        m.view_mut((0, 0), (dim, dim)).copy_from(a);
        m.view_mut((dim, 0), (1, dim)).copy_from(t);
        m[(dim, dim)] = 1.0;
        Self::from_matrix(dim, Kind::Homogeneous, m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// The `d × d` linear block.
    pub fn linear_block(&self) -> DMatrix<f64> {
        self.matrix.view((0, 0), (self.dim, self.dim)).into_owned()
    }

    /// The translation row; zero for linear transforms.
    pub fn translation(&self) -> RowDVector<f64> {
        match self.kind {
            Kind::Linear => RowDVector::zeros(self.dim),
            Kind::Homogeneous => RowDVector::from_iterator(self.dim, self.matrix.row(self.dim).iter().take(self.dim).copied()),
        }
    }

    /// Ratio of extreme singular values of the linear block.
    pub fn condition(&self) -> f64 {
        condition_number(&self.linear_block())
    }

    /// Rebuilds a transform of the same kind from a new linear block,
    /// keeping the translation.
    pub fn with_linear_block(&self, a: &DMatrix<f64>) -> Result<Self> {
        match self.kind {
            Kind::Linear => Self::linear(a.clone()),
            Kind::Homogeneous => Self::homogeneous(a, &self.translation()),
        }
    }

    /// Maps a single row-vector point.
    pub fn apply_point(&self, p: &RowDVector<f64>) -> RowDVector<f64> {
        p * self.linear_block() + self.translation()
    }

    fn check_compatible(&self, other: &Transform) -> Result<()> {
        if self.dim != other.dim || self.kind != other.kind {
            return Err(Error::Contract(format!(
                "cannot combine {:?} transform of dimension {} with {:?} transform of dimension {}",
                self.kind, self.dim, other.kind, other.dim
            )));
        }
        Ok(())
    }

    /// Matrix product `self · other`: apply `self` first, then `other`.
    pub fn compose(&self, other: &Transform) -> Result<Transform> {
        self.check_compatible(other)?;
        let mut m = &self.matrix * &other.matrix;
        if self.kind == Kind::Homogeneous {
            fix_last_column(&mut m, self.dim);
        }
        Ok(Transform {
            dim: self.dim,
            kind: self.kind,
            matrix: m,
        })
    }

    /// Inverse transform. Homogeneous inverses use the block form
    /// `[[A⁻¹, 0], [−t A⁻¹, 1]]`.
    pub fn invert(&self) -> Result<Transform> {
        let a = self.linear_block();
        let a_inv = checked_inverse(&a)?;
        match self.kind {
            Kind::Linear => Ok(Transform {
                dim: self.dim,
                kind: Kind::Linear,
                matrix: a_inv,
            }),
            Kind::Homogeneous => {
                let t = -(self.translation() * &a_inv);
                Transform::homogeneous(&a_inv, &t)
            }
        }
    }

    /// Frobenius distance between the stored matrices.
    pub fn distance(&self, other: &Transform) -> Result<f64> {
        self.check_compatible(other)?;
        Ok((&self.matrix - &other.matrix).norm())
    }
}

fn fix_last_column(m: &mut DMatrix<f64>, dim: usize) {
    for r in 0..dim {
        m[(r, dim)] = 0.0;
    }
    m[(dim, dim)] = 1.0;
}

/// Condition number `σ_max / σ_min`; infinite for singular input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

fn checked_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(a);
    if !(condition < MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    a.clone()
        .try_inverse()
        .ok_or(Error::Singular { condition })
}

/// Left and right singular vectors with singular values sorted descending.
pub(crate) struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

pub(crate) fn sorted_svd(a: &DMatrix<f64>) -> SortedSvd {
    let mut svd = a.clone().svd(true, true);
    svd.sort_by_singular_values();
    SortedSvd {
        u: svd.u.expect("u requested"),
        singular_values: svd.singular_values.iter().copied().collect(),
        v_t: svd.v_t.expect("v_t requested"),
    }
}

/// `U Vᵀ` for any square input, singular or not. Used where a rank
/// deficient cross-covariance is legitimate.
pub(crate) fn polar_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = sorted_svd(a);
    &svd.u * &svd.v_t
}

/// `U D Vᵀ` with `D = diag(1, …, 1, det(Vᵀ U))`, the nearest rotation.
pub(crate) fn rotation_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = sorted_svd(a);
    rotation_from_svd(&svd)
}

fn rotation_from_svd(svd: &SortedSvd) -> DMatrix<f64> {
    let n = svd.u.nrows();
    let det = (svd.v_t.transpose() * &svd.u).determinant();
    let mut u = svd.u.clone();
    if det < 0.0 {
        let mut last = u.column_mut(n - 1);
        last *= -1.0;
    }
    u * &svd.v_t
}

fn check_square_nonsingular(a: &DMatrix<f64>) -> Result<SortedSvd> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::Contract(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let svd = sorted_svd(a);
    let max = svd.singular_values[0];
    let min = *svd.singular_values.last().unwrap();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::Singular { condition });
    }
    Ok(svd)
}

/// Frobenius-nearest orthogonal matrix, `Q = U Vᵀ` from `A = U Σ Vᵀ`.
pub fn project_orthogonal(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = check_square_nonsingular(a)?;
    Ok(&svd.u * &svd.v_t)
}

fn check_positive(singular_values: &[f64]) -> Result<()> {
    if singular_values.is_empty() {
        return Err(Error::Contract("no singular values given".into()));
    }
    if let Some(bad) = singular_values.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::Contract(format!(
            "singular values must be positive and finite, got {bad}"
        )));
    }
    Ok(())
}

/// Geometric mean of the singular values.
pub fn scale_geometric(singular_values: &[f64]) -> Result<f64> {
    check_positive(singular_values)?;
    // log-space keeps large d from overflowing the product
    let mean_log =
        singular_values.iter().map(|s| s.ln()).sum::<f64>() / singular_values.len() as f64;
    Ok(mean_log.exp())
}

/// Arithmetic mean of the singular values.
pub fn scale_arithmetic(singular_values: &[f64]) -> Result<f64> {
    check_positive(singular_values)?;
    Ok(singular_values.iter().sum::<f64>() / singular_values.len() as f64)
}

pub fn scale_from(singular_values: &[f64], mode: ScaleMode) -> Result<f64> {
    match mode {
        ScaleMode::Geometric => scale_geometric(singular_values),
        ScaleMode::Arithmetic => scale_arithmetic(singular_values),
    }
}

/// Scale, orthogonal part and translation of a (near-)similarity transform.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityParts {
    pub scale: f64,
    pub orthogonal: DMatrix<f64>,
    pub translation: RowDVector<f64>,
}

impl SimilarityParts {
    /// Recomposes `[[s Q, 0], [t, 1]]`.
    pub fn to_transform(&self) -> Result<Transform> {
        Transform::homogeneous(&(&self.orthogonal * self.scale), &self.translation)
    }
}

/// Splits the linear block with an SVD into a geometric-mean scale and the
/// nearest orthogonal matrix; the translation is read off the bottom row.
pub fn decompose_similarity(t: &Transform) -> Result<SimilarityParts> {
    decompose_with(t, ScaleMode::Geometric)
}

fn decompose_with(t: &Transform, mode: ScaleMode) -> Result<SimilarityParts> {
    let svd = check_square_nonsingular(&t.linear_block())?;
    Ok(SimilarityParts {
        scale: scale_from(&svd.singular_values, mode)?,
        orthogonal: &svd.u * &svd.v_t,
        translation: t.translation(),
    })
}

/// Least-squares projection of `t` onto `class`. Linear and affine classes
/// return the input unchanged.
pub fn project_class(t: &Transform, class: TransformClass, mode: ScaleMode) -> Result<Transform> {
    match class {
        TransformClass::Linear | TransformClass::Affine => Ok(t.clone()),
        TransformClass::Similarity => {
            let svd = check_square_nonsingular(&t.linear_block())?;
            let s = scale_from(&svd.singular_values, mode)?;
            t.with_linear_block(&((&svd.u * &svd.v_t) * s))
        }
        TransformClass::Euclidean => {
            let svd = check_square_nonsingular(&t.linear_block())?;
            t.with_linear_block(&(&svd.u * &svd.v_t))
        }
        TransformClass::Rigid => {
            let svd = check_square_nonsingular(&t.linear_block())?;
            t.with_linear_block(&rotation_from_svd(&svd))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    dim: usize,
    kind: Kind,
    matrix: Vec<Vec<f64>>,
}

impl TryFrom<TransformRepr> for Transform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        let m = matrix_from_rows(&r.matrix)?;
        Transform::from_matrix(r.dim, r.kind, m)
    }
}

impl From<Transform> for TransformRepr {
    fn from(t: Transform) -> Self {
        TransformRepr {
            dim: t.dim,
            kind: t.kind,
            matrix: matrix_to_rows(&t.matrix),
        }
    }
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("matrix rows have unequal lengths".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}
