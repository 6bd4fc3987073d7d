//! Synchronisation of pairwise transformations.
//!
//! A set of pairwise transforms `T_ij` is transitively consistent exactly when
//! `T_ij = T_i T_j⁻¹` for some absolute transforms `T_i`. Stacking the `T_i`
//! into `U₁` gives `(W − kI) U₁ = 0`, where `W` is the block matrix of all
//! `T_ij`, so the absolute transforms span the null space of `Z = W − kI`.
//! With noise the `d` right singular vectors of the smallest singular values
//! of `Z̃` are used instead, then one block is normalised to the identity.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::{
    condition_number, matrix_from_rows, matrix_to_rows, project_class, sorted_svd, Kind,
    ScaleMode, Transform, TransformClass,
};

/// Gauge blocks worse conditioned than this are skipped in favour of the
/// best-conditioned block.
pub const GAUGE_CONDITION_LIMIT: f64 = 1e6;

/// Relative spectral gap below which a null basis is flagged as degenerate.
pub const DEGENERATE_GAP: f64 = 1e-12;

/// All `k²` pairwise transforms between `k` objects.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTransformSet {
    k: usize,
    dim: usize,
    kind: Kind,
    class: TransformClass,
    entries: Vec<Option<Transform>>,
}

impl PairwiseTransformSet {
    /// An empty set with identity diagonal.
    pub fn new(k: usize, dim: usize, kind: Kind, class: TransformClass) -> Result<Self> {
        if k == 0 || dim == 0 {
            return Err(Error::Contract("k and dim must be positive".into()));
        }
        let mut entries = vec![None; k * k];
        for i in 0..k {
            entries[i * k + i] = Some(Transform::identity(dim, kind));
        }
        Ok(Self {
            k,
            dim,
            kind,
            class,
            entries,
        })
    }

    /// The consistent set `T_ij = T_i T_j⁻¹`.
    pub fn from_absolute(absolute: &[Transform], class: TransformClass) -> Result<Self> {
        let first = absolute
            .first()
            .ok_or_else(|| Error::Contract("no absolute transforms given".into()))?;
        let mut set = Self::new(absolute.len(), first.dim(), first.kind(), class)?;
        let inverses = absolute
            .iter()
            .map(Transform::invert)
            .collect::<Result<Vec<_>>>()?;
        for (i, ti) in absolute.iter().enumerate() {
            for (j, tj_inv) in inverses.iter().enumerate() {
                if i != j {
                    set.set(i, j, ti.compose(tj_inv)?)?;
                }
            }
        }
        Ok(set)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn class(&self) -> TransformClass {
        self.class
    }

    pub fn set_class(&mut self, class: TransformClass) {
        self.class = class;
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Transform> {
        if i >= self.k || j >= self.k {
            return None;
        }
        self.entries[i * self.k + j].as_ref()
    }

    fn entry(&self, i: usize, j: usize) -> Result<&Transform> {
        self.get(i, j).ok_or(Error::IncompleteSet { i, j })
    }

    /// Stores `T_ij`. Diagonal entries stay the identity whatever is passed.
    pub fn set(&mut self, i: usize, j: usize, t: Transform) -> Result<()> {
        if i >= self.k || j >= self.k {
            return Err(Error::Contract(format!(
                "index ({i}, {j}) out of range for k = {}",
                self.k
            )));
        }
        if t.dim() != self.dim || t.kind() != self.kind {
            return Err(Error::Contract(format!(
                "entry ({i}, {j}) is a {:?} transform of dimension {}, set holds {:?} of dimension {}",
                t.kind(),
                t.dim(),
                self.kind,
                self.dim
            )));
        }
        if i != j {
            self.entries[i * self.k + j] = Some(t);
        }
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }

    fn check_complete(&self) -> Result<()> {
        for i in 0..self.k {
            for j in 0..self.k {
                self.entry(i, j)?;
            }
        }
        Ok(())
    }

    /// Iterates `(i, j, T_ij)` over present entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Transform)> {
        let k = self.k;
        self.entries
            .iter()
            .enumerate()
            .filter_map(move |(idx, t)| t.as_ref().map(|t| (idx / k, idx % k, t)))
    }

    /// Applies `f` to every off-diagonal entry.
    pub fn map_off_diagonal<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize, &Transform) -> Result<Transform>,
    {
        let mut out = self.clone();
        for i in 0..self.k {
            for j in 0..self.k {
                if i != j {
                    let t = f(i, j, self.entry(i, j)?)?;
                    out.set(i, j, t)?;
                }
            }
        }
        Ok(out)
    }
}

/// Diagnostics and basis from the SVD of `Z̃`.
#[derive(Debug, Clone)]
pub struct NullBasis {
    /// Orthonormal columns spanning the approximate null space.
    pub basis: DMatrix<f64>,
    /// The `d + 1` smallest singular values, ascending.
    pub tail_singular_values: Vec<f64>,
    /// Largest singular value of the decomposed matrix.
    pub spectral_norm: f64,
    /// The `d`-th and `(d+1)`-th smallest singular values are not separated.
    pub degenerate: bool,
}

/// Synchronised absolute transforms with their diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncResult {
    pub absolute: Vec<Transform>,
    pub tail_singular_values: Vec<f64>,
    pub gauge_block: usize,
    pub class: TransformClass,
    #[serde(default)]
    pub spectral_norm: f64,
    #[serde(default)]
    pub degenerate: bool,
}

/// `W − kI` where block `(i, j)` of `W` is `T_ij` and diagonal blocks are `I`.
pub fn build_z(set: &PairwiseTransformSet) -> Result<DMatrix<f64>> {
    if set.k < 2 {
        return Err(Error::Contract("synchronisation needs k >= 2".into()));
    }
    set.check_complete()?;
    let b = set.kind.size(set.dim);
    let k = set.k;
    let mut z = DMatrix::zeros(k * b, k * b);
    for i in 0..k {
        for j in 0..k {
            let mut block = z.view_mut((i * b, j * b), (b, b));
            if i == j {
                block.fill_with_identity();
            } else {
                block.copy_from(set.entry(i, j)?.matrix());
            }
        }
    }
    for r in 0..k * b {
        z[(r, r)] -= k as f64;
    }
    Ok(z)
}

/// Appends the row `[e e … e]` with `e = (0, …, 0, 1)`, which removes the
/// stacked homogeneous column from the null space.
pub fn append_homogeneous_row(z: &DMatrix<f64>, k: usize, d: usize) -> Result<DMatrix<f64>> {
    let b = d + 1;
    if z.ncols() != k * b {
        return Err(Error::Contract(format!(
            "matrix has {} columns, expected k(d+1) = {}",
            z.ncols(),
            k * b
        )));
    }
    let rows = z.nrows();
    let mut out = z.clone().insert_row(rows, 0.0);
    for i in 0..k {
        out[(rows, i * b + d)] = 1.0;
    }
    Ok(out)
}

/// Right singular vectors of the `d` smallest singular values of `z`.
pub fn extract_null_basis(z: &DMatrix<f64>, d: usize) -> Result<NullBasis> {
    let n = z.ncols();
    if d == 0 || n < d {
        return Err(Error::Contract(format!(
            "cannot extract {d} null directions from a matrix with {n} columns"
        )));
    }
    // a wide matrix would lose right singular vectors in the thin SVD
    let padded;
    let z = if z.nrows() < n {
        padded = z.clone().resize_vertically(n, 0.0);
        &padded
    } else {
        z
    };
    let svd = sorted_svd(z);
    let sv = &svd.singular_values;
    let basis = svd.v_t.rows(n - d, d).transpose();
    let tail: Vec<f64> = sv.iter().rev().take(d + 1).copied().collect();
    let spectral_norm = sv[0];
    let degenerate = match tail.get(d) {
        Some(next) => next - tail[d - 1] < DEGENERATE_GAP * spectral_norm,
        None => true,
    } || spectral_norm == 0.0;
    Ok(NullBasis {
        basis,
        tail_singular_values: tail,
        spectral_norm,
        degenerate,
    })
}

/// Normalises the stacked basis so one block becomes the identity and
/// splits it into absolute transforms.
pub fn fix_gauge(basis: &NullBasis, kind: Kind, k: usize, d: usize) -> Result<SyncResult> {
    let b = kind.size(d);
    let u = &basis.basis;
    if u.nrows() != k * b || u.ncols() != d {
        return Err(Error::Contract(format!(
            "basis is {}x{}, expected {}x{d}",
            u.nrows(),
            u.ncols(),
            k * b
        )));
    }
    let linear_part = |i: usize| u.view((i * b, 0), (d, d)).into_owned();

    let first_condition = condition_number(&linear_part(0));
    let (gauge_block, condition) = if first_condition <= GAUGE_CONDITION_LIMIT {
        (0, first_condition)
    } else {
        (0..k)
            .map(|i| (i, condition_number(&linear_part(i))))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("k >= 1")
    };
    if !(condition < crate::transform::MAX_CONDITION) {
        return Err(Error::Degenerate(format!(
            "every gauge block is singular (best condition {condition:e})"
        )));
    }

    let blocks: Vec<Transform> = (0..k)
        .map(|i| {
            let cols = u.view((i * b, 0), (b, d));
            let m = match kind {
                Kind::Linear => cols.into_owned(),
                Kind::Homogeneous => {
                    let mut m = DMatrix::zeros(b, b);
                    m.view_mut((0, 0), (b, d)).copy_from(&cols);
                    m[(d, d)] = 1.0;
                    m
                }
            };
            Transform::from_matrix(d, kind, m)
        })
        .collect::<Result<_>>()?;

    let gauge_inv = blocks[gauge_block].invert()?;
    let mut absolute = Vec::with_capacity(k);
    for (i, t) in blocks.iter().enumerate() {
        let a = if i == gauge_block {
            Transform::identity(d, kind)
        } else {
            t.compose(&gauge_inv)?
        };
        let c = a.condition();
        if !(c < crate::transform::MAX_CONDITION) {
            return Err(Error::Degenerate(format!(
                "absolute transform {i} is singular (condition {c:e})"
            )));
        }
        absolute.push(a);
    }

    Ok(SyncResult {
        absolute,
        tail_singular_values: basis.tail_singular_values.clone(),
        gauge_block,
        class: match kind {
            Kind::Linear => TransformClass::Linear,
            Kind::Homogeneous => TransformClass::Affine,
        },
        spectral_norm: basis.spectral_norm,
        degenerate: basis.degenerate,
    })
}

/// The consistent pairwise set `T_i T_j⁻¹` implied by a synchronisation.
pub fn reconstruct_pairwise(result: &SyncResult) -> Result<PairwiseTransformSet> {
    PairwiseTransformSet::from_absolute(&result.absolute, result.class)
}

/// Full pipeline: build `Z̃`, extract its approximate null space, fix the
/// gauge and project the absolute transforms onto `class`.
pub fn synchronise(
    set: &PairwiseTransformSet,
    class: TransformClass,
    mode: ScaleMode,
) -> Result<SyncResult> {
    let (k, d) = (set.k, set.dim);
    let mut z = build_z(set)?;
    if set.kind == Kind::Homogeneous {
        z = append_homogeneous_row(&z, k, d)?;
    }
    let basis = extract_null_basis(&z, d)?;
    let mut result = fix_gauge(&basis, set.kind, k, d)?;
    result.absolute = result
        .absolute
        .iter()
        .map(|t| project_class(t, class, mode))
        .collect::<Result<_>>()?;
    result.class = class;
    Ok(result)
}

/// Largest violation `‖T_ij T_jl − T_il‖_F` over all triples.
pub fn consistency_residual(set: &PairwiseTransformSet) -> Result<f64> {
    set.check_complete()?;
    let k = set.k;
    let mut worst: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let tij = set.entry(i, j)?.matrix();
            for l in 0..k {
                let r = (tij * set.entry(j, l)?.matrix() - set.entry(i, l)?.matrix()).norm();
                worst = worst.max(r);
            }
        }
    }
    Ok(worst)
}

#[derive(Serialize, Deserialize)]
struct EntryRepr {
    i: usize,
    j: usize,
    matrix: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct SetRepr {
    k: usize,
    dim: usize,
    kind: Kind,
    class: TransformClass,
    entries: Vec<EntryRepr>,
}

impl Serialize for PairwiseTransformSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SetRepr {
            k: self.k,
            dim: self.dim,
            kind: self.kind,
            class: self.class,
            entries: self
                .iter()
                .map(|(i, j, t)| EntryRepr {
                    i,
                    j,
                    matrix: matrix_to_rows(t.matrix()),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PairwiseTransformSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = SetRepr::deserialize(d)?;
        let mut set = PairwiseTransformSet::new(r.k, r.dim, r.kind, r.class).map_err(D::Error::custom)?;
        for e in r.entries {
            let m = matrix_from_rows(&e.matrix).map_err(D::Error::custom)?;
            let t = Transform::from_matrix(r.dim, r.kind, m).map_err(D::Error::custom)?;
            set.set(e.i, e.j, t).map_err(D::Error::custom)?;
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, DVector};

    fn scalar_set(values: &[f64]) -> PairwiseTransformSet {
        let abs: Vec<_> = values
            .iter()
            .map(|v| Transform::linear(dmatrix![*v]).unwrap())
            .collect();
        PairwiseTransformSet::from_absolute(&abs, TransformClass::Linear).unwrap()
    }

    #[test]
    fn build_z_two_scalars() {
        let z = build_z(&scalar_set(&[1.0, 2.0])).unwrap();
        assert_relative_eq!(z, dmatrix![-1.0, 0.5; 2.0, -1.0], epsilon = 1e-15);
        let v = &z * DVector::from_row_slice(&[1.0, 2.0]);
        assert_relative_eq!(v.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn build_z_identity_consensus() {
        for k in 2..5 {
            let set = PairwiseTransformSet::from_absolute(
                &vec![Transform::identity(2, Kind::Linear); k],
                TransformClass::Linear,
            )
            .unwrap();
            let z = build_z(&set).unwrap();
            let expected = DMatrix::from_fn(2 * k, 2 * k, |r, c| {
                let ones = if r % 2 == c % 2 { 1.0 } else { 0.0 };
                ones - if r == c { k as f64 } else { 0.0 }
            });
            assert_relative_eq!(z, expected);
        }
    }

    #[test]
    fn build_z_three_scalars() {
        let z = build_z(&scalar_set(&[1.0, 2.0, 4.0])).unwrap();
        let v = &z * DVector::from_row_slice(&[1.0, 2.0, 4.0]);
        assert_relative_eq!(v.norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn build_z_incomplete() {
        let mut set = PairwiseTransformSet::new(3, 1, Kind::Linear, TransformClass::Linear).unwrap();
        set.set(0, 1, Transform::linear(dmatrix![2.0]).unwrap()).unwrap();
        assert!(matches!(build_z(&set), Err(Error::IncompleteSet { .. })));
        let single = PairwiseTransformSet::new(1, 1, Kind::Linear, TransformClass::Linear).unwrap();
        assert!(matches!(build_z(&single), Err(Error::Contract(_))));
    }

    #[test]
    fn appended_row_layout() {
        let z = DMatrix::zeros(4, 4);
        let a = append_homogeneous_row(&z, 2, 1).unwrap();
        assert_eq!(a.nrows(), 5);
        assert_eq!(
            a.row(4).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 0.0, 1.0]
        );
        assert!(append_homogeneous_row(&DMatrix::zeros(3, 3), 2, 1).is_err());
    }

    #[test]
    fn appended_row_identity_null_dimension() {
        let set = PairwiseTransformSet::from_absolute(
            &vec![Transform::identity(1, Kind::Homogeneous); 2],
            TransformClass::Affine,
        )
        .unwrap();
        let z = append_homogeneous_row(&build_z(&set).unwrap(), 2, 1).unwrap();
        let sv = z.singular_values();
        let zeros = sv.iter().filter(|s| **s < 1e-12).count();
        assert_eq!(zeros, 1);
        assert_eq!(z.rank(1e-12), 3);
    }

    #[test]
    fn null_basis_three_scalars() {
        let z = build_z(&scalar_set(&[1.0, 2.0, 4.0])).unwrap();
        let nb = extract_null_basis(&z, 1).unwrap();
        let expected = DVector::from_row_slice(&[1.0, 2.0, 4.0]) / 21f64.sqrt();
        let got = nb.basis.column(0).into_owned();
        let aligned = if got[0] < 0.0 { -got } else { got };
        assert_relative_eq!(aligned, expected, epsilon = 1e-14);
        assert!(nb.tail_singular_values[0] < 1e-14);
        assert!(nb.tail_singular_values[1] > 0.1);
        assert!(!nb.degenerate);
    }

    #[test]
    fn null_basis_zero_matrix_is_flagged() {
        let nb = extract_null_basis(&DMatrix::zeros(3, 3), 1).unwrap();
        assert_relative_eq!(nb.basis.norm(), 1.0, epsilon = 1e-14);
        assert!(nb.tail_singular_values.iter().all(|s| *s == 0.0));
        assert!(nb.degenerate);
    }

    #[test]
    fn gauge_scalar_division() {
        let nb = NullBasis {
            basis: DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 4.0]),
            tail_singular_values: vec![0.0, 1.0],
            spectral_norm: 1.0,
            degenerate: false,
        };
        let r = fix_gauge(&nb, Kind::Linear, 3, 1).unwrap();
        let vals: Vec<f64> = r.absolute.iter().map(|t| t.matrix()[(0, 0)]).collect();
        assert_eq!(vals, vec![1.0, 2.0, 4.0]);
        assert_eq!(r.gauge_block, 0);
    }

    #[test]
    fn gauge_falls_back_to_conditioned_block() {
        let nb = NullBasis {
            basis: DMatrix::from_column_slice(3, 1, &[0.0, 2.0, 4.0]),
            tail_singular_values: vec![0.0, 1.0],
            spectral_norm: 1.0,
            degenerate: false,
        };
        let r = fix_gauge(&nb, Kind::Linear, 3, 1);
        // block 0 is singular, so the absolute transform for object 0 is too
        assert!(matches!(r, Err(Error::Degenerate(_))));

        let basis = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1e-7, 1.0, 0.0, 0.0, 1.0]);
        let nb = NullBasis { basis, ..nb };
        let r = fix_gauge(&nb, Kind::Linear, 2, 2).unwrap();
        assert_eq!(r.gauge_block, 1);
        assert_relative_eq!(r.absolute[1].matrix(), &DMatrix::identity(2, 2));
        assert_relative_eq!(r.absolute[0].matrix()[(1, 1)], 1e-7);
    }

    #[test]
    fn gauge_all_singular() {
        let nb = NullBasis {
            basis: DMatrix::zeros(3, 1),
            tail_singular_values: vec![0.0, 0.0],
            spectral_norm: 0.0,
            degenerate: true,
        };
        assert!(matches!(
            fix_gauge(&nb, Kind::Linear, 3, 1),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn reconstruct_scalars() {
        let abs: Vec<_> = [1.0, 2.0, 4.0]
            .iter()
            .map(|v| Transform::linear(dmatrix![*v]).unwrap())
            .collect();
        let r = SyncResult {
            absolute: abs,
            tail_singular_values: vec![],
            gauge_block: 0,
            class: TransformClass::Linear,
            spectral_norm: 0.0,
            degenerate: false,
        };
        let set = reconstruct_pairwise(&r).unwrap();
        let e = |i, j| set.get(i, j).unwrap().matrix()[(0, 0)];
        assert_relative_eq!(e(0, 1), 0.5);
        assert_relative_eq!(e(1, 2), 0.5);
        assert_relative_eq!(e(0, 2), 0.25);
        assert_relative_eq!(e(0, 1) * e(1, 2), e(0, 2));
        assert!(consistency_residual(&set).unwrap() < 1e-15);
    }

    #[test]
    fn residual_detects_perturbation() {
        let set = scalar_set(&[1.0, 2.0, 4.0]);
        let mut noisy = set.clone();
        let t = noisy.get(0, 1).unwrap().matrix()[(0, 0)] + 0.1;
        noisy.set(0, 1, Transform::linear(dmatrix![t]).unwrap()).unwrap();
        assert!(consistency_residual(&noisy).unwrap() > 0.05);

        let ident = PairwiseTransformSet::from_absolute(
            &vec![Transform::identity(2, Kind::Homogeneous); 3],
            TransformClass::Affine,
        )
        .unwrap();
        assert_eq!(consistency_residual(&ident).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_stays_identity() {
        let mut set = scalar_set(&[1.0, 3.0]);
        set.set(1, 1, Transform::linear(dmatrix![5.0]).unwrap()).unwrap();
        assert_eq!(set.get(1, 1).unwrap().matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn json_round_trip() {
        let set = scalar_set(&[1.0, 3.0, 0.7]);
        let s = serde_json::to_string(&set).unwrap();
        let back: PairwiseTransformSet = serde_json::from_str(&s).unwrap();
        assert_eq!(back, set);
    }
}
