//! Absolute orientation between two point clouds and three strategies for
//! aligning many clouds at once.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, RowDVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sync::{synchronise, PairwiseTransformSet};
use crate::transform::{polar_factor, rotation_factor, Kind, ScaleMode, Transform, TransformClass};

/// `n` landmarks in `d` dimensions, one per row, with a presence mask.
///
/// Coordinates of absent rows are carried along but never read.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: DMatrix<f64>,
    present: Vec<bool>,
}

impl PointCloud {
    pub fn new(points: DMatrix<f64>, present: Vec<bool>) -> Result<Self> {
        if present.len() != points.nrows() {
            return Err(Error::Contract(format!(
                "mask has {} entries for {} points",
                present.len(),
                points.nrows()
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::Contract("points need at least one coordinate".into()));
        }
        for (r, &p) in present.iter().enumerate() {
            if p && points.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract(format!("point {r} has non-finite coordinates")));
            }
        }
        Ok(Self { points, present })
    }

    /// A cloud with every point present.
    pub fn full(points: DMatrix<f64>) -> Result<Self> {
        let n = points.nrows();
        Self::new(points, vec![true; n])
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn is_present(&self, i: usize) -> bool {
        self.present[i]
    }

    pub fn present_count(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    pub fn is_full(&self) -> bool {
        self.present.iter().all(|p| *p)
    }

    /// Same coordinates with a different mask.
    pub fn with_mask(&self, present: Vec<bool>) -> Result<Self> {
        Self::new(self.points.clone(), present)
    }

    /// Same mask with rows reordered: row `r` of the result is row `order[r]`.
    pub fn permuted_rows(&self, order: &[usize]) -> Self {
        let points = DMatrix::from_fn(self.n(), self.dim(), |r, c| self.points[(order[r], c)]);
        let present = order.iter().map(|&r| self.present[r]).collect();
        Self { points, present }
    }
}

/// Maps every present row by `x · A + t`; the mask is unchanged.
pub fn apply(t: &Transform, x: &PointCloud) -> Result<PointCloud> {
    if t.dim() != x.dim() {
        return Err(Error::Contract(format!(
            "transform of dimension {} applied to {}-dimensional points",
            t.dim(),
            x.dim()
        )));
    }
    let a = t.linear_block();
    let tr = t.translation();
    let d = x.dim();
    let mut points = x.points.clone();
    for r in 0..x.n() {
        if x.present[r] {
            for c in 0..d {
                let mut v = tr[c];
                for l in 0..d {
                    v += x.points[(r, l)] * a[(l, c)];
                }
                points[(r, c)] = v;
            }
        }
    }
    Ok(PointCloud {
        points,
        present: x.present.clone(),
    })
}

/// Closed-form similarity, euclidean or rigid transform `T` with
/// `x · T ≈ y` over the points present in both clouds.
///
/// The orthogonal part is the polar factor of the centred cross-covariance
/// `X_cᵀ Y_c` and the scale is the symmetric estimate
/// `√(Σ‖y_c‖² / Σ‖x_c‖²)`, so swapping the clouds inverts the scale.
pub fn solve_aop(x: &PointCloud, y: &PointCloud, class: TransformClass) -> Result<Transform> {
    let d = x.dim();
    if y.dim() != d || y.n() != x.n() {
        return Err(Error::Contract(format!(
            "clouds of shape {}x{} and {}x{} cannot be aligned",
            x.n(),
            d,
            y.n(),
            y.dim()
        )));
    }
    if !matches!(
        class,
        TransformClass::Similarity | TransformClass::Euclidean | TransformClass::Rigid
    ) {
        return Err(Error::Contract(format!(
            "absolute orientation supports similarity, euclidean and rigid classes, not {class}"
        )));
    }
    let common: Vec<usize> = (0..x.n()).filter(|&r| x.present[r] && y.present[r]).collect();
    if common.len() < d || common.is_empty() {
        return Err(Error::UnderDetermined {
            pair: None,
            common: common.len(),
            needed: d.max(1),
        });
    }

    let m = common.len() as f64;
    let (xp, yp) = (&x.points, &y.points);
    let mut cx = RowDVector::zeros(d);
    let mut cy = RowDVector::zeros(d);
    for &r in &common {
        for c in 0..d {
            cx[c] += xp[(r, c)];
            cy[c] += yp[(r, c)];
        }
    }
    cx /= m;
    cy /= m;

    let mut cov = DMatrix::zeros(d, d);
    let (mut sxx, mut syy) = (0.0, 0.0);
    let (mut mag_x, mut mag_y) = (0.0, 0.0);
    for &r in &common {
        for a in 0..d {
            let xa = xp[(r, a)] - cx[a];
            let ya = yp[(r, a)] - cy[a];
            sxx += xa * xa;
            syy += ya * ya;
            mag_x += xp[(r, a)] * xp[(r, a)];
            mag_y += yp[(r, a)] * yp[(r, a)];
            for b in 0..d {
                cov[(a, b)] += xa * (yp[(r, b)] - cy[b]);
            }
        }
    }
    let spread_floor = |mag: f64| 1e-24 * (1.0 + mag);
    if sxx <= spread_floor(mag_x) || syy <= spread_floor(mag_y) {
        return Err(Error::DegenerateCloud(
            "all common points coincide".into(),
        ));
    }

    let q = match class {
        TransformClass::Rigid => rotation_factor(&cov),
        _ => polar_factor(&cov),
    };
    let s = match class {
        TransformClass::Similarity => (syy / sxx).sqrt(),
        _ => 1.0,
    };
    let a = q * s;
    let t = cy - cx * &a;
    Transform::homogeneous(&a, &t)
}

/// Mean pairwise Frobenius distance `(1/k²) Σ_{i,j} ‖X_i − X_j‖_F` over
/// complete clouds.
pub fn shape_error(aligned: &[PointCloud]) -> Result<f64> {
    let first = aligned
        .first()
        .ok_or_else(|| Error::Contract("shape error of an empty set".into()))?;
    for (i, c) in aligned.iter().enumerate() {
        if !c.is_full() {
            return Err(Error::Contract(format!(
                "shape {i} has missing points; the error is defined on complete shapes"
            )));
        }
        if c.n() != first.n() || c.dim() != first.dim() {
            return Err(Error::Contract(format!("shape {i} differs in size")));
        }
    }
    let k = aligned.len();
    let mut total = 0.0;
    for a in aligned {
        for b in aligned {
            total += (&a.points - &b.points).norm();
        }
    }
    Ok(total / (k * k) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GpaMethod {
    #[serde(rename = "reference")]
    Reference,
    #[serde(rename = "itermean")]
    IterativeMean,
    #[serde(rename = "sync")]
    Sync,
}

impl GpaMethod {
    pub const ALL: [GpaMethod; 3] = [GpaMethod::Reference, GpaMethod::IterativeMean, GpaMethod::Sync];

    pub fn as_str(self) -> &'static str {
        match self {
            GpaMethod::Reference => "reference",
            GpaMethod::IterativeMean => "itermean",
            GpaMethod::Sync => "sync",
        }
    }
}

impl fmt::Display for GpaMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GpaMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reference" | "ref" => Ok(GpaMethod::Reference),
            "itermean" | "iterative-mean" | "iterative_mean" => Ok(GpaMethod::IterativeMean),
            "sync" => Ok(GpaMethod::Sync),
            other => Err(Error::Parse(format!("unknown GPA method '{other}'"))),
        }
    }
}

/// Result of a multi-shape alignment.
#[derive(Debug, Clone)]
pub struct GpaOutcome {
    pub aligned: Vec<PointCloud>,
    pub transforms: Vec<Transform>,
    pub method: GpaMethod,
    /// Shape error of `aligned`; `None` when some shape has missing points.
    pub error: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius change of the mean shape per iteration (iterative mean only).
    pub mean_changes: Vec<f64>,
}

fn check_shapes(shapes: &[PointCloud]) -> Result<()> {
    let first = shapes
        .first()
        .ok_or_else(|| Error::Contract("no shapes given".into()))?;
    if shapes.len() < 2 {
        return Err(Error::Contract("alignment needs at least two shapes".into()));
    }
    if shapes
        .iter()
        .any(|s| s.n() != first.n() || s.dim() != first.dim())
    {
        return Err(Error::Contract("shapes differ in point count or dimension".into()));
    }
    Ok(())
}

fn finish(
    shapes: &[PointCloud],
    transforms: Vec<Transform>,
    method: GpaMethod,
    iterations: usize,
    converged: bool,
    mean_changes: Vec<f64>,
) -> Result<GpaOutcome> {
    let aligned = shapes
        .iter()
        .zip(&transforms)
        .map(|(s, t)| apply(t, s))
        .collect::<Result<Vec<_>>>()?;
    let error = if aligned.iter().all(PointCloud::is_full) {
        Some(shape_error(&aligned)?)
    } else {
        None
    };
    Ok(GpaOutcome {
        aligned,
        transforms,
        method,
        error,
        iterations,
        converged,
        mean_changes,
    })
}

/// Aligns every shape with `shapes[reference]`.
pub fn gpa_reference(
    shapes: &[PointCloud],
    reference: usize,
    class: TransformClass,
) -> Result<GpaOutcome> {
    check_shapes(shapes)?;
    if reference >= shapes.len() {
        return Err(Error::Contract(format!("reference index {reference} out of range")));
    }
    gpa_reference_with(shapes, reference, |i, j| solve_aop(&shapes[i], &shapes[j], class))
}

/// Reference alignment where the transform of shape `i` onto the reference
/// `r` comes from `pairwise(i, r)`.
pub fn gpa_reference_with<F>(shapes: &[PointCloud], reference: usize, pairwise: F) -> Result<GpaOutcome>
where
    F: Fn(usize, usize) -> Result<Transform>,
{
    check_shapes(shapes)?;
    if reference >= shapes.len() {
        return Err(Error::Contract(format!("reference index {reference} out of range")));
    }
    let d = shapes[0].dim();
    let transforms = (0..shapes.len())
        .map(|i| {
            if i == reference {
                Ok(Transform::identity(d, Kind::Homogeneous))
            } else {
                pairwise(i, reference).map_err(|e| e.with_pair(i, reference))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    finish(shapes, transforms, GpaMethod::Reference, 1, true, Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeMeanOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IterativeMeanOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

fn centred_norm(c: &PointCloud) -> f64 {
    let rows: Vec<usize> = (0..c.n()).filter(|&r| c.present[r]).collect();
    if rows.is_empty() {
        return 0.0;
    }
    let mut centroid = RowDVector::zeros(c.dim());
    for &r in &rows {
        centroid += c.points.row(r);
    }
    centroid /= rows.len() as f64;
    rows.iter()
        .map(|&r| (c.points.row(r) - &centroid).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Per-landmark average over the clouds in which the landmark is present.
pub fn mean_shape(clouds: &[PointCloud]) -> Result<PointCloud> {
    let first = clouds
        .first()
        .ok_or_else(|| Error::Contract("mean of an empty set".into()))?;
    let (n, d) = (first.n(), first.dim());
    let mut sum = DMatrix::zeros(n, d);
    let mut count = vec![0usize; n];
    for c in clouds {
        for r in 0..n {
            if c.present[r] {
                let mut row = sum.row_mut(r);
                row += c.points.row(r);
                count[r] += 1;
            }
        }
    }
    for (r, &cnt) in count.iter().enumerate() {
        if cnt == 0 {
            return Err(Error::UncoveredLandmark(r));
        }
        let mut row = sum.row_mut(r);
        row /= cnt as f64;
    }
    PointCloud::full(sum)
}

/// Alternates between aligning all shapes with the current mean and
/// recomputing the mean, starting from a randomly chosen shape.
///
/// After each update the mean is rescaled about its centroid to the centred
/// norm of the starting shape so similarity alignment cannot shrink it.
pub fn gpa_iterative_mean<R: Rng + ?Sized>(
    shapes: &[PointCloud],
    class: TransformClass,
    options: IterativeMeanOptions,
    rng: &mut R,
) -> Result<GpaOutcome> {
    check_shapes(shapes)?;
    let reference = rng.random_range(0..shapes.len());
    let target_norm = centred_norm(&shapes[reference]);
    let mut mean = shapes[reference].clone();
    let mut changes = Vec::new();
    let mut transforms = Vec::new();
    let mut converged = false;

    for _ in 0..options.max_iter.max(1) {
        transforms = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| solve_aop(s, &mean, class).map_err(|e| e.with_pair(i, reference)))
            .collect::<Result<Vec<_>>>()?;
        let aligned = shapes
            .iter()
            .zip(&transforms)
            .map(|(s, t)| apply(t, s))
            .collect::<Result<Vec<_>>>()?;
        let mut next = mean_shape(&aligned)?;
        let norm = centred_norm(&next);
        if norm > 0.0 {
            let centroid = RowDVector::from_iterator(
                next.dim(),
                next.points.column_iter().map(|c| c.mean()),
            );
            let factor = target_norm / norm;
            for mut row in next.points.row_iter_mut() {
                let scaled = (&row - &centroid) * factor + &centroid;
                row.copy_from(&scaled);
            }
        }
        let change = (0..mean.n())
            .filter(|&r| mean.present[r])
            .map(|r| (next.points.row(r) - mean.points.row(r)).norm_squared())
            .sum::<f64>()
            .sqrt();
        changes.push(change);
        mean = next;
        if change < options.tol {
            converged = true;
            break;
        }
    }
    let iterations = changes.len();
    finish(
        shapes,
        transforms,
        GpaMethod::IterativeMean,
        iterations,
        converged,
        changes,
    )
}

/// Solves all `k²` pairwise alignments, synchronises them and maps every
/// shape into the frame of shape 0.
pub fn gpa_sync(shapes: &[PointCloud], class: TransformClass) -> Result<GpaOutcome> {
    gpa_sync_with(shapes, class, ScaleMode::Geometric, |i, j| {
        solve_aop(&shapes[i], &shapes[j], class)
    })
}

/// Synchronisation-based alignment where the pairwise transform `(i, j)`
/// (mapping shape `i` onto shape `j`) comes from `pairwise`.
pub fn gpa_sync_with<F>(
    shapes: &[PointCloud],
    class: TransformClass,
    mode: ScaleMode,
    pairwise: F,
) -> Result<GpaOutcome>
where
    F: Fn(usize, usize) -> Result<Transform> + Sync,
{
    check_shapes(shapes)?;
    let k = shapes.len();
    let d = shapes[0].dim();
    let solved: Vec<(usize, usize, Transform)> = (0..k * k)
        .into_par_iter()
        .filter(|idx| idx / k != idx % k)
        .map(|idx| {
            let (i, j) = (idx / k, idx % k);
            pairwise(i, j)
                .map(|t| (i, j, t))
                .map_err(|e| e.with_pair(i, j))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut set = PairwiseTransformSet::new(k, d, Kind::Homogeneous, class)?;
    for (i, j, t) in solved {
        set.set(i, j, t)?;
    }
    let result = synchronise(&set, class, mode)?;
    finish(shapes, result.absolute, GpaMethod::Sync, 1, true, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
        PointCloud::full(DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(rng))).unwrap()
    }

    fn similarity(deg: f64, s: f64, t: [f64; 2]) -> Transform {
        let (sn, c) = deg.to_radians().sin_cos();
        Transform::homogeneous(&(dmatrix![c, sn; -sn, c] * s), &RowDVector::from_row_slice(&t))
            .unwrap()
    }

    #[test]
    fn aop_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 10, 2);
        for class in [TransformClass::Similarity, TransformClass::Euclidean, TransformClass::Rigid] {
            let t = solve_aop(&x, &x, class).unwrap();
            assert_relative_eq!(t.matrix(), &DMatrix::identity(3, 3), epsilon = 1e-12);
        }
    }

    #[test]
    fn aop_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_cloud(&mut rng, 10, 2);
        let t0 = similarity(71.0, 1.8, [0.4, -3.0]);
        let y = apply(&t0, &x).unwrap();
        let t = solve_aop(&x, &y, TransformClass::Similarity).unwrap();
        let mapped = apply(&t, &x).unwrap();
        assert!((mapped.points() - y.points()).norm() < 1e-9);
    }

    #[test]
    fn aop_masked_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_cloud(&mut rng, 10, 2);
        let t0 = similarity(-120.0, 0.6, [2.0, 1.0]);
        let y = apply(&t0, &x).unwrap();
        let mut mx = vec![true; 10];
        let mut my = vec![true; 10];
        for r in [0, 1, 2] {
            mx[r] = false;
        }
        for r in [7, 8] {
            my[r] = false;
        }
        // scramble the hidden rows so only the 5 common points carry signal
        let mut xp = x.points().clone();
        let mut yp = y.points().clone();
        for r in [0, 1, 2] {
            xp.row_mut(r).fill(1e6);
        }
        for r in [7, 8] {
            yp.row_mut(r).fill(-3e5);
        }
        let xm = PointCloud::new(xp, mx.clone()).unwrap();
        let ym = PointCloud::new(yp, my).unwrap();
        let t = solve_aop(&xm, &ym, TransformClass::Similarity).unwrap();
        for r in [3, 4, 5, 6, 9] {
            let p = t.apply_point(&x.points().row(r).into_owned());
            assert!((p - y.points().row(r)).norm() < 1e-9);
        }
    }

    #[test]
    fn aop_underdetermined_and_degenerate() {
        let x = PointCloud::new(dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0], vec![true, false, false])
            .unwrap();
        assert!(matches!(
            solve_aop(&x, &x, TransformClass::Similarity),
            Err(Error::UnderDetermined { common: 1, needed: 2, .. })
        ));
        let same = PointCloud::full(dmatrix![1.0, 1.0; 1.0, 1.0; 1.0, 1.0]).unwrap();
        assert!(matches!(
            solve_aop(&same, &same, TransformClass::Rigid),
            Err(Error::DegenerateCloud(_))
        ));
        let y = PointCloud::full(dmatrix![0.0, 0.0; 1.0, 0.0; 0.0, 1.0]).unwrap();
        assert!(matches!(
            solve_aop(&y, &y, TransformClass::Affine),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn aop_symmetric_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_cloud(&mut rng, 12, 3);
        let y = random_cloud(&mut rng, 12, 3);
        let s_xy = crate::transform::decompose_similarity(&solve_aop(&x, &y, TransformClass::Similarity).unwrap())
            .unwrap()
            .scale;
        let s_yx = crate::transform::decompose_similarity(&solve_aop(&y, &x, TransformClass::Similarity).unwrap())
            .unwrap()
            .scale;
        assert_relative_eq!(s_xy * s_yx, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn apply_examples() {
        let x = PointCloud::full(dmatrix![0.0, 0.0]).unwrap();
        let t = Transform::homogeneous(&DMatrix::identity(2, 2), &RowDVector::from_row_slice(&[1.0, 0.0]))
            .unwrap();
        assert_eq!(apply(&t, &x).unwrap().points(), &dmatrix![1.0, 0.0]);
        assert_eq!(apply(&Transform::identity(2, Kind::Homogeneous), &x).unwrap(), x);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_cloud(&mut rng, 8, 2);
        let t = similarity(33.0, 2.5, [-1.0, 4.0]);
        let back = apply(&t.invert().unwrap(), &apply(&t, &y).unwrap()).unwrap();
        assert!((back.points() - y.points()).norm() < 1e-10);
        assert!(apply(&Transform::identity(3, Kind::Homogeneous), &y).is_err());
    }

    #[test]
    fn shape_error_examples() {
        let a = PointCloud::full(dmatrix![0.0, 0.0; 0.0, 0.0]).unwrap();
        let b = PointCloud::full(dmatrix![4.0, 0.0; 0.0, 0.0]).unwrap();
        assert_eq!(shape_error(&[a.clone(), a.clone()]).unwrap(), 0.0);
        assert_relative_eq!(shape_error(&[a.clone(), b.clone()]).unwrap(), 2.0);
        assert_relative_eq!(
            shape_error(&[a.clone(), b.clone(), a.clone()]).unwrap(),
            shape_error(&[b.clone(), a.clone(), a.clone()]).unwrap()
        );
        let masked = a.with_mask(vec![true, false]).unwrap();
        assert!(shape_error(&[a, masked]).is_err());
    }

    fn copies(seed: u64, k: usize) -> (PointCloud, Vec<PointCloud>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_cloud(&mut rng, 15, 2);
        let shapes = (0..k)
            .map(|i| {
                let t = similarity(17.0 * i as f64, 0.5 + 0.2 * i as f64, [i as f64, -0.5 * i as f64]);
                apply(&t, &base).unwrap()
            })
            .collect();
        (base, shapes)
    }

    #[test]
    fn identical_shapes_all_methods() {
        let (base, _) = copies(6, 1);
        let shapes = vec![base; 4];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = gpa_reference(&shapes, 1, TransformClass::Similarity).unwrap();
        let m = gpa_iterative_mean(&shapes, TransformClass::Similarity, Default::default(), &mut rng)
            .unwrap();
        let s = gpa_sync(&shapes, TransformClass::Similarity).unwrap();
        for o in [&r, &m, &s] {
            assert!(o.error.unwrap() <= 1e-12, "{:?}: {:?}", o.method, o.error);
        }
        assert_eq!(m.iterations, 1);
        assert!(m.converged);
    }

    #[test]
    fn reference_on_exact_copies() {
        let (_, shapes) = copies(7, 5);
        let r = gpa_reference(&shapes, 2, TransformClass::Similarity).unwrap();
        for a in &r.aligned {
            assert!((a.points() - shapes[2].points()).norm() < 1e-8);
        }
        assert_eq!(r.transforms[2], Transform::identity(2, Kind::Homogeneous));
    }

    #[test]
    fn reference_with_two_shapes_is_one_aop() {
        let (_, shapes) = copies(8, 2);
        let r = gpa_reference(&shapes, 1, TransformClass::Euclidean).unwrap();
        let t = solve_aop(&shapes[0], &shapes[1], TransformClass::Euclidean).unwrap();
        assert_eq!(r.transforms[0], t);
    }

    #[test]
    fn reference_reports_failing_pair() {
        let (_, mut shapes) = copies(9, 3);
        let mut mask = vec![false; 15];
        mask[0] = true;
        shapes[2] = shapes[2].with_mask(mask).unwrap();
        match gpa_reference(&shapes, 0, TransformClass::Similarity) {
            Err(Error::UnderDetermined { pair: Some((2, 0)), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn all_methods_on_exact_copies() {
        let (_, shapes) = copies(10, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = gpa_reference(&shapes, 0, TransformClass::Similarity).unwrap();
        let m = gpa_iterative_mean(&shapes, TransformClass::Similarity, Default::default(), &mut rng)
            .unwrap();
        let s = gpa_sync(&shapes, TransformClass::Similarity).unwrap();
        assert!(r.error.unwrap() < 1e-6);
        assert!(m.error.unwrap() < 1e-6);
        assert!(s.error.unwrap() < 1e-6);
        // gauge to shape 0 makes sync and reference land in the same frame
        for (a, b) in s.aligned.iter().zip(&r.aligned) {
            assert!((a.points() - b.points()).norm() < 1e-8);
        }
        assert!((s.error.unwrap() - r.error.unwrap()).abs() < 1e-8);
    }

    #[test]
    fn iterative_mean_trace_non_increasing() {
        let (_, shapes) = copies(11, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noisy: Vec<PointCloud> = shapes
            .iter()
            .map(|s| {
                let jitter = DMatrix::from_fn(s.n(), 2, |_, _| 0.05 * { let v: f64 = StandardNormal.sample(&mut rng); v });
                PointCloud::full(s.points() + jitter).unwrap()
            })
            .collect();
        let m = gpa_iterative_mean(&noisy, TransformClass::Similarity, Default::default(), &mut rng)
            .unwrap();
        assert!(m.converged);
        for w in m.mean_changes.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "{:?}", m.mean_changes);
        }
    }

    #[test]
    fn mean_shape_uncovered_landmark() {
        let a = PointCloud::new(dmatrix![0.0, 0.0; 1.0, 1.0], vec![true, false]).unwrap();
        assert!(matches!(mean_shape(&[a.clone(), a]), Err(Error::UncoveredLandmark(1))));
    }
}
