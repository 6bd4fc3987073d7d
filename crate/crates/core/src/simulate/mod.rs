//! Ground-truth generators, corruption models and error metrics for
//! simulation studies.

mod experiment;

pub use experiment::{
    run_experiment, run_gpp_experiment, run_noise_experiment, ClassSelection, ExperimentConfig,
    ExperimentKind, GridAxis, ResultRow, ShapeSource, Trials, DEFAULT_SEED,
};

use nalgebra::{DMatrix, RowDVector};
use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::procrustes::PointCloud;
use crate::sync::PairwiseTransformSet;
use crate::transform::{
    condition_number, project_class, project_orthogonal, ScaleMode, Transform,
    TransformClass,
};

/// Sampled transforms with a worse condition number are redrawn.
pub const MAX_SAMPLE_CONDITION: f64 = 1e6;
const MAX_RESAMPLES: usize = 1000;

/// Default number of redraws for the missing-point protocol.
pub const DROP_POINTS_ATTEMPTS: usize = 1000;

/// Largest missing-point probability the protocol supports.
pub const MAX_ETA: f64 = 0.7;

/// Deterministic generator for one trial, derived from a root seed and a
/// path of trial indices.
pub fn trial_rng(root: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(root);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    ChaCha8Rng::seed_from_u64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Support of the uniform translation distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslationRange {
    /// `U(−2.5, 2.5)^d`.
    #[default]
    Wide,
    /// `U(0.5, 1.5)^d`.
    Narrow,
}

impl TranslationRange {
    fn bounds(self) -> (f64, f64) {
        match self {
            TranslationRange::Wide => (-2.5, 2.5),
            TranslationRange::Narrow => (0.5, 1.5),
        }
    }
}

/// Consistent pairwise transforms generated from random absolute ones.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub absolute: Vec<Transform>,
    pub pairwise: PairwiseTransformSet,
    pub class: TransformClass,
    pub seed: Option<u64>,
}

impl GroundTruth {
    /// Draws a ground truth from a fresh generator seeded with `seed`.
    pub fn from_seed(k: usize, d: usize, class: TransformClass, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gt = gen_ground_truth(k, d, class, &mut rng)?;
        gt.seed = Some(seed);
        Ok(gt)
    }
}

/// Additive noise, missing-point and wrong-correspondence levels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub eta: f64,
    pub nu: f64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Contract(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(0.0..=MAX_ETA).contains(&self.eta) {
            return Err(Error::Contract(format!(
                "eta must lie in [0, {MAX_ETA}], got {}",
                self.eta
            )));
        }
        if !(0.0..=1.0).contains(&self.nu) {
            return Err(Error::Contract(format!("nu must lie in [0, 1], got {}", self.nu)));
        }
        Ok(())
    }
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Nearest orthogonal matrix to a well-conditioned Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    for _ in 0..MAX_RESAMPLES {
        let m = normal_matrix(d, d, rng);
        if condition_number(&m) < MAX_SAMPLE_CONDITION {
            return project_orthogonal(&m);
        }
    }
    Err(Error::Degenerate("could not draw a nonsingular random matrix".into()))
}

fn sample_absolute<R: Rng + ?Sized>(
    d: usize,
    class: TransformClass,
    range: TranslationRange,
    rng: &mut R,
) -> Result<Transform> {
    let scale = match class {
        TransformClass::Euclidean | TransformClass::Rigid => 1.0,
        _ => rng.random_range(0.5..1.5),
    };
    let mut q = random_orthogonal(d, rng)?;
    if class == TransformClass::Rigid {
        let t = Transform::linear(q)?;
        q = project_class(&t, TransformClass::Rigid, ScaleMode::Geometric)?.into_matrix();
    }
    let n = match class {
        TransformClass::Linear | TransformClass::Affine => {
            let eps = Normal::new(0.0, 0.1).expect("valid normal");
            DMatrix::identity(d, d) + DMatrix::from_fn(d, d, |_, _| eps.sample(rng))
        }
        _ => DMatrix::identity(d, d),
    };
    let a = q * n * scale;
    match class {
        TransformClass::Linear => Transform::linear(a),
        _ => {
            let (lo, hi) = range.bounds();
            let t = RowDVector::from_fn(d, |_, _| rng.random_range(lo..hi));
            Transform::homogeneous(&a, &t)
        }
    }
}

/// Random absolute transforms of `class` and the consistent set they induce.
pub fn gen_ground_truth<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    class: TransformClass,
    rng: &mut R,
) -> Result<GroundTruth> {
    gen_ground_truth_with(k, d, class, TranslationRange::default(), rng)
}

pub fn gen_ground_truth_with<R: Rng + ?Sized>(
    k: usize,
    d: usize,
    class: TransformClass,
    range: TranslationRange,
    rng: &mut R,
) -> Result<GroundTruth> {
    if k < 2 || d < 1 {
        return Err(Error::Contract(format!("need k >= 2 and d >= 1, got k = {k}, d = {d}")));
    }
    let mut absolute = Vec::with_capacity(k);
    for _ in 0..k {
        let mut attempt = 0;
        let t = loop {
            let t = sample_absolute(d, class, range, rng)?;
            if t.condition() < MAX_SAMPLE_CONDITION {
                break t;
            }
            attempt += 1;
            if attempt >= MAX_RESAMPLES {
                return Err(Error::Degenerate(
                    "could not draw a well-conditioned transform".into(),
                ));
            }
        };
        absolute.push(t);
    }
    let pairwise = PairwiseTransformSet::from_absolute(&absolute, class)?;
    Ok(GroundTruth {
        absolute,
        pairwise,
        class,
        seed: None,
    })
}

/// Adds independent `N(0, σ²)` noise to every element of every off-diagonal
/// transform. Homogeneous last columns are left untouched.
pub fn add_gaussian_noise<R: Rng + ?Sized>(
    set: &PairwiseTransformSet,
    sigma: f64,
    rng: &mut R,
) -> Result<PairwiseTransformSet> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Contract(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(set.clone());
    }
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    let d = set.dim();
    set.map_off_diagonal(|_, _, t| {
        let mut m = t.matrix().clone();
        let cols = d;
        let rows = m.nrows();
        for c in 0..cols {
            for r in 0..rows {
                m[(r, c)] += noise.sample(rng);
            }
        }
        Transform::from_matrix(d, t.kind(), m)
    })
}

/// Mean Frobenius distance `(1/k²) Σ_{i,j} ‖T¹_ij − T²_ij‖_F`.
pub fn transform_error(a: &PairwiseTransformSet, b: &PairwiseTransformSet) -> Result<f64> {
    if a.k() != b.k() || a.dim() != b.dim() || a.kind() != b.kind() {
        return Err(Error::Contract(format!(
            "cannot compare sets (k={}, d={}, {:?}) and (k={}, d={}, {:?})",
            a.k(),
            a.dim(),
            a.kind(),
            b.k(),
            b.dim(),
            b.kind()
        )));
    }
    let k = a.k();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            let (ta, tb) = match (a.get(i, j), b.get(i, j)) {
                (Some(ta), Some(tb)) => (ta, tb),
                _ => return Err(Error::IncompleteSet { i, j }),
            };
            total += ta.distance(tb)?;
        }
    }
    Ok(total / (k * k) as f64)
}

fn min_common(shapes: &[PointCloud]) -> usize {
    let mut worst = usize::MAX;
    for (i, a) in shapes.iter().enumerate() {
        for b in &shapes[i + 1..] {
            let c = a
                .present()
                .iter()
                .zip(b.present())
                .filter(|(p, q)| **p && **q)
                .count();
            worst = worst.min(c);
        }
    }
    if shapes.len() == 1 {
        worst = shapes[0].present_count();
    }
    worst
}

/// Marks each point of each shape missing with probability `eta`, redrawing
/// the whole pattern while some pair of shapes shares fewer than `d` points.
pub fn drop_points<R: Rng + ?Sized>(
    shapes: &[PointCloud],
    eta: f64,
    rng: &mut R,
) -> Result<Vec<PointCloud>> {
    drop_points_with(shapes, eta, DROP_POINTS_ATTEMPTS, rng)
}

pub fn drop_points_with<R: Rng + ?Sized>(
    shapes: &[PointCloud],
    eta: f64,
    max_attempts: usize,
    rng: &mut R,
) -> Result<Vec<PointCloud>> {
    if !(0.0..=MAX_ETA).contains(&eta) {
        return Err(Error::Contract(format!("eta must lie in [0, {MAX_ETA}], got {eta}")));
    }
    let Some(first) = shapes.first() else {
        return Ok(Vec::new());
    };
    let d = first.dim();
    for _ in 0..max_attempts {
        let dropped = shapes
            .iter()
            .map(|s| {
                let mask = (0..s.n()).map(|_| !rng.random_bool(eta)).collect();
                s.with_mask(mask)
            })
            .collect::<Result<Vec<_>>>()?;
        if min_common(&dropped) >= d {
            return Ok(dropped);
        }
    }
    Err(Error::InfeasibleEta {
        eta,
        attempts: max_attempts,
    })
}

/// Number of rows a proportion `nu` of `n` selects, rounding half away
/// from zero.
pub fn scramble_count(n: usize, nu: f64) -> usize {
    ((nu * n as f64).round() as usize).min(n)
}

/// Picks `round(ν n)` rows and randomly reorders them in `y`; `x` is
/// returned as is.
pub fn scramble_correspondences<R: Rng + ?Sized>(
    x: &PointCloud,
    y: &PointCloud,
    nu: f64,
    rng: &mut R,
) -> Result<(PointCloud, PointCloud)> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::Contract(format!("nu must lie in [0, 1], got {nu}")));
    }
    if !x.is_full() || !y.is_full() {
        return Err(Error::Contract("correspondence scrambling needs full masks".into()));
    }
    let n = y.n();
    let m = scramble_count(n, nu);
    let selected = index::sample(rng, n, m).into_vec();
    let mut shuffled = selected.clone();
    shuffled.shuffle(rng);
    let mut order: Vec<usize> = (0..n).collect();
    for (&dst, &src) in selected.iter().zip(&shuffled) {
        order[dst] = src;
    }
    Ok((x.clone(), y.permuted_rows(&order)))
}

/// Closed outline with `n` landmarks: a lopsided 2-D contour, extended with
/// smooth extra coordinates for `d > 2`.
pub fn template_shape(n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |i, c| {
        let th = std::f64::consts::TAU * i as f64 / n as f64;
        match c {
            0 => th.cos() + 0.25 * (2.0 * th).cos(),
            1 => 0.55 * th.sin() - 0.15 * (2.0 * th).sin() + 0.1 * (3.0 * th).sin(),
            _ => 0.3 * ((c as f64) * th + c as f64).sin(),
        }
    })
}

/// Warp amplitude per unit of `deform_level`, relative to a unit-size template.
pub const DEFORM_UNIT: f64 = 0.03;
const WARP_TERMS: usize = 3;

/// `count` deformed, jittered copies of [`template_shape`]. Row order gives
/// the correspondences.
pub fn gen_shapes<R: Rng + ?Sized>(
    count: usize,
    n: usize,
    d: usize,
    deform_level: f64,
    noise_level: f64,
    rng: &mut R,
) -> Result<Vec<PointCloud>> {
    if count < 1 || d < 1 || n < d {
        return Err(Error::Contract(format!(
            "need count >= 1 and n >= d >= 1, got count = {count}, n = {n}, d = {d}"
        )));
    }
    if !(deform_level >= 0.0) || !(noise_level >= 0.0) {
        return Err(Error::Contract("deformation and noise levels must be >= 0".into()));
    }
    let template = template_shape(n, d);
    let jitter = Normal::new(0.0, noise_level).expect("valid noise level");
    let amp = DEFORM_UNIT * deform_level;
    (0..count)
        .map(|_| {
            // smooth warp: a few random low-frequency plane waves per axis
            let freqs: Vec<RowDVector<f64>> = (0..WARP_TERMS)
                .map(|_| RowDVector::from_fn(d, |_, _| StandardNormal.sample(rng)) * 1.5)
                .collect();
            let weights = normal_matrix(d, WARP_TERMS, rng);
            let phases = DMatrix::from_fn(d, WARP_TERMS, |_, _| {
                rng.random_range(0.0..std::f64::consts::TAU)
            });
            let mut pts = template.clone();
            for r in 0..n {
                let p = template.row(r);
                for c in 0..d {
                    let mut disp = 0.0;
                    for (m, w) in freqs.iter().enumerate() {
                        disp += weights[(c, m)] * (p.dot(w) + phases[(c, m)]).sin();
                    }
                    pts[(r, c)] += amp * disp / (WARP_TERMS as f64).sqrt();
                }
            }
            if noise_level > 0.0 {
                for v in pts.iter_mut() {
                    *v += jitter.sample(rng);
                }
            }
            PointCloud::full(pts)
        })
        .collect()
}
