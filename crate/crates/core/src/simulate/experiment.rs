//! Config-driven experiment sweeps producing tables of mean errors.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    add_gaussian_noise, drop_points, gen_ground_truth_with, gen_shapes, scramble_correspondences,
    transform_error, trial_rng, TranslationRange, MAX_ETA,
};
use crate::error::{Error, Result};
use crate::procrustes::{
    apply, gpa_iterative_mean, gpa_reference_with, gpa_sync_with, shape_error, solve_aop,
    GpaMethod, IterativeMeanOptions, PointCloud,
};
use crate::sync::{reconstruct_pairwise, synchronise};
use crate::transform::{ScaleMode, TransformClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Additive Gaussian noise on pairwise transforms.
    Noise,
    /// Generalised Procrustes with randomly missing points.
    GppMissing,
    /// Generalised Procrustes with disturbed correspondences.
    GppCorrespondence,
}

/// One class or a list of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassSelection {
    One(TransformClass),
    Many(Vec<TransformClass>),
}

impl ClassSelection {
    pub fn classes(&self) -> Vec<TransformClass> {
        match self {
            ClassSelection::One(c) => vec![*c],
            ClassSelection::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Trials {
    /// Ground-truth draws per grid point (noise experiment).
    pub ground_truths: usize,
    /// Noise draws per ground truth (noise experiment).
    pub noise_draws: usize,
    /// Corruption draws per grid point (GPP experiments).
    pub draws: usize,
}

impl Default for Trials {
    fn default() -> Self {
        Self {
            ground_truths: 100,
            noise_draws: 20,
            draws: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSource {
    /// Shapes from [`gen_shapes`](super::gen_shapes).
    Synthetic {
        #[serde(default = "default_shape_count")]
        count: usize,
        #[serde(default = "default_points")]
        n: usize,
        #[serde(default = "default_level")]
        deform_level: f64,
        #[serde(default = "default_noise_level")]
        noise_level: f64,
    },
    /// A shape-set directory with a manifest.
    Directory(PathBuf),
}

fn default_shape_count() -> usize {
    100
}
fn default_points() -> usize {
    98
}
fn default_level() -> f64 {
    3.0
}
fn default_noise_level() -> f64 {
    0.03
}

impl Default for ShapeSource {
    fn default() -> Self {
        ShapeSource::Synthetic {
            count: default_shape_count(),
            n: default_points(),
            deform_level: default_level(),
            noise_level: default_noise_level(),
        }
    }
}

/// Parameter swept by an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridAxis {
    Sigma,
    K,
    D,
    Eta,
    Nu,
}

impl GridAxis {
    fn parse(name: &str) -> Result<Self> {
        match name {
            "sigma" => Ok(GridAxis::Sigma),
            "k" => Ok(GridAxis::K),
            "d" => Ok(GridAxis::D),
            "eta" => Ok(GridAxis::Eta),
            "nu" => Ok(GridAxis::Nu),
            other => Err(Error::Parse(format!("grid: unknown parameter '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Classes to evaluate; all five for the noise experiment and
    /// similarity for GPP when absent.
    #[serde(default)]
    pub class: Option<ClassSelection>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Exactly one swept parameter mapped to its values.
    pub grid: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub trials: Trials,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub scale_mode: ScaleMode,
    #[serde(default)]
    pub methods: Option<Vec<GpaMethod>>,
    #[serde(default)]
    pub shape_source: Option<ShapeSource>,
    #[serde(default)]
    pub translation_range: TranslationRange,
}

pub const DEFAULT_SEED: u64 = 1234;

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// One line of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub grid_value: f64,
    /// `<class>:noisy` / `<class>:synced` for the noise experiment, the GPA
    /// method name for GPP experiments.
    pub method_or_signal: String,
    pub mean_error: f64,
    /// Sample standard deviation of the per-trial errors.
    pub std_error: f64,
    pub trials: usize,
}

fn summarise(grid_value: f64, label: String, errors: &[f64]) -> ResultRow {
    let n = errors.len();
    let mean = errors.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 {
        (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    ResultRow {
        grid_value,
        method_or_signal: label,
        mean_error: mean,
        std_error: std,
        trials: n,
    }
}

fn as_count(name: &str, v: f64, min: usize) -> Result<usize> {
    if v.fract() != 0.0 || v < min as f64 {
        return Err(Error::Parse(format!(
            "{name}: expected an integer >= {min}, got {v}"
        )));
    }
    Ok(v as usize)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The swept parameter and its values.
    pub fn axis(&self) -> Result<(GridAxis, &[f64])> {
        if self.grid.len() != 1 {
            return Err(Error::Parse(format!(
                "grid: exactly one varying parameter required, got {}",
                self.grid.len()
            )));
        }
        let (name, values) = self.grid.iter().next().expect("one entry");
        if values.is_empty() {
            return Err(Error::Parse(format!("grid.{name}: no values")));
        }
        Ok((GridAxis::parse(name)?, values))
    }

    pub fn validate(&self) -> Result<()> {
        let (axis, values) = self.axis()?;
        let allowed: &[GridAxis] = match self.experiment {
            ExperimentKind::Noise => &[GridAxis::Sigma, GridAxis::K, GridAxis::D],
            ExperimentKind::GppMissing => &[GridAxis::Eta],
            ExperimentKind::GppCorrespondence => &[GridAxis::Nu],
        };
        if !allowed.contains(&axis) {
            return Err(Error::Parse(format!(
                "grid: {axis:?} cannot be swept in a {:?} experiment",
                self.experiment
            )));
        }
        for &v in values {
            match axis {
                GridAxis::Sigma if !(v >= 0.0 && v.is_finite()) => {
                    return Err(Error::Parse(format!("grid.sigma: {v} must be >= 0")))
                }
                GridAxis::K => {
                    as_count("grid.k", v, 2)?;
                }
                GridAxis::D => {
                    as_count("grid.d", v, 1)?;
                }
                GridAxis::Eta if !(0.0..=MAX_ETA).contains(&v) => {
                    return Err(Error::Parse(format!("grid.eta: {v} outside [0, {MAX_ETA}]")))
                }
                GridAxis::Nu if !(0.0..=1.0).contains(&v) => {
                    return Err(Error::Parse(format!("grid.nu: {v} outside [0, 1]")))
                }
                _ => {}
            }
        }
        if let Some(k) = self.k {
            if k < 2 {
                return Err(Error::Parse(format!("k: must be >= 2, got {k}")));
            }
        }
        if let Some(d) = self.d {
            if d < 1 {
                return Err(Error::Parse("d: must be >= 1".into()));
            }
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0) {
                return Err(Error::Parse(format!("sigma: must be >= 0, got {s}")));
            }
        }
        if self.experiment != ExperimentKind::Noise {
            for c in self.classes() {
                if !matches!(
                    c,
                    TransformClass::Similarity | TransformClass::Euclidean | TransformClass::Rigid
                ) {
                    return Err(Error::Parse(format!(
                        "class: GPP experiments need similarity, euclidean or rigid, got {c}"
                    )));
                }
            }
            if let Some(ShapeSource::Synthetic { count, n, .. }) = &self.shape_source {
                if *count < 2 || *n < self.d.unwrap_or(2) {
                    return Err(Error::Parse("shape_source: count >= 2 and n >= d required".into()));
                }
            }
        }
        if self.classes().is_empty() {
            return Err(Error::Parse("class: empty list".into()));
        }
        if matches!(&self.methods, Some(m) if m.is_empty()) {
            return Err(Error::Parse("methods: empty list".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> Vec<TransformClass> {
        match (&self.class, self.experiment) {
            (Some(sel), _) => sel.classes(),
            (None, ExperimentKind::Noise) => TransformClass::ALL.to_vec(),
            (None, _) => vec![TransformClass::Similarity],
        }
    }

    pub fn methods(&self) -> Vec<GpaMethod> {
        self.methods.clone().unwrap_or_else(|| GpaMethod::ALL.to_vec())
    }
}

/// Dispatches on the experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match cfg.experiment {
        ExperimentKind::Noise => run_noise_experiment(cfg),
        _ => run_gpp_experiment(cfg),
    }
}

/// For each grid value and class: `ground_truths × noise_draws` trials of
/// noisy versus synchronised pairwise error against the ground truth.
pub fn run_noise_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.experiment != ExperimentKind::Noise {
        return Err(Error::Contract("not a noise experiment".into()));
    }
    let (axis, values) = cfg.axis()?;
    let g = cfg.trials.ground_truths.max(1);
    let r = cfg.trials.noise_draws.max(1);
    let mut rows = Vec::new();
    for (gi, &value) in values.iter().enumerate() {
        let mut k = cfg.k.unwrap_or(30);
        let mut d = cfg.d.unwrap_or(3);
        let mut sigma = cfg.sigma.unwrap_or(0.1);
        match axis {
            GridAxis::Sigma => sigma = value,
            GridAxis::K => k = value as usize,
            GridAxis::D => d = value as usize,
            _ => unreachable!("validated"),
        }
        for (ci, class) in cfg.classes().into_iter().enumerate() {
            let per_truth: Vec<Vec<(f64, f64)>> = (0..g)
                .into_par_iter()
                .map(|ti| {
                    let mut rng = trial_rng(cfg.seed, &[gi as u64, ci as u64, ti as u64]);
                    let truth = gen_ground_truth_with(k, d, class, cfg.translation_range, &mut rng)?;
                    (0..r)
                        .map(|_| {
                            let noisy = add_gaussian_noise(&truth.pairwise, sigma, &mut rng)?;
                            let synced =
                                reconstruct_pairwise(&synchronise(&noisy, class, cfg.scale_mode)?)?;
                            Ok((
                                transform_error(&noisy, &truth.pairwise)?,
                                transform_error(&synced, &truth.pairwise)?,
                            ))
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let pairs: Vec<(f64, f64)> = per_truth.into_iter().flatten().collect();
            let noisy: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let synced: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            rows.push(summarise(value, format!("{class}:noisy"), &noisy));
            rows.push(summarise(value, format!("{class}:synced"), &synced));
        }
    }
    Ok(rows)
}

fn load_shapes(cfg: &ExperimentConfig, d: usize) -> Result<Vec<PointCloud>> {
    match cfg.shape_source.clone().unwrap_or_default() {
        ShapeSource::Synthetic {
            count,
            n,
            deform_level,
            noise_level,
        } => {
            let mut rng = trial_rng(cfg.seed, &[u64::MAX]);
            gen_shapes(count, n, d, deform_level, noise_level, &mut rng)
        }
        ShapeSource::Directory(dir) => {
            let shapes = crate::io::read_shape_set(&dir)?;
            if shapes.iter().any(|s| !s.is_full()) {
                return Err(Error::Parse(
                    "shape_source: imported shapes must be complete".into(),
                ));
            }
            Ok(shapes)
        }
    }
}

/// Shape error of the original shapes mapped by `transforms`.
fn original_error(
    originals: &[PointCloud],
    transforms: &[crate::transform::Transform],
) -> Result<f64> {
    let mapped = originals
        .iter()
        .zip(transforms)
        .map(|(s, t)| apply(t, s))
        .collect::<Result<Vec<_>>>()?;
    shape_error(&mapped)
}

const COVERAGE_ATTEMPTS: usize = 1000;

/// Missing-point draw that also leaves every landmark present in at least
/// one shape, so a mean shape exists.
fn draw_missing<R: Rng + ?Sized>(
    shapes: &[PointCloud],
    eta: f64,
    rng: &mut R,
) -> Result<Vec<PointCloud>> {
    for _ in 0..COVERAGE_ATTEMPTS {
        let dropped = drop_points(shapes, eta, rng)?;
        let n = shapes[0].n();
        if (0..n).all(|r| dropped.iter().any(|s| s.is_present(r))) {
            return Ok(dropped);
        }
    }
    Err(Error::InfeasibleEta {
        eta,
        attempts: COVERAGE_ATTEMPTS,
    })
}

fn run_gpp_trial(
    cfg: &ExperimentConfig,
    pool: &[PointCloud],
    k: usize,
    level: f64,
    class: TransformClass,
    methods: &[GpaMethod],
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let picked = index::sample(rng, pool.len(), k).into_vec();
    let originals: Vec<PointCloud> = picked.iter().map(|&i| pool[i].clone()).collect();
    // sync is gauged to shape 0; the subset order is already random
    let reference = 0;
    let iter_opts = IterativeMeanOptions::default();

    match cfg.experiment {
        ExperimentKind::GppMissing => {
            let corrupted = draw_missing(&originals, level, rng)?;
            methods
                .iter()
                .map(|m| {
                    let transforms = match m {
                        GpaMethod::Reference => {
                            gpa_reference_with(&corrupted, reference, |i, j| {
                                solve_aop(&corrupted[i], &corrupted[j], class)
                            })?
                            .transforms
                        }
                        GpaMethod::IterativeMean => {
                            gpa_iterative_mean(&corrupted, class, iter_opts, rng)?.transforms
                        }
                        GpaMethod::Sync => {
                            gpa_sync_with(&corrupted, class, cfg.scale_mode, |i, j| {
                                solve_aop(&corrupted[i], &corrupted[j], class)
                            })?
                            .transforms
                        }
                    };
                    original_error(&originals, &transforms)
                })
                .collect()
        }
        ExperimentKind::GppCorrespondence => {
            let mut out = Vec::with_capacity(methods.len());
            for m in methods {
                let transforms = match m {
                    GpaMethod::Reference => {
                        let targets = (0..k)
                            .map(|i| {
                                scramble_correspondences(&originals[i], &originals[reference], level, rng)
                                    .map(|p| p.1)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        gpa_reference_with(&originals, reference, |i, _| {
                            solve_aop(&originals[i], &targets[i], class)
                        })?
                        .transforms
                    }
                    GpaMethod::IterativeMean => {
                        // each shape's correspondence to the mean is disturbed once
                        let scrambled = originals
                            .iter()
                            .map(|s| scramble_correspondences(s, s, level, rng).map(|p| p.1))
                            .collect::<Result<Vec<_>>>()?;
                        gpa_iterative_mean(&scrambled, class, iter_opts, rng)?.transforms
                    }
                    GpaMethod::Sync => {
                        let mut targets = Vec::with_capacity(k * k);
                        for i in 0..k {
                            for j in 0..k {
                                targets.push(if i == j {
                                    originals[j].clone()
                                } else {
                                    scramble_correspondences(&originals[i], &originals[j], level, rng)?
                                        .1
                                });
                            }
                        }
                        gpa_sync_with(&originals, class, cfg.scale_mode, |i, j| {
                            solve_aop(&originals[i], &targets[i * k + j], class)
                        })?
                        .transforms
                    }
                };
                out.push(original_error(&originals, &transforms)?);
            }
            Ok(out)
        }
        ExperimentKind::Noise => Err(Error::Contract("not a GPP experiment".into())),
    }
}

/// For each grid level: draw `k` of the available shapes, corrupt them,
/// run every method and score it on the uncorrupted shapes.
pub fn run_gpp_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    if cfg.experiment == ExperimentKind::Noise {
        return Err(Error::Contract("not a GPP experiment".into()));
    }
    let (_, values) = cfg.axis()?;
    let d = cfg.d.unwrap_or(2);
    let pool = load_shapes(cfg, d)?;
    let k = cfg.k.unwrap_or(30);
    if k > pool.len() {
        return Err(Error::Parse(format!(
            "k: cannot select {k} of {} available shapes",
            pool.len()
        )));
    }
    let methods = cfg.methods();
    let draws = cfg.trials.draws.max(1);
    let mut rows = Vec::new();
    for (gi, &level) in values.iter().enumerate() {
        for (ci, class) in cfg.classes().into_iter().enumerate() {
            let per_draw: Vec<Vec<f64>> = (0..draws)
                .into_par_iter()
                .map(|t| {
                    let mut rng = trial_rng(cfg.seed, &[gi as u64, ci as u64, t as u64]);
                    run_gpp_trial(cfg, &pool, k, level, class, &methods, &mut rng)
                })
                .collect::<Result<_>>()?;
            let multi_class = cfg.classes().len() > 1;
            for (mi, m) in methods.iter().enumerate() {
                let errs: Vec<f64> = per_draw.iter().map(|v| v[mi]).collect();
                let label = if multi_class {
                    format!("{class}:{m}")
                } else {
                    m.to_string()
                };
                rows.push(summarise(level, label, &errs));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise_cfg(grid: &str) -> String {
        format!(
            r#"{{"experiment":"noise","k":6,"d":2,"sigma":0.1,"grid":{grid},
               "trials":{{"ground_truths":2,"noise_draws":2}},"seed":3}}"#
        )
    }

    #[test]
    fn grid_must_vary_one_parameter() {
        let err = ExperimentConfig::from_json(&noise_cfg(r#"{"sigma":[0.1],"k":[4]}"#)).unwrap_err();
        assert!(err.to_string().contains("exactly one varying parameter"));
        assert!(ExperimentConfig::from_json(&noise_cfg(r#"{}"#)).is_err());
        assert!(ExperimentConfig::from_json(&noise_cfg(r#"{"eta":[0.1]}"#)).is_err());
        assert!(ExperimentConfig::from_json(&noise_cfg(r#"{"k":[2.5]}"#)).is_err());
        assert!(ExperimentConfig::from_json(&noise_cfg(r#"{"sigma":[0.1]}"#)).is_ok());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"experiment":"noise","grid":{"sigma":[0.1]},"bogus":1}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }

    #[test]
    fn noise_rows_layout() {
        let cfg = ExperimentConfig::from_json(&noise_cfg(r#"{"sigma":[0.05,0.2]}"#)).unwrap();
        let rows = run_noise_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 5 * 2);
        assert_eq!(rows[0].method_or_signal, "affine:noisy");
        assert_eq!(rows[1].method_or_signal, "affine:synced");
        assert!(rows.iter().all(|r| r.trials == 4));
        assert_eq!(rows, run_noise_experiment(&cfg).unwrap());
    }

    #[test]
    fn gpp_exact_copies_agree() {
        let text = r#"{"experiment":"gpp_missing","k":5,"grid":{"eta":[0.0]},
            "trials":{"draws":3},
            "shape_source":{"synthetic":{"count":8,"n":20,"deform_level":0.0,"noise_level":0.0}}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let rows = run_gpp_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert!(r.mean_error < 1e-6, "{r:?}");
        }
    }
}
