//! Interventional analysis of trained validity models.
//!
//! The causal graph has nodes theta (sampled control point), z_I (encoded
//! scene), the user type (which model is evaluated) and validity (the
//! thresholded classifier output). `do(S := s)` swaps the model;
//! `do(z_I := ...)` adds a symbol to the scene and re-encodes it. Every
//! comparison shares its (scene, theta) draws between branches.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scene::{augment_scene, ObjectKind, Scene};
use crate::specmodel::SpecModel;
use crate::trajectory::{ControlPoint, UserType};

/// Attempts at placing an intervention symbol before giving up on a scene.
pub const AUGMENT_RETRIES: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Intervention {
    None,
    SetUserType(UserType),
    AddSymbol(ObjectKind),
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intervention::None => f.write_str("none"),
            Intervention::SetUserType(u) => write!(f, "set_user_type:{u}"),
            Intervention::AddSymbol(k) => write!(f, "add_{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CausalConfig {
    pub thetas_per_scene: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    /// Minimum absolute change in mean validity for a significant effect.
    pub effect_threshold: f64,
}

impl Default for CausalConfig {
    fn default() -> Self {
        CausalConfig {
            thetas_per_scene: 200,
            bootstrap_resamples: 1000,
            seed: 0,
            effect_threshold: 0.05,
        }
    }
}

/// Binary validity outcomes grouped by scene, with a scene-level bootstrap CI.
#[derive(Debug, Clone, PartialEq)]
pub struct EntailedDistribution {
    pub per_scene: Vec<Vec<bool>>,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl EntailedDistribution {
    pub fn samples(&self) -> impl Iterator<Item = bool> + '_ {
        self.per_scene.iter().flatten().copied()
    }

    pub fn len(&self) -> usize {
        self.per_scene.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Summary of per-scene outcomes with a `resamples`-draw scene bootstrap.
    pub fn from_outcomes(per_scene: Vec<Vec<bool>>, resamples: usize, seed: u64) -> Self {
        let rates: Vec<f64> = per_scene.iter().map(|o| rate(o)).collect();
        let weights: Vec<f64> = per_scene.iter().map(|o| o.len() as f64).collect();
        let mean = weighted_mean(&rates, &weights, (0..rates.len()).map(Some));
        let (lo, hi) = bootstrap_ci(&rates, &weights, resamples, seed);
        EntailedDistribution {
            per_scene,
            mean,
            ci_low: lo.min(mean),
            ci_high: hi.max(mean),
        }
    }
}

fn rate(outcomes: &[bool]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|&&v| v).count() as f64 / outcomes.len() as f64
}

fn weighted_mean(values: &[f64], weights: &[f64], picks: impl Iterator<Item = Option<usize>>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in picks.flatten() {
        num += weights[i] * values[i];
        den += weights[i];
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Percentile 95% interval of the pooled mean under scene resampling.
fn bootstrap_ci(values: &[f64], weights: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let n = values.len();
    if n == 0 || resamples == 0 {
        let m = weighted_mean(values, weights, (0..n).map(Some));
        return (m, m);
    }
    let mut r = rng_from(seed, "bootstrap", 0);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let picks: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
            weighted_mean(values, weights, picks.into_iter().map(Some))
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    (percentile(&stats, 0.025), percentile(&stats, 0.975))
}

/// Linear-interpolated quantile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// The theta draws shared by every branch for scene `index`.
pub fn scene_thetas(seed: u64, index: usize, count: usize) -> Vec<ControlPoint> {
    let mut r = rng_from(seed, "causal-theta", index as u64);
    (0..count).map(|_| ControlPoint::new(r.random(), r.random())).collect()
}

fn outcomes(model: &SpecModel, scenes: &[Scene], cfg: &CausalConfig) -> Result<Vec<Vec<bool>>> {
    if model.is_untrained() {
        return Err(Error::UntrainedModel);
    }
    if scenes.is_empty() {
        return Err(Error::Precondition("scene list is empty".into()));
    }
    if cfg.thetas_per_scene == 0 {
        return Err(Error::Precondition("thetas_per_scene must be >= 1".into()));
    }
    scenes
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            let mu = model.encode(&model.render(scene), None)?.mu;
            let scores = model.classify_thetas(&mu, &scene_thetas(cfg.seed, i, cfg.thetas_per_scene))?;
            Ok(scores.into_iter().map(|p| p >= 0.5).collect())
        })
        .collect()
}

pub fn entailed_validity(model: &SpecModel, scenes: &[Scene], cfg: &CausalConfig) -> Result<EntailedDistribution> {
    Ok(EntailedDistribution::from_outcomes(
        outcomes(model, scenes, cfg)?,
        cfg.bootstrap_resamples,
        cfg.seed,
    ))
}

/// Evaluates the same draws under the `source` and `target` models.
pub fn intervene_user_type(
    models: &BTreeMap<UserType, SpecModel>,
    scenes: &[Scene],
    source: UserType,
    target: UserType,
    cfg: &CausalConfig,
) -> Result<(EntailedDistribution, EntailedDistribution)> {
    let get = |u: UserType| {
        models
            .get(&u)
            .ok_or_else(|| Error::Precondition(format!("no model for user type {u}")))
    };
    let base = entailed_validity(get(source)?, scenes, cfg)?;
    let swapped = entailed_validity(get(target)?, scenes, cfg)?;
    Ok((base, swapped))
}

/// Each scene with one more object of `kind`; symbol placement retries with
/// fresh seeds when the first attempt does not fit.
pub fn augmented_scenes(scenes: &[Scene], kind: ObjectKind, seed: u64) -> Result<Vec<Scene>> {
    scenes
        .iter()
        .map(|s| {
            let mut last = None;
            for attempt in 0..AUGMENT_RETRIES {
                match augment_scene(s, kind, derive_seed(seed, kind.name(), attempt)) {
                    Ok(a) => return Ok(a),
                    Err(e @ Error::PlacementFailure { .. }) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect()
}

pub fn intervene_symbol(
    model: &SpecModel,
    scenes: &[Scene],
    kind: ObjectKind,
    cfg: &CausalConfig,
) -> Result<(EntailedDistribution, EntailedDistribution)> {
    let base = entailed_validity(model, scenes, cfg)?;
    let changed = entailed_validity(model, &augmented_scenes(scenes, kind, cfg.seed)?, cfg)?;
    Ok((base, changed))
}

/// Paired scene-level bootstrap of `treated - base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effect {
    pub delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

pub fn compare(base: &EntailedDistribution, treated: &EntailedDistribution, cfg: &CausalConfig) -> Result<Effect> {
    if base.per_scene.len() != treated.per_scene.len()
        || base.per_scene.iter().zip(&treated.per_scene).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::Shape("branches do not share draws".into()));
    }
    let diffs: Vec<f64> = base
        .per_scene
        .iter()
        .zip(&treated.per_scene)
        .map(|(a, b)| rate(b) - rate(a))
        .collect();
    let weights: Vec<f64> = base.per_scene.iter().map(|o| o.len() as f64).collect();
    let delta = treated.mean - base.mean;
    let (lo, hi) = bootstrap_ci(&diffs, &weights, cfg.bootstrap_resamples, derive_seed(cfg.seed, "paired", 0));
    let excludes_zero = lo > 0.0 || hi < 0.0;
    Ok(Effect {
        delta,
        ci_low: lo,
        ci_high: hi,
        significant: delta.abs() > cfg.effect_threshold && excludes_zero,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalCell {
    pub user_type: UserType,
    pub intervention: Intervention,
    pub distribution: EntailedDistribution,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalReport {
    pub cells: Vec<CausalCell>,
}

pub const CSV_HEADER: &str = "user_type,intervention,mean,ci_low,ci_high,delta_vs_baseline,significant";

impl CausalReport {
    pub fn cell(&self, user_type: UserType, intervention: Intervention) -> Option<&CausalCell> {
        self.cells
            .iter()
            .find(|c| c.user_type == user_type && c.intervention == intervention)
    }

    pub fn baseline(&self, user_type: UserType) -> Option<&EntailedDistribution> {
        self.cell(user_type, Intervention::None).map(|c| &c.distribution)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let d = &c.distribution;
            writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{}",
                c.user_type, c.intervention, d.mean, d.ci_low, d.ci_high, c.effect.delta, c.effect.significant
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Fixed-width grid: one row per user type, baseline first; `*` marks
    /// significant cells.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<11}{:>10}", "user_type", "baseline");
        for k in ObjectKind::ALL {
            write!(out, "{:>13}", format!("+{k}")).expect("string write");
        }
        out.push('\n');
        for u in UserType::ALL {
            let Some(base) = self.baseline(u) else { continue };
            write!(out, "{:<11}{:>10.2}", u.name(), base.mean).expect("string write");
            for k in ObjectKind::ALL {
                let cell = match self.cell(u, Intervention::AddSymbol(k)) {
                    Some(c) => format!("{:.2}{}", c.distribution.mean, if c.effect.significant { "*" } else { " " }),
                    None => "-".into(),
                };
                write!(out, "{cell:>13}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Deviations from the expected flag pattern: careful users react to
    /// every added symbol, normal users only to a glass, aggressive users to
    /// nothing (and accept almost everything).
    pub fn direction_violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        for u in UserType::ALL {
            for k in ObjectKind::ALL {
                let Some(c) = self.cell(u, Intervention::AddSymbol(k)) else {
                    bad.push(format!("{u}/{k}: missing cell"));
                    continue;
                };
                let expect = u.avoids(k);
                if c.effect.significant != expect {
                    bad.push(format!(
                        "{u}/{k}: expected {}significant change, got delta {:+.3}",
                        if expect { "" } else { "no " },
                        c.effect.delta
                    ));
                } else if expect && c.effect.delta >= 0.0 {
                    bad.push(format!("{u}/{k}: significant but not a decrease ({:+.3})", c.effect.delta));
                }
                if u == UserType::Aggressive && c.distribution.mean < 0.99 {
                    bad.push(format!("{u}/{k}: mean {:.3} below 0.99", c.distribution.mean));
                }
            }
            if u == UserType::Aggressive {
                if let Some(b) = self.baseline(u).filter(|b| b.mean < 0.99) {
                    bad.push(format!("{u}/baseline: mean {:.3} below 0.99", b.mean));
                }
            }
        }
        bad
    }
}

/// Baseline plus one symbol intervention per object kind for every model.
pub fn causal_table(models: &BTreeMap<UserType, SpecModel>, scenes: &[Scene], cfg: &CausalConfig) -> Result<CausalReport> {
    let mut augmented = Vec::with_capacity(ObjectKind::ALL.len());
    for k in ObjectKind::ALL {
        augmented.push((k, augmented_scenes(scenes, k, cfg.seed)?));
    }
    let mut cells = Vec::new();
    for (&u, model) in models {
        let base = entailed_validity(model, scenes, cfg)?;
        cells.push(CausalCell {
            user_type: u,
            intervention: Intervention::None,
            effect: compare(&base, &base, cfg)?,
            distribution: base.clone(),
        });
        for (k, scenes_k) in &augmented {
            let dist = entailed_validity(model, scenes_k, cfg)?;
            cells.push(CausalCell {
                user_type: u,
                intervention: Intervention::AddSymbol(*k),
                effect: compare(&base, &dist, cfg)?,
                distribution: dist,
            });
        }
    }
    Ok(CausalReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, ObjectCount, Split};
    use crate::specmodel::{Arch, LossWeights};

    fn model(u: UserType, bias: f64) -> SpecModel {
        let mut m = SpecModel::new(u, Arch { image_size: 8 }, LossWeights::default(), 4);
        m.params.param_mut("cls.fc3.b").value.data_mut()[0] += bias;
        m
    }

    fn scenes(n: usize) -> Vec<Scene> {
        (0..n)
            .map(|i| generate_scene(100 + i as u64, Split::Test, ObjectCount::Exactly(3)).unwrap())
            .collect()
    }

    fn cfg() -> CausalConfig {
        CausalConfig {
            thetas_per_scene: 30,
            bootstrap_resamples: 200,
            ..Default::default()
        }
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert_eq!(percentile(&v, 0.125), 1.5);
        assert_eq!(percentile(&v, 1.0), 5.0);
    }

    #[test]
    fn distribution_mean_and_ci_are_consistent() {
        let d = entailed_validity(&model(UserType::Careful, 1e-3), &scenes(6), &cfg()).unwrap();
        let n = d.len();
        assert_eq!(n, 180);
        let mean = d.samples().filter(|&v| v).count() as f64 / n as f64;
        assert!((d.mean - mean).abs() < 1e-12);
        assert!(d.ci_low <= d.mean && d.mean <= d.ci_high);
    }

    #[test]
    fn hand_built_bootstrap() {
        let per_scene = vec![vec![true, true], vec![false, false], vec![true, false]];
        let d = EntailedDistribution::from_outcomes(per_scene, 500, 1);
        assert!((d.mean - 0.5).abs() < 1e-12);
        assert!(d.ci_low >= 0.0 && d.ci_high <= 1.0 && d.ci_low < d.ci_high);
        let same = EntailedDistribution::from_outcomes(vec![vec![true; 4]; 3], 500, 1);
        assert_eq!((same.mean, same.ci_low, same.ci_high), (1.0, 1.0, 1.0));
    }

    #[test]
    fn null_interventions_are_exact() {
        let mut models = BTreeMap::new();
        models.insert(UserType::Careful, model(UserType::Careful, 1e-3));
        let s = scenes(4);
        let (a, b) = intervene_user_type(&models, &s, UserType::Careful, UserType::Careful, &cfg()).unwrap();
        assert_eq!(a, b);
        let e = compare(&a, &b, &cfg()).unwrap();
        assert_eq!(e.delta, 0.0);
        assert!(!e.significant);
        assert!(intervene_user_type(&models, &s, UserType::Careful, UserType::Normal, &cfg()).is_err());
    }

    #[test]
    fn a_large_shift_is_flagged_both_ways() {
        let s = scenes(5);
        let lo = entailed_validity(&model(UserType::Careful, -40.0), &s, &cfg()).unwrap();
        let hi = entailed_validity(&model(UserType::Careful, 40.0), &s, &cfg()).unwrap();
        assert_eq!((lo.mean, hi.mean), (0.0, 1.0));
        let up = compare(&lo, &hi, &cfg()).unwrap();
        let down = compare(&hi, &lo, &cfg()).unwrap();
        assert!(up.significant && down.significant);
        assert_eq!(up.delta, -down.delta);
    }

    #[test]
    fn errors_on_empty_or_untrained() {
        let c = cfg();
        assert!(matches!(entailed_validity(&model(UserType::Normal, 1e-3), &[], &c), Err(Error::Precondition(_))));
        let fresh = SpecModel::new(UserType::Normal, Arch { image_size: 8 }, LossWeights::default(), 4);
        assert!(matches!(entailed_validity(&fresh, &scenes(1), &c), Err(Error::UntrainedModel)));
    }

    #[test]
    fn table_shape_and_csv() {
        let mut models = BTreeMap::new();
        for u in UserType::ALL {
            models.insert(u, model(u, 40.0));
        }
        let report = causal_table(&models, &scenes(3), &cfg()).unwrap();
        assert_eq!(report.cells.len(), 15);
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 16);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(report.to_table().lines().count(), 4);
        // a bias-saturated model sees no effect anywhere, so only the
        // aggressive row matches the expected pattern
        let bad = report.direction_violations();
        assert_eq!(bad.len(), 4 + 1);
        assert!(bad.iter().all(|b| !b.starts_with("aggressive")));
        assert_eq!(causal_table(&models, &scenes(3), &cfg()).unwrap().to_csv(), csv);
    }
}
