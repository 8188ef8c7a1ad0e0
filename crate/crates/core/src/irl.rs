//! Patch-reward baseline: a linear reward over the 9x9 neighbourhood of each
//! trajectory point, averaged along the curve and squashed to a validity
//! probability.

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffnet::{adam_step, AdamConfig, OptimizerState, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scene::{render_scene, Image, Scene, BACKGROUND};
use crate::specmodel::EpochLog;
use crate::trajectory::{sample_trajectory, ControlPoint, Demonstration, UserType, DEFAULT_SAMPLES};

pub const PATCH: usize = 9;
pub const FEATURES: usize = PATCH * PATCH * 3;
const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlConfig {
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for IrlConfig {
    fn default() -> Self {
        IrlConfig {
            epochs: 200,
            seed: 0,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub user_type: UserType,
    /// `irl.w` of shape `[FEATURES]` and `irl.b` of shape `[1]`.
    pub params: ParamStore,
}

/// Pixel window centred on `p`, background-padded, offset by the background
/// color so empty table contributes zero.
pub fn patch(image: &Image, p: [f64; 2]) -> [f64; FEATURES] {
    let (h, w) = (image.height as isize, image.width as isize);
    let col = (p[0] * w as f64).floor() as isize;
    let row = ((1.0 - p[1]) * h as f64).floor() as isize;
    let half = (PATCH / 2) as isize;
    let mut out = [0.0; FEATURES];
    let mut i = 0;
    for dr in -half..=half {
        for dc in -half..=half {
            let (r, c) = (row + dr, col + dc);
            let px = if (0..h).contains(&r) && (0..w).contains(&c) {
                image.pixel(r as usize, c as usize)
            } else {
                BACKGROUND
            };
            for ch in 0..3 {
                out[i] = px[ch] - BACKGROUND[ch];
                i += 1;
            }
        }
    }
    out
}

/// Mean patch over the T+1 points of the trajectory.
pub fn trajectory_features(image: &Image, theta: ControlPoint) -> Result<[f64; FEATURES]> {
    let traj = sample_trajectory(theta, DEFAULT_SAMPLES)?;
    let mut acc = [0.0; FEATURES];
    for &p in &traj.points {
        for (a, v) in acc.iter_mut().zip(patch(image, p)) {
            *a += v;
        }
    }
    let n = traj.points.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl RewardModel {
    pub fn new(user_type: UserType, seed: u64) -> Self {
        let mut r = rng_from(seed, "irl-init", 0);
        let dist = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamStore::new();
        params.insert(
            "irl.w",
            Tensor::new(&[FEATURES], (0..FEATURES).map(|_| dist.sample(&mut r)).collect()).expect("shape"),
        );
        params.insert("irl.b", Tensor::zeros(&[1]));
        RewardModel { user_type, params }
    }

    /// Per-point reward `r(p, I)`.
    pub fn reward(&self, image: &Image, p: [f64; 2]) -> f64 {
        self.logit(&patch(image, p))
    }

    fn logit(&self, features: &[f64; FEATURES]) -> f64 {
        let w = self.params.get("irl.w").data();
        w.iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + self.params.get("irl.b").data()[0]
    }

    /// `sigmoid(mean reward along the curve)`.
    pub fn score(&self, image: &Image, theta: ControlPoint) -> Result<f64> {
        Ok(sigmoid(self.logit(&trajectory_features(image, theta)?)))
    }

    pub fn classify(&self, image: &Image, theta: ControlPoint) -> Result<bool> {
        Ok(self.score(image, theta)? >= 0.5)
    }
}

pub fn classify_irl(model: &RewardModel, image: &Image, theta: ControlPoint) -> Result<bool> {
    model.classify(image, theta)
}

/// Full-batch Adam on mean BCE.
pub fn train_irl(dataset: &[Demonstration], config: IrlConfig) -> Result<(RewardModel, Vec<EpochLog>)> {
    let first = dataset.first().ok_or_else(|| Error::Precondition("dataset is empty".into()))?;
    if dataset.iter().any(|d| d.user_type != first.user_type) {
        return Err(Error::Precondition("dataset mixes user types".into()));
    }
    let mut model = RewardModel::new(first.user_type, config.seed);
    let mut images: Vec<(&Scene, Image)> = Vec::new();
    let mut feats = Vec::with_capacity(dataset.len());
    for d in dataset {
        let idx = match images.iter().position(|(s, _)| **s == d.scene) {
            Some(i) => i,
            None => {
                images.push((&d.scene, render_scene(&d.scene)));
                images.len() - 1
            }
        };
        feats.push(trajectory_features(&images[idx].1, d.theta)?);
    }
    let labels: Vec<f64> = dataset.iter().map(|d| f64::from(u8::from(d.valid))).collect();
    let n = dataset.len() as f64;
    let mut opt = OptimizerState::new(&model.params, config.adam);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut dw = vec![0.0; FEATURES];
        let mut db = 0.0;
        let mut loss = 0.0;
        let mut correct = 0;
        for (f, &v) in feats.iter().zip(&labels) {
            let p = sigmoid(model.logit(f)).clamp(crate::diffnet::BCE_CLAMP, 1.0 - crate::diffnet::BCE_CLAMP);
            loss -= v * p.ln() + (1.0 - v) * (1.0 - p).ln();
            if (p >= 0.5) == (v == 1.0) {
                correct += 1;
            }
            let g = (p - v) / n;
            for (d, x) in dw.iter_mut().zip(f) {
                *d += g * x;
            }
            db += g;
        }
        model.params.param_mut("irl.w").grad.data_mut().copy_from_slice(&dw);
        model.params.param_mut("irl.b").grad.data_mut()[0] = db;
        adam_step(&mut model.params, &mut opt);
        let cls = loss / n;
        log.push(EpochLog {
            epoch: epoch + 1,
            loss: crate::specmodel::LossBreakdown {
                recon: 0.0,
                kl: 0.0,
                cls,
                total: cls,
            },
            train_accuracy: correct as f64 / n,
        });
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IrlMeta {
    pub kind: String,
    pub user_type: UserType,
}

pub const IRL_KIND: &str = "irl";

/// Writes `<stem>.spc` and `<stem>.json`.
pub fn save_irl(model: &RewardModel, stem: &Path) -> Result<()> {
    model.params.save(&stem.with_extension("spc"))?;
    let meta = IrlMeta {
        kind: IRL_KIND.into(),
        user_type: model.user_type,
    };
    let json = stem.with_extension("json");
    fs::write(&json, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(|e| Error::io(&json, e))
}

pub fn load_irl(stem: &Path) -> Result<RewardModel> {
    let json = stem.with_extension("json");
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: IrlMeta = serde_json::from_str(&text).map_err(|e| Error::schema(&json, e.to_string()))?;
    if meta.kind != IRL_KIND {
        return Err(Error::schema(&json, format!("expected kind \"irl\", got {:?}", meta.kind)));
    }
    let params = ParamStore::load(&stem.with_extension("spc"))?;
    let ok = params.len() == 2
        && params.contains("irl.w")
        && params.contains("irl.b")
        && params.get("irl.w").shape() == [FEATURES]
        && params.get("irl.b").shape() == [1];
    if !ok {
        return Err(Error::schema(stem.with_extension("spc"), "not a reward model"));
    }
    Ok(RewardModel {
        user_type: meta.user_type,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, ObjectCount, Split};
    use crate::trajectory::synthesize_demonstrations;

    fn demos(user_type: UserType, scenes: u64, per: usize) -> Vec<Demonstration> {
        (0..scenes)
            .flat_map(|i| {
                let s = generate_scene(40 + i, Split::Train, ObjectCount::Exactly(4)).unwrap();
                synthesize_demonstrations(&s, user_type, per, i).unwrap()
            })
            .collect()
    }

    #[test]
    fn border_patches_are_padded_with_background() {
        let img = Image::filled(20, 20, [0.0, 0.0, 0.0]);
        let p = patch(&img, [0.0, 1.0]);
        // top-left corner: rows/cols -4..=-1 are padding, the rest is black
        let bg_cells = p.chunks(3).filter(|c| c.iter().all(|&v| v == 0.0)).count();
        assert_eq!(bg_cells, PATCH * PATCH - 25);
        let blank = Image::filled(20, 20, BACKGROUND);
        assert!(patch(&blank, [0.5, 0.5]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rewards_are_local() {
        let model = RewardModel::new(UserType::Careful, 3);
        let s = generate_scene(9, Split::Train, ObjectCount::Exactly(3)).unwrap();
        let img = render_scene(&s);
        let theta = ControlPoint::new(0.9, 0.1);
        let traj = sample_trajectory(theta, DEFAULT_SAMPLES).unwrap();
        let before = model.score(&img, theta).unwrap();
        let mut edited = img.clone();
        let mut changed = 0;
        for row in 0..img.height {
            for col in 0..img.width {
                let (pc, pr) = (col as isize, row as isize);
                let far = traj.points.iter().all(|p| {
                    let c = (p[0] * 100.0).floor() as isize;
                    let r = ((1.0 - p[1]) * 100.0).floor() as isize;
                    (pc - c).abs() > 4 || (pr - r).abs() > 4
                });
                if far {
                    let i = 3 * (row * img.width + col);
                    edited.pixels[i..i + 3].copy_from_slice(&[0.1, 0.9, 0.2]);
                    changed += 1;
                }
            }
        }
        assert!(changed > 5000);
        assert_eq!(model.score(&edited, theta).unwrap(), before);
    }

    #[test]
    fn score_is_sigmoid_of_mean_point_reward() {
        let model = RewardModel::new(UserType::Normal, 1);
        let s = generate_scene(2, Split::Train, ObjectCount::Exactly(2)).unwrap();
        let img = render_scene(&s);
        let theta = ControlPoint::new(0.3, 0.8);
        let pts = sample_trajectory(theta, DEFAULT_SAMPLES).unwrap().points;
        let mean = pts.iter().map(|&p| model.reward(&img, p)).sum::<f64>() / pts.len() as f64;
        assert!((model.score(&img, theta).unwrap() - sigmoid(mean)).abs() < 1e-12);
    }

    #[test]
    fn training_descends_and_is_deterministic() {
        let d = demos(UserType::Careful, 6, 10);
        let cfg = IrlConfig { epochs: 10, ..Default::default() };
        let (m, log) = train_irl(&d, cfg).unwrap();
        assert!(log[9].loss.cls < log[0].loss.cls);
        let (again, _) = train_irl(&d, cfg).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn aggressive_data_predicts_valid_everywhere() {
        let d = demos(UserType::Aggressive, 4, 5);
        let (m, _) = train_irl(&d, IrlConfig { epochs: 50, ..Default::default() }).unwrap();
        let s = generate_scene(77, Split::Test, ObjectCount::Exactly(5)).unwrap();
        let img = render_scene(&s);
        for i in 0..20 {
            let theta = ControlPoint::new(i as f64 / 19.0, 1.0 - i as f64 / 19.0);
            assert!(classify_irl(&m, &img, theta).unwrap());
        }
    }

    #[test]
    fn errors_and_checkpoint_round_trip() {
        assert!(matches!(train_irl(&[], IrlConfig::default()), Err(Error::Precondition(_))));
        let mut mixed = demos(UserType::Careful, 1, 2);
        mixed.extend(demos(UserType::Normal, 1, 2));
        assert!(train_irl(&mixed, IrlConfig::default()).is_err());

        let m = RewardModel::new(UserType::Careful, 5);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("irl_careful");
        save_irl(&m, &stem).unwrap();
        assert_eq!(load_irl(&stem).unwrap(), m);
        fs::write(stem.with_extension("json"), r#"{"kind":"vae","user_type":"careful"}"#).unwrap();
        assert!(matches!(load_irl(&stem), Err(Error::Schema { .. })));
    }
}
