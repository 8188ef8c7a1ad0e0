//! Train/test scene sets with per-user-type demonstrations.
//!
//! Scenes are shared by all three user types. A scene index is redrawn when
//! any type cannot fill its label buckets (e.g. a normal user needs a glass
//! that actually blocks some control points).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use rand::seq::SliceRandom;

use crate::rng::{derive_seed, rng_from};
use crate::scene::{generate_scene, ObjectCount, Scene, Split};
use crate::trajectory::{synthesize_demonstrations, Demonstration, UserType};

pub const MAX_SCENE_REDRAWS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub scenes_train: usize,
    pub scenes_test: usize,
    /// Training demonstrations drawn per scene and user type.
    pub trajectories_per_scene: usize,
    /// Unseen trajectories per training scene used for held-out accuracy.
    pub heldout_per_scene: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            scenes_train: 20,
            scenes_test: 20,
            trajectories_per_scene: 10,
            heldout_per_scene: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_scenes: Vec<Scene>,
    pub test_scenes: Vec<Scene>,
    /// `demos[type][scene]`: training demonstrations on training scenes.
    pub demos: BTreeMap<UserType, Vec<Vec<Demonstration>>>,
    /// `heldout[type][scene]`: fresh trajectories on the same training scenes.
    pub heldout: BTreeMap<UserType, Vec<Vec<Demonstration>>>,
}

impl Dataset {
    /// The first `k` demonstrations of every scene for one user type.
    pub fn subsample(&self, user_type: UserType, k: usize) -> Vec<Demonstration> {
        self.demos[&user_type]
            .iter()
            .flat_map(|per_scene| per_scene.iter().take(k).cloned())
            .collect()
    }

    /// `k` demonstrations per scene chosen at random by `seed`.
    pub fn subsample_seeded(&self, user_type: UserType, k: usize, seed: u64) -> Vec<Demonstration> {
        self.demos[&user_type]
            .iter()
            .enumerate()
            .flat_map(|(i, per_scene)| {
                let mut idx: Vec<usize> = (0..per_scene.len()).collect();
                idx.shuffle(&mut rng_from(seed, "subsample", i as u64));
                idx.truncate(k);
                idx.sort_unstable();
                idx.into_iter().map(|j| per_scene[j].clone()).collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn heldout_flat(&self, user_type: UserType) -> Vec<Demonstration> {
        self.heldout[&user_type].iter().flatten().cloned().collect()
    }
}

pub fn scene_seed(base: u64, split: Split, index: usize, redraw: u64) -> u64 {
    derive_seed(base, &format!("scene-{}", split.name()), (redraw << 32) | index as u64)
}

fn demo_seed(base: u64, label: &str, user_type: UserType, index: usize) -> u64 {
    derive_seed(base, &format!("{label}-{}", user_type.name()), index as u64)
}

/// A training scene with `[type][demo]` training and held-out demonstrations.
type DrawnScene = (Scene, Vec<Vec<Demonstration>>, Vec<Vec<Demonstration>>);

fn draw_train_scene(cfg: &DatasetConfig, index: usize) -> Result<DrawnScene> {
    for redraw in 0..MAX_SCENE_REDRAWS {
        let seed = scene_seed(cfg.seed, Split::Train, index, redraw);
        let scene = match generate_scene(seed, Split::Train, ObjectCount::Random) {
            Ok(s) => s,
            Err(Error::PlacementFailure { .. }) => continue,
            Err(e) => return Err(e),
        };
        let mut demos = Vec::new();
        let mut held = Vec::new();
        let mut ok = true;
        for u in UserType::ALL {
            let d = synthesize_demonstrations(&scene, u, cfg.trajectories_per_scene, demo_seed(cfg.seed, "demos", u, index));
            let h = if cfg.heldout_per_scene > 0 {
                synthesize_demonstrations(&scene, u, cfg.heldout_per_scene, demo_seed(cfg.seed, "heldout", u, index))
            } else {
                Ok(Vec::new())
            };
            match (d, h) {
                (Ok(d), Ok(h)) => {
                    demos.push(d);
                    held.push(h);
                }
                (Err(Error::SynthesisFailure { .. }), _) | (_, Err(Error::SynthesisFailure { .. })) => {
                    ok = false;
                    break;
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
        if ok {
            return Ok((scene, demos, held));
        }
    }
    Err(Error::SynthesisFailure {
        label: "scene",
        samples: MAX_SCENE_REDRAWS as usize,
    })
}

pub fn generate_test_scenes(base: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count)
        .map(|i| {
            for redraw in 0..MAX_SCENE_REDRAWS {
                match generate_scene(scene_seed(base, Split::Test, i, redraw), Split::Test, ObjectCount::Random) {
                    Err(Error::PlacementFailure { .. }) => continue,
                    other => return other,
                }
            }
            Err(Error::PlacementFailure { attempts: MAX_SCENE_REDRAWS as usize })
        })
        .collect()
}

pub fn build_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    if cfg.scenes_train == 0 || cfg.scenes_test == 0 || cfg.trajectories_per_scene == 0 {
        return Err(Error::Config("scene and trajectory counts must be >= 1".into()));
    }
    let mut train_scenes = Vec::with_capacity(cfg.scenes_train);
    let mut demos: BTreeMap<UserType, Vec<Vec<Demonstration>>> = BTreeMap::new();
    let mut heldout: BTreeMap<UserType, Vec<Vec<Demonstration>>> = BTreeMap::new();
    for i in 0..cfg.scenes_train {
        let (scene, d, h) = draw_train_scene(cfg, i)?;
        train_scenes.push(scene);
        for ((u, d), h) in UserType::ALL.into_iter().zip(d).zip(h) {
            demos.entry(u).or_default().push(d);
            heldout.entry(u).or_default().push(h);
        }
    }
    Ok(Dataset {
        train_scenes,
        test_scenes: generate_test_scenes(cfg.seed, cfg.scenes_test)?,
        demos,
        heldout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::invariant_violations;
    use crate::trajectory::oracle_validity;

    #[test]
    fn small_dataset_is_consistent() {
        let cfg = DatasetConfig {
            seed: 5,
            scenes_train: 3,
            scenes_test: 2,
            trajectories_per_scene: 4,
            heldout_per_scene: 2,
        };
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(ds.train_scenes.len(), 3);
        assert_eq!(ds.test_scenes.len(), 2);
        assert!(ds.test_scenes.iter().all(|s| s.split == Split::Test));
        for u in UserType::ALL {
            assert_eq!(ds.subsample(u, 2).len(), 6);
            for (scene, demos) in ds.train_scenes.iter().zip(&ds.demos[&u]) {
                assert!(invariant_violations(scene).is_empty());
                assert_eq!(demos.len(), 4);
                for d in demos {
                    assert_eq!(d.valid, oracle_validity(scene, d.theta, u));
                }
            }
        }
        assert_eq!(build_dataset(&cfg).unwrap(), ds);
        let pick = ds.subsample_seeded(UserType::Normal, 3, 9);
        assert_eq!(pick.len(), 9);
        assert_eq!(pick, ds.subsample_seeded(UserType::Normal, 3, 9));
        assert!(pick.iter().all(|d| ds.demos[&UserType::Normal].iter().flatten().any(|e| e == d)));
    }
}
