//! Gradient ascent of the validity score in control-point space.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scene::Scene;
use crate::specmodel::{concat_z, SpecModel, LATENT_DIM};
use crate::trajectory::{oracle_validity, ControlPoint, UserType};

pub const MAX_STEPS: usize = 30;
pub const STEP_SIZE: f64 = 0.05;
pub const STOP_SCORE: f64 = 0.95;
/// Rejection-sampling budget for an oracle-invalid starting point.
pub const INIT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub initial_theta: ControlPoint,
    /// Every visited control point, starting with `initial_theta`.
    pub step_thetas: Vec<ControlPoint>,
    pub scores: Vec<f64>,
    pub final_valid_oracle: bool,
    pub final_valid_model: bool,
}

impl RefinementTrace {
    pub fn final_theta(&self) -> ControlPoint {
        *self.step_thetas.last().expect("trace holds the initial point")
    }

    pub fn final_score(&self) -> f64 {
        *self.scores.last().expect("trace holds the initial score")
    }

    /// Gradient steps actually taken.
    pub fn steps(&self) -> usize {
        self.step_thetas.len() - 1
    }
}

/// Ascends `classify(concat(mu, theta))` with unit-normalized gradient steps.
pub fn refine_trajectory(
    model: &SpecModel,
    scene: &Scene,
    initial_theta: ControlPoint,
    max_steps: usize,
    step_size: f64,
) -> Result<RefinementTrace> {
    if model.is_untrained() {
        return Err(Error::UntrainedModel);
    }
    if max_steps == 0 {
        return Err(Error::Precondition("max_steps must be >= 1".into()));
    }
    let mu = model.encode(&model.render(scene), None)?.mu;
    let mut theta = initial_theta.clamped();
    let mut thetas = vec![theta];
    let (mut score, mut grad) = model.classify_with_grad(&concat_z(&mu, theta))?;
    let mut scores = vec![score];
    for _ in 0..max_steps {
        if score >= STOP_SCORE {
            break;
        }
        let g = [grad[LATENT_DIM], grad[LATENT_DIM + 1]];
        let norm = g[0].hypot(g[1]);
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        theta = ControlPoint::new(theta.x() + step_size * g[0] / norm, theta.y() + step_size * g[1] / norm).clamped();
        (score, grad) = model.classify_with_grad(&concat_z(&mu, theta))?;
        thetas.push(theta);
        scores.push(score);
    }
    Ok(RefinementTrace {
        initial_theta,
        final_valid_oracle: oracle_validity(scene, theta, model.user_type),
        final_valid_model: score >= 0.5,
        step_thetas: thetas,
        scores,
    })
}

/// Oracle-invalid starting point for `user_type`; uniform when none is found
/// (always the case for aggressive users).
pub fn initial_theta(scene: &Scene, user_type: UserType, seed: u64, trial: u64) -> ControlPoint {
    let mut r = rng_from(seed, "refine-init", (scene.seed << 8) ^ trial);
    let first = ControlPoint::new(r.random(), r.random());
    if user_type == UserType::Aggressive {
        return first;
    }
    let mut theta = first;
    for _ in 0..INIT_ATTEMPTS {
        if !oracle_validity(scene, theta, user_type) {
            return theta;
        }
        theta = ControlPoint::new(r.random(), r.random());
    }
    first
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementOutcome {
    pub user_type: UserType,
    pub scene_index: usize,
    pub trial: usize,
    pub trace: RefinementTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTable {
    pub outcomes: Vec<RefinementOutcome>,
}

impl RefinementTable {
    /// Fraction of oracle-valid final trajectories for one user type.
    pub fn success_rate(&self, user_type: UserType) -> Option<f64> {
        let rows: Vec<_> = self.outcomes.iter().filter(|o| o.user_type == user_type).collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().filter(|o| o.trace.final_valid_oracle).count() as f64 / rows.len() as f64)
    }

    pub fn rates(&self) -> BTreeMap<UserType, f64> {
        UserType::ALL
            .into_iter()
            .filter_map(|u| self.success_rate(u).map(|r| (u, r)))
            .collect()
    }
}

pub fn evaluate_refinement(
    models: &BTreeMap<UserType, SpecModel>,
    test_scenes: &[Scene],
    trials_per_scene: usize,
    seed: u64,
) -> Result<RefinementTable> {
    let mut outcomes = Vec::new();
    for (&user_type, model) in models {
        for (scene_index, scene) in test_scenes.iter().enumerate() {
            for trial in 0..trials_per_scene {
                let start = initial_theta(scene, user_type, seed, trial as u64);
                let trace = refine_trajectory(model, scene, start, MAX_STEPS, STEP_SIZE)?;
                outcomes.push(RefinementOutcome {
                    user_type,
                    scene_index,
                    trial,
                    trace,
                });
            }
        }
    }
    Ok(RefinementTable { outcomes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceFile {
    pub scene_path: String,
    pub user_type: UserType,
    pub thetas: Vec<[f64; 2]>,
    pub scores: Vec<f64>,
    pub success: bool,
}

impl TraceFile {
    pub fn from_trace(trace: &RefinementTrace, scene_path: &str, user_type: UserType) -> Self {
        TraceFile {
            scene_path: scene_path.to_string(),
            user_type,
            thetas: trace.step_thetas.iter().map(|t| t.0).collect(),
            scores: trace.scores.clone(),
            success: trace.final_valid_oracle,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("trace serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: TraceFile = serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
        if file.thetas.len() != file.scores.len() || file.thetas.is_empty() {
            return Err(Error::schema(path, "thetas and scores must be non-empty and equal length"));
        }
        Ok(file)
    }
}
