//! Quadratic Bezier trajectories with fixed endpoints, the ground-truth
//! per-user-type validity oracle, and synthetic demonstration sampling.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng;
use crate::scene::{ObjectKind, Scene};

pub const P_INIT: [f64; 2] = [0.1, 0.1];
pub const P_FINAL: [f64; 2] = [0.9, 0.9];
pub const DEFAULT_SAMPLES: usize = 50;
pub const ORACLE_SAMPLES: usize = 200;
pub const CLEARANCE: f64 = 0.03;
pub const THETA_MIN: f64 = -0.25;
pub const THETA_MAX: f64 = 1.25;
pub const SYNTHESIS_SAMPLES: usize = 10_000;
pub const DEMOS_SCHEMA_VERSION: u32 = 1;

/// The free middle control point of the curve, i.e. the trajectory latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint(pub [f64; 2]);

impl ControlPoint {
    pub fn new(x: f64, y: f64) -> Self {
        ControlPoint([x, y])
    }

    pub fn x(self) -> f64 {
        self.0[0]
    }

    pub fn y(self) -> f64 {
        self.0[1]
    }

    pub fn clamped(self) -> Self {
        ControlPoint(self.0.map(|v| v.clamp(THETA_MIN, THETA_MAX)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserType {
    Careful,
    Normal,
    Aggressive,
}

impl UserType {
    pub const ALL: [UserType; 3] = [UserType::Careful, UserType::Normal, UserType::Aggressive];

    pub fn name(self) -> &'static str {
        match self {
            UserType::Careful => "careful",
            UserType::Normal => "normal",
            UserType::Aggressive => "aggressive",
        }
    }

    /// Whether this user type keeps clear of objects of `kind`.
    pub fn avoids(self, kind: ObjectKind) -> bool {
        match self {
            UserType::Careful => true,
            UserType::Normal => kind == ObjectKind::Glass,
            UserType::Aggressive => false,
        }
    }
}

impl fmt::Display for UserType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UserType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        UserType::ALL
            .into_iter()
            .find(|u| u.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown user type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub scene: Scene,
    pub theta: ControlPoint,
    pub user_type: UserType,
    pub valid: bool,
}

#[inline]
fn eval_unchecked(theta: ControlPoint, t: f64) -> [f64; 2] {
    let a = (1.0 - t) * (1.0 - t);
    let b = 2.0 * (1.0 - t) * t;
    let c = t * t;
    [
        a * P_INIT[0] + b * theta.0[0] + c * P_FINAL[0],
        a * P_INIT[1] + b * theta.0[1] + c * P_FINAL[1],
    ]
}

pub fn bezier_eval(theta: ControlPoint, t: f64) -> Result<[f64; 2]> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(t));
    }
    Ok(eval_unchecked(theta, t))
}

pub fn sample_trajectory(theta: ControlPoint, steps: usize) -> Result<Trajectory> {
    if steps < 2 {
        return Err(Error::Precondition(format!("T = {steps} < 2")));
    }
    Ok(Trajectory {
        points: sample_points(theta, steps),
    })
}

/// `steps + 1` evenly spaced curve points; endpoints are exact.
pub(crate) fn sample_points(theta: ControlPoint, steps: usize) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = (0..=steps)
        .map(|j| eval_unchecked(theta, j as f64 / steps as f64))
        .collect();
    pts[0] = P_INIT;
    pts[steps] = P_FINAL;
    pts
}

/// Least-squares control point for a trajectory sampled at uniform `t`.
pub fn bezier_fit(traj: &Trajectory) -> Result<ControlPoint> {
    let n = traj.points.len();
    if n < 3 {
        return Err(Error::Precondition("need at least 3 points".into()));
    }
    let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() <= 1e-9 && (a[1] - b[1]).abs() <= 1e-9;
    if !close(traj.points[0], P_INIT) || !close(traj.points[n - 1], P_FINAL) {
        return Err(Error::EndpointMismatch);
    }
    let steps = (n - 1) as f64;
    let mut num = [0.0; 2];
    let mut den = 0.0;
    for (j, p) in traj.points.iter().enumerate() {
        let t = j as f64 / steps;
        let w = 2.0 * (1.0 - t) * t;
        let a = (1.0 - t) * (1.0 - t);
        let c = t * t;
        for d in 0..2 {
            num[d] += w * (p[d] - a * P_INIT[d] - c * P_FINAL[d]);
        }
        den += w * w;
    }
    Ok(ControlPoint([num[0] / den, num[1] / den]))
}

/// Minimum footprint distance between the curve and every object the user type avoids.
/// `None` when no object is relevant.
pub fn clearance(scene: &Scene, theta: ControlPoint, user_type: UserType, samples: usize) -> Option<f64> {
    let relevant: Vec<_> = scene
        .objects
        .iter()
        .filter(|o| user_type.avoids(o.kind))
        .collect();
    if relevant.is_empty() {
        return None;
    }
    let mut best = f64::INFINITY;
    for j in 0..=samples {
        let p = eval_unchecked(theta, j as f64 / samples as f64);
        for o in &relevant {
            best = best.min(o.footprint_distance(p));
        }
    }
    Some(best)
}

pub fn oracle_validity(scene: &Scene, theta: ControlPoint, user_type: UserType) -> bool {
    match user_type {
        UserType::Aggressive => true,
        _ => clearance(scene, theta, user_type, ORACLE_SAMPLES).is_none_or(|c| c >= CLEARANCE),
    }
}

/// Draws demonstrations for one scene: a half/half valid/invalid split for
/// the constrained types, all-valid for the aggressive type.
pub fn synthesize_demonstrations(
    scene: &Scene,
    user_type: UserType,
    count: usize,
    seed: u64,
) -> Result<Vec<Demonstration>> {
    if count == 0 {
        return Err(Error::Precondition("count must be >= 1".into()));
    }
    let mut rng = rng(seed);
    let (mut need_valid, mut need_invalid) = match user_type {
        UserType::Aggressive => (count, 0),
        _ => (count.div_ceil(2), count / 2),
    };
    let mut valid = Vec::with_capacity(need_valid);
    let mut invalid = Vec::with_capacity(need_invalid);
    let mut drawn = 0;
    while need_valid + need_invalid > 0 {
        if drawn == SYNTHESIS_SAMPLES {
            let label = if need_valid > 0 { "valid" } else { "invalid" };
            return Err(Error::SynthesisFailure {
                label,
                samples: SYNTHESIS_SAMPLES,
            });
        }
        drawn += 1;
        let theta = ControlPoint::new(rng.random::<f64>(), rng.random::<f64>());
        let ok = oracle_validity(scene, theta, user_type);
        if ok && need_valid > 0 {
            need_valid -= 1;
            valid.push(theta);
        } else if !ok && need_invalid > 0 {
            need_invalid -= 1;
            invalid.push(theta);
        }
    }
    // interleave so that any prefix stays roughly balanced
    let mut out = Vec::with_capacity(count);
    let mut vi = valid.into_iter();
    let mut ii = invalid.into_iter();
    loop {
        let a = vi.next();
        let b = ii.next();
        if a.is_none() && b.is_none() {
            break;
        }
        for (theta, v) in [(a, true), (b, false)] {
            if let Some(theta) = theta {
                out.push(Demonstration {
                    scene: scene.clone(),
                    theta,
                    user_type,
                    valid: v,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoRecord {
    pub theta: [f64; 2],
    pub valid: bool,
}

/// On-disk demonstration list for one scene and user type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemosFile {
    pub version: u32,
    pub user_type: UserType,
    pub scene_path: String,
    pub demos: Vec<DemoRecord>,
}

impl DemosFile {
    pub fn from_demos(user_type: UserType, scene_path: &str, demos: &[Demonstration]) -> Self {
        DemosFile {
            version: DEMOS_SCHEMA_VERSION,
            user_type,
            scene_path: scene_path.to_string(),
            demos: demos
                .iter()
                .map(|d| DemoRecord {
                    theta: d.theta.0,
                    valid: d.valid,
                })
                .collect(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("demos serialize");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DemosFile =
            serde_json::from_str(&text).map_err(|e| Error::schema(path, e.to_string()))?;
        if file.version != DEMOS_SCHEMA_VERSION {
            return Err(Error::schema(path, format!("unsupported version {}", file.version)));
        }
        Ok(file)
    }

    pub fn into_demonstrations(self, scene: &Scene) -> Vec<Demonstration> {
        self.demos
            .into_iter()
            .map(|r| Demonstration {
                scene: scene.clone(),
                theta: ControlPoint(r.theta),
                user_type: self.user_type,
                valid: r.valid,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, ObjectCount, SceneObject, Split};

    fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
    }

    #[test]
    fn eval_examples() {
        let mid = ControlPoint::new(0.5, 0.5);
        assert_eq!(bezier_eval(mid, 0.0).unwrap(), [0.1, 0.1]);
        assert!(close(bezier_eval(mid, 0.5).unwrap(), [0.5, 0.5], 1e-15));
        let p = bezier_eval(ControlPoint::new(0.9, 0.1), 0.5).unwrap();
        assert!(close(p, [0.7, 0.3], 1e-15));
        assert!(matches!(bezier_eval(mid, 1.5), Err(Error::Domain(_))));
        assert!(bezier_eval(mid, -0.01).is_err());
    }

    #[test]
    fn sampling_cardinality_and_midpoint() {
        let mid = ControlPoint::new(0.5, 0.5);
        let t = sample_trajectory(mid, 2).unwrap();
        assert_eq!(t.points.len(), 3);
        assert!(close(t.points[1], [0.5, 0.5], 1e-15));
        assert_eq!(t.points[0], P_INIT);
        assert_eq!(t.points[2], P_FINAL);
        assert_eq!(sample_trajectory(mid, 50).unwrap().points.len(), 51);
        assert!(sample_trajectory(mid, 1).is_err());
    }

    #[test]
    fn fit_examples() {
        let th = ControlPoint::new(0.3, 0.8);
        let fit = bezier_fit(&sample_trajectory(th, 50).unwrap()).unwrap();
        assert!(close(fit.0, th.0, 1e-9));
        let line = Trajectory {
            points: (0..=20)
                .map(|j| {
                    let t = j as f64 / 20.0;
                    [0.1 + 0.8 * t, 0.1 + 0.8 * t]
                })
                .collect(),
        };
        assert!(close(bezier_fit(&line).unwrap().0, [0.5, 0.5], 1e-12));
        let mut bad = sample_trajectory(th, 10).unwrap();
        bad.points[0] = [0.0, 0.0];
        assert!(matches!(bezier_fit(&bad), Err(Error::EndpointMismatch)));
    }

    #[test]
    fn zero_clearance_glass_is_invalid() {
        let theta = ControlPoint::new(0.7, 0.2);
        let c = bezier_eval(theta, 0.5).unwrap();
        let scene = Scene {
            objects: vec![SceneObject {
                kind: ObjectKind::Glass,
                cx: c[0],
                cy: c[1],
                radius: 0.05,
                angle: 0.0,
                variant: Split::Train,
            }],
            seed: 0,
            split: Split::Train,
        };
        assert!(!oracle_validity(&scene, theta, UserType::Careful));
        assert!(!oracle_validity(&scene, theta, UserType::Normal));
        assert!(oracle_validity(&scene, theta, UserType::Aggressive));
    }

    #[test]
    fn demonstrations_are_balanced_and_correct() {
        let scene = generate_scene(3, Split::Train, ObjectCount::Exactly(4)).unwrap();
        let demos = synthesize_demonstrations(&scene, UserType::Careful, 10, 1).unwrap();
        assert_eq!(demos.iter().filter(|d| d.valid).count(), 5);
        assert_eq!(demos.iter().filter(|d| !d.valid).count(), 5);
        for d in &demos {
            assert_eq!(d.valid, oracle_validity(&scene, d.theta, d.user_type));
        }
        let odd = synthesize_demonstrations(&scene, UserType::Careful, 7, 1).unwrap();
        assert_eq!(odd.iter().filter(|d| d.valid).count(), 4);
        let agg = synthesize_demonstrations(&scene, UserType::Aggressive, 10, 1).unwrap();
        assert!(agg.iter().all(|d| d.valid));
        assert_eq!(agg.len(), 10);
        assert_eq!(
            synthesize_demonstrations(&scene, UserType::Careful, 10, 1).unwrap(),
            demos
        );
        assert!(synthesize_demonstrations(&scene, UserType::Careful, 0, 1).is_err());
    }

    #[test]
    fn normal_without_glass_cannot_fill_invalid_bucket() {
        let scene = Scene {
            objects: vec![],
            seed: 0,
            split: Split::Train,
        };
        assert!(matches!(
            synthesize_demonstrations(&scene, UserType::Normal, 4, 0),
            Err(Error::SynthesisFailure { label: "invalid", .. })
        ));
    }
}
