//! Experiment orchestration behind the command-line tool: dataset files,
//! training sweeps, accuracy curves, refinement and causal reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{causal_table, compare, entailed_validity, CausalConfig, CausalReport};
use crate::dataset::{build_dataset, Dataset, DatasetConfig};
use crate::diffnet::{AdamConfig, OptimizerState, ParamStore};
use crate::error::{Error, Result};
use crate::irl::{load_irl, save_irl, train_irl, IrlConfig, RewardModel};
use crate::refine::{evaluate_refinement, RefinementTable, TraceFile};
use crate::scene::{render_scene, scene_from_files, scene_to_files, Scene};
use crate::specmodel::{
    accuracy, load_checkpoint, save_checkpoint, Arch, EpochLog, LossWeights, SpecModel, Trainer, TrainConfig,
    TrainingSet,
};
use crate::svg::{trajectory_overlay, LineChart, Series};
use crate::trajectory::{DemosFile, Demonstration, UserType};

pub const MANIFEST: &str = "manifest.json";
pub const ACCURACY_CURVE_CSV: &str = "accuracy_curve.csv";
pub const ACCURACY_RUNS_CSV: &str = "accuracy_runs.csv";
pub const REFINE_CSV: &str = "refine_table.csv";
pub const CAUSAL_CSV: &str = "causal_report.csv";
pub const CAUSAL_TABLE: &str = "causal_table.txt";
pub const USER_TYPE_CSV: &str = "user_type_intervention.csv";
pub const IRL_NAME: &str = "irl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Full,
    Ae,
    Classifier,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [Ablation::Full, Ablation::Ae, Ablation::Classifier];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::Ae => "ae",
            Ablation::Classifier => "classifier",
        }
    }

    /// AE drops the KL term; the classifier ablation keeps only the
    /// classification term.
    pub fn weights(self, base: LossWeights) -> LossWeights {
        match self {
            Ablation::Full => base,
            Ablation::Ae => LossWeights { beta: 0.0, ..base },
            Ablation::Classifier => LossWeights {
                alpha: 0.0,
                beta: 0.0,
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Base seed for scenes, demonstrations, refinement starts and causal draws.
    pub seed: u64,
    /// Training seeds; each randomizes the demo subsample and the initialization.
    pub seeds: Vec<u64>,
    pub scenes_train: usize,
    pub scenes_test: usize,
    pub trajectories_per_scene: Vec<usize>,
    pub heldout_per_scene: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ablations: Vec<Ablation>,
    pub user_types: Vec<UserType>,
    /// User types swept by `eval`.
    pub eval_user_types: Vec<UserType>,
    pub include_irl: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub irl_epochs: usize,
    pub irl_learning_rate: f64,
    pub refine_trials: usize,
    pub causal_thetas_per_scene: usize,
    pub causal_bootstrap: usize,
    pub causal_effect_threshold: f64,
    pub jobs: usize,
    /// Continue from existing checkpoints instead of retraining.
    pub resume: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        ExperimentConfig {
            seed: 0,
            seeds: (0..10).collect(),
            scenes_train: 20,
            scenes_test: 20,
            trajectories_per_scene: (1..=10).collect(),
            heldout_per_scene: 10,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            ablations: Ablation::ALL.to_vec(),
            user_types: UserType::ALL.to_vec(),
            eval_user_types: vec![UserType::Careful],
            include_irl: true,
            epochs: 200,
            batch_size: 32,
            learning_rate: AdamConfig::default().lr,
            irl_epochs: IrlConfig::default().epochs,
            irl_learning_rate: IrlConfig::default().adam.lr,
            refine_trials: 5,
            causal_thetas_per_scene: 200,
            causal_bootstrap: 1000,
            causal_effect_threshold: 0.05,
            jobs: 1,
            resume: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.scenes_train == 0 || self.scenes_test == 0 {
            return bad("scenes_train and scenes_test must be >= 1");
        }
        if self.trajectories_per_scene.is_empty() || self.trajectories_per_scene.contains(&0) {
            return bad("trajectories_per_scene must be a non-empty list of values >= 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.ablations.is_empty() || self.user_types.is_empty() {
            return bad("ablations and user_types must not be empty");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.jobs == 0 {
            return bad("epochs, batch_size and jobs must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.irl_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if [self.alpha, self.beta, self.gamma].iter().any(|c| !c.is_finite() || *c < 0.0) {
            return bad("loss coefficients must be finite and non-negative");
        }
        if self.heldout_per_scene == 0 || self.refine_trials == 0 || self.causal_thetas_per_scene == 0 {
            return bad("heldout_per_scene, refine_trials and causal_thetas_per_scene must be >= 1");
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.trajectories_per_scene.iter().copied().max().unwrap_or(1)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            seed: self.seed,
            scenes_train: self.scenes_train,
            scenes_test: self.scenes_test,
            trajectories_per_scene: self.max_k(),
            heldout_per_scene: self.heldout_per_scene,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            adam: AdamConfig {
                lr: self.learning_rate,
                ..AdamConfig::default()
            },
        }
    }

    pub fn irl_config(&self, seed: u64) -> IrlConfig {
        IrlConfig {
            epochs: self.irl_epochs,
            seed,
            adam: AdamConfig {
                lr: self.irl_learning_rate,
                ..AdamConfig::default()
            },
        }
    }

    pub fn causal_config(&self) -> CausalConfig {
        CausalConfig {
            thetas_per_scene: self.causal_thetas_per_scene,
            bootstrap_resamples: self.causal_bootstrap,
            seed: self.seed,
            effect_threshold: self.causal_effect_threshold,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", self.jobs)))
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub scenes_train: usize,
    pub scenes_test: usize,
    pub trajectories_per_scene: usize,
    pub heldout_per_scene: usize,
    pub train_scene_seeds: Vec<u64>,
    pub test_scene_seeds: Vec<u64>,
}

pub fn scene_dir(split: &str, index: usize) -> String {
    format!("{split}/scene_{index:03}")
}

fn demos_name(prefix: &str, u: UserType) -> String {
    format!("{prefix}_{u}.json")
}

/// Writes scenes, demonstration files, `scenes.csv` and the manifest.
pub fn write_dataset(ds: &Dataset, cfg: &DatasetConfig, out: &Path) -> Result<()> {
    mkdir(out)?;
    let mut index = String::from("split,index,seed,objects,kinds\n");
    for (split, scenes) in [("train", &ds.train_scenes), ("test", &ds.test_scenes)] {
        for (i, s) in scenes.iter().enumerate() {
            let rel = scene_dir(split, i);
            let dir = out.join(&rel);
            scene_to_files(s, &dir)?;
            let kinds: Vec<&str> = s.objects.iter().map(|o| o.kind.name()).collect();
            let _ = writeln!(index, "{split},{i},{},{},{}", s.seed, s.objects.len(), kinds.join(" "));
            if split == "train" {
                for u in UserType::ALL {
                    DemosFile::from_demos(u, &rel, &ds.demos[&u][i]).write(&dir.join(demos_name("demos", u)))?;
                    DemosFile::from_demos(u, &rel, &ds.heldout[&u][i]).write(&dir.join(demos_name("heldout", u)))?;
                }
            }
        }
    }
    write(&out.join("scenes.csv"), &index)?;
    let manifest = Manifest {
        version: 1,
        seed: cfg.seed,
        scenes_train: cfg.scenes_train,
        scenes_test: cfg.scenes_test,
        trajectories_per_scene: cfg.trajectories_per_scene,
        heldout_per_scene: cfg.heldout_per_scene,
        train_scene_seeds: ds.train_scenes.iter().map(|s| s.seed).collect(),
        test_scene_seeds: ds.test_scenes.iter().map(|s| s.seed).collect(),
    };
    write(&out.join(MANIFEST), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
}

pub fn read_dataset(data: &Path) -> Result<Dataset> {
    let mpath = data.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read(&mpath)?).map_err(|e| Error::schema(&mpath, e.to_string()))?;
    let load_scenes = |split: &str, n: usize| -> Result<Vec<Scene>> {
        (0..n).map(|i| scene_from_files(&data.join(scene_dir(split, i)))).collect()
    };
    let train_scenes = load_scenes("train", manifest.scenes_train)?;
    let test_scenes = load_scenes("test", manifest.scenes_test)?;
    let mut demos = BTreeMap::new();
    let mut heldout = BTreeMap::new();
    for u in UserType::ALL {
        for (prefix, target) in [("demos", &mut demos), ("heldout", &mut heldout)] {
            let mut per_type = Vec::with_capacity(train_scenes.len());
            for (i, s) in train_scenes.iter().enumerate() {
                let path = data.join(scene_dir("train", i)).join(demos_name(prefix, u));
                let file = DemosFile::read(&path)?;
                if file.user_type != u {
                    return Err(Error::schema(&path, format!("expected user type {u}")));
                }
                per_type.push(file.into_demonstrations(s));
            }
            target.insert(u, per_type);
        }
    }
    Ok(Dataset {
        train_scenes,
        test_scenes,
        demos,
        heldout,
    })
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let dcfg = cfg.dataset_config();
    let ds = build_dataset(&dcfg)?;
    write_dataset(&ds, &dcfg, out)?;
    Ok(ds)
}

pub fn model_stem(dir: &Path, ablation: Ablation, u: UserType, seed: u64) -> PathBuf {
    dir.join(format!("{}_{u}_s{seed}", ablation.name()))
}

pub fn irl_stem(dir: &Path, u: UserType, seed: u64) -> PathBuf {
    dir.join(format!("{IRL_NAME}_{u}_s{seed}"))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub const LOG_HEADER: &str = "epoch,recon,kl,cls,alpha_recon,beta_kl,gamma_cls,total,train_accuracy";

fn log_line(e: &EpochLog, w: LossWeights) -> String {
    let l = e.loss;
    format!(
        "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.6}\n",
        e.epoch,
        l.recon,
        l.kl,
        l.cls,
        w.alpha * l.recon,
        w.beta * l.kl,
        w.gamma * l.cls,
        l.total,
        e.train_accuracy
    )
}

/// Trains one model to `cfg.epochs`, resuming from `stem` when allowed.
fn train_job(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    ablation: Ablation,
    u: UserType,
    seed: u64,
    k: usize,
    stem: &Path,
) -> Result<SpecModel> {
    let tcfg = cfg.train_config(seed);
    let demos = ds.subsample_seeded(u, k, seed);
    let adam_path = with_suffix(stem, "_adam.spc");
    let log_path = with_suffix(stem, "_log.csv");
    let weights = ablation.weights(cfg.weights());
    let mut log = format!("{LOG_HEADER}\n");
    let mut trainer = None;
    if cfg.resume && stem.with_extension("spc").exists() && adam_path.exists() {
        let (model, meta) = load_checkpoint(stem)?;
        if model.weights != weights || model.user_type != u || meta.seed != seed {
            return Err(Error::Config(format!("checkpoint {} does not match the config", stem.display())));
        }
        if meta.epoch >= cfg.epochs {
            return Ok(model);
        }
        let opt = OptimizerState::from_store(&ParamStore::load(&adam_path)?, tcfg.adam);
        if log_path.exists() {
            for line in read(&log_path)?.lines().skip(1).take(meta.epoch) {
                log.push_str(line);
                log.push('\n');
            }
        }
        trainer = Some(Trainer::resume(model, opt, tcfg, meta.epoch));
    }
    let mut trainer = trainer.unwrap_or_else(|| Trainer::new(SpecModel::new(u, Arch::default(), weights, seed), tcfg));
    let data = TrainingSet::from_demonstrations(&trainer.model, &demos)?;
    for e in trainer.train_until(&data, cfg.epochs)? {
        log.push_str(&log_line(&e, weights));
    }
    save_checkpoint(&trainer.model, trainer.epoch, stem)?;
    trainer.optimizer.to_store().save(&adam_path)?;
    write(&log_path, &log)?;
    Ok(trainer.model)
}

fn irl_job(cfg: &ExperimentConfig, ds: &Dataset, u: UserType, seed: u64, k: usize, stem: &Path) -> Result<RewardModel> {
    if cfg.resume && stem.with_extension("spc").exists() {
        return load_irl(stem);
    }
    let (model, log) = train_irl(&ds.subsample_seeded(u, k, seed), cfg.irl_config(seed))?;
    save_irl(&model, stem)?;
    let mut text = format!("{LOG_HEADER}\n");
    for e in &log {
        text.push_str(&log_line(e, LossWeights { alpha: 0.0, beta: 0.0, gamma: 1.0 }));
    }
    write(&with_suffix(stem, "_log.csv"), &text)?;
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Job {
    Spec(UserType, Ablation, u64),
    Irl(UserType, u64),
}

/// One checkpoint per (user type, ablation, seed), plus IRL baselines, all
/// trained on `max(trajectories_per_scene)` demonstrations per scene.
pub fn cmd_train(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let ds = read_dataset(data)?;
    mkdir(out)?;
    let mut jobs = Vec::new();
    for &u in &cfg.user_types {
        for &a in &cfg.ablations {
            for &s in &cfg.seeds {
                jobs.push(Job::Spec(u, a, s));
            }
        }
        if cfg.include_irl {
            for &s in &cfg.seeds {
                jobs.push(Job::Irl(u, s));
            }
        }
    }
    let k = cfg.max_k();
    cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|&job| match job {
                Job::Spec(u, a, s) => {
                    let stem = model_stem(out, a, u, s);
                    train_job(cfg, &ds, a, u, s, k, &stem).map(|_| stem)
                }
                Job::Irl(u, s) => {
                    let stem = irl_stem(out, u, s);
                    irl_job(cfg, &ds, u, s, k, &stem).map(|_| stem)
                }
            })
            .collect()
    })
}

pub fn irl_accuracy(model: &RewardModel, demos: &[Demonstration]) -> Result<f64> {
    if demos.is_empty() {
        return Err(Error::Precondition("no demonstrations to score".into()));
    }
    let mut cache: Vec<(&Scene, crate::scene::Image)> = Vec::new();
    let mut correct = 0;
    for d in demos {
        let idx = match cache.iter().position(|(s, _)| **s == d.scene) {
            Some(i) => i,
            None => {
                cache.push((&d.scene, render_scene(&d.scene)));
                cache.len() - 1
            }
        };
        if model.classify(&cache[idx].1, d.theta)? == d.valid {
            correct += 1;
        }
    }
    Ok(correct as f64 / demos.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRun {
    pub user_type: UserType,
    pub model: String,
    pub k: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub user_type: UserType,
    pub model: String,
    pub k: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub runs: usize,
}

pub const CURVE_HEADER: &str = "user_type,model,k,mean,q1,median,q3,min,max,runs";

pub fn summarize(runs: &[AccuracyRun]) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(UserType, String, usize), Vec<f64>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.user_type, r.model.clone(), r.k)).or_default().push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|((user_type, model, k), mut v)| {
            v.sort_by(f64::total_cmp);
            let q = |p| crate::causal::percentile(&v, p);
            CurvePoint {
                user_type,
                model,
                k,
                mean: v.iter().sum::<f64>() / v.len() as f64,
                q1: q(0.25),
                median: q(0.5),
                q3: q(0.75),
                min: v[0],
                max: v[v.len() - 1],
                runs: v.len(),
            }
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            p.user_type, p.model, p.k, p.mean, p.q1, p.median, p.q3, p.min, p.max, p.runs
        );
    }
    out
}

fn model_names(cfg: &ExperimentConfig) -> Vec<String> {
    let mut names: Vec<String> = cfg.ablations.iter().map(|a| a.name().to_string()).collect();
    if cfg.include_irl {
        names.push(IRL_NAME.into());
    }
    names
}

/// Accuracy-vs-demonstrations sweep; per-run checkpoints are cached under
/// `<ckpt>/eval` and reused when `resume` is set.
pub fn cmd_eval(cfg: &ExperimentConfig, data: &Path, ckpt: &Path, out: &Path) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    let ds = read_dataset(data)?;
    let cache = ckpt.join("eval");
    mkdir(&cache)?;
    mkdir(out)?;
    let names = model_names(cfg);
    let mut jobs = Vec::new();
    for &u in &cfg.eval_user_types {
        for &k in &cfg.trajectories_per_scene {
            for name in &names {
                for &s in &cfg.seeds {
                    jobs.push((u, k, name.clone(), s));
                }
            }
        }
    }
    let runs: Vec<AccuracyRun> = cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|(u, k, name, s)| {
                let held = ds.heldout_flat(*u);
                let accuracy = if name == IRL_NAME {
                    let stem = cache.join(format!("{IRL_NAME}_{u}_k{k}_s{s}"));
                    irl_accuracy(&irl_job(cfg, &ds, *u, *s, *k, &stem)?, &held)?
                } else {
                    let a = *cfg.ablations.iter().find(|a| a.name() == name).expect("known ablation");
                    let stem = cache.join(format!("{name}_{u}_k{k}_s{s}"));
                    accuracy(&train_job(cfg, &ds, a, *u, *s, *k, &stem)?, &held)?
                };
                Ok(AccuracyRun {
                    user_type: *u,
                    model: name.clone(),
                    k: *k,
                    seed: *s,
                    accuracy,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut text = String::from("user_type,model,k,seed,accuracy\n");
    for r in &runs {
        let _ = writeln!(text, "{},{},{},{},{:.6}", r.user_type, r.model, r.k, r.seed, r.accuracy);
    }
    write(&out.join(ACCURACY_RUNS_CSV), &text)?;
    let curve = summarize(&runs);
    write(&out.join(ACCURACY_CURVE_CSV), &curve_csv(&curve))?;
    for &u in &cfg.eval_user_types {
        let chart = LineChart {
            title: format!("held-out accuracy ({u})"),
            x_label: "trajectories per scene".into(),
            y_label: "accuracy".into(),
            series: names
                .iter()
                .map(|n| Series {
                    name: n.clone(),
                    points: curve
                        .iter()
                        .filter(|p| p.user_type == u && &p.model == n)
                        .map(|p| (p.k as f64, p.mean))
                        .collect(),
                })
                .collect(),
            y_range: Some((0.0, 1.0)),
        };
        write(&out.join(format!("accuracy_curve_{u}.svg")), &chart.to_svg())?;
    }
    Ok(curve)
}

/// Full-ablation models of the first configured seed, one per user type.
pub fn load_full_models(cfg: &ExperimentConfig, ckpt: &Path) -> Result<BTreeMap<UserType, SpecModel>> {
    let seed = cfg.seeds[0];
    cfg.user_types
        .iter()
        .map(|&u| {
            let (m, _) = load_checkpoint(&model_stem(ckpt, Ablation::Full, u, seed))?;
            if m.user_type != u {
                return Err(Error::Config(format!("checkpoint for {u} holds a {} model", m.user_type)));
            }
            Ok((u, m))
        })
        .collect()
}

pub const REFINE_HEADER: &str = "user_type,trials,successes,success_rate";

pub fn refine_csv(table: &RefinementTable) -> String {
    let mut out = format!("{REFINE_HEADER}\n");
    for u in UserType::ALL {
        let rows: Vec<_> = table.outcomes.iter().filter(|o| o.user_type == u).collect();
        if rows.is_empty() {
            continue;
        }
        let ok = rows.iter().filter(|o| o.trace.final_valid_oracle).count();
        let _ = writeln!(out, "{u},{},{ok},{:.6}", rows.len(), ok as f64 / rows.len() as f64);
    }
    out
}

pub fn cmd_refine(cfg: &ExperimentConfig, data: &Path, ckpt: &Path, out: &Path) -> Result<RefinementTable> {
    cfg.validate()?;
    let ds = read_dataset(data)?;
    let models = load_full_models(cfg, ckpt)?;
    let table = evaluate_refinement(&models, &ds.test_scenes, cfg.refine_trials, cfg.seed)?;
    let traces = out.join("refine");
    mkdir(&traces)?;
    for o in &table.outcomes {
        let name = format!("{}_scene{:03}_trial{}", o.user_type, o.scene_index, o.trial);
        let scene_path = scene_dir("test", o.scene_index);
        TraceFile::from_trace(&o.trace, &scene_path, o.user_type).write(&traces.join(format!("{name}.json")))?;
        let svg = trajectory_overlay(&ds.test_scenes[o.scene_index], &o.trace.step_thetas);
        write(&traces.join(format!("{name}.svg")), &svg)?;
    }
    write(&out.join(REFINE_CSV), &refine_csv(&table))?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalOutput {
    pub report: CausalReport,
    pub user_type_csv: String,
}

/// Symbol interventions per model plus every user-type swap, on the test
/// scenes.
pub fn causal_outputs(models: &BTreeMap<UserType, SpecModel>, scenes: &[Scene], cfg: &CausalConfig) -> Result<CausalOutput> {
    let report = causal_table(models, scenes, cfg)?;
    let mut dists = BTreeMap::new();
    for (&u, m) in models {
        dists.insert(u, entailed_validity(m, scenes, cfg)?);
    }
    let mut csv = String::from("source,target,source_mean,target_mean,delta,ci_low,ci_high,significant\n");
    for (&a, da) in &dists {
        for (&b, db) in &dists {
            let e = compare(da, db, cfg)?;
            let _ = writeln!(
                csv,
                "{a},{b},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                da.mean, db.mean, e.delta, e.ci_low, e.ci_high, e.significant
            );
        }
    }
    Ok(CausalOutput {
        report,
        user_type_csv: csv,
    })
}

pub fn cmd_causal(cfg: &ExperimentConfig, data: &Path, ckpt: &Path, out: &Path) -> Result<CausalOutput> {
    cfg.validate()?;
    let ds = read_dataset(data)?;
    let models = load_full_models(cfg, ckpt)?;
    let output = causal_outputs(&models, &ds.test_scenes, &cfg.causal_config())?;
    mkdir(out)?;
    output.report.write_csv(&out.join(CAUSAL_CSV))?;
    write(&out.join(CAUSAL_TABLE), &output.report.to_table())?;
    write(&out.join(USER_TYPE_CSV), &output.user_type_csv)?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.trajectories_per_scene, (1..=10).collect::<Vec<_>>());
        let cfg = ExperimentConfig::from_json(r#"{"seeds":[3],"epochs":5,"ablations":["ae"]}"#).unwrap();
        assert_eq!((cfg.seeds.clone(), cfg.epochs), (vec![3], 5));
        assert_eq!(cfg.ablations, vec![Ablation::Ae]);
        for bad in [r#"{"scenes_train":0}"#, r#"{"bogus":1}"#, r#"{"trajectories_per_scene":[]}"#, "nope"] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn ablation_coefficients() {
        let w = LossWeights::default();
        assert_eq!(Ablation::Full.weights(w), w);
        assert_eq!(Ablation::Ae.weights(w), LossWeights { beta: 0.0, ..w });
        let c = Ablation::Classifier.weights(w);
        assert_eq!((c.alpha, c.beta, c.gamma), (0.0, 0.0, w.gamma));
    }

    #[test]
    fn summary_orders_quartiles() {
        let runs: Vec<AccuracyRun> = [0.5, 0.9, 0.7, 0.6, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &a)| AccuracyRun {
                user_type: UserType::Careful,
                model: "full".into(),
                k: 3,
                seed: i as u64,
                accuracy: a,
            })
            .collect();
        let p = &summarize(&runs)[0];
        assert_eq!((p.min, p.q1, p.median, p.q3, p.max, p.runs), (0.5, 0.6, 0.7, 0.8, 0.9, 5));
        assert!((p.mean - 0.7).abs() < 1e-12);
        assert!(curve_csv(&summarize(&runs)).starts_with(CURVE_HEADER));
    }
}
