//! Stage orchestration: each stage reads its prerequisites from the
//! workspace, runs one core operation and commits its artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use compavatar_core::avatar_compose::{animate, AvatarRig, ComponentAttachment, RigProvenance};
use compavatar_core::body_model::toy::{try_toy_model, HEAD_CENTER, HEAD_RADIUS};
use compavatar_core::body_model::{AvatarParams, BodyModel};
use compavatar_core::bvh::Bvh;
use compavatar_core::camera::{Camera, Orbit};
use compavatar_core::error::Error as CoreError;
use compavatar_core::guidance_losses::{
    IterationLog, RefineConfig, TrainCheckpoint, TrainConfig, TrainObserver, TrainSession,
};
use compavatar_core::image::FeatureImage;
use compavatar_core::landmark_fit::{fit_shape, LandmarkSet};
use compavatar_core::math::Vec3;
use compavatar_core::oracle::synthetic::{surface_features, ProceduralOracle};
use compavatar_core::oracle::GuidanceOracle;
use compavatar_core::radiance_component::component::{
    calibration_pairs, CalibrationPair, RadianceComponent,
};
use compavatar_core::radiance_component::field::ShellField;
use compavatar_core::radiance_component::render::RenderSettings;
use compavatar_core::texture_paint::{
    paint_texture, PaintConfig, PaintState, TextureMap, ViewSchedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{OracleMode, PartConfig, PipelineConfig};
use crate::error::{CliError, Result};
use crate::formats::{bmdl, bundle, landmarks, obj, paint_state, rfc, schedule, texture};
use crate::fsutil;
use crate::seeds::stream_seed;
use crate::wire::{ClientOptions, HttpOracle};
use crate::workspace::{input_hash, Stage, StageRecord, Workspace};

/// One progress message; `--json` prints these as JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub stage: Stage,
    /// `start`, `progress`, `done`, `up_to_date` or `skipped`.
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub data: Value,
}

pub trait Reporter {
    fn event(&mut self, event: &Event);
}

/// Discards every event.
pub struct Silent;

impl Reporter for Silent {
    fn event(&mut self, _event: &Event) {}
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    /// Inputs and outputs match the last completed run.
    UpToDate,
    Skipped(String),
}

/// Fit results handed to later stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSummary {
    /// (β*, θ^c, 0).
    pub params: AvatarParams,
    /// The raw minimizer including fitted pose and expression.
    pub optimum: AvatarParams,
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Mean distance between targets and fitted landmark vertices.
    pub mean_landmark_error: f64,
    /// Ground-truth shape of the synthetic subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_beta: Option<Vec<f64>>,
}

/// Seed of a named stream, unless the configuration pins one explicitly.
fn seed_for(config: &PipelineConfig, explicit: u64, stream: &str) -> u64 {
    if explicit != 0 {
        explicit
    } else {
        stream_seed(config.seed, stream)
    }
}

/// The procedural subject standing in for a photographed person: the body
/// model at a seeded shape with a checker texture, and a hair-like shell.
#[derive(Debug, Clone)]
pub struct Subject {
    pub params: AvatarParams,
    pub texture: TextureMap,
    pub shell: ShellField,
}

pub fn synthetic_subject(config: &PipelineConfig, model: &BodyModel) -> Subject {
    let s = &config.synthetic;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "synthetic/subject"));
    let mut beta = vec![0.0; model.shape_dim()];
    for b in beta.iter_mut().take(s.active_shape) {
        *b = s.shape_scale * (2.0 * rng.random::<f64>() - 1.0);
    }
    let [a, b] = s.colors;
    let cell = s.checker_cell;
    let texture = TextureMap::from_fn(s.texture_size, s.texture_size, |r, c| {
        if (r / cell + c / cell).is_multiple_of(2) {
            a
        } else {
            b
        }
    });
    let shell = ShellField {
        center: Vec3::from(HEAD_CENTER),
        inner: HEAD_RADIUS + s.shell.inner_offset,
        outer: HEAD_RADIUS + s.shell.outer_offset,
        min_y: HEAD_CENTER[1] + s.shell.min_y_offset,
        sigma: s.shell.sigma,
        color: s.shell.color.to_vec(),
    };
    Subject {
        params: AvatarParams::with_shape(model, &beta),
        texture,
        shell,
    }
}

fn oracle_error(stage: &str, e: compavatar_core::OracleError) -> CliError {
    CliError::Core(CoreError::oracle(stage, e))
}

/// The guidance oracle. Synthetic mode builds the procedural oracle on
/// the subject, with the shell as critic target when `target` is set.
pub fn build_oracle(
    config: &PipelineConfig,
    model: &BodyModel,
    target: bool,
) -> Result<Box<dyn GuidanceOracle + Send + Sync>> {
    let c = config;
    match c.oracle.mode {
        OracleMode::Synthetic => {
            let subject = synthetic_subject(c, model);
            let mesh = model.skin_mesh(&subject.params)?;
            let shell = target.then_some(subject.shell);
            let mut oracle =
                ProceduralOracle::new(mesh, subject.texture, shell, c.synthetic.latent_factor);
            oracle.seed = stream_seed(c.seed, "synthetic/oracle");
            Ok(Box::new(oracle))
        }
        OracleMode::Bridge => {
            let endpoint = c
                .oracle
                .endpoint
                .as_deref()
                .ok_or_else(|| CliError::config("oracle.endpoint is not set"))?;
            let options = ClientOptions {
                timeout: Duration::from_secs_f64(c.oracle.timeout_secs),
                dtype: c.oracle.wire_dtype,
                max_response_bytes: c.oracle.max_response_bytes,
            };
            let client =
                HttpOracle::connect(endpoint, options).map_err(|e| oracle_error("connect", e))?;
            Ok(Box::new(client))
        }
    }
}

/// The body model named by the configuration: a `.bmdl` file or the toy
/// model.
pub fn source_model(config: &PipelineConfig) -> Result<BodyModel> {
    match &config.model.path {
        Some(p) => bmdl::load_model(p),
        None => Ok(try_toy_model(&config.model.toy.to_core())?),
    }
}

/// Drives the stages of one workspace under one configuration.
pub struct Pipeline<'a> {
    pub workspace: &'a Workspace,
    pub config: &'a PipelineConfig,
    reporter: &'a mut dyn Reporter,
}

struct PartObserver<'r> {
    stage: Stage,
    keyword: String,
    checkpoint: PathBuf,
    log: fs::File,
    log_path: PathBuf,
    every: usize,
    total: usize,
    input_hash: String,
    reporter: &'r mut dyn Reporter,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedCheckpoint {
    input_hash: String,
    checkpoint: TrainCheckpoint,
}

impl PartObserver<'_> {
    fn save(&self, ckpt: &TrainCheckpoint) -> Result<()> {
        fsutil::write_json(
            &self.checkpoint,
            &SavedCheckpoint {
                input_hash: self.input_hash.clone(),
                checkpoint: ckpt.clone(),
            },
        )
    }
}

impl TrainObserver for PartObserver<'_> {
    fn iteration(
        &mut self,
        log: &IterationLog,
        ckpt: &TrainCheckpoint,
    ) -> compavatar_core::Result<()> {
        let line = serde_json::to_string(log).expect("log serializes");
        writeln!(self.log, "{line}")
            .map_err(|e| CoreError::config(format!("{}: {e}", self.log_path.display())))?;
        if ckpt.iteration.is_multiple_of(self.every) || ckpt.iteration == self.total {
            self.log
                .sync_data()
                .map_err(|e| CoreError::config(format!("{}: {e}", self.log_path.display())))?;
            self.save(ckpt)
                .map_err(|e| CoreError::config(e.to_string()))?;
            self.reporter.event(&Event {
                stage: self.stage,
                kind: "progress".into(),
                message: format!(
                    "{} iteration {}/{}",
                    self.keyword, ckpt.iteration, self.total
                ),
                data: json!({ "part": self.keyword, "log": log }),
            });
        }
        Ok(())
    }

    fn aborted(&mut self, state: &TrainCheckpoint, _error: &CoreError) {
        let _ = self.save(state);
    }
}

/// Keeps the log lines of iterations before `iteration`.
fn truncate_log(path: &Path, iteration: usize) -> Result<()> {
    if !path.is_file() {
        return Ok(());
    }
    let text = fsutil::read_string(path)?;
    let mut kept = String::new();
    for line in text.lines() {
        let keep = serde_json::from_str::<IterationLog>(line).is_ok_and(|l| l.iter < iteration);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fsutil::write_atomic(path, kept.as_bytes())
}

/// File stem of a part: its keyword restricted to a safe character set.
pub fn part_stem(keyword: &str) -> String {
    keyword
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl<'a> Pipeline<'a> {
    pub fn new(
        workspace: &'a Workspace,
        config: &'a PipelineConfig,
        reporter: &'a mut dyn Reporter,
    ) -> Self {
        Pipeline {
            workspace,
            config,
            reporter,
        }
    }

    fn emit(&mut self, stage: Stage, kind: &str, message: impl Into<String>, data: Value) {
        self.reporter.event(&Event {
            stage,
            kind: kind.into(),
            message: message.into(),
            data,
        });
    }

    /// Every stage in order; refinement is skipped when disabled.
    pub fn run_all(&mut self) -> Result<Vec<(Stage, Outcome)>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            out.push((stage, self.run_stage(stage)?));
        }
        Ok(out)
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<Outcome> {
        if stage == Stage::Refine && !self.config.stages.refine {
            let reason = "stages.refine is false".to_string();
            self.emit(stage, "skipped", &reason, Value::Null);
            return Ok(Outcome::Skipped(reason));
        }
        let mut upstream = Vec::new();
        for required in stage.prerequisites(self.config.stages.refine) {
            upstream.push(self.workspace.require(stage, required)?);
        }
        let hash = self.stage_hash(stage, &upstream)?;
        if self.workspace.is_current(stage, &hash)? {
            self.emit(
                stage,
                "up_to_date",
                format!("{stage} is up to date"),
                Value::Null,
            );
            return Ok(Outcome::UpToDate);
        }
        self.emit(stage, "start", format!("running {stage}"), Value::Null);
        self.workspace.invalidate(stage)?;
        let outputs = match stage {
            Stage::Fit => self.fit()?,
            Stage::Paint => self.paint(&hash)?,
            Stage::Learn => self.learn(&hash)?,
            Stage::Refine => self.refine(&hash)?,
            Stage::Compose => self.compose()?,
            Stage::Render => self.render()?,
            Stage::Animate => self.animate()?,
        };
        let record = self.workspace.commit(stage, &hash, &outputs)?;
        self.emit(
            stage,
            "done",
            format!("{stage} wrote {} files", record.outputs.len()),
            json!({ "outputs": record.outputs }),
        );
        Ok(Outcome::Completed)
    }

    /// Hash of everything `stage` reads: the relevant configuration sections,
    /// input files named by the configuration and upstream outputs.
    fn stage_hash(&self, stage: Stage, upstream: &[StageRecord]) -> Result<String> {
        let c = self.config;
        let digests: Vec<String> = upstream.iter().map(StageRecord::digest).collect();
        let file_hash = |p: &Option<PathBuf>| -> Result<Option<String>> {
            p.as_ref().map(|p| fsutil::file_sha256(p)).transpose()
        };
        let common = json!({
            "stage": stage,
            "seed": c.seed,
            "oracle": { "mode": c.oracle.mode, "wire_dtype": c.oracle.wire_dtype },
            "synthetic": c.synthetic,
            "upstream": digests,
        });
        let specific = match stage {
            Stage::Fit => json!({
                "model": c.model,
                "model_file": file_hash(&c.model.path)?,
                "fit": c.fit.solver,
                "landmarks": file_hash(&c.fit.landmarks)?,
            }),
            Stage::Paint => json!({
                "prompt": c.prompt,
                "paint": c.paint,
                "schedule": file_hash(&c.paint.schedule)?,
            }),
            Stage::Learn => json!({ "prompt": c.prompt, "parts": c.parts, "learn": c.learn }),
            Stage::Refine => json!({ "prompt": c.prompt, "parts": c.parts, "refine": c.refine }),
            Stage::Compose => json!({ "prompt": c.prompt, "parts": c.parts, "stages": c.stages }),
            Stage::Render => json!({ "render": c.render }),
            Stage::Animate => json!({ "animate": c.animate }),
        };
        Ok(input_hash(&json!([common, specific])))
    }

    fn source_model(&self) -> Result<BodyModel> {
        source_model(self.config)
    }

    fn fitted_model(&self) -> Result<Arc<BodyModel>> {
        Ok(Arc::new(bmdl::load_model(
            &self.workspace.stage_path(Stage::Fit, "model.bmdl"),
        )?))
    }

    fn fit_summary(&self) -> Result<FitSummary> {
        fsutil::read_json(&self.workspace.stage_path(Stage::Fit, "params.json"))
    }

    pub fn oracle(
        &self,
        model: &BodyModel,
        target: bool,
    ) -> Result<Box<dyn GuidanceOracle + Send + Sync>> {
        build_oracle(self.config, model, target)
    }

    /// The fitted rig at the canonical pose with the painted texture and no
    /// components.
    fn base_rig(&self) -> Result<AvatarRig> {
        let model = self.fitted_model()?;
        let fit = self.fit_summary()?;
        let (tex, _) =
            texture::load_texture(&self.workspace.stage_path(Stage::Paint, "texture.png"))?;
        let mut rig = AvatarRig::new(model, &fit.params.beta, tex)?;
        rig.provenance = RigProvenance {
            prompt: self.config.prompt.clone(),
            seed: self.config.seed,
        };
        Ok(rig)
    }

    fn fit(&mut self) -> Result<Vec<PathBuf>> {
        let c = self.config;
        let model = self.source_model()?;
        let subject =
            (c.oracle.mode == OracleMode::Synthetic).then(|| synthetic_subject(c, &model));
        let targets = match (&c.fit.landmarks, &subject) {
            (Some(path), _) => landmarks::load_landmarks(path, &model)?,
            (None, Some(s)) => LandmarkSet::from_model(&model, &s.params)?,
            (None, None) => {
                return Err(CliError::config(
                    "fit.landmarks is required with oracle.mode = bridge",
                ))
            }
        };
        let outcome = fit_shape(&model, &targets, &c.fit.solver)?;
        let mesh = model.skin_mesh(&outcome.optimum)?;
        let error = targets
            .points
            .iter()
            .zip(&targets.vertices)
            .map(|(p, &v)| (mesh.vertices[v as usize] - p).norm())
            .sum::<f64>()
            / targets.len().max(1) as f64;
        let summary = FitSummary {
            params: outcome.params.clone(),
            optimum: outcome.optimum,
            loss: outcome.loss,
            iterations: outcome.iterations,
            converged: outcome.converged,
            mean_landmark_error: error,
            subject_beta: subject.map(|s| s.params.beta),
        };
        let ws = self.workspace;
        let paths = [
            ws.stage_path(Stage::Fit, "model.bmdl"),
            ws.stage_path(Stage::Fit, "params.json"),
            ws.stage_path(Stage::Fit, "mesh.obj"),
            ws.stage_path(Stage::Fit, "landmarks.json"),
        ];
        bmdl::save_model(&model, &paths[0])?;
        fsutil::write_json(&paths[1], &summary)?;
        obj::save_obj(&model.skin_mesh(&outcome.params)?, &paths[2])?;
        landmarks::save_landmarks(&paths[3], &targets, &model)?;
        self.emit(
            Stage::Fit,
            "progress",
            format!(
                "fitted {} landmarks in {} iterations, mean error {:.3e}",
                targets.len(),
                summary.iterations,
                error
            ),
            json!({ "loss": summary.loss, "mean_landmark_error": error, "converged": summary.converged }),
        );
        Ok(paths.to_vec())
    }

    fn schedule(&self) -> Result<ViewSchedule> {
        match &self.config.paint.schedule {
            Some(p) => schedule::load_schedule(p),
            None => Ok(self.config.paint.views.clone()),
        }
    }

    fn paint(&mut self, hash: &str) -> Result<Vec<PathBuf>> {
        let c = self.config;
        let model = self.fitted_model()?;
        let fit = self.fit_summary()?;
        let mesh = model.skin_mesh(&AvatarParams::with_shape(&model, &fit.params.beta))?;
        let views = self.schedule()?;
        let paint_config = PaintConfig {
            seed: seed_for(c, c.paint.texture.seed, "paint"),
            ..c.paint.texture.clone()
        };
        let oracle = self.oracle(&model, false)?;
        let ws = self.workspace;
        let progress = ws.stage_path(Stage::Paint, "progress.pnts");
        let resume = match progress.is_file() {
            true => match paint_state::load_state(&progress)? {
                (state, h) if h == hash => Some(state),
                _ => None,
            },
            false => None,
        };
        if let Some(s) = &resume {
            self.emit(
                Stage::Paint,
                "progress",
                format!("resuming after view {}", s.completed),
                Value::Null,
            );
        }
        let total = views.views.len();
        let reporter = &mut *self.reporter;
        let mut on_view = |state: &PaintState| -> compavatar_core::Result<()> {
            paint_state::save_state(state, hash, &progress)
                .map_err(|e| CoreError::config(e.to_string()))?;
            reporter.event(&Event {
                stage: Stage::Paint,
                kind: "progress".into(),
                message: format!("painted view {}/{total}", state.completed),
                data: json!({ "loss": state.losses.last() }),
            });
            Ok(())
        };
        let state = paint_texture(
            &mesh,
            &views,
            oracle.as_ref(),
            &c.prompt,
            &paint_config,
            resume,
            &mut on_view,
        )?;
        let paths = [
            ws.stage_path(Stage::Paint, "texture.png"),
            ws.stage_path(Stage::Paint, "texture.json"),
            ws.stage_path(Stage::Paint, "schedule.json"),
            ws.stage_path(Stage::Paint, "preview.png"),
        ];
        texture::save_texture(
            &state.texture,
            &paths[0],
            Some(&schedule::schedule_hash(&views)),
        )?;
        schedule::save_schedule(&views, &paths[2])?;
        let bvh = Bvh::build(&mesh);
        let front = surface_features(
            &mesh,
            &bvh,
            &state.texture,
            &views.camera(0),
            3,
            oracle.as_ref(),
        )?;
        texture::save_preview(&front, &paths[3])?;
        fs::remove_file(&progress).map_err(|e| CliError::io(&progress, e))?;
        Ok(paths.to_vec())
    }

    /// Trains (or refines) one part, resuming from a checkpoint saved under
    /// the same inputs.
    fn run_part(
        &mut self,
        stage: Stage,
        part: &PartConfig,
        hash: &str,
        mut session: TrainSession<'_>,
    ) -> Result<RadianceComponent> {
        let ws = self.workspace;
        let stem = part_stem(&part.keyword);
        let ckpt_path = ws.stage_path(stage, &format!("{stem}.ckpt.json"));
        let log_path = ws.stage_path(stage, &format!("{stem}.log.jsonl"));
        let total = session.iterations();
        let mut resumed = false;
        if ckpt_path.is_file() {
            let saved: SavedCheckpoint = fsutil::read_json(&ckpt_path)?;
            if saved.input_hash == hash && saved.checkpoint.iteration <= total {
                let at = saved.checkpoint.iteration;
                session.resume(saved.checkpoint)?;
                truncate_log(&log_path, at)?;
                resumed = true;
                self.emit(
                    stage,
                    "progress",
                    format!("{} resuming at iteration {at}", part.keyword),
                    Value::Null,
                );
            }
        }
        if !resumed {
            let _ = fs::remove_file(&log_path);
        }
        if let Some(dir) = log_path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| CliError::io(&log_path, e))?;
        let every = match stage {
            Stage::Learn => self.config.learn.checkpoint_every,
            _ => self.config.refine.checkpoint_every,
        };
        let mut observer = PartObserver {
            stage,
            keyword: part.keyword.clone(),
            checkpoint: ckpt_path,
            log,
            log_path,
            every,
            total,
            input_hash: hash.to_string(),
            reporter: &mut *self.reporter,
        };
        let component = session.run(&mut observer)?;
        let path = ws.stage_path(stage, &format!("{stem}.rfc"));
        rfc::save_component(&component, &path)?;
        rfc::load_component(&path)
    }

    fn part_outputs(&self, stage: Stage) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for part in &self.config.parts {
            let stem = part_stem(&part.keyword);
            for suffix in ["rfc", "ckpt.json", "log.jsonl"] {
                out.push(
                    self.workspace
                        .stage_path(stage, &format!("{stem}.{suffix}")),
                );
            }
        }
        out
    }

    fn learn(&mut self, hash: &str) -> Result<Vec<PathBuf>> {
        let c = self.config;
        let mut rig = self.base_rig()?;
        let oracle = self.oracle(&rig.model, true)?;
        for (k, part) in c.parts.iter().enumerate() {
            let mut train: TrainConfig = c.learn.train.clone();
            train.seed = seed_for(c, train.seed, &format!("learn/{}", part.keyword));
            train.mlp.seed = seed_for(c, train.mlp.seed, &format!("learn/{}/init", part.keyword));
            let session =
                TrainSession::learn(&rig, &part.prompt, &part.keyword, oracle.as_ref(), &train)?;
            let component = self.run_part(Stage::Learn, part, hash, session)?;
            rig = rig.attach(
                ComponentAttachment::new(&part.keyword, k as i32),
                Arc::new(component),
            )?;
        }
        Ok(self.part_outputs(Stage::Learn))
    }

    /// Latent/RGB pairs from the bare textured mesh seen from four sides:
    /// the RGB render at `latent_factor` times the calibration resolution is
    /// encoded and, separately, average-pooled to the latent resolution.
    fn calibration(
        &self,
        rig: &AvatarRig,
        oracle: &dyn GuidanceOracle,
    ) -> Result<Vec<CalibrationPair>> {
        let r = self.config.refine.calibration_resolution;
        let f = oracle.latent_factor();
        let fov = self.config.refine.train.cameras.fov_y_deg;
        let distance = self.config.refine.train.cameras.distance;
        let settings = RenderSettings {
            jitter: false,
            ..Default::default()
        };
        let mut pairs = Vec::new();
        for azimuth in [0.0, 90.0, 180.0, 270.0] {
            let camera = Orbit::new(azimuth, 0.0, distance).camera(fov, r * f, r * f);
            let rgb = rig.render(&camera, 3, &settings, oracle)?;
            let latent = oracle
                .encode(&rgb)
                .map_err(|e| oracle_error("calibration encode", e))?;
            let small = rgb.downsample(f)?;
            if latent.width != small.width || latent.height != small.height {
                return Err(oracle_error(
                    "calibration encode",
                    compavatar_core::OracleError::Protocol(format!(
                        "latent is {}x{}, expected {}x{}",
                        latent.width, latent.height, small.width, small.height
                    )),
                ));
            }
            pairs.extend(calibration_pairs(&latent, &small)?);
        }
        Ok(pairs)
    }

    fn refine(&mut self, hash: &str) -> Result<Vec<PathBuf>> {
        let c = self.config;
        let base = self.base_rig()?;
        let oracle = self.oracle(&base.model, true)?;
        let pairs = self.calibration(&base, oracle.as_ref())?;
        let mut rig = base;
        for (k, part) in c.parts.iter().enumerate() {
            let stem = part_stem(&part.keyword);
            let latent = rfc::load_component(
                &self
                    .workspace
                    .stage_path(Stage::Learn, &format!("{stem}.rfc")),
            )?;
            let mut cfg: RefineConfig = c.refine.train.clone();
            cfg.seed = seed_for(c, cfg.seed, &format!("refine/{}", part.keyword));
            let session =
                TrainSession::refine(&rig, &latent, &part.prompt, oracle.as_ref(), &cfg, &pairs)?;
            let component = self.run_part(Stage::Refine, part, hash, session)?;
            rig = rig.attach(
                ComponentAttachment::new(&part.keyword, k as i32),
                Arc::new(component),
            )?;
        }
        Ok(self.part_outputs(Stage::Refine))
    }

    fn compose(&mut self) -> Result<Vec<PathBuf>> {
        let c = self.config;
        let source = if c.stages.refine {
            Stage::Refine
        } else {
            Stage::Learn
        };
        let mut rig = self.base_rig()?;
        for (k, part) in c.parts.iter().enumerate() {
            let path = self
                .workspace
                .stage_path(source, &format!("{}.rfc", part_stem(&part.keyword)));
            let component = rfc::load_component(&path)?;
            rig = rig.attach(
                ComponentAttachment::new(&part.keyword, k as i32),
                Arc::new(component),
            )?;
        }
        let dir = self.workspace.path(Stage::Compose.dir());
        let stale = dir.join("components");
        if stale.is_dir() {
            fs::remove_dir_all(&stale).map_err(|e| CliError::io(&stale, e))?;
        }
        bundle::save_avatar(&rig, &dir)?;
        let mut outputs = vec![
            dir.join(bundle::MANIFEST),
            dir.join("model.bmdl"),
            dir.join("texture.png"),
            dir.join("texture.json"),
        ];
        for entry in fs::read_dir(&stale).map_err(|e| CliError::io(&stale, e))? {
            outputs.push(entry.map_err(|e| CliError::io(&stale, e))?.path());
        }
        outputs.sort();
        Ok(outputs)
    }

    fn load_bundle(&self) -> Result<AvatarRig> {
        bundle::load_avatar(&self.workspace.path(Stage::Compose.dir()))
    }

    fn render(&mut self) -> Result<Vec<PathBuf>> {
        let c = &self.config.render;
        let rig = self.load_bundle()?;
        let oracle = self.oracle(&rig.model, false)?;
        let settings = RenderSettings {
            bins: c.bins,
            jitter: false,
            seed: stream_seed(self.config.seed, "render"),
            ..Default::default()
        };
        let mut outputs = Vec::new();
        for (i, view) in c.views.iter().enumerate() {
            let camera = view.camera(c.fov_y_deg, c.resolution, c.resolution);
            let image = render_rgb(&rig, &camera, &settings, oracle.as_ref(), None)?;
            let path = self
                .workspace
                .stage_path(Stage::Render, &format!("view-{i:02}.png"));
            texture::save_preview(&image, &path)?;
            outputs.push(path);
        }
        Ok(outputs)
    }

    fn animate(&mut self) -> Result<Vec<PathBuf>> {
        let c = &self.config.animate;
        let rig = self.load_bundle()?;
        let oracle = self.oracle(&rig.model, false)?;
        let settings = RenderSettings {
            bins: c.bins,
            jitter: false,
            seed: stream_seed(self.config.seed, "animate"),
            ..Default::default()
        };
        let camera = c.view.camera(c.fov_y_deg, c.resolution, c.resolution);
        let head = rig
            .model
            .parts()
            .joint_names
            .iter()
            .position(|n| n == "head");
        let mut outputs = Vec::new();
        for f in 0..c.frames {
            let s = if c.frames > 1 {
                f as f64 / (c.frames - 1) as f64
            } else {
                1.0
            };
            let (theta, psi) = frame_pose(
                &rig,
                c.root_yaw_deg,
                c.head_pitch_deg,
                &c.expression,
                head,
                s,
            );
            let pose = Some((theta.as_slice(), psi.as_slice()));
            let image = render_rgb(&rig, &camera, &settings, oracle.as_ref(), pose)?;
            let path = self
                .workspace
                .stage_path(Stage::Animate, &format!("frame-{f:03}.png"));
            texture::save_preview(&image, &path)?;
            outputs.push(path);
        }
        Ok(outputs)
    }
}

/// Pose at fraction `s` of the animation: the root yaw and head pitch are
/// added to the y and x components of their axis-angle vectors, expression
/// coefficients are scaled by `s`.
pub fn frame_pose(
    rig: &AvatarRig,
    root_yaw_deg: f64,
    head_pitch_deg: f64,
    expression: &[f64],
    head: Option<usize>,
    s: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut theta = rig.params.theta.clone();
    theta[1] += s * root_yaw_deg.to_radians();
    if let Some(h) = head {
        theta[3 * h] += s * head_pitch_deg.to_radians();
    }
    let mut psi = rig.params.psi.clone();
    for (p, e) in psi.iter_mut().zip(expression) {
        *p += s * e;
    }
    (theta, psi)
}

/// An RGB image of the rig. Rigs whose enabled components all render RGB are
/// rendered directly; otherwise the latent render at 1/`latent_factor` of the
/// camera's resolution is decoded by the oracle.
pub fn render_rgb(
    rig: &AvatarRig,
    camera: &Camera,
    settings: &RenderSettings,
    oracle: &dyn GuidanceOracle,
    pose: Option<(&[f64], &[f64])>,
) -> Result<FeatureImage> {
    let rgb_only = rig
        .components()
        .iter()
        .filter(|c| c.attachment.enabled)
        .all(|c| c.component.channels() == 3);
    let (theta, psi) = pose.unwrap_or((&rig.params.theta, &rig.params.psi));
    if rgb_only {
        return Ok(animate(rig, theta, psi, camera, 3, settings, oracle)?);
    }
    let f = oracle.latent_factor();
    if !camera.width.is_multiple_of(f) || !camera.height.is_multiple_of(f) {
        return Err(CliError::config(format!(
            "latent rendering needs a resolution divisible by the latent factor {f}"
        )));
    }
    let small = camera.with_resolution(camera.width / f, camera.height / f);
    let latent = animate(rig, theta, psi, &small, 4, settings, oracle)?;
    oracle
        .decode(&latent)
        .map_err(|e| oracle_error("decode render", e))
}
