//! Pipeline configuration: one declarative JSON or TOML file, the oracle
//! endpoint from the environment, then `--set key=value` overrides. Unknown
//! keys are rejected at every level.

use std::path::{Path, PathBuf};

use compavatar_core::body_model::toy::ToyModelConfig;
use compavatar_core::camera::Orbit;
use compavatar_core::guidance_losses::{RefineConfig, TrainConfig};
use compavatar_core::landmark_fit::FitConfig;
use compavatar_core::radiance_component::field::ChannelMode;
use compavatar_core::texture_paint::{PaintConfig, ViewSchedule};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::fsutil;
pub use crate::wire::WireDtype;

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable naming the oracle endpoint.
pub const ENDPOINT_ENV: &str = "COMPAVATAR_ORACLE_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartConfig {
    /// Component id and segmentation keyword.
    pub keyword: String,
    /// Text prompt for this component.
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageToggles {
    /// RGB refinement after latent learning; compose uses latent components
    /// when off.
    pub refine: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { refine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySection {
    pub joints: usize,
    pub shape_dim: usize,
    pub expression_dim: usize,
    pub longitudes: usize,
    pub head_rings: usize,
    pub pose_correctives: bool,
    pub landmark_count: usize,
    pub seed: u64,
}

impl Default for ToySection {
    fn default() -> Self {
        let t = ToyModelConfig::default();
        ToySection {
            joints: t.joints,
            shape_dim: t.shape_dim,
            expression_dim: t.expression_dim,
            longitudes: t.longitudes,
            head_rings: t.head_rings,
            pose_correctives: t.pose_correctives,
            landmark_count: t.landmark_count,
            seed: t.seed,
        }
    }
}

impl ToySection {
    pub fn to_core(&self) -> ToyModelConfig {
        ToyModelConfig {
            joints: self.joints,
            shape_dim: self.shape_dim,
            expression_dim: self.expression_dim,
            longitudes: self.longitudes,
            head_rings: self.head_rings,
            pose_correctives: self.pose_correctives,
            landmark_count: self.landmark_count,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// A `.bmdl` file; the procedural toy model when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub toy: ToySection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// In-process procedural oracle.
    #[default]
    Synthetic,
    /// HTTP guidance bridge.
    Bridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub mode: OracleMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub wire_dtype: WireDtype,
    /// Responses larger than this are rejected.
    pub max_response_bytes: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            mode: OracleMode::Synthetic,
            endpoint: None,
            timeout_secs: 120.0,
            wire_dtype: WireDtype::Float32,
            max_response_bytes: 256 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Landmark target file; synthetic mode derives targets from the
    /// synthetic subject when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PathBuf>,
    pub solver: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaintSection {
    /// View schedule file, replacing `views` when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PathBuf>,
    pub views: ViewSchedule,
    pub texture: PaintConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnSection {
    pub train: TrainConfig,
    /// Iterations between resumable checkpoints.
    pub checkpoint_every: usize,
}

impl Default for LearnSection {
    fn default() -> Self {
        LearnSection {
            train: TrainConfig::default(),
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineSection {
    pub train: RefineConfig,
    pub checkpoint_every: usize,
    /// Side of the latent calibration render.
    pub calibration_resolution: usize,
}

impl Default for RefineSection {
    fn default() -> Self {
        RefineSection {
            train: RefineConfig::default(),
            checkpoint_every: 100,
            calibration_resolution: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSection {
    pub views: Vec<Orbit>,
    pub fov_y_deg: f64,
    pub resolution: usize,
    pub bins: usize,
}

impl Default for RenderSection {
    fn default() -> Self {
        RenderSection {
            views: vec![
                Orbit::new(0.0, 0.0, 2.8),
                Orbit::new(90.0, 10.0, 2.8),
                Orbit::new(180.0, 0.0, 2.8),
            ],
            fov_y_deg: 45.0,
            resolution: 256,
            bins: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnimateSection {
    pub frames: usize,
    /// Root rotation about the vertical axis reached at the last frame.
    pub root_yaw_deg: f64,
    /// Head nod (rotation about x) reached at the last frame.
    pub head_pitch_deg: f64,
    /// Expression coefficients reached at the last frame; missing entries are 0.
    pub expression: Vec<f64>,
    pub view: Orbit,
    pub fov_y_deg: f64,
    pub resolution: usize,
    pub bins: usize,
}

impl Default for AnimateSection {
    fn default() -> Self {
        AnimateSection {
            frames: 8,
            root_yaw_deg: 30.0,
            head_pitch_deg: 0.0,
            expression: vec![1.0],
            view: Orbit::new(0.0, 5.0, 2.8),
            fov_y_deg: 45.0,
            resolution: 256,
            bins: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShellSection {
    /// Inner and outer radii relative to the head radius.
    pub inner_offset: f64,
    pub outer_offset: f64,
    /// Lowest covered height relative to the head center.
    pub min_y_offset: f64,
    pub sigma: f64,
    pub color: [f64; 3],
}

impl Default for ShellSection {
    fn default() -> Self {
        ShellSection {
            inner_offset: -0.02,
            outer_offset: 0.14,
            min_y_offset: 0.1,
            sigma: 40.0,
            color: [0.35, 0.2, 0.1],
        }
    }
}

/// The procedural stand-in for real generative models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    /// Ground-truth shape: the first `active_shape` coefficients drawn
    /// uniformly from ±`shape_scale`.
    pub active_shape: usize,
    pub shape_scale: f64,
    pub texture_size: usize,
    pub checker_cell: usize,
    pub colors: [[f64; 3]; 2],
    pub shell: ShellSection,
    pub latent_factor: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        SyntheticSection {
            active_shape: 10,
            shape_scale: 1.0,
            texture_size: 64,
            checker_cell: 8,
            colors: [[0.9, 0.8, 0.7], [0.3, 0.4, 0.6]],
            shell: ShellSection::default(),
            latent_factor: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub prompt: String,
    pub parts: Vec<PartConfig>,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub stages: StageToggles,
    pub model: ModelSection,
    pub oracle: OracleSection,
    pub fit: FitSection,
    pub paint: PaintSection,
    pub learn: LearnSection,
    pub refine: RefineSection,
    pub render: RenderSection,
    pub animate: AnimateSection,
    pub synthetic: SyntheticSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: SCHEMA_VERSION,
            prompt: "a portrait of a person".into(),
            parts: vec![PartConfig {
                keyword: "hair".into(),
                prompt: "brown curly hair".into(),
            }],
            seed: 0,
            stages: StageToggles::default(),
            model: ModelSection::default(),
            oracle: OracleSection::default(),
            fit: FitSection::default(),
            paint: PaintSection::default(),
            learn: LearnSection::default(),
            refine: RefineSection::default(),
            render: RenderSection::default(),
            animate: AnimateSection::default(),
            synthetic: SyntheticSection::default(),
        }
    }
}

fn need(out: &mut Vec<String>, ok: bool, msg: &str) {
    if !ok {
        out.push(msg.to_string());
    }
}

impl PipelineConfig {
    /// Small resolutions and iteration counts for the synthetic oracle on a
    /// single CPU core.
    pub fn desk() -> Self {
        let mut c = PipelineConfig::default();
        c.fit.solver = FitConfig::recovery();
        c.paint.views = ViewSchedule::default().with_resolution(48, 48);
        c.paint.texture.texture_width = 64;
        c.paint.texture.texture_height = 64;
        c.synthetic.latent_factor = 2;
        let t = &mut c.learn.train;
        t.iterations = 300;
        t.learning_rate = 1e-3;
        t.resolution = 24;
        t.bins = 32;
        t.mlp.hidden_width = 32;
        t.mlp.position_bands = 6;
        t.mlp.direction_bands = 2;
        c.learn.checkpoint_every = 50;
        let r = &mut c.refine.train;
        r.iterations = 40;
        r.resolution = 32;
        r.bins = 32;
        c.refine.checkpoint_every = 20;
        c.refine.calibration_resolution = 16;
        c.render.resolution = 64;
        c.render.bins = 64;
        c.animate.frames = 3;
        c.animate.resolution = 48;
        c.animate.bins = 48;
        c
    }

    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        need(
            &mut out,
            self.schema_version == SCHEMA_VERSION,
            "schema_version must be 1",
        );
        need(&mut out, !self.prompt.trim().is_empty(), "prompt is empty");
        need(
            &mut out,
            !self.parts.is_empty(),
            "parts lists no components",
        );
        for (i, p) in self.parts.iter().enumerate() {
            need(
                &mut out,
                !p.keyword.trim().is_empty(),
                &format!("parts[{i}].keyword is empty"),
            );
            need(
                &mut out,
                self.parts[..i].iter().all(|q| q.keyword != p.keyword),
                &format!("parts[{i}].keyword `{}` repeats an earlier part", p.keyword),
            );
        }
        need(
            &mut out,
            self.oracle.mode == OracleMode::Synthetic || self.oracle.endpoint.is_some(),
            &format!("oracle.mode = bridge needs oracle.endpoint or {ENDPOINT_ENV}"),
        );
        need(
            &mut out,
            self.oracle.mode == OracleMode::Synthetic || self.fit.landmarks.is_some(),
            "oracle.mode = bridge needs fit.landmarks",
        );
        need(
            &mut out,
            self.oracle.timeout_secs > 0.0,
            "oracle.timeout_secs must be positive",
        );
        let f = &self.fit.solver;
        need(
            &mut out,
            f.max_iters > 0 && f.learning_rate > 0.0,
            "fit.solver needs positive max_iters and learning_rate",
        );
        need(
            &mut out,
            f.final_lr_fraction > 0.0 && f.final_lr_fraction <= 1.0,
            "fit.solver.final_lr_fraction must lie in (0, 1]",
        );
        if let Err(e) = self.paint.views.validate() {
            out.push(format!("paint.views: {e}"));
        }
        let p = &self.paint.texture;
        need(
            &mut out,
            p.texture_width > 0 && p.texture_height > 0,
            "paint.texture size must be positive",
        );
        need(
            &mut out,
            p.project.learning_rate > 0.0,
            "paint.texture.project.learning_rate must be positive",
        );
        need(
            &mut out,
            p.project.symmetry_weight >= 0.0,
            "paint.texture.project.symmetry_weight must be nonnegative",
        );
        let l = &self.learn.train;
        need(
            &mut out,
            l.iterations > 0 && l.learning_rate > 0.0,
            "learn needs positive iterations and learning_rate",
        );
        need(
            &mut out,
            l.mlp.mode == ChannelMode::Latent,
            "learn.mlp.mode must be latent",
        );
        need(
            &mut out,
            self.learn.checkpoint_every > 0,
            "learn.checkpoint_every must be positive",
        );
        let r = &self.refine.train;
        need(
            &mut out,
            r.learning_rate > 0.0,
            "refine.learning_rate must be positive",
        );
        need(
            &mut out,
            self.refine.checkpoint_every > 0,
            "refine.checkpoint_every must be positive",
        );
        need(
            &mut out,
            self.refine.calibration_resolution > 0,
            "refine.calibration_resolution must be positive",
        );
        for (name, weights, cameras, res, bins, every) in [
            (
                "learn",
                &l.weights,
                &l.cameras,
                l.resolution,
                l.bins,
                l.segment_every,
            ),
            (
                "refine",
                &r.weights,
                &r.cameras,
                r.resolution,
                r.bins,
                r.segment_every,
            ),
        ] {
            if let Err(e) = weights.validate() {
                out.push(format!("{name}.weights: {e}"));
            }
            if let Err(e) = cameras.validate() {
                out.push(format!("{name}.cameras: {e}"));
            }
            if res == 0 || bins < 2 || every == 0 {
                out.push(format!(
                    "{name} needs positive resolution and segment_every and bins ≥ 2"
                ));
            }
        }
        if let Err(e) = l.mlp.validate() {
            out.push(format!("learn.mlp: {e}"));
        }
        let v = &self.render;
        need(&mut out, !v.views.is_empty(), "render.views is empty");
        need(
            &mut out,
            v.resolution > 0 && v.bins >= 2,
            "render needs positive resolution and bins ≥ 2",
        );
        let a = &self.animate;
        need(&mut out, a.frames > 0, "animate.frames must be positive");
        need(
            &mut out,
            a.resolution > 0 && a.bins >= 2,
            "animate needs positive resolution and bins ≥ 2",
        );
        let s = &self.synthetic;
        need(
            &mut out,
            s.latent_factor > 0,
            "synthetic.latent_factor must be positive",
        );
        need(
            &mut out,
            s.texture_size > 0 && s.checker_cell > 0,
            "synthetic texture size and cell must be positive",
        );
        need(
            &mut out,
            s.shell.outer_offset > s.shell.inner_offset,
            "synthetic.shell.outer_offset must exceed inner_offset",
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(v))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Named starting point before the file and overrides apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    /// Full-scale hyperparameters.
    #[default]
    Full,
    /// [`PipelineConfig::desk`].
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset `{other}` (full, desk)")),
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses a config file by extension (`.toml`, anything else JSON).
pub fn read_file(path: &Path) -> Result<Value> {
    let text = fsutil::read_string(path)?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    if is_toml {
        let v: toml::Value =
            toml::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
        serde_json::to_value(v).map_err(|e| CliError::format(path, e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
    }
}

/// Applies one `key.path=value` override. The key must already exist; the
/// value is read as JSON, falling back to a plain string.
pub fn apply_set(value: &mut Value, assignment: &str) -> std::result::Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override `{assignment}` is not key=value"))?;
    let mut slot = &mut *value;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| format!("unknown key `{key}`"))?;
    }
    *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}

/// Builds the configuration: preset, file, environment, overrides, then
/// validation. All override and validation problems are reported together.
pub fn load(
    preset: Preset,
    file: Option<&Path>,
    env_endpoint: Option<String>,
    sets: &[String],
) -> Result<PipelineConfig> {
    let base = match preset {
        Preset::Full => PipelineConfig::default(),
        Preset::Desk => PipelineConfig::desk(),
    };
    let mut value = serde_json::to_value(&base).expect("config serializes");
    if let Some(path) = file {
        let over = read_file(path)?;
        if !over.is_object() {
            return Err(CliError::format(path, "configuration must be a table"));
        }
        merge(&mut value, over);
    }
    if let Some(url) = env_endpoint {
        value["oracle"]["endpoint"] = Value::String(url);
    }
    let mut errors = Vec::new();
    for s in sets {
        if let Err(e) = apply_set_lenient(&mut value, s) {
            errors.push(e);
        }
    }
    if !errors.is_empty() {
        return Err(CliError::Config(errors));
    }
    let config: PipelineConfig =
        serde_json::from_value(value).map_err(|e| CliError::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// [`apply_set`], also accepting keys of optional fields that serialize as
/// absent (`oracle.endpoint`, `model.path`, `fit.landmarks`,
/// `paint.schedule`).
fn apply_set_lenient(value: &mut Value, assignment: &str) -> std::result::Result<(), String> {
    const OPTIONAL: [&str; 4] = [
        "oracle.endpoint",
        "model.path",
        "fit.landmarks",
        "paint.schedule",
    ];
    if let Some((key, _)) = assignment.split_once('=') {
        if let Some((parent, leaf)) = OPTIONAL
            .iter()
            .find(|k| **k == key)
            .and_then(|k| k.split_once('.'))
        {
            if let Some(Value::Object(map)) = value.get_mut(parent) {
                map.entry(leaf.to_string()).or_insert(Value::Null);
            }
        }
    }
    apply_set(value, assignment)
}
