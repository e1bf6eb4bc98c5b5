//! Multi-view UV texture painting: render the current texture from a
//! scheduled view, ask the generation oracle for that view's image, and fit
//! the visible texels to it under an L1 loss plus a mirror-symmetry term.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::bvh::Bvh;
use crate::camera::{Camera, Orbit};
use crate::error::{Error, Result};
use crate::image::FeatureImage;
use crate::mesh::Mesh;
use crate::optim::{Adam, AdamConfig};
use crate::oracle::{GenerateRequest, GuidanceOracle, ViewContext};

pub mod raster;

pub use raster::{rasterize, texel_taps, RasterPixel, RasterPlan, Sampling};

/// Default number of painting views.
pub const DEFAULT_VIEW_COUNT: usize = 10;
/// Default weight of the symmetry term.
pub const DEFAULT_SYMMETRY_WEIGHT: f64 = 0.5;

/// H×W RGB texels in [0, 1] (row 0 is the top of the image, v = 1) and the
/// mask of texels painted so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureMap {
    pub width: usize,
    pub height: usize,
    pub colors: Vec<f64>,
    pub valid: Vec<bool>,
}

impl TextureMap {
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut colors = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            colors.extend_from_slice(&color);
        }
        TextureMap {
            width,
            height,
            colors,
            valid: vec![false; width * height],
        }
    }

    /// Builds a texture from a per-texel color function of (row, col).
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Self {
        let mut t = TextureMap::filled(width, height, [0.0; 3]);
        for r in 0..height {
            for c in 0..width {
                let i = (r * width + c) * 3;
                t.colors[i..i + 3].copy_from_slice(&f(r, c));
            }
        }
        t
    }

    pub fn texel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn texel(&self, i: usize) -> [f64; 3] {
        [
            self.colors[3 * i],
            self.colors[3 * i + 1],
            self.colors[3 * i + 2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.colors.len() != self.texel_count() * 3 || self.valid.len() != self.texel_count() {
            return Err(Error::param(format!(
                "texture {}x{} has {} color values and {} mask entries",
                self.width,
                self.height,
                self.colors.len(),
                self.valid.len()
            )));
        }
        if let Some(i) = self.colors.iter().position(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Input(format!("texture value {i} outside [0, 1]")));
        }
        Ok(())
    }
}

/// How a view's rendering is tied to a mirrored image by the symmetry term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "view")]
pub enum MirrorPairing {
    /// Compare against the horizontal flip of this view's own generated image.
    FlipSelf,
    /// Compare against the flipped generated image of an earlier view (0-based).
    Partner(usize),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledView {
    pub orbit: Orbit,
    pub mirror: MirrorPairing,
}

/// Ordered painting viewpoints sharing one set of intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSchedule {
    pub views: Vec<ScheduledView>,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for ViewSchedule {
    /// Front, four left/right pairs and the back. Views 1 and 10 mirror
    /// themselves; right views 3, 5, 7, 9 mirror left views 2, 4, 6, 8.
    fn default() -> Self {
        let d = 2.8;
        let v = |az: f64, el: f64, mirror| ScheduledView {
            orbit: Orbit::new(az, el, d),
            mirror,
        };
        use MirrorPairing::*;
        ViewSchedule {
            views: vec![
                v(0.0, 0.0, FlipSelf),
                v(-45.0, 0.0, None),
                v(45.0, 0.0, Partner(1)),
                v(-90.0, 0.0, None),
                v(90.0, 0.0, Partner(3)),
                v(-135.0, 0.0, None),
                v(135.0, 0.0, Partner(5)),
                v(-30.0, 35.0, None),
                v(30.0, 35.0, Partner(7)),
                v(180.0, 0.0, FlipSelf),
            ],
            fov_y_deg: 45.0,
            width: 512,
            height: 512,
        }
    }
}

impl ViewSchedule {
    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn camera(&self, i: usize) -> Camera {
        self.views[i]
            .orbit
            .camera(self.fov_y_deg, self.width, self.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::config("view schedule is empty"));
        }
        for (i, v) in self.views.iter().enumerate() {
            if let MirrorPairing::Partner(p) = v.mirror {
                if p >= i {
                    return Err(Error::config(format!(
                        "view {} pairs with view {}, which is not painted earlier",
                        i + 1,
                        p + 1
                    )));
                }
            }
            self.camera(i).validate()?;
        }
        Ok(())
    }
}

/// Mean squared error over every pixel and channel.
pub fn symmetry_loss(render: &FeatureImage, mirror_target: &FeatureImage) -> Result<f64> {
    if !render.same_shape(mirror_target) {
        return Err(Error::param("symmetry images differ in shape"));
    }
    let n = render.data.len().max(1) as f64;
    Ok(render
        .data
        .iter()
        .zip(&mirror_target.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Early stop once the loss changes by less than this between steps.
    pub tolerance: f64,
    pub sampling: Sampling,
    pub symmetry_weight: f64,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            learning_rate: 0.01,
            steps: 200,
            tolerance: 1e-5,
            sampling: Sampling::Bilinear,
            symmetry_weight: DEFAULT_SYMMETRY_WEIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectOutcome {
    pub texture: TextureMap,
    pub loss: f64,
    pub steps: usize,
}

const L1_EPS: f64 = 1e-8;

/// Data term (mean smoothed L1 over covered pixels) plus the weighted mirror
/// term, with the per-pixel cotangent.
fn projection_loss(
    render: &FeatureImage,
    target: &FeatureImage,
    mirror: Option<&FeatureImage>,
    weight: f64,
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let covered = render.alpha.iter().filter(|&&a| a > 0.0).count().max(1) as f64;
    let data_norm = 1.0 / (covered * 3.0);
    let mut grad = if want_grad {
        vec![0.0; render.data.len()]
    } else {
        Vec::new()
    };
    let mut loss = 0.0;
    for p in 0..render.pixel_count() {
        if render.alpha[p] <= 0.0 {
            continue;
        }
        for k in 0..3 {
            let i = p * 3 + k;
            let r = render.data[i] - target.data[i];
            let s = (r * r + L1_EPS * L1_EPS).sqrt();
            loss += (s - L1_EPS) * data_norm;
            if want_grad {
                grad[i] += r / s * data_norm;
            }
        }
    }
    if let Some(m) = mirror {
        if weight != 0.0 {
            let n = render.data.len() as f64;
            for (i, (a, b)) in render.data.iter().zip(&m.data).enumerate() {
                loss += weight * (a - b) * (a - b) / n;
                if want_grad && render.alpha[i / 3] > 0.0 {
                    grad[i] += 2.0 * weight * (a - b) / n;
                }
            }
        }
    }
    (loss, grad)
}

/// Fits the texels visible in `plan` to `target` starting from `previous`.
/// Texels no pixel samples are returned bit-identical; the validity mask
/// gains every visible texel.
pub fn project_with_plan(
    previous: &TextureMap,
    target: &FeatureImage,
    mirror: Option<&FeatureImage>,
    plan: &RasterPlan,
    config: &ProjectConfig,
) -> Result<ProjectOutcome> {
    if target.width != plan.width || target.height != plan.height || target.channels != 3 {
        return Err(Error::Input(format!(
            "target is {}x{}x{}, render is {}x{}x3",
            target.width, target.height, target.channels, plan.width, plan.height
        )));
    }
    if !target.is_finite() {
        return Err(Error::Input("target image has non-finite pixels".into()));
    }
    if let Some(m) = mirror {
        if !target.same_shape(m) || !m.is_finite() {
            return Err(Error::Input(
                "mirror target must match the target and be finite".into(),
            ));
        }
    }
    let visible = plan.visible_texels();
    let active: Vec<bool> = visible.iter().flat_map(|&v| [v; 3]).collect();
    let mut texture = previous.clone();
    let mut adam = Adam::new(
        AdamConfig::with_lr(config.learning_rate),
        texture.colors.len(),
    );
    let mut previous_loss = f64::INFINITY;
    let mut loss = 0.0;
    let mut steps = 0;
    for step in 0..config.steps {
        let render = plan.render(&texture);
        let (l, d_pixels) = projection_loss(&render, target, mirror, config.symmetry_weight, true);
        loss = l;
        if (previous_loss - l).abs() < config.tolerance {
            break;
        }
        previous_loss = l;
        let grad = plan.backward(&d_pixels);
        adam.step_masked(&mut texture.colors, &grad, &active);
        for (c, &a) in texture.colors.iter_mut().zip(&active) {
            if a {
                *c = c.clamp(0.0, 1.0);
            }
        }
        steps = step + 1;
    }
    if steps == config.steps {
        let render = plan.render(&texture);
        loss = projection_loss(&render, target, mirror, config.symmetry_weight, false).0;
    }
    for (v, vis) in texture.valid.iter_mut().zip(&visible) {
        *v |= *vis;
    }
    Ok(ProjectOutcome {
        texture,
        loss,
        steps,
    })
}

/// One painting step: fit `previous` to `target` as seen by `camera`.
pub fn project_view(
    previous: &TextureMap,
    target: &FeatureImage,
    camera: &Camera,
    mesh: &Mesh,
    mirror: Option<&FeatureImage>,
    config: &ProjectConfig,
) -> Result<ProjectOutcome> {
    let bvh = Bvh::build(mesh);
    let plan = RasterPlan::build(
        mesh,
        &bvh,
        camera,
        previous.width,
        previous.height,
        config.sampling,
    )?;
    project_with_plan(previous, target, mirror, &plan, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PaintConfig {
    pub texture_width: usize,
    pub texture_height: usize,
    pub initial_color: [f64; 3],
    pub seed: u64,
    pub project: ProjectConfig,
}

impl Default for PaintConfig {
    fn default() -> Self {
        PaintConfig {
            texture_width: 512,
            texture_height: 512,
            initial_color: [0.5; 3],
            seed: 0,
            project: ProjectConfig::default(),
        }
    }
}

/// Resumable painting progress: the texture after `completed` views and the
/// generated images later views mirror against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaintState {
    pub texture: TextureMap,
    pub completed: usize,
    pub generated: Vec<Option<FeatureImage>>,
    pub losses: Vec<f64>,
}

impl PaintState {
    pub fn new(schedule: &ViewSchedule, config: &PaintConfig) -> Self {
        PaintState {
            texture: TextureMap::filled(
                config.texture_width,
                config.texture_height,
                config.initial_color,
            ),
            completed: 0,
            generated: vec![None; schedule.views.len()],
            losses: Vec::new(),
        }
    }
}

/// Paints the schedule's remaining views in order. `on_view` sees the state
/// after each completed view (for persistence). An oracle failure returns a
/// stage error naming the 1-based view; earlier views stay in the state
/// already handed to `on_view`.
pub fn paint_texture(
    mesh: &Mesh,
    schedule: &ViewSchedule,
    oracle: &dyn GuidanceOracle,
    prompt: &str,
    config: &PaintConfig,
    resume: Option<PaintState>,
    on_view: &mut dyn FnMut(&PaintState) -> Result<()>,
) -> Result<PaintState> {
    schedule.validate()?;
    let mut state = resume.unwrap_or_else(|| PaintState::new(schedule, config));
    if state.generated.len() != schedule.views.len() {
        return Err(Error::config(
            "paint state was created for a different schedule",
        ));
    }
    state.texture.validate()?;
    let bvh = Bvh::build(mesh);
    for i in state.completed..schedule.views.len() {
        let camera = schedule.camera(i);
        let plan = RasterPlan::build(
            mesh,
            &bvh,
            &camera,
            state.texture.width,
            state.texture.height,
            config.project.sampling,
        )?;
        let mut init = plan.render(&state.texture);
        init.alpha = plan.render_validity(&state.texture);
        let request = GenerateRequest {
            prompt: String::from(prompt),
            seed: config.seed.wrapping_add(i as u64),
            depth: plan.inverse_depth(),
            init,
            view: Some(ViewContext { camera }),
        };
        let stage = || format!("paint view {}", i + 1);
        let image = oracle
            .generate(&request)
            .map_err(|e| Error::oracle(stage(), e))?;
        if image.width != camera.width || image.height != camera.height || image.channels != 3 {
            return Err(Error::oracle(
                stage(),
                crate::OracleError::Protocol(format!(
                    "generated {}x{}x{}, expected {}x{}x3",
                    image.width, image.height, image.channels, camera.width, camera.height
                )),
            ));
        }
        let mirror = match schedule.views[i].mirror {
            MirrorPairing::FlipSelf => Some(image.flip_horizontal()),
            MirrorPairing::Partner(p) => state.generated[p]
                .as_ref()
                .map(FeatureImage::flip_horizontal),
            MirrorPairing::None => None,
        };
        let out = project_with_plan(
            &state.texture,
            &image,
            mirror.as_ref(),
            &plan,
            &config.project,
        )?;
        state.texture = out.texture;
        state.losses.push(out.loss);
        state.generated[i] = Some(image);
        state.completed = i + 1;
        on_view(&state)?;
    }
    Ok(state)
}
