//! Training loops: learning a latent component under SDS, mask and sparsity
//! losses, then refining it in RGB with an added similarity loss.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    mask_loss, sample_timestep, sds_gradient, similarity_loss, sparsity_loss, LossWeights,
    SdsSample,
};
use crate::avatar_compose::{AvatarRig, PosedScene};
use crate::camera::{Camera, Orbit};
use crate::error::{Error, OracleError, Result};
use crate::image::FeatureImage;
use crate::optim::{Adam, AdamConfig};
use crate::oracle::{GuidanceOracle, NoiseSchedule, SegmentRequest, ViewContext};
use crate::radiance_component::component::{CalibrationPair, Provenance, RadianceComponent};
use crate::radiance_component::field::{
    ChannelMode, Field, MlpConfig, NerfMlp, RgbAdapter, TrainableField,
};
use crate::radiance_component::render::{
    render_cache_backward, render_image_cached, RenderCache, RenderSettings, ViewRays,
};
use crate::radiance_component::sampling::{hash_uniform, REFINEMENT_BINS, TRAINING_BINS};

/// Distribution of training cameras on a sphere around the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSampling {
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub distance: f64,
    /// Relative radius jitter: distance · (1 ± jitter).
    pub distance_jitter: f64,
    pub fov_y_deg: f64,
}

impl Default for CameraSampling {
    fn default() -> Self {
        CameraSampling {
            azimuth_deg: [-180.0, 180.0],
            elevation_deg: [-10.0, 30.0],
            distance: 2.8,
            distance_jitter: 0.1,
            fov_y_deg: 45.0,
        }
    }
}

impl CameraSampling {
    pub fn sample(&self, rng: &mut impl Rng) -> Orbit {
        let pick =
            |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| lo + (hi - lo) * rng.random::<f64>();
        let azimuth = pick(rng, self.azimuth_deg);
        let elevation = pick(rng, self.elevation_deg);
        let scale = 1.0 + self.distance_jitter * (2.0 * rng.random::<f64>() - 1.0);
        Orbit::new(azimuth, elevation, self.distance * scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance * (1.0 - self.distance_jitter) > crate::camera::SCENE_RADIUS) {
            return Err(Error::config(
                "sampled cameras can fall inside the scene bounds",
            ));
        }
        if !(self.distance_jitter >= 0.0 && self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) {
            return Err(Error::config(
                "camera jitter must be nonnegative and the field of view in (0, 180)",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub mlp: MlpConfig,
    /// Side of the square latent render.
    pub resolution: usize,
    pub bins: usize,
    pub cameras: CameraSampling,
    /// Segmentation is queried, and the mask loss applied, every this many
    /// iterations.
    pub segment_every: usize,
    /// Extra attempts for retryable oracle failures.
    pub retries: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            mlp: MlpConfig::default(),
            resolution: 64,
            bins: TRAINING_BINS,
            cameras: CameraSampling::default(),
            segment_every: 10,
            retries: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Side of the square RGB render.
    pub resolution: usize,
    pub bins: usize,
    pub cameras: CameraSampling,
    pub segment_every: usize,
    pub retries: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            iterations: 1000,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            resolution: 480,
            bins: REFINEMENT_BINS,
            cameras: CameraSampling::default(),
            segment_every: 10,
            retries: 2,
            seed: 0,
        }
    }
}

/// Losses of one iteration. `total` is the weighted sum of the scalar terms;
/// SDS has no scalar and is reported as the RMS of its pixel gradient.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sds_rms: f64,
    pub mask: Option<f64>,
    pub sparsity: f64,
    pub similarity: Option<f64>,
    pub total: f64,
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub stage: String,
    pub losses: LossBreakdown,
    pub timestep: usize,
    pub camera: Orbit,
    pub mean_mask: f64,
}

/// Progress hooks for persistence and diagnostics.
pub trait TrainObserver {
    fn iteration(&mut self, _log: &IterationLog, _session: &TrainCheckpoint) -> Result<()> {
        Ok(())
    }

    /// Called once with the state at the failing iteration before an error
    /// is returned.
    fn aborted(&mut self, _state: &TrainCheckpoint, _error: &Error) {}
}

impl TrainObserver for () {}

/// Resumable optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    /// Iterations completed.
    pub iteration: usize,
    pub field: NerfMlp,
    pub adam: Adam,
}

/// Which losses contribute to a pixel cotangent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub sds: bool,
    pub mask: bool,
    pub sparse: bool,
    pub sim: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        sds: true,
        mask: true,
        sparse: true,
        sim: true,
    };
    pub const NONE: LossTerms = LossTerms {
        sds: false,
        mask: false,
        sparse: false,
        sim: false,
    };
}

/// Everything an iteration observed before differentiation: the camera, the
/// rendering and each oracle answer.
#[derive(Debug, Clone)]
pub struct IterationProbe {
    pub iteration: usize,
    pub orbit: Orbit,
    pub camera: Camera,
    pub rays: ViewRays,
    pub settings: RenderSettings,
    /// Textured mesh with previously attached components.
    pub base: FeatureImage,
    /// This component composited over `base`; alpha is its Ω̂.
    pub render: FeatureImage,
    pub cache: RenderCache,
    pub sds: SdsSample,
    /// Ω at the render's resolution, on segmentation iterations.
    pub mask_target: Option<Vec<f64>>,
    /// (z_img, z_text) in RGB refinement.
    pub embeddings: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Learn,
    Refine,
}

/// Optimization state shared by both stages.
pub struct TrainSession<'a> {
    rig: AvatarRig,
    scene: PosedScene,
    oracle: &'a dyn GuidanceOracle,
    prompt: String,
    keyword: String,
    schedule: NoiseSchedule,
    text_embedding: Option<Vec<f64>>,
    stage: Stage,
    pub field: NerfMlp,
    pub adam: Adam,
    pub completed: usize,
    iterations: usize,
    weights: LossWeights,
    resolution: usize,
    bins: usize,
    cameras: CameraSampling,
    segment_every: usize,
    retries: usize,
    seed: u64,
}

fn check_common(
    weights: &LossWeights,
    cameras: &CameraSampling,
    resolution: usize,
    bins: usize,
    segment_every: usize,
) -> Result<()> {
    weights.validate()?;
    cameras.validate()?;
    if resolution == 0 || bins < 2 || segment_every == 0 {
        return Err(Error::config(
            "resolution and segmentation cadence must be positive and bins at least 2",
        ));
    }
    Ok(())
}

impl<'a> TrainSession<'a> {
    /// Latent-space learning of a new component named `keyword`. Components
    /// already on the rig render into the conditioning image.
    pub fn learn(
        rig: &AvatarRig,
        prompt: &str,
        keyword: &str,
        oracle: &'a dyn GuidanceOracle,
        config: &TrainConfig,
    ) -> Result<Self> {
        check_common(
            &config.weights,
            &config.cameras,
            config.resolution,
            config.bins,
            config.segment_every,
        )?;
        if config.mlp.mode != ChannelMode::Latent {
            return Err(Error::config("component learning renders latent features"));
        }
        let field = NerfMlp::new(config.mlp.clone())?;
        Self::build(
            rig,
            prompt,
            keyword,
            oracle,
            field,
            Stage::Learn,
            config.iterations,
            config.learning_rate,
            config.weights.clone(),
            config.resolution,
            config.bins,
            config.cameras.clone(),
            config.segment_every,
            config.retries,
            config.seed,
        )
    }

    /// RGB refinement of a latent component: an adapter fitted to the
    /// calibration pairs is appended to its field.
    pub fn refine(
        rig: &AvatarRig,
        component: &RadianceComponent,
        prompt: &str,
        oracle: &'a dyn GuidanceOracle,
        config: &RefineConfig,
        calibration: &[CalibrationPair],
    ) -> Result<Self> {
        check_common(
            &config.weights,
            &config.cameras,
            config.resolution,
            config.bins,
            config.segment_every,
        )?;
        if calibration.is_empty() {
            return Err(Error::config(
                "refinement needs latent/RGB calibration pairs",
            ));
        }
        if component.field.config.mode != ChannelMode::Latent {
            return Err(Error::config("only latent components are refined"));
        }
        let mut field = component.field.clone();
        field.attach_adapter(&RgbAdapter::fit(calibration)?)?;
        let rig = match rig.component(&component.id) {
            Some(_) => rig.detach(&component.id)?,
            None => rig.clone(),
        };
        Self::build(
            &rig,
            prompt,
            &component.provenance.keyword,
            oracle,
            field,
            Stage::Refine,
            config.iterations,
            config.learning_rate,
            config.weights.clone(),
            config.resolution,
            config.bins,
            config.cameras.clone(),
            config.segment_every,
            config.retries,
            config.seed,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        rig: &AvatarRig,
        prompt: &str,
        keyword: &str,
        oracle: &'a dyn GuidanceOracle,
        field: NerfMlp,
        stage: Stage,
        iterations: usize,
        learning_rate: f64,
        weights: LossWeights,
        resolution: usize,
        bins: usize,
        cameras: CameraSampling,
        segment_every: usize,
        retries: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        let schedule = oracle
            .noise_schedule()
            .and_then(|s| s.validate().map(|_| s))
            .map_err(|e| Error::oracle("noise schedule", e))?;
        let text_embedding = match (stage, weights.sim > 0.0) {
            (Stage::Refine, true) => Some(
                oracle
                    .embed_text(prompt)
                    .map_err(|e| Error::oracle("embed prompt", e))?,
            ),
            _ => None,
        };
        let scene = rig.scene()?;
        let adam = Adam::new(AdamConfig::with_lr(learning_rate), field.params().len());
        Ok(TrainSession {
            rig: rig.clone(),
            scene,
            oracle,
            prompt: String::from(prompt),
            keyword: String::from(keyword),
            schedule,
            text_embedding,
            stage,
            field,
            adam,
            completed: 0,
            iterations,
            weights,
            resolution,
            bins,
            cameras,
            segment_every,
            retries,
            seed,
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: LossWeights) {
        self.weights = weights;
    }

    pub fn checkpoint(&self) -> TrainCheckpoint {
        TrainCheckpoint {
            iteration: self.completed,
            field: self.field.clone(),
            adam: self.adam.clone(),
        }
    }

    pub fn resume(&mut self, checkpoint: TrainCheckpoint) -> Result<()> {
        if checkpoint.field.params.len() != self.field.params.len()
            || checkpoint.field.config != self.field.config
        {
            return Err(Error::config(
                "checkpoint field does not match this session",
            ));
        }
        self.field = checkpoint.field;
        self.adam = checkpoint.adam;
        self.completed = checkpoint.iteration;
        Ok(())
    }

    fn channels(&self) -> usize {
        self.field.channels()
    }

    fn stage_name(&self) -> &'static str {
        match self.stage {
            Stage::Learn => "learn",
            Stage::Refine => "refine",
        }
    }

    fn call<T>(
        &self,
        iteration: usize,
        what: &str,
        mut f: impl FnMut() -> core::result::Result<T, OracleError>,
    ) -> Result<T> {
        let mut attempt = 0;
        loop {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.retries => attempt += 1,
                Err(e) => {
                    return Err(Error::oracle(
                        format!("{} iteration {iteration} ({what})", self.stage_name()),
                        e,
                    ))
                }
            }
        }
    }

    /// Renders iteration `iteration` and queries the oracle; deterministic
    /// given the seed, the iteration and the current parameters.
    pub fn probe(&self, iteration: usize) -> Result<IterationProbe> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(iteration as u64);
        let orbit = self.cameras.sample(&mut rng);
        let camera = orbit.camera(self.cameras.fov_y_deg, self.resolution, self.resolution);
        let rays = ViewRays::new(&camera, Some(&self.scene.bvh))?;
        let settings = RenderSettings {
            bins: self.bins,
            jitter: true,
            seed: hash_uniform(self.seed, iteration as u64, 0x51).to_bits(),
            ..Default::default()
        };
        let ch = self.channels();
        let base =
            self.rig
                .render_scene(&self.scene, &rays, &camera, ch, &settings, self.oracle)?;
        let (render, cache) = render_image_cached(
            &self.field,
            Some(&self.scene.canonical),
            &rays,
            Some(&base),
            &settings,
        )?;
        let progress = iteration as f64 / self.iterations.max(1) as f64;
        let t = sample_timestep(&self.schedule, progress, &mut rng);
        let view = Some(ViewContext { camera });
        let sds = self.call(iteration, "denoise", || {
            let mut r = rng.clone();
            sds_gradient(
                &render,
                &self.prompt,
                self.oracle,
                &self.schedule,
                t,
                view,
                &mut r,
            )
        })?;
        let mask_target = if iteration.is_multiple_of(self.segment_every) {
            Some(self.segmentation(iteration, &render, &camera)?)
        } else {
            None
        };
        let embeddings = match &self.text_embedding {
            Some(text) => {
                let z = self.call(iteration, "embed image", || {
                    self.oracle.embed_image(&render)
                })?;
                Some((z, text.clone()))
            }
            None => None,
        };
        Ok(IterationProbe {
            iteration,
            orbit,
            camera,
            rays,
            settings,
            base,
            render,
            cache,
            sds,
            mask_target,
            embeddings,
        })
    }

    /// Ω for `render`: latent renders are decoded first and the mask is
    /// pooled back to the render's resolution.
    fn segmentation(
        &self,
        iteration: usize,
        render: &FeatureImage,
        camera: &Camera,
    ) -> Result<Vec<f64>> {
        let (image, factor) = match self.stage {
            Stage::Learn => (
                self.call(iteration, "decode", || self.oracle.decode(render))?,
                self.oracle.latent_factor(),
            ),
            Stage::Refine => (render.clone(), 1),
        };
        let (w, h) = (camera.width * factor, camera.height * factor);
        if image.width != w || image.height != h || image.channels != 3 {
            return Err(Error::oracle(
                format!("{} iteration {iteration} (decode)", self.stage_name()),
                OracleError::Protocol(format!(
                    "decoded {}x{}x{}, expected {w}x{h}x3",
                    image.width, image.height, image.channels
                )),
            ));
        }
        let request = SegmentRequest {
            image,
            keyword: self.keyword.clone(),
            view: Some(ViewContext {
                camera: camera.with_resolution(w, h),
            }),
        };
        let mask = self.call(iteration, "segment", || self.oracle.segment(&request))?;
        if mask.width != w || mask.height != h || mask.channels != 1 {
            return Err(Error::oracle(
                format!("{} iteration {iteration} (segment)", self.stage_name()),
                OracleError::Protocol(format!(
                    "mask is {}x{}x{}, expected {w}x{h}x1",
                    mask.width, mask.height, mask.channels
                )),
            ));
        }
        Ok(mask.downsample(factor)?.data)
    }

    /// ∂L/∂(render, Ω̂) restricted to `terms`, with the loss values.
    pub fn cotangent(
        &self,
        probe: &IterationProbe,
        terms: LossTerms,
    ) -> Result<(FeatureImage, LossBreakdown)> {
        let w = &self.weights;
        let render = &probe.render;
        let mut d = FeatureImage::new(render.width, render.height, render.channels);
        let mut losses = LossBreakdown {
            sds_rms: (probe.sds.gradient.data.iter().map(|g| g * g).sum::<f64>()
                / probe.sds.gradient.data.len().max(1) as f64)
                .sqrt(),
            ..Default::default()
        };
        if terms.sds {
            d.data.copy_from_slice(&probe.sds.gradient.data);
        }
        if let Some(target) = &probe.mask_target {
            let m = mask_loss(target, &render.alpha)?;
            losses.mask = Some(m.value);
            losses.total += w.mask * m.value;
            if terms.mask {
                for (a, g) in d.alpha.iter_mut().zip(&m.grad) {
                    *a += w.mask * g;
                }
            }
        }
        let s = sparsity_loss(&render.alpha);
        losses.sparsity = s.value;
        losses.total += w.sparse * s.value;
        if terms.sparse {
            for (a, g) in d.alpha.iter_mut().zip(&s.grad) {
                *a += w.sparse * g;
            }
        }
        if let Some((z_img, z_text)) = &probe.embeddings {
            let l = similarity_loss(z_img, z_text)?;
            losses.similarity = Some(l.value);
            losses.total += w.sim * l.value;
            if terms.sim && w.sim != 0.0 {
                let cot: Vec<f64> = l.grad.iter().map(|g| w.sim * g).collect();
                let vjp = self.call(probe.iteration, "embed image gradient", || {
                    self.oracle.embed_image_vjp(render, &cot)
                })?;
                if !vjp.same_shape(render) {
                    return Err(Error::oracle(
                        format!(
                            "{} iteration {} (embed image gradient)",
                            self.stage_name(),
                            probe.iteration
                        ),
                        OracleError::Protocol("embedding gradient has the wrong shape".into()),
                    ));
                }
                for (a, g) in d.data.iter_mut().zip(&vjp.data) {
                    *a += g;
                }
            }
        }
        Ok((d, losses))
    }

    /// ∂L/∂Φ for a pixel cotangent from [`TrainSession::cotangent`].
    pub fn gradient(&self, probe: &IterationProbe, cotangent: &FeatureImage) -> Result<Vec<f64>> {
        render_cache_backward(&self.field, &probe.cache, Some(&probe.base), cotangent)
    }

    /// Runs the next iteration and updates the parameters.
    pub fn step(&mut self) -> Result<IterationLog> {
        let iteration = self.completed;
        let probe = self.probe(iteration)?;
        let (d, losses) = self.cotangent(&probe, LossTerms::ALL)?;
        if !d.is_finite() || !losses.total.is_finite() || !losses.sds_rms.is_finite() {
            return Err(Error::Numeric {
                iteration,
                detail: format!("non-finite loss or pixel gradient: {losses:?}"),
            });
        }
        let grad = self.gradient(&probe, &d)?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                iteration,
                detail: format!("parameter gradient {i} is {} ({losses:?})", grad[i]),
            });
        }
        self.adam.step(&mut self.field.params, &grad);
        self.completed += 1;
        let n = probe.render.alpha.len().max(1) as f64;
        Ok(IterationLog {
            iter: iteration,
            stage: String::from(self.stage_name()),
            losses,
            timestep: probe.sds.t,
            camera: probe.orbit,
            mean_mask: probe.render.alpha.iter().sum::<f64>() / n,
        })
    }

    /// Iterates to the configured count, reporting each iteration.
    pub fn run(mut self, observer: &mut dyn TrainObserver) -> Result<RadianceComponent> {
        while self.completed < self.iterations {
            match self.step() {
                Ok(log) => observer.iteration(&log, &self.checkpoint())?,
                Err(e) => {
                    observer.aborted(&self.checkpoint(), &e);
                    return Err(e);
                }
            }
        }
        Ok(self.into_component())
    }

    pub fn into_component(self) -> RadianceComponent {
        RadianceComponent {
            id: self.keyword.clone(),
            field: self.field,
            frame: self.rig.frame.clone(),
            provenance: Provenance {
                prompt: self.prompt,
                keyword: self.keyword,
                seed: self.seed,
                iterations: self.completed,
                refined: self.stage == Stage::Refine,
            },
        }
    }
}

/// Learns a latent component for `keyword` on `rig`.
pub fn train_component(
    rig: &AvatarRig,
    prompt: &str,
    keyword: &str,
    oracle: &dyn GuidanceOracle,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<RadianceComponent> {
    TrainSession::learn(rig, prompt, keyword, oracle, config)?.run(observer)
}

/// Refines a latent component in RGB space.
pub fn refine_component(
    component: &RadianceComponent,
    rig: &AvatarRig,
    prompt: &str,
    oracle: &dyn GuidanceOracle,
    config: &RefineConfig,
    calibration: &[CalibrationPair],
    observer: &mut dyn TrainObserver,
) -> Result<RadianceComponent> {
    TrainSession::refine(rig, component, prompt, oracle, config, calibration)?.run(observer)
}
