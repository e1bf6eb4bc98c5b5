//! Avatar assembly: a fitted, textured body model with any number of attached
//! radiance components, rendered by sequential mesh-integrated compositing at
//! any pose and expression.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::body_model::{AvatarParams, BodyModel};
use crate::bvh::Bvh;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::FeatureImage;
use crate::mesh::Mesh;
use crate::oracle::synthetic::surface_features;
use crate::oracle::GuidanceOracle;
use crate::radiance_component::canonical::{CanonicalFrame, CanonicalMap};
use crate::radiance_component::component::RadianceComponent;
use crate::radiance_component::render::{render_image, RenderSettings, ViewRays};
use crate::texture_paint::TextureMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentAttachment {
    pub id: String,
    /// Components composite in ascending (blend order, id).
    pub blend_order: i32,
    pub enabled: bool,
}

impl ComponentAttachment {
    pub fn new(id: impl Into<String>, blend_order: i32) -> Self {
        ComponentAttachment {
            id: id.into(),
            blend_order,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttachedComponent {
    pub attachment: ComponentAttachment,
    pub component: Arc<RadianceComponent>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigProvenance {
    pub prompt: String,
    pub seed: u64,
}

/// A fitted avatar at the canonical pose with its texture and components.
#[derive(Debug, Clone, PartialEq)]
pub struct AvatarRig {
    pub model: Arc<BodyModel>,
    pub params: AvatarParams,
    pub texture: TextureMap,
    pub frame: CanonicalFrame,
    components: Vec<AttachedComponent>,
    pub provenance: RigProvenance,
}

/// Mesh, intersection structure and canonicalization for one (β, θ, ψ).
#[derive(Debug, Clone)]
pub struct PosedScene {
    pub params: AvatarParams,
    pub mesh: Mesh,
    pub bvh: Bvh,
    pub canonical: CanonicalMap,
}

impl AvatarRig {
    /// A rig at (β, θ^c, 0) with no components. θ and ψ of `params` are
    /// replaced by the canonical pose and a neutral expression.
    pub fn new(model: Arc<BodyModel>, beta: &[f64], texture: TextureMap) -> Result<Self> {
        let params = AvatarParams::with_shape(&model, beta);
        params.validate(&model)?;
        texture.validate()?;
        let frame = CanonicalFrame::for_model(&model);
        Ok(AvatarRig {
            model,
            params,
            texture,
            frame,
            components: Vec::new(),
            provenance: RigProvenance::default(),
        })
    }

    pub fn with_frame(mut self, frame: CanonicalFrame) -> Result<Self> {
        frame.validate(&self.model)?;
        if let Some(c) = self.components.first() {
            if c.component.frame != frame {
                return Err(Error::Attachment(alloc::format!(
                    "component `{}` was learned with different frame constants",
                    c.attachment.id
                )));
            }
        }
        self.frame = frame;
        Ok(self)
    }

    /// Attached components in compositing order.
    pub fn components(&self) -> &[AttachedComponent] {
        &self.components
    }

    pub fn component(&self, id: &str) -> Option<&AttachedComponent> {
        self.components.iter().find(|c| c.attachment.id == id)
    }

    /// A new rig with `component` added. Its parameters are shared, never
    /// modified.
    pub fn attach(
        &self,
        attachment: ComponentAttachment,
        component: Arc<RadianceComponent>,
    ) -> Result<AvatarRig> {
        if self.component(&attachment.id).is_some() {
            return Err(Error::Attachment(alloc::format!(
                "a component with id `{}` is already attached",
                attachment.id
            )));
        }
        if component.frame != self.frame {
            return Err(Error::Attachment(alloc::format!(
                "component `{}` was learned with different frame constants",
                attachment.id
            )));
        }
        let mut rig = self.clone();
        rig.components.push(AttachedComponent {
            attachment,
            component,
        });
        rig.components.sort_by(|a, b| {
            (a.attachment.blend_order, &a.attachment.id)
                .cmp(&(b.attachment.blend_order, &b.attachment.id))
        });
        Ok(rig)
    }

    pub fn detach(&self, id: &str) -> Result<AvatarRig> {
        let mut rig = self.clone();
        let before = rig.components.len();
        rig.components.retain(|c| c.attachment.id != id);
        if rig.components.len() == before {
            return Err(Error::Attachment(alloc::format!(
                "no component with id `{id}`"
            )));
        }
        Ok(rig)
    }

    pub fn set_enabled(&self, id: &str, enabled: bool) -> Result<AvatarRig> {
        let mut rig = self.clone();
        let c = rig
            .components
            .iter_mut()
            .find(|c| c.attachment.id == id)
            .ok_or_else(|| Error::Attachment(alloc::format!("no component with id `{id}`")))?;
        c.attachment.enabled = enabled;
        Ok(rig)
    }

    /// The scene at this rig's shape with pose θ and expression ψ.
    pub fn scene_at(&self, theta: &[f64], psi: &[f64]) -> Result<PosedScene> {
        let params = AvatarParams {
            beta: self.params.beta.clone(),
            theta: theta.to_vec(),
            psi: psi.to_vec(),
        };
        let mesh = self.model.skin_mesh(&params)?;
        let bvh = Bvh::build(&mesh);
        let canonical = CanonicalMap::new(&self.model, &params, &self.frame)?;
        Ok(PosedScene {
            params,
            mesh,
            bvh,
            canonical,
        })
    }

    pub fn scene(&self) -> Result<PosedScene> {
        self.scene_at(&self.params.theta, &self.params.psi)
    }

    /// Textured mesh with every enabled component composited in order.
    /// Alpha is the combined coverage a + (1 − a) Ω̂_k.
    pub fn render_scene(
        &self,
        scene: &PosedScene,
        rays: &ViewRays,
        camera: &Camera,
        channels: usize,
        settings: &RenderSettings,
        oracle: &dyn GuidanceOracle,
    ) -> Result<FeatureImage> {
        let mut image = surface_features(
            &scene.mesh,
            &scene.bvh,
            &self.texture,
            camera,
            channels,
            oracle,
        )?;
        for c in self.components.iter().filter(|c| c.attachment.enabled) {
            if c.component.channels() != channels {
                return Err(Error::config(alloc::format!(
                    "component `{}` renders {} channels, the view needs {channels}",
                    c.attachment.id,
                    c.component.channels()
                )));
            }
            let layer = render_image(
                &c.component.field,
                Some(&scene.canonical),
                rays,
                Some(&image),
                settings,
            )?;
            let coverage = core::mem::take(&mut image.alpha);
            image = layer;
            for (a, cov) in image.alpha.iter_mut().zip(coverage) {
                *a = cov + (1.0 - cov) * *a;
            }
        }
        Ok(image)
    }

    pub fn render(
        &self,
        camera: &Camera,
        channels: usize,
        settings: &RenderSettings,
        oracle: &dyn GuidanceOracle,
    ) -> Result<FeatureImage> {
        let scene = self.scene()?;
        let rays = ViewRays::new(camera, Some(&scene.bvh))?;
        self.render_scene(&scene, &rays, camera, channels, settings, oracle)
    }
}

/// Renders the rig reposed to θ with expression ψ; components follow the
/// body through canonicalization under the same parameters.
pub fn animate(
    rig: &AvatarRig,
    theta: &[f64],
    psi: &[f64],
    camera: &Camera,
    channels: usize,
    settings: &RenderSettings,
    oracle: &dyn GuidanceOracle,
) -> Result<FeatureImage> {
    let scene = rig.scene_at(theta, psi)?;
    let rays = ViewRays::new(camera, Some(&scene.bvh))?;
    rig.render_scene(&scene, &rays, camera, channels, settings, oracle)
}
