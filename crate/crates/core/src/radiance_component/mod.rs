//! Radiance-field components: neural or analytic fields queried in the body
//! model's canonical space and volume-rendered over the textured mesh.

pub mod canonical;
pub mod component;
pub mod field;
pub mod render;
pub mod sampling;
pub mod volume;

pub use canonical::{CanonicalFrame, CanonicalMap, CanonicalPoint};
pub use component::{calibration_pairs, CalibrationPair, Provenance, RadianceComponent};
pub use field::{ChannelMode, Field, MlpConfig, NerfMlp, RgbAdapter, TrainableField};
pub use render::{render_image, render_image_backward, PixelRay, RenderSettings, ViewRays};
pub use sampling::RaySamples;
