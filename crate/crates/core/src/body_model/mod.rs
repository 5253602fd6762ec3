//! Articulated body template, forward kinematics, linear blend skinning and
//! pinhole projection.

mod camera;
pub mod diff;
mod kinematics;
mod pose;
pub mod procedural;
mod template;

pub use camera::{Camera, MIN_DEPTH};
pub use kinematics::{chain, forward_kinematics, pose_shaped, shaped_template, skin, skin_vertices, Posed, ShapedTemplate};
pub use pose::PoseParams;
pub use procedural::{generate, ProceduralConfig};
pub use template::{JointSpec, Region, SkeletonTemplate, TEMPLATE_SCHEMA_VERSION};
