//! Synthetic supervision for object detection and pose estimation from a 3D object.
//!
//! The pipeline stages are:
//!
//! 1. **Sampling** – choose camera viewpoints on a sphere (Loop, Helix, Random).
//! 2. **Scene** – bake procedural primitives into a two-level voxel cache.
//! 3. **Render** – volume-render the cache from every viewpoint onto a white background.
//! 4. **Labelgen** – derive bounding boxes with grayscale morphology, gated by the
//!    occupied region of the whole image set.
//! 5. **Augment** – shift/scale augmentation and cut-and-fuse composites on backgrounds.
//! 6. **Evalkit** – mAP and angular error, with a nearest-rendered-view baseline estimator.

pub mod augment;
pub mod error;
pub mod evalkit;
pub mod geometry;
pub mod imgproc;
pub mod labelgen;
pub mod losses;
pub mod render;
pub mod sampling;
pub mod scene;

pub use error::{Error, Result};
pub use geometry::{CameraPose, Intrinsics, Ray, Viewpoint};
pub use imgproc::PixelBox;
pub use labelgen::{Annotation, LabelGenConfig};
pub use render::{RenderConfig, RenderedImage};
pub use sampling::{StrategyKind, StrategySpec};
pub use scene::{Primitive, Shape, VoxelScene};
