//! On-disk formats: PNG color images, the FMAP float raster, the binary
//! Gaussian cloud, the medium parameter text file, and optimizer moment
//! blobs.

mod cloud;
mod colormap;
mod fmap;
mod medium;
mod moments;
mod png;

pub use cloud::{export_cloud_ply, load_cloud, save_cloud};
pub use colormap::depth_to_colormap;
pub use fmap::{load_scalar_map, save_scalar_map};
pub use medium::{load_medium_text, save_medium_text};
pub use moments::{load_moments, save_moments, MomentGroups};
pub use png::{load_image, save_image};
