//! KITTI calibration, velodyne and label formats, a minimal image raster
//! format, and deterministic synthetic scenes.

mod calib;
mod labels;
mod raster;
mod synthetic;
mod velodyne;

pub use calib::{format_calib, parse_calib};
pub use labels::{format_labels, parse_labels, KittiLabel};
pub use raster::{read_ppm, rasterize_boxes, write_ppm, BoxRaster};
pub use synthetic::{crop_to_scene, generate_scene, kitti_like_calibration, SceneObject, SceneSample, SyntheticSceneSpec, SCENE_BOUNDS};
pub use velodyne::{read_velodyne, write_velodyne};
