use serde::{Deserialize, Serialize};

use super::{rasterize_boxes, KittiLabel};
use crate::error::{Error, Result};
use crate::eval::{rect_intersection_area, Box3D, EvalGroundTruth, ObjectClass};
use crate::frustum::ForegroundMask;
use crate::geometry::{Calibration, Point3, PointSet};
use crate::tensor::{Rng, Tensor};

/// Scene crop `(min, max)` per LiDAR axis in meters.
pub const SCENE_BOUNDS: [(f64, f64); 3] = [(0.0, 70.4), (-40.0, 40.0), (-3.0, 1.0)];
/// Ground height below the sensor.
const GROUND_Z: f64 = -1.73;
/// Minimum BEV clearance between placed boxes.
const CLEARANCE: f64 = 0.5;

/// Keeps the points inside [`SCENE_BOUNDS`]; returns the kept set and the number removed.
pub fn crop_to_scene(points: &PointSet) -> Result<(PointSet, usize)> {
    let keep: Vec<usize> = points
        .coords
        .iter()
        .enumerate()
        .filter(|(_, p)| (0..3).all(|a| p[a] >= SCENE_BOUNDS[a].0 && p[a] <= SCENE_BOUNDS[a].1))
        .map(|(i, _)| i)
        .collect();
    let removed = points.len() - keep.len();
    Ok((points.select(&keep)?, removed))
}

/// Camera 0.27 m ahead of and 0.08 m below the LiDAR, looking along LiDAR +X,
/// with the principal point at the image center column and 46% of the height.
pub fn kitti_like_calibration(width: usize, height: usize, focal: f64) -> Result<Calibration> {
    let (cx, cy) = (width as f64 / 2.0, height as f64 * 0.46);
    Calibration::new(
        [[focal, 0.0, cx, 0.06 * focal], [0.0, focal, cy, 0.0], [0.0, 0.0, 1.0, 0.0]],
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        [[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, -0.08], [1.0, 0.0, 0.0, -0.27]],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub cars: usize,
    pub pedestrians: usize,
    pub cyclists: usize,
    /// Points per square meter on box faces.
    pub surface_density: f64,
    /// Ground points scattered over the crop area.
    pub clutter_points: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Focal length in pixels.
    pub focal: f64,
    /// Forward distance range for box centers.
    pub min_distance: f64,
    pub max_distance: f64,
    pub max_placement_tries: usize,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 0,
            cars: 2,
            pedestrians: 0,
            cyclists: 0,
            surface_density: 12.0,
            clutter_points: 200,
            image_height: 64,
            image_width: 192,
            focal: 110.0,
            min_distance: 9.0,
            max_distance: 22.0,
            max_placement_tries: 500,
        }
    }
}

impl SyntheticSceneSpec {
    /// One car in a 16×48 image, sized for [`PipelineConfig::miniature`](crate::pipeline::PipelineConfig::miniature).
    pub fn miniature(seed: u64) -> Self {
        SyntheticSceneSpec {
            seed,
            cars: 1,
            surface_density: 6.0,
            clutter_points: 60,
            image_height: 16,
            image_width: 48,
            focal: 28.0,
            ..SyntheticSceneSpec::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub bbox: Box3D,
    pub class: ObjectClass,
    /// Image-plane box `(left, top, right, bottom)`.
    pub bbox2d: [f64; 4],
    pub occlusion: u8,
    pub truncation: f64,
}

/// One frame: LiDAR points with an intensity column, image, calibration and annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub points: PointSet,
    /// `[H × W × 3]` in `[0, 1]`.
    pub image: Tensor,
    pub calib: Calibration,
    pub objects: Vec<SceneObject>,
    /// Rasterized projection of the object boxes.
    pub mask: ForegroundMask,
    /// Points removed by the scene crop.
    pub cropped: usize,
}

impl SceneSample {
    pub fn gt_boxes(&self) -> Vec<(Box3D, ObjectClass)> {
        self.objects.iter().map(|o| (o.bbox, o.class)).collect()
    }

    pub fn ground_truth(&self, frame: usize) -> Vec<EvalGroundTruth> {
        self.objects
            .iter()
            .map(|o| EvalGroundTruth {
                frame,
                class: o.class,
                bbox: o.bbox,
                bbox_height: o.bbox2d[3] - o.bbox2d[1],
                occlusion: o.occlusion,
                truncation: o.truncation,
            })
            .collect()
    }

    pub fn labels(&self) -> Vec<KittiLabel> {
        self.objects
            .iter()
            .map(|o| {
                let mut l = KittiLabel::from_lidar_box(o.class.name(), &o.bbox, &self.calib, o.bbox2d);
                l.occlusion = o.occlusion;
                l.truncation = o.truncation;
                l
            })
            .collect()
    }
}

fn class_color(class: ObjectClass) -> [f64; 3] {
    match class {
        ObjectClass::Car => [0.85, 0.25, 0.2],
        ObjectClass::Pedestrian => [0.25, 0.8, 0.3],
        ObjectClass::Cyclist => [0.25, 0.35, 0.85],
    }
}

fn fully_visible(calib: &Calibration, b: &Box3D, w: usize, h: usize) -> bool {
    b.corners().iter().all(|c| match calib.lidar_to_image(c) {
        Ok((u, v, _)) => u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64,
        Err(_) => false,
    })
}

fn place_boxes(spec: &SyntheticSceneSpec, calib: &Calibration, rng: &mut Rng) -> Result<Vec<(Box3D, ObjectClass)>> {
    let classes = std::iter::repeat_n(ObjectClass::Car, spec.cars)
        .chain(std::iter::repeat_n(ObjectClass::Pedestrian, spec.pedestrians))
        .chain(std::iter::repeat_n(ObjectClass::Cyclist, spec.cyclists));
    let half_fov = (spec.image_width as f64 / 2.0) / spec.focal;
    let mut placed: Vec<(Box3D, ObjectClass)> = Vec::new();
    for class in classes {
        let mut ok = None;
        for _ in 0..spec.max_placement_tries {
            let x = rng.uniform(spec.min_distance, spec.max_distance);
            let y = rng.uniform(-0.8 * x * half_fov, 0.8 * x * half_fov);
            let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
            let size = class.mean_size().map(|s| s * rng.uniform(0.95, 1.05));
            let b = Box3D::new([x, y, GROUND_Z + size[2] / 2.0], size, yaw)?;
            if !fully_visible(calib, &b, spec.image_width, spec.image_height) {
                continue;
            }
            let mut grown = b;
            grown.size[0] += 2.0 * CLEARANCE;
            grown.size[1] += 2.0 * CLEARANCE;
            if placed.iter().all(|(o, _)| rect_intersection_area(&grown, o) == 0.0) {
                ok = Some(b);
                break;
            }
        }
        match ok {
            Some(b) => placed.push((b, class)),
            None => {
                return Err(Error::Generation(format!(
                    "could not place a {class} after {} tries",
                    spec.max_placement_tries
                )))
            }
        }
    }
    Ok(placed)
}

/// Points on the five exposed faces (all but the bottom), uniform by area.
fn surface_points(b: &Box3D, density: f64, rng: &mut Rng) -> Vec<Point3> {
    let [l, w, h] = b.size;
    // (normal axis, sign, area)
    let faces = [(0, 1.0, w * h), (0, -1.0, w * h), (1, 1.0, l * h), (1, -1.0, l * h), (2, 1.0, l * w)];
    let (c, s) = (b.yaw.cos(), b.yaw.sin());
    let mut out = Vec::new();
    for (axis, sign, area) in faces {
        let n = (area * density).round() as usize;
        for _ in 0..n {
            let mut local = [
                rng.uniform(-l / 2.0, l / 2.0),
                rng.uniform(-w / 2.0, w / 2.0),
                rng.uniform(-h / 2.0, h / 2.0),
            ];
            local[axis] = sign * b.size[axis] / 2.0;
            out.push([
                b.center[0] + c * local[0] - s * local[1],
                b.center[1] + s * local[0] + c * local[1],
                b.center[2] + local[2],
            ]);
        }
    }
    out
}

/// Deterministic synthetic frame.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<SceneSample> {
    if spec.image_height == 0 || spec.image_width == 0 || !(spec.focal > 0.0) || !(spec.surface_density >= 0.0) {
        return Err(Error::Config("scene needs a positive image size, focal length and density".into()));
    }
    if !(spec.min_distance > 0.0 && spec.max_distance > spec.min_distance) {
        return Err(Error::Config("scene distance range must be increasing and positive".into()));
    }
    let mut rng = Rng::new(spec.seed);
    let calib = kitti_like_calibration(spec.image_width, spec.image_height, spec.focal)?;
    let boxes = place_boxes(spec, &calib, &mut rng)?;

    let mut coords = Vec::new();
    let mut intensity = Vec::new();
    for (b, class) in &boxes {
        let base = match class {
            ObjectClass::Car => 0.6,
            ObjectClass::Pedestrian => 0.4,
            ObjectClass::Cyclist => 0.5,
        };
        for p in surface_points(b, spec.surface_density, &mut rng) {
            coords.push(p);
            intensity.push(base + rng.uniform(-0.05, 0.05));
        }
    }
    let mut added = 0;
    while added < spec.clutter_points {
        let p = [
            rng.uniform(SCENE_BOUNDS[0].0 + 0.5, SCENE_BOUNDS[0].1),
            rng.uniform(SCENE_BOUNDS[1].0, SCENE_BOUNDS[1].1),
            GROUND_Z + rng.uniform(-0.02, 0.02),
        ];
        if boxes.iter().any(|(b, _)| b.contains(&[p[0], p[1], b.center[2]], 0.3)) {
            continue;
        }
        coords.push(p);
        intensity.push(0.1 + rng.uniform(0.0, 0.05));
        added += 1;
    }
    let feats = if coords.is_empty() {
        None
    } else {
        Some(Tensor::new(vec![coords.len(), 1], intensity)?)
    };
    let (points, cropped) = crop_to_scene(&PointSet::new(coords, feats)?)?;

    let (h, w) = (spec.image_height, spec.image_width);
    let only_boxes: Vec<Box3D> = boxes.iter().map(|b| b.0).collect();
    let raster = rasterize_boxes(&calib, &only_boxes, h, w)?;
    let horizon = calib.p2[1][2];
    let mut image = Tensor::zeros(&[h, w, 3]);
    for y in 0..h {
        for x in 0..w {
            let px = y * w + x;
            let rgb = match raster.owner[px] {
                Some(k) => {
                    let (b, class) = &boxes[k];
                    let dist = b.center[0].hypot(b.center[1]);
                    let shade = (1.0 - dist / SCENE_BOUNDS[0].1).clamp(0.2, 1.0);
                    class_color(*class).map(|c| c * shade)
                }
                None if (y as f64) < horizon => [0.55, 0.65, 0.8],
                None => [0.3, 0.3, 0.3],
            };
            image.data_mut()[px * 3..px * 3 + 3].copy_from_slice(&rgb);
        }
    }
    let objects = boxes
        .iter()
        .zip(&raster.bbox2d)
        .map(|(&(bbox, class), &bbox2d)| SceneObject {
            bbox,
            class,
            bbox2d,
            occlusion: 0,
            truncation: 0.0,
        })
        .collect();
    Ok(SceneSample {
        points,
        image,
        calib,
        objects,
        mask: raster.mask,
        cropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_clutter_only() {
        let spec = SyntheticSceneSpec {
            cars: 0,
            ..Default::default()
        };
        let s = generate_scene(&spec).unwrap();
        assert!(s.objects.is_empty());
        assert_eq!(s.points.len(), spec.clutter_points);
        assert_eq!(s.mask.count(), 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SyntheticSceneSpec::default();
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
        let other = SyntheticSceneSpec { seed: 1, ..spec.clone() };
        assert_ne!(generate_scene(&spec).unwrap().points, generate_scene(&other).unwrap().points);
    }

    #[test]
    fn infeasible_placement_errors() {
        let spec = SyntheticSceneSpec {
            cars: 40,
            max_placement_tries: 20,
            ..Default::default()
        };
        assert!(matches!(generate_scene(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn calibration_looks_forward() {
        let c = kitti_like_calibration(192, 64, 110.0).unwrap();
        let (u, _, d) = c.lidar_to_image(&[10.0, 0.0, 0.0]).unwrap();
        assert!((d - 9.73).abs() < 1e-12);
        assert!((u - (96.0 + 0.06 * 110.0 / 9.73)).abs() < 1e-9);
    }
}
