use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Wraps an angle into `(−π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut a = yaw.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Oriented box in the LiDAR frame. `center` is the geometric center, `size`
/// is `(l, w, h)` with `l` along the heading, `yaw` rotates about +Z.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub center: Point3,
    pub size: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: Point3, size: [f64; 3], yaw: f64) -> Result<Self> {
        if center.iter().chain(&size).any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(Error::Argument("non-finite box parameter".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Argument(format!("box size must be positive, got {size:?}")));
        }
        Ok(Box3D {
            center,
            size,
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn volume(&self) -> f64 {
        self.size[0] * self.size[1] * self.size[2]
    }

    pub fn bev_area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.center[2] - self.size[2] / 2.0, self.center[2] + self.size[2] / 2.0)
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (c, s) = (self.yaw.cos(), self.yaw.sin());
        let (hl, hw) = (self.size[0] / 2.0, self.size[1] / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(x, y)| {
            [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y]
        })
    }

    /// All eight corners: bottom face first, each face counter-clockwise.
    pub fn corners(&self) -> [Point3; 8] {
        let bev = self.bev_corners();
        let (z0, z1) = self.z_range();
        std::array::from_fn(|i| {
            let [x, y] = bev[i % 4];
            [x, y, if i < 4 { z0 } else { z1 }]
        })
    }

    /// Point in the box frame: `(along heading, lateral, vertical)` from the center.
    pub fn to_local(&self, p: &Point3) -> Point3 {
        let (dx, dy) = (p[0] - self.center[0], p[1] - self.center[1]);
        let (c, s) = (self.yaw.cos(), self.yaw.sin());
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    pub fn contains(&self, p: &Point3, margin: f64) -> bool {
        let l = self.to_local(p);
        l[0].abs() <= self.size[0] / 2.0 + margin
            && l[1].abs() <= self.size[1] / 2.0 + margin
            && l[2].abs() <= self.size[2] / 2.0 + margin
    }

    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.center;
        let [l, w, h] = self.size;
        [x, y, z, l, w, h, self.yaw]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 3] = [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
        }
    }

    /// Class-mean `(l, w, h)` used as the regression anchor.
    pub fn mean_size(self) -> [f64; 3] {
        match self {
            ObjectClass::Car => [3.9, 1.6, 1.56],
            ObjectClass::Pedestrian => [0.8, 0.6, 1.73],
            ObjectClass::Cyclist => [1.76, 0.6, 1.73],
        }
    }

    /// IoU threshold for a true positive.
    pub fn ap_iou_threshold(self) -> f64 {
        match self {
            ObjectClass::Car => 0.7,
            ObjectClass::Pedestrian | ObjectClass::Cyclist => 0.5,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Car" => Ok(ObjectClass::Car),
            "Pedestrian" => Ok(ObjectClass::Pedestrian),
            "Cyclist" => Ok(ObjectClass::Cyclist),
            other => Err(Error::Argument(format!("unknown class {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionResult {
    pub bbox: Box3D,
    pub score: f64,
    pub class: ObjectClass,
}

/// KITTI difficulty levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
        }
    }

    /// Minimum 2D box height (px), maximum occlusion level and truncation.
    pub fn limits(self) -> (f64, u8, f64) {
        match self {
            Difficulty::Easy => (40.0, 0, 0.15),
            Difficulty::Moderate => (25.0, 1, 0.30),
            Difficulty::Hard => (25.0, 2, 0.50),
        }
    }

    /// Whether an object with these label fields counts at this level.
    pub fn admits(self, bbox_height: f64, occlusion: u8, truncation: f64) -> bool {
        let (h, o, t) = self.limits();
        bbox_height >= h && occlusion <= o && truncation <= t
    }

    /// Easiest level that admits the object.
    pub fn classify(bbox_height: f64, occlusion: u8, truncation: f64) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.admits(bbox_height, occlusion, truncation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_normalization() {
        assert_eq!(normalize_yaw(PI), PI);
        assert!((normalize_yaw(-PI) - PI).abs() < 1e-15);
        assert!((normalize_yaw(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_yaw(0.25), 0.25);
    }

    #[test]
    fn invalid_boxes() {
        assert!(Box3D::new([0.0; 3], [1.0, 0.0, 1.0], 0.0).is_err());
        assert!(Box3D::new([0.0; 3], [1.0, 1.0, 1.0], f64::NAN).is_err());
    }

    #[test]
    fn contains_respects_rotation() {
        let b = Box3D::new([10.0, 0.0, 0.0], [4.0, 2.0, 1.0], PI / 2.0).unwrap();
        assert!(b.contains(&[10.0, 1.9, 0.0], 0.0));
        assert!(!b.contains(&[11.9, 0.0, 0.0], 0.0));
    }

    #[test]
    fn difficulty_buckets() {
        assert_eq!(Difficulty::classify(50.0, 0, 0.0), Some(Difficulty::Easy));
        assert_eq!(Difficulty::classify(30.0, 0, 0.0), Some(Difficulty::Moderate));
        assert_eq!(Difficulty::classify(30.0, 2, 0.4), Some(Difficulty::Hard));
        assert_eq!(Difficulty::classify(10.0, 0, 0.0), None);
        assert!(Difficulty::Hard.admits(50.0, 0, 0.0));
    }
}
