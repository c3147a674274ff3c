use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::eval::{normalize_yaw, Box3D, EvalGroundTruth, ObjectClass};
use crate::geometry::Calibration;

/// One object row of a KITTI label file (camera frame).
#[derive(Clone, Debug, PartialEq)]
pub struct KittiLabel {
    pub kind: String,
    pub truncation: f64,
    pub occlusion: u8,
    pub alpha: f64,
    /// 2D box `(left, top, right, bottom)` in pixels.
    pub bbox: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dimensions: [f64; 3],
    /// Bottom-center of the box in rectified camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
    /// Present on detection files.
    pub score: Option<f64>,
}

impl KittiLabel {
    pub fn class(&self) -> Option<ObjectClass> {
        self.kind.parse().ok()
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    /// Box in the LiDAR frame: geometric center lifted by `h/2` in camera `−y`,
    /// heading `−ry − π/2`.
    pub fn to_lidar_box(&self, calib: &Calibration) -> Result<Box3D> {
        let [h, w, l] = self.dimensions;
        let [x, y, z] = self.location;
        let center = calib.camera_to_lidar(&[x, y - h / 2.0, z]);
        Box3D::new(center, [l, w, h], -self.rotation_y - FRAC_PI_2)
    }

    /// Label row for a LiDAR-frame box, inverse of [`Self::to_lidar_box`].
    pub fn from_lidar_box(kind: &str, b: &Box3D, calib: &Calibration, bbox: [f64; 4]) -> Self {
        let [l, w, h] = b.size;
        let c = calib.lidar_to_camera(&b.center);
        let rotation_y = normalize_yaw(-b.yaw - FRAC_PI_2);
        KittiLabel {
            kind: kind.to_string(),
            truncation: 0.0,
            occlusion: 0,
            alpha: normalize_yaw(rotation_y - c[0].atan2(c[2])),
            bbox,
            dimensions: [h, w, l],
            location: [c[0], c[1] + h / 2.0, c[2]],
            rotation_y,
            score: None,
        }
    }

    /// Evaluation record for the three detected classes; `None` otherwise.
    pub fn ground_truth(&self, frame: usize, calib: &Calibration) -> Result<Option<EvalGroundTruth>> {
        let Some(class) = self.class() else {
            return Ok(None);
        };
        Ok(Some(EvalGroundTruth {
            frame,
            class,
            bbox: self.to_lidar_box(calib)?,
            bbox_height: self.bbox_height(),
            occlusion: self.occlusion,
            truncation: self.truncation,
        }))
    }
}

/// Parses label rows, skipping `DontCare` rows and blank lines.
pub fn parse_labels(text: &str) -> Result<Vec<KittiLabel>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0] == "DontCare" {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        if f.len() != 15 && f.len() != 16 {
            return Err(err(format!("expected 15 or 16 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("field {}: {}: {e}", k + 1, f[k])));
        let occlusion = f[2].parse::<u8>().map_err(|e| err(format!("occlusion {}: {e}", f[2])))?;
        out.push(KittiLabel {
            kind: f[0].to_string(),
            truncation: num(1)?,
            occlusion,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            dimensions: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if f.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

pub fn format_labels(labels: &[KittiLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let mut fields = vec![l.kind.clone(), l.truncation.to_string(), l.occlusion.to_string(), l.alpha.to_string()];
        fields.extend(
            l.bbox
                .iter()
                .chain(&l.dimensions)
                .chain(&l.location)
                .chain(std::iter::once(&l.rotation_y))
                .chain(l.score.as_ref())
                .map(f64::to_string),
        );
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}
