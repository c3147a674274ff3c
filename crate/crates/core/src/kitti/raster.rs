use crate::error::{Error, Result};
use crate::eval::Box3D;
use crate::frustum::ForegroundMask;
use crate::geometry::Calibration;
use crate::tensor::Tensor;

/// Image-plane footprint of a set of boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxRaster {
    /// Pixels whose center falls inside any box's projected hull.
    pub mask: ForegroundMask,
    /// Nearest box covering each pixel, row-major.
    pub owner: Vec<Option<usize>>,
    /// Projected 2D box `(left, top, right, bottom)` per box, clipped to the image.
    pub bbox2d: Vec<[f64; 4]>,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain), collinear points dropped.
fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    hull.len() >= 3 && (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], p) >= 0.0)
}

/// Projects each box's corners into the image and fills the convex hull.
/// Every corner must lie in front of the camera.
pub fn rasterize_boxes(calib: &Calibration, boxes: &[Box3D], height: usize, width: usize) -> Result<BoxRaster> {
    let mut depth = vec![f64::INFINITY; height * width];
    let mut owner = vec![None; height * width];
    let mut bbox2d = Vec::with_capacity(boxes.len());
    for (k, b) in boxes.iter().enumerate() {
        let mut pts = Vec::with_capacity(8);
        for c in b.corners() {
            let (u, v, _) = calib.lidar_to_image(&c)?;
            pts.push([u, v]);
        }
        let (_, _, center_depth) = calib.lidar_to_image(&b.center)?;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &pts {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        bbox2d.push([
            lo[0].clamp(0.0, width as f64),
            lo[1].clamp(0.0, height as f64),
            hi[0].clamp(0.0, width as f64),
            hi[1].clamp(0.0, height as f64),
        ]);
        let hull = convex_hull(pts);
        let x0 = lo[0].floor().max(0.0) as usize;
        let y0 = lo[1].floor().max(0.0) as usize;
        let x1 = (hi[0].ceil().max(0.0) as usize).min(width);
        let y1 = (hi[1].ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * width + x;
                if center_depth < depth[i] && inside(&hull, [x as f64 + 0.5, y as f64 + 0.5]) {
                    depth[i] = center_depth;
                    owner[i] = Some(k);
                }
            }
        }
    }
    let mask = ForegroundMask::new(height, width, owner.iter().map(Option::is_some).collect())?;
    Ok(BoxRaster { mask, owner, bbox2d })
}

/// Binary PPM (`P6`, 8-bit) of an `[H × W × 3]` image with values in `[0, 1]`.
pub fn write_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(Error::dim("write_ppm", format!("image {s:?}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Reads the output of [`write_ppm`] back into `[0, 1]` floats.
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| Error::Format(e.to_string()))?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(Error::Format("only 8-bit binary PPM (P6) is supported".into()));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("PPM size {s}: {e}")));
    let (w, h) = (dim(fields[1])?, dim(fields[2])?);
    let body = &bytes[pos + 1..];
    if body.len() != w * h * 3 {
        return Err(Error::Format(format!("PPM body has {} bytes, expected {}", body.len(), w * h * 3)));
    }
    Tensor::new(vec![h, w, 3], body.iter().map(|&b| f64::from(b) / 255.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_square_with_interior_point() {
        let h = convex_hull(vec![[0.0, 0.0], [1.0, 1.0], [0.5, 0.5], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(h.len(), 4);
        assert!(inside(&h, [0.5, 0.5]));
        assert!(!inside(&h, [1.5, 0.5]));
    }

    #[test]
    fn box_in_front_of_identity_camera() {
        // identity camera: u = x/z, v = y/z; a box spanning x,y ∈ [-1, 1] at z ∈ [4, 6]
        let b = Box3D::new([0.0, 0.0, 5.0], [2.0, 2.0, 2.0], 0.0).unwrap();
        let r = rasterize_boxes(&Calibration::identity(), &[b], 4, 4).unwrap();
        // hull covers u,v ∈ [-0.25, 0.25]: only pixel (0,0) has its center at 0.5 → outside
        assert_eq!(r.mask.count(), 0);
        let b = Box3D::new([2.0, 2.0, 2.0], [2.0, 2.0, 1.0], 0.0).unwrap();
        let r = rasterize_boxes(&Calibration::identity(), &[b], 4, 4).unwrap();
        assert!(r.mask.get(1, 1));
    }

    #[test]
    fn ppm_round_trip() {
        let img = Tensor::new(vec![2, 3, 3], (0..18).map(|i| f64::from(i) / 17.0).collect()).unwrap();
        let back = read_ppm(&write_ppm(&img).unwrap()).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
        assert!(read_ppm(b"P3\n1 1\n255\n").is_err());
    }
}
