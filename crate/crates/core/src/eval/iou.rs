use super::Box3D;
use crate::error::{Error, Result};

/// Shoelace area of a simple polygon (positive for counter-clockwise order).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        a += p[0] * q[1] - q[0] * p[1];
    }
    a / 2.0
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clip of `subject` against the convex counter-clockwise `clip`.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
            }
        }
    }
    out
}

/// Overlap area of two boxes' BEV footprints.
pub fn rect_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&poly).max(0.0)
}

fn check(b: &Box3D) -> Result<()> {
    if b.size.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Argument(format!("degenerate box {:?}", b.size)));
    }
    Ok(())
}

/// Rotated-rectangle IoU of the BEV footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> Result<f64> {
    check(a)?;
    check(b)?;
    let inter = rect_intersection_area(a, b);
    let union = a.bev_area() + b.bev_area() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// 3D IoU: BEV overlap times vertical overlap over the volume union.
pub fn iou_3d(a: &Box3D, b: &Box3D) -> Result<f64> {
    check(a)?;
    check(b)?;
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    let inter = rect_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}
