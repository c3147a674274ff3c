use super::{Box3D, DetectionResult};
use crate::error::{Error, Result};

/// One detection per line: `class score x y z l w h yaw`. Values are written
/// with shortest round-trip formatting, so parsing recovers them exactly.
pub fn format_detections(dets: &[DetectionResult]) -> String {
    let mut out = String::new();
    for d in dets {
        let [x, y, z, l, w, h, yaw] = d.bbox.to_array();
        out.push_str(&format!("{} {} {x} {y} {z} {l} {w} {h} {yaw}\n", d.class, d.score));
    }
    out
}

pub fn parse_detections(text: &str) -> Result<Vec<DetectionResult>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 9 {
            return Err(parse_err(format!("expected 9 fields, got {}", fields.len())));
        }
        let class = fields[0].parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let v: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f}: {e}"))))
            .collect::<Result<_>>()?;
        let bbox = Box3D::new([v[1], v[2], v[3]], [v[4], v[5], v[6]], v[7]).map_err(|e| parse_err(e.to_string()))?;
        out.push(DetectionResult {
            bbox,
            score: v[0],
            class,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ObjectClass;

    #[test]
    fn round_trip_exact() {
        let d = vec![DetectionResult {
            bbox: Box3D::new([1.0 / 3.0, -2.5, 0.1], [3.9, 1.6, 1.56], 0.123456789).unwrap(),
            score: 0.7,
            class: ObjectClass::Cyclist,
        }];
        assert_eq!(parse_detections(&format_detections(&d)).unwrap(), d);
    }

    #[test]
    fn bad_rows() {
        assert!(parse_detections("Car 0.5 1 2 3").is_err());
        assert!(parse_detections("Truck 0.5 1 2 3 1 1 1 0").is_err());
    }
}
