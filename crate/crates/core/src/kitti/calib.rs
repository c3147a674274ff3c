use crate::error::{Error, Result};
use crate::geometry::Calibration;

fn values<const N: usize>(line_no: usize, key: &str, rest: &str) -> Result<[f64; N]> {
    let v: Vec<f64> = rest
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("{key}: {t}: {e}"),
            })
        })
        .collect::<Result<_>>()?;
    v.try_into().map_err(|v: Vec<f64>| Error::Parse {
        line: line_no,
        msg: format!("{key} needs {N} values, found {}", v.len()),
    })
}

fn rows<const R: usize, const C: usize>(flat: &[f64]) -> [[f64; C]; R] {
    std::array::from_fn(|r| std::array::from_fn(|c| flat[r * C + c]))
}

/// Parses a KITTI calibration file. Only `P2`, `R0_rect` and
/// `Tr_velo_to_cam` are read; other keys are ignored.
pub fn parse_calib(text: &str) -> Result<Calibration> {
    let (mut p2, mut r0, mut tr) = (None, None, None);
    let mut last = 0;
    for (i, line) in text.lines().enumerate() {
        last = i + 1;
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "P2" => p2 = Some(values::<12>(i + 1, "P2", rest)?),
            "R0_rect" => r0 = Some(values::<9>(i + 1, "R0_rect", rest)?),
            "Tr_velo_to_cam" => tr = Some(values::<12>(i + 1, "Tr_velo_to_cam", rest)?),
            _ => {}
        }
    }
    let missing = |key: &str| Error::Parse {
        line: last + 1,
        msg: format!("missing key {key}"),
    };
    let p2 = p2.ok_or_else(|| missing("P2"))?;
    let r0 = r0.ok_or_else(|| missing("R0_rect"))?;
    let tr = tr.ok_or_else(|| missing("Tr_velo_to_cam"))?;
    Calibration::new(rows(&p2), rows(&r0), rows(&tr))
}

/// Writes the three matrices in KITTI layout with round-trip float formatting.
pub fn format_calib(c: &Calibration) -> String {
    let join = |v: &mut dyn Iterator<Item = &f64>| v.map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        join(&mut c.p2.iter().flatten()),
        join(&mut c.r0_rect.iter().flatten()),
        join(&mut c.tr_velo_to_cam.iter().flatten()),
    )
}
