use std::f64::consts::PI;

use super::{Keypoint, PoseFrame};

/// Indices of the lower-lip landmarks (outer 55..=59, inner 65..=67) in the
/// 68-point layout.
pub const MOUTH_LOWER: [usize; 8] = [55, 56, 57, 58, 59, 65, 66, 67];

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize, start: f64, sweep: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let a = start + sweep * i as f64 / n as f64;
            (cx + rx * a.cos(), cy + ry * a.sin())
        })
        .collect()
}

/// A frontal neutral face in the 68-point layout, centred in the unit
/// square, all confidences 1.
pub fn neutral_face() -> PoseFrame {
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(68);
    // jaw, temple to temple through the chin
    for i in 0..17 {
        let a = PI * i as f64 / 16.0;
        pts.push((0.5 - 0.3 * a.cos(), 0.45 + 0.4 * a.sin()));
    }
    // brows
    for side in [0.36, 0.64] {
        for i in 0..5 {
            let dx = (i as f64 - 2.0) * 0.035;
            pts.push((side + dx, 0.33 - 0.015 * (1.0 - (dx / 0.07).powi(2))));
        }
    }
    // nose bridge then nostrils
    for i in 0..4 {
        pts.push((0.5, 0.38 + 0.045 * i as f64));
    }
    for i in 0..5 {
        pts.push((0.44 + 0.03 * i as f64, 0.56));
    }
    // eyes: corner, upper lid, corner, lower lid
    for cx in [0.38, 0.62] {
        pts.extend(ellipse(cx, 0.42, 0.05, 0.02, 6, PI, PI * 2.0));
    }
    // outer lip from the left corner over the top, inner lip likewise
    pts.extend(ellipse(0.5, 0.68, 0.1, 0.04, 12, PI, PI * 2.0));
    pts.extend(ellipse(0.5, 0.68, 0.07, 0.015, 8, PI, PI * 2.0));
    debug_assert_eq!(pts.len(), 68);
    PoseFrame::clamped(pts.into_iter().map(|(x, y)| Keypoint::new(x, y, 1.0)).collect())
}

/// Maps `template` so its bounding box fills `(x0, y0, x1, y1)`.
pub fn fit_template(template: &PoseFrame, bbox: (f64, f64, f64, f64), confidence: f64) -> PoseFrame {
    let (mut tx0, mut ty0, mut tx1, mut ty1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for k in template.keypoints() {
        tx0 = tx0.min(k.x);
        ty0 = ty0.min(k.y);
        tx1 = tx1.max(k.x);
        ty1 = ty1.max(k.y);
    }
    let sx = (bbox.2 - bbox.0) / (tx1 - tx0).max(f64::EPSILON);
    let sy = (bbox.3 - bbox.1) / (ty1 - ty0).max(f64::EPSILON);
    PoseFrame::clamped(
        template
            .keypoints()
            .iter()
            .map(|k| Keypoint::new(bbox.0 + (k.x - tx0) * sx, bbox.1 + (k.y - ty0) * sy, confidence))
            .collect(),
    )
}
