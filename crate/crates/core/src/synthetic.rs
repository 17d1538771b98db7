//! Procedural talking-head clips for demos, tests and benchmarks.
//!
//! A face is an ellipse over the landmark hull with dark eyes and a mouth
//! box spanning the outer lip, so every frame is a pure function of its pose.

use std::f64::consts::TAU;

use crate::pose::{fit_template, neutral_face, Keypoint, PoseFrame, PoseSequence, MOUTH_LOWER};
use crate::RgbFrame;

const BACKGROUND: [f64; 3] = [0.15, 0.2, 0.3];
const SKIN: [f64; 3] = [0.85, 0.65, 0.5];
const EYE: [f64; 3] = [0.1, 0.1, 0.15];
const MOUTH: [f64; 3] = [0.5, 0.1, 0.1];

/// Head sway plus a mouth that opens and closes twice per `period` frames.
pub fn talking_head_pose(frames: usize, fps: f64, period: f64) -> PoseSequence {
    let template = neutral_face();
    let poses = (0..frames)
        .map(|k| {
            let phase = TAU * k as f64 / period;
            let (cx, cy) = (0.5 + 0.06 * phase.sin(), 0.5 + 0.03 * phase.cos());
            let face = fit_template(&template, (cx - 0.25, cy - 0.28, cx + 0.25, cy + 0.28), 1.0);
            let open = 0.04 * (1.0 + (2.0 * phase).sin()) / 2.0;
            let kps = face
                .keypoints()
                .iter()
                .enumerate()
                .map(|(i, p)| if MOUTH_LOWER.contains(&i) { Keypoint::new(p.x, p.y + open, p.confidence) } else { *p })
                .collect();
            PoseFrame::clamped(kps)
        })
        .collect();
    PoseSequence::face68(fps, poses).expect("procedural pose is valid")
}

fn hull(points: &[Keypoint]) -> (f64, f64, f64, f64) {
    points.iter().fold((1.0f64, 1.0f64, 0.0f64, 0.0f64), |(x0, y0, x1, y1), k| {
        (x0.min(k.x), y0.min(k.y), x1.max(k.x), y1.max(k.y))
    })
}

fn centroid(points: &[Keypoint]) -> (f64, f64) {
    let n = points.len() as f64;
    (points.iter().map(|k| k.x).sum::<f64>() / n, points.iter().map(|k| k.y).sum::<f64>() / n)
}

/// Draws the face described by a 68-point frame on a `size x size` canvas.
pub fn render_face(pose: &PoseFrame, size: usize) -> RgbFrame {
    let kp = pose.keypoints();
    let (x0, y0, x1, y1) = hull(kp);
    let (cx, cy, rx, ry) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0, (x1 - x0) / 2.0, (y1 - y0) / 2.0);
    let eyes = [centroid(&kp[36..42]), centroid(&kp[42..48])];
    let eye_r = 0.06 * rx;
    let (mx0, my0, mx1, my1) = hull(&kp[48..60]);
    let s = size as f64;
    RgbFrame::from_fn(size, size, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        if ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2) > 1.0 {
            return BACKGROUND;
        }
        if eyes.iter().any(|&(ex, ey)| (u - ex).hypot(v - ey) <= eye_r) {
            return EYE;
        }
        if (mx0..=mx1).contains(&u) && (my0..=my1).contains(&v) {
            return MOUTH;
        }
        SKIN
    })
}

/// Frames and pose for a procedural clip at 24 fps.
pub fn talking_head_clip(frames: usize, size: usize) -> (Vec<RgbFrame>, PoseSequence) {
    let pose = talking_head_pose(frames, 24.0, 16.0);
    let images = pose.frames().iter().map(|p| render_face(p, size)).collect();
    (images, pose)
}
