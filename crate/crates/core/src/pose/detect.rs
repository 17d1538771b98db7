use thiserror::Error;

use super::template::{fit_template, neutral_face};
use super::{PoseError, PoseFrame, PoseSequence, FACE68};
use crate::RgbFrame;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct DetectorError(pub String);

/// Frame to facial landmarks. `Ok(None)` means the detector ran but found no
/// face; `Err` means the detector itself failed.
pub trait LandmarkDetector: Send + Sync {
    fn detect(&self, frame: &RgbFrame) -> Result<Option<PoseFrame>, DetectorError>;

    fn schema_id(&self) -> &str {
        FACE68
    }
}

/// Returns the same landmarks for every frame.
#[derive(Clone, Debug)]
pub struct FixedDetector(pub PoseFrame);

impl LandmarkDetector for FixedDetector {
    fn detect(&self, _frame: &RgbFrame) -> Result<Option<PoseFrame>, DetectorError> {
        Ok(Some(self.0.clone()))
    }
}

fn luminance(px: [f64; 3]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Tracks the centroid of bright pixels and centres a fixed-size neutral
/// face template on it.
#[derive(Clone, Debug)]
pub struct CentroidDetector {
    pub threshold: f64,
    /// Template side length as a fraction of the frame.
    pub size: f64,
}

impl Default for CentroidDetector {
    fn default() -> Self {
        Self { threshold: 0.5, size: 0.2 }
    }
}

impl LandmarkDetector for CentroidDetector {
    fn detect(&self, frame: &RgbFrame) -> Result<Option<PoseFrame>, DetectorError> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                if luminance(frame.pixel(x, y)) > self.threshold {
                    sx += x as f64 + 0.5;
                    sy += y as f64 + 0.5;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Ok(None);
        }
        let cx = sx / n as f64 / frame.width() as f64;
        let cy = sy / n as f64 / frame.height() as f64;
        let h = self.size / 2.0;
        Ok(Some(fit_template(&neutral_face(), (cx - h, cy - h, cx + h, cy + h), 1.0)))
    }
}

/// Treats pixels that differ from the average corner colour as foreground and
/// fits the neutral template into the foreground bounding box. A frame with
/// fewer than `min_pixels` foreground pixels has no face.
#[derive(Clone, Debug)]
pub struct ForegroundDetector {
    pub tolerance: f64,
    pub min_pixels: usize,
}

impl Default for ForegroundDetector {
    fn default() -> Self {
        Self { tolerance: 0.1, min_pixels: 16 }
    }
}

impl ForegroundDetector {
    pub fn foreground_bbox(&self, frame: &RgbFrame) -> Option<(usize, usize, usize, usize)> {
        let (w, h) = frame.dims();
        if w == 0 || h == 0 {
            return None;
        }
        let corners = [frame.pixel(0, 0), frame.pixel(w - 1, 0), frame.pixel(0, h - 1), frame.pixel(w - 1, h - 1)];
        let mut bg = [0.0; 3];
        for c in &corners {
            for k in 0..3 {
                bg[k] += c[k] / 4.0;
            }
        }
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (usize::MAX, usize::MAX, 0, 0, 0usize);
        for y in 0..h {
            for x in 0..w {
                let px = frame.pixel(x, y);
                let diff = (0..3).map(|k| (px[k] - bg[k]).abs()).fold(0.0, f64::max);
                if diff > self.tolerance {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                    n += 1;
                }
            }
        }
        (n >= self.min_pixels.max(1)).then_some((x0, y0, x1 + 1, y1 + 1))
    }
}

impl LandmarkDetector for ForegroundDetector {
    fn detect(&self, frame: &RgbFrame) -> Result<Option<PoseFrame>, DetectorError> {
        Ok(self.foreground_bbox(frame).map(|(x0, y0, x1, y1)| {
            let (w, h) = (frame.width() as f64, frame.height() as f64);
            fit_template(&neutral_face(), (x0 as f64 / w, y0 as f64 / h, x1 as f64 / w, y1 as f64 / h), 1.0)
        }))
    }
}

/// One pose frame per video frame. Frames without a detection (or where the
/// detector errored) carry the neutral template at zero confidence.
pub fn extract_pose_from_video(
    video_frames: &[RgbFrame],
    fps: f64,
    detector: &dyn LandmarkDetector,
) -> Result<PoseSequence, PoseError> {
    let first = video_frames.first().ok_or(PoseError::EmptyVideo)?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(PoseError::BadFps(fps));
    }
    let missing = neutral_face().with_confidence(0.0);
    let mut frames = Vec::with_capacity(video_frames.len());
    let mut last_err = None;
    let mut failures = 0;
    for frame in video_frames {
        match detector.detect(frame) {
            Ok(Some(p)) => frames.push(p),
            Ok(None) => frames.push(missing.clone()),
            Err(e) => {
                failures += 1;
                last_err = Some(e);
                frames.push(missing.clone());
            }
        }
    }
    if failures == video_frames.len() {
        return Err(PoseError::DetectorFailure(last_err.map(|e| e.0).unwrap_or_default()));
    }
    PoseSequence::new(fps, first.width() as u32, first.height() as u32, detector.schema_id(), frames)
}
