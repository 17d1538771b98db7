//! Face locator and motion-frame conditioning.
//!
//! The face locator turns reference landmarks into a rectangular face region
//! and a masked reference image. The motion-frame mechanism slices runs of
//! consecutive frames and stacks them channel-wise behind the reference face
//! as input to the reference net.

use thiserror::Error;

use crate::pose::PoseFrame;
use crate::RgbFrame;

pub const DEFAULT_MARGIN_RATIO: f64 = 0.10;
pub const DEFAULT_MOTION_FRAMES: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum ConditioningError {
    #[error("NoFace: need at least 3 confident landmarks spanning a non-empty area, found {0} confident")]
    NoFace(usize),
    #[error("margin ratio must be finite and non-negative, got {0}")]
    InvalidMargin(f64),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("window [{start}, {start}+{n}) out of range for clip of {len} frames")]
    OutOfRange { start: usize, n: usize, len: usize },
}

/// Normalized axis-aligned box `(x0, y0, x1, y1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    /// Pixel span `[px0, px1) x [py0, py1)` after rounding to the grid; never
    /// empty.
    pub fn pixel_rect(&self, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let snap = |v: f64, n: usize| ((v * n as f64).round() as usize).min(n);
        let (mut x0, mut x1) = (snap(self.x0, width), snap(self.x1, width));
        let (mut y0, mut y1) = (snap(self.y0, height), snap(self.y1, height));
        if x1 <= x0 {
            x0 = x0.min(width - 1);
            x1 = x0 + 1;
        }
        if y1 <= y0 {
            y0 = y0.min(height - 1);
            y1 = y0 + 1;
        }
        (x0, y0, x1, y1)
    }
}

/// Binary image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, bits: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceRegion {
    pub bbox: BBox,
    pub mask: Mask,
}

/// Hull of the confident landmarks, dilated on every side by
/// `margin_ratio * hull diagonal`, clamped to the unit square, and rasterized
/// as a `width x height` mask.
pub fn locate_face(
    landmarks: &PoseFrame,
    margin_ratio: f64,
    width: usize,
    height: usize,
) -> Result<FaceRegion, ConditioningError> {
    if !(margin_ratio.is_finite() && margin_ratio >= 0.0) {
        return Err(ConditioningError::InvalidMargin(margin_ratio));
    }
    let confident: Vec<_> = landmarks.confident().collect();
    if confident.len() < 3 || width == 0 || height == 0 {
        return Err(ConditioningError::NoFace(confident.len()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in &confident {
        x0 = x0.min(k.x);
        y0 = y0.min(k.y);
        x1 = x1.max(k.x);
        y1 = y1.max(k.y);
    }
    let pad = margin_ratio * (x1 - x0).hypot(y1 - y0);
    let bbox = BBox {
        x0: (x0 - pad).clamp(0.0, 1.0),
        y0: (y0 - pad).clamp(0.0, 1.0),
        x1: (x1 + pad).clamp(0.0, 1.0),
        y1: (y1 + pad).clamp(0.0, 1.0),
    };
    if !(bbox.x0 < bbox.x1 && bbox.y0 < bbox.y1) {
        return Err(ConditioningError::NoFace(confident.len()));
    }
    let (px0, py0, px1, py1) = bbox.pixel_rect(width, height);
    let mask = Mask::from_fn(width, height, |x, y| (px0..px1).contains(&x) && (py0..py1).contains(&y));
    Ok(FaceRegion { bbox, mask })
}

/// Reference image with everything outside the face mask set to exactly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedReference(pub RgbFrame);

impl MaskedReference {
    pub fn frame(&self) -> &RgbFrame {
        &self.0
    }
}

pub fn mask_reference(reference: &RgbFrame, region: &FaceRegion) -> Result<MaskedReference, ConditioningError> {
    if region.mask.dims() != reference.dims() {
        return Err(ConditioningError::ShapeMismatch { expected: reference.dims(), got: region.mask.dims() });
    }
    let mut out = reference.clone();
    for (px, &keep) in out.data_mut().chunks_exact_mut(3).zip(region.mask.bits()) {
        if !keep {
            px.fill(0.0);
        }
    }
    Ok(MaskedReference(out))
}

/// A run of consecutive frames, oldest first, tagged with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionWindow {
    frames: Vec<RgbFrame>,
    source: String,
    start: usize,
}

impl MotionWindow {
    pub fn new(frames: Vec<RgbFrame>, source: impl Into<String>, start: usize) -> Self {
        Self { frames, source: source.into(), start }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), "none", 0)
    }

    /// `n` copies of `frame`; the cold-start window for the first clip.
    pub fn repeated(frame: &RgbFrame, n: usize, source: impl Into<String>) -> Self {
        Self::new(vec![frame.clone(); n], source, 0)
    }

    pub fn frames(&self) -> &[RgbFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn start(&self) -> usize {
        self.start
    }
}

pub fn sample_motion_window(clip: &[RgbFrame], start: usize, n: usize) -> Result<MotionWindow, ConditioningError> {
    sample_motion_window_from("clip", clip, start, n)
}

pub fn sample_motion_window_from(
    source: &str,
    clip: &[RgbFrame],
    start: usize,
    n: usize,
) -> Result<MotionWindow, ConditioningError> {
    let end = start.checked_add(n).filter(|&e| e <= clip.len());
    match end {
        Some(end) => Ok(MotionWindow::new(clip[start..end].to_vec(), source, start)),
        None => Err(ConditioningError::OutOfRange { start, n, len: clip.len() }),
    }
}

/// Reference face plus motion frames stacked along channels, channel-planar:
/// channels `[0, 3)` hold the reference, `[3(k+1), 3(k+2))` motion frame `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceStack {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ReferenceStack {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn motion_frames(&self) -> usize {
        self.channels / 3 - 1
    }

    /// Channel-planar data, `channels x height x width`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.width * self.height;
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Slot 0 is the reference, slot `k + 1` motion frame `k`.
    pub fn slot(&self, slot: usize) -> RgbFrame {
        let plane = self.width * self.height;
        RgbFrame::from_planar(self.width, self.height, &self.data[slot * 3 * plane..(slot + 1) * 3 * plane])
            .expect("slot length is 3 planes")
    }
}

pub fn stack_reference(reference: &RgbFrame, window: &MotionWindow) -> Result<ReferenceStack, ConditioningError> {
    let dims = reference.dims();
    if let Some(bad) = window.frames().iter().find(|f| f.dims() != dims) {
        return Err(ConditioningError::ShapeMismatch { expected: dims, got: bad.dims() });
    }
    let mut data = reference.to_planar();
    for f in window.frames() {
        data.extend(f.to_planar());
    }
    Ok(ReferenceStack { width: dims.0, height: dims.1, channels: 3 * (window.len() + 1), data })
}
