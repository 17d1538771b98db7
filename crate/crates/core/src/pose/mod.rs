//! Pose sequences: the driving signal for animation.
//!
//! Keypoint coordinates are normalized to `[0, 1]` so one sequence can drive
//! any output resolution. Frames where a detector found nothing keep their
//! slot with zero confidence, which keeps frame count aligned with the
//! source media.

mod audio;
mod detect;
mod format;
mod library;
mod render;
mod resample;
mod template;

pub use audio::{pose_from_audio, AudioPosePredictor, EnergyMouthPredictor, AUDIO_POSE_FPS};
pub use detect::{
    extract_pose_from_video, CentroidDetector, DetectorError, FixedDetector, ForegroundDetector, LandmarkDetector,
};
pub use format::{load_pose, parse_pose, save_pose, to_canonical_json, POSE_FORMAT_VERSION};
pub use library::{LibraryEntry, PoseLibrary};
pub use render::{render_pose_map, PoseMap, RenderStyle};
pub use resample::resample_pose;
pub use template::{fit_template, neutral_face, MOUTH_LOWER};

use thiserror::Error;

pub const FACE68: &str = "face68";

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("video has no frames")]
    EmptyVideo,
    #[error("landmark detector failed on every frame: {0}")]
    DetectorFailure(String),
    #[error("audio has no samples")]
    EmptyAudio,
    #[error("audio is shorter than one frame period")]
    AudioTooShort,
    #[error("sample rate must be positive")]
    BadSampleRate,
    #[error("canvas {width}x{height} is smaller than 8x8")]
    BadCanvas { width: usize, height: usize },
    #[error("fps must be positive and finite, got {0}")]
    BadFps(f64),
    #[error("pose sequence {0:?} not found")]
    NotFound(String),
    #[error("pose sequence {0:?} already exists")]
    DuplicateId(String),
    #[error("invalid pose id {0:?}")]
    InvalidId(String),
    #[error("unknown landmark schema {0:?}")]
    UnknownSchema(String),
    #[error("invalid pose data: {0}")]
    Invalid(String),
    #[error("pose file parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A named landmark layout. Groups partition the keypoint indices and pick
/// render colors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LandmarkSchema {
    pub id: &'static str,
    pub count: usize,
    pub groups: &'static [(usize, usize)],
}

const FACE68_GROUPS: &[(usize, usize)] = &[(0, 17), (17, 27), (27, 36), (36, 48), (48, 68)];
const WHOLEBODY133_GROUPS: &[(usize, usize)] = &[(0, 17), (17, 23), (23, 91), (91, 133)];

pub fn schema(id: &str) -> Option<LandmarkSchema> {
    match id {
        FACE68 => Some(LandmarkSchema { id: FACE68, count: 68, groups: FACE68_GROUPS }),
        "wholebody133" => Some(LandmarkSchema { id: "wholebody133", count: 133, groups: WHOLEBODY133_GROUPS }),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }

    /// Clamps all three components into `[0, 1]`; NaN maps to 0.
    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        Self { x: c(self.x), y: c(self.y), confidence: c(self.confidence) }
    }

    fn is_valid(&self) -> bool {
        [self.x, self.y, self.confidence].iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseFrame {
    keypoints: Vec<Keypoint>,
}

impl PoseFrame {
    /// Rejects any component outside `[0, 1]` (including NaN).
    pub fn new(keypoints: Vec<Keypoint>) -> Result<Self, PoseError> {
        if let Some((i, kp)) = keypoints.iter().enumerate().find(|(_, k)| !k.is_valid()) {
            return Err(PoseError::Invalid(format!("keypoint {i} out of range: {kp:?}")));
        }
        Ok(Self { keypoints })
    }

    pub fn clamped(keypoints: Vec<Keypoint>) -> Self {
        Self { keypoints: keypoints.into_iter().map(Keypoint::clamped).collect() }
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        &self.keypoints
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn with_confidence(&self, confidence: f64) -> Self {
        Self::clamped(self.keypoints.iter().map(|k| Keypoint { confidence, ..*k }).collect())
    }

    pub fn confident(&self) -> impl Iterator<Item = &Keypoint> {
        self.keypoints.iter().filter(|k| k.confidence > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    fps: f64,
    width: u32,
    height: u32,
    schema_id: String,
    frames: Vec<PoseFrame>,
}

impl PoseSequence {
    pub fn new(
        fps: f64,
        width: u32,
        height: u32,
        schema_id: impl Into<String>,
        frames: Vec<PoseFrame>,
    ) -> Result<Self, PoseError> {
        let schema_id = schema_id.into();
        let layout = schema(&schema_id).ok_or_else(|| PoseError::UnknownSchema(schema_id.clone()))?;
        if !(fps.is_finite() && fps > 0.0) {
            return Err(PoseError::BadFps(fps));
        }
        if frames.is_empty() {
            return Err(PoseError::Invalid("pose sequence has no frames".into()));
        }
        if let Some(i) = frames.iter().position(|f| f.len() != layout.count) {
            return Err(PoseError::Invalid(format!(
                "frame {i} has {} keypoints, schema {schema_id} requires {}",
                frames[i].len(),
                layout.count
            )));
        }
        Ok(Self { fps, width, height, schema_id, frames })
    }

    /// Face-68 sequence on a 512x512 canvas.
    pub fn face68(fps: f64, frames: Vec<PoseFrame>) -> Result<Self, PoseError> {
        Self::new(fps, 512, 512, FACE68, frames)
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn schema_id(&self) -> &str {
        &self.schema_id
    }

    pub fn frames(&self) -> &[PoseFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }
}
