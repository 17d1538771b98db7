//! Canonical pose file: compact UTF-8 JSON,
//! `{"version":1,"schema_id":..,"fps":..,"width":..,"height":..,"frames":[{"kp":[[x,y,c],..]},..]}`.
//! Writers emit keys in exactly that order; readers accept any order.

use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use super::{Keypoint, PoseError, PoseFrame, PoseSequence};

pub const POSE_FORMAT_VERSION: u32 = 1;

fn write_fps<S: Serializer>(fps: &f64, s: S) -> Result<S::Ok, S::Error> {
    if fps.fract() == 0.0 && *fps < 9.0e15 {
        s.serialize_u64(*fps as u64)
    } else {
        s.serialize_f64(*fps)
    }
}

#[derive(Serialize)]
struct FileOut<'a> {
    version: u32,
    schema_id: &'a str,
    #[serde(serialize_with = "write_fps")]
    fps: f64,
    width: u32,
    height: u32,
    frames: Vec<FrameOut>,
}

#[derive(Serialize)]
struct FrameOut {
    kp: Vec<[f64; 3]>,
}

#[derive(Deserialize)]
struct FileIn {
    version: u32,
    schema_id: String,
    fps: f64,
    width: u32,
    height: u32,
    frames: Vec<FrameIn>,
}

#[derive(Deserialize)]
struct FrameIn {
    kp: Vec<[f64; 3]>,
}

pub fn to_canonical_json(seq: &PoseSequence) -> String {
    let file = FileOut {
        version: POSE_FORMAT_VERSION,
        schema_id: seq.schema_id(),
        fps: seq.fps(),
        width: seq.width(),
        height: seq.height(),
        frames: seq
            .frames()
            .iter()
            .map(|f| FrameOut { kp: f.keypoints().iter().map(|k| [k.x, k.y, k.confidence]).collect() })
            .collect(),
    };
    serde_json::to_string(&file).expect("pose data is always serializable")
}

pub fn parse_pose(text: &str) -> Result<PoseSequence, PoseError> {
    let file: FileIn = serde_json::from_str(text).map_err(|e| PoseError::Parse(e.to_string()))?;
    if file.version != POSE_FORMAT_VERSION {
        return Err(PoseError::Parse(format!("unsupported version {}", file.version)));
    }
    let frames = file
        .frames
        .into_iter()
        .map(|f| PoseFrame::new(f.kp.into_iter().map(|[x, y, c]| Keypoint::new(x, y, c)).collect()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PoseError::Parse(e.to_string()))?;
    PoseSequence::new(file.fps, file.width, file.height, file.schema_id, frames)
        .map_err(|e| PoseError::Parse(e.to_string()))
}

pub fn save_pose(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<(), PoseError> {
    std::fs::write(path, to_canonical_json(seq))?;
    Ok(())
}

pub fn load_pose(path: impl AsRef<Path>) -> Result<PoseSequence, PoseError> {
    parse_pose(&std::fs::read_to_string(path)?)
}
