#![allow(dead_code)]

use posedrive_core::conditioning::{locate_face, mask_reference, stack_reference, MaskedReference, MotionWindow};
use posedrive_core::engine::{AnimationModel, ConditioningBundle, EngineConfig};
use posedrive_core::pose::{render_pose_map, PoseMap, PoseSequence, RenderStyle};
use posedrive_core::synthetic::talking_head_clip;
use posedrive_core::RgbFrame;

/// Toy profile with a short sampler so generation tests stay quick.
pub fn fast_config() -> EngineConfig {
    EngineConfig { sample_steps: 3, ..EngineConfig::toy() }
}

pub fn clip(frames: usize) -> (Vec<RgbFrame>, PoseSequence) {
    talking_head_clip(frames, EngineConfig::toy().image_size)
}

pub fn maps(model: &AnimationModel, pose: &PoseSequence) -> Vec<PoseMap> {
    let size = model.config().image_size;
    pose.frames().iter().map(|p| render_pose_map(p, size, size, &RenderStyle::default()).unwrap()).collect()
}

pub fn masked(model: &AnimationModel, reference: &RgbFrame, pose: &PoseSequence) -> MaskedReference {
    let cfg = model.config();
    let region = locate_face(&pose.frames()[0], cfg.margin_ratio, cfg.image_size, cfg.image_size).unwrap();
    mask_reference(reference, &region).unwrap()
}

/// Conditioning for the first `frames` pose frames with a reference-only
/// motion window.
pub fn bundle(model: &AnimationModel, reference: &RgbFrame, pose: &PoseSequence, frames: usize) -> ConditioningBundle {
    let window = MotionWindow::repeated(reference, model.config().n_motion, "reference");
    let stack = stack_reference(reference, &window).unwrap();
    model.prepare(&stack, reference, &maps(model, pose)[..frames], &masked(model, reference, pose)).unwrap()
}
