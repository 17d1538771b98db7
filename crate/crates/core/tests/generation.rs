mod common;

use common::{clip, fast_config};
use posedrive_core::engine::{
    generate_video, generate_video_with, AnimationModel, EngineConfig, EngineError, MotionInit,
};
use posedrive_core::pose::{ForegroundDetector, PoseError};
use posedrive_core::RgbFrame;

fn bits(f: &RgbFrame) -> Vec<u64> {
    f.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn clips_are_stitched_through_their_motion_windows() {
    let model = AnimationModel::new(fast_config()).unwrap();
    for len in [8, 24, 50] {
        let (frames, pose) = clip(len);
        let out = generate_video(&model, &frames[0], &pose, &ForegroundDetector::default()).unwrap();
        assert_eq!(out.frames.len(), len);
        assert_eq!(out.clips.len(), len.div_ceil(8));
        assert_eq!(out.latents.len(), out.clips.len());

        let first = &out.clips[0];
        assert_eq!(first.motion_window.len(), 2);
        assert!(first.motion_window.frames().iter().all(|f| bits(f) == bits(&frames[0])));
        for pair in out.clips.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            assert_eq!(next.start, prev.start + prev.len);
            let tail = &out.frames[next.start - 2..next.start];
            for (w, f) in next.motion_window.frames().iter().zip(tail) {
                assert_eq!(bits(w), bits(f));
            }
        }
        assert_eq!(out.clips.iter().map(|c| c.len).sum::<usize>(), len);
    }
}

#[test]
fn zero_motion_init_starts_from_black() {
    let model = AnimationModel::new(EngineConfig { motion_init: MotionInit::Zeros, ..fast_config() }).unwrap();
    let (frames, pose) = clip(10);
    let out = generate_video(&model, &frames[0], &pose, &ForegroundDetector::default()).unwrap();
    assert!(out.clips[0].motion_window.frames().iter().all(|f| f.data().iter().all(|&v| v == 0.0)));
    assert_eq!(out.clips[1].motion_window.frames(), &out.frames[6..8]);
}

#[test]
fn single_motion_frame_shorter_than_window_is_padded() {
    let cfg = EngineConfig { n_motion: 4, clip_len: 3, ..fast_config() };
    let model = AnimationModel::new(cfg).unwrap();
    let (frames, pose) = clip(5);
    let out = generate_video(&model, &frames[0], &pose, &ForegroundDetector::default()).unwrap();
    let w = out.clips[1].motion_window.frames();
    assert_eq!(w.len(), 4);
    assert_eq!(w[0], frames[0]);
    assert_eq!(&w[1..], &out.frames[0..3]);
}

#[test]
fn seeded_runs_produce_identical_latents() {
    let model = AnimationModel::new(fast_config()).unwrap();
    let (frames, pose) = clip(12);
    let det = ForegroundDetector::default();
    let a = generate_video_with(&model, &frames[0], &pose, &det, 17, &mut |_, _| {}).unwrap();
    let b = generate_video_with(&model, &frames[0], &pose, &det, 17, &mut |_, _| {}).unwrap();
    assert!(a.latents.iter().zip(&b.latents).all(|(x, y)| x.bits_eq(y)));
    assert_eq!(a.frames, b.frames);
    let c = generate_video_with(&model, &frames[0], &pose, &det, 18, &mut |_, _| {}).unwrap();
    assert!(!a.latents[0].bits_eq(&c.latents[0]));
}

#[test]
fn progress_reports_each_clip() {
    let model = AnimationModel::new(fast_config()).unwrap();
    let (frames, pose) = clip(20);
    let mut seen = Vec::new();
    generate_video_with(&model, &frames[0], &pose, &ForegroundDetector::default(), 1, &mut |d, t| seen.push((d, t)))
        .unwrap();
    assert_eq!(seen, vec![(8, 20), (16, 20), (20, 20)]);
}

#[test]
fn faceless_reference_is_rejected() {
    let model = AnimationModel::new(fast_config()).unwrap();
    let (_, pose) = clip(8);
    let blank = RgbFrame::filled(64, 64, [0.5; 3]);
    let err = generate_video(&model, &blank, &pose, &ForegroundDetector::default()).unwrap_err();
    assert!(matches!(err, EngineError::NoFace(_)));
    assert!(err.to_string().starts_with("NoFace"));
}

#[test]
fn wrong_reference_size_is_rejected() {
    let model = AnimationModel::new(fast_config()).unwrap();
    let (_, pose) = clip(8);
    let err = generate_video(&model, &RgbFrame::black(32, 32), &pose, &ForegroundDetector::default()).unwrap_err();
    assert!(matches!(err, EngineError::ShapeMismatch(_)));
}

#[test]
fn detector_failure_is_reported() {
    struct Broken;
    impl posedrive_core::pose::LandmarkDetector for Broken {
        fn detect(
            &self,
            _: &RgbFrame,
        ) -> Result<Option<posedrive_core::pose::PoseFrame>, posedrive_core::pose::DetectorError> {
            Err(posedrive_core::pose::DetectorError("offline".into()))
        }
    }
    let model = AnimationModel::new(fast_config()).unwrap();
    let (frames, pose) = clip(8);
    let err = generate_video(&model, &frames[0], &pose, &Broken).unwrap_err();
    assert!(matches!(err, EngineError::Pose(PoseError::DetectorFailure(_))));
}
