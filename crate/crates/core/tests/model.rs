mod common;

use common::{bundle, clip, maps, masked};
use posedrive_core::conditioning::{stack_reference, MaskedReference, MotionWindow};
use posedrive_core::engine::{AnimationModel, EngineConfig, EngineError, TemporalMode, Tensor};
use posedrive_core::synthetic::talking_head_pose;
use posedrive_core::RgbFrame;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noise(model: &AnimationModel, frames: usize, seed: u64) -> Tensor {
    Tensor::randn(&model.latent_shape(frames), 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn permute_frames(t: &Tensor, perm: &[usize]) -> Tensor {
    let parts: Vec<Tensor> = perm.iter().map(|&i| t.narrow0(i, 1)).collect();
    Tensor::cat0(&parts).unwrap()
}

#[test]
fn conditioning_shapes_for_every_motion_count() {
    for n in [0, 1, 2, 4] {
        let cfg = EngineConfig { n_motion: n, ..EngineConfig::toy() };
        let (c0, lc, s) = (cfg.base_channels, cfg.latent_channels, cfg.latent_size());
        let model = AnimationModel::new(cfg).unwrap();
        let (frames, pose) = clip(8);
        let window = MotionWindow::repeated(&frames[0], n, "reference");
        let stack = stack_reference(&frames[0], &window).unwrap();
        assert_eq!(stack.channels(), 3 * (n + 1));

        let b = model.prepare(&stack, &frames[0], &maps(&model, &pose), &masked(&model, &frames[0], &pose)).unwrap();
        assert_eq!(b.reference_features.len(), 2);
        assert_eq!(b.reference_features[0].shape(), &[1, c0, s, s]);
        assert_eq!(b.reference_features[1].shape(), &[1, 2 * c0, s / 2, s / 2]);
        assert_eq!(b.pose_latents.shape(), &[8, lc, s, s]);
        assert_eq!(b.facemask_latents.shape(), &[1, lc, s, s]);
        assert_eq!(b.image_embedding.shape(), &[1, 1, model.config().embed_dim]);
        let out = model.denoise(&noise(&model, 8, 1), 500, &b).unwrap();
        assert_eq!(out.shape(), &model.latent_shape(8));
        assert!(out.is_finite());
    }
}

#[test]
fn stack_with_wrong_motion_count_is_shape_mismatch() {
    let model = AnimationModel::new(EngineConfig::toy()).unwrap();
    let (frames, _) = clip(1);
    for n in [0, 1, 4] {
        let stack = stack_reference(&frames[0], &MotionWindow::repeated(&frames[0], n, "reference")).unwrap();
        assert!(matches!(model.reference_features(&stack), Err(EngineError::ShapeMismatch(_))), "n = {n}");
    }
}

#[test]
fn denoise_validates_inputs() {
    let model = AnimationModel::new(EngineConfig::toy()).unwrap();
    let (frames, pose) = clip(8);
    let b = bundle(&model, &frames[0], &pose, 8);
    assert!(matches!(model.denoise(&noise(&model, 4, 1), 10, &b), Err(EngineError::ShapeMismatch(_))));
    let steps = model.schedule().len();
    assert!(matches!(model.denoise(&noise(&model, 8, 1), steps, &b), Err(EngineError::BadStep { .. })));
}

#[test]
fn zero_initialized_guiders_leave_the_prediction_unchanged() {
    let model = AnimationModel::new(EngineConfig::toy()).unwrap();
    let (frames, pose_a) = clip(8);
    let pose_b = talking_head_pose(8, 24.0, 5.0);
    let reference = &frames[0];
    let mask_a = masked(&model, reference, &pose_a);
    let mask_b = MaskedReference(RgbFrame::filled(64, 64, [0.8, 0.2, 0.4]));
    let maps_a = maps(&model, &pose_a);
    let maps_b = maps(&model, &pose_b);
    assert_ne!(maps_a, maps_b);

    for m in [&mask_a, &mask_b] {
        assert!(model.facemask_guide(m).unwrap().data().iter().all(|&v| v == 0.0));
    }
    for p in [&maps_a, &maps_b] {
        assert!(model.pose_guide(p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    let stack = stack_reference(reference, &MotionWindow::repeated(reference, 2, "reference")).unwrap();
    let x = noise(&model, 8, 7);
    let mut outputs = Vec::new();
    for p in [&maps_a, &maps_b] {
        for m in [&mask_a, &mask_b] {
            let b = model.prepare(&stack, reference, p, m).unwrap();
            outputs.push(model.denoise(&x, 300, &b).unwrap());
        }
    }
    assert!(outputs[0].data().iter().any(|&v| v != 0.0));
    for o in &outputs[1..] {
        assert!(o.bits_eq(&outputs[0]));
    }

    // Once the guider output layers are non-zero the conditioning matters.
    let mut live = model.clone();
    live.params_mut().perturb(0.05, &mut ChaCha8Rng::seed_from_u64(3));
    let b_a = live.prepare(&stack, reference, &maps_a, &mask_a).unwrap();
    let b_b = live.prepare(&stack, reference, &maps_b, &mask_a).unwrap();
    assert!(live.denoise(&x, 300, &b_a).unwrap().max_abs_diff(&live.denoise(&x, 300, &b_b).unwrap()) > 1e-6);
}

#[test]
fn temporal_attention_over_one_frame_is_identity() {
    let mut model = AnimationModel::new(EngineConfig::toy()).unwrap();
    model.params_mut().perturb(0.02, &mut ChaCha8Rng::seed_from_u64(11));
    let (frames, pose) = clip(1);
    let b = bundle(&model, &frames[0], &pose, 1);
    let x = noise(&model, 1, 2);
    let soft = model.denoise_with(&x, 250, &b, TemporalMode::Softmax).unwrap();
    let ident = model.denoise_with(&x, 250, &b, TemporalMode::Identity).unwrap();
    assert!(soft.bits_eq(&ident));

    // Over several frames the two modes differ.
    let (frames, pose) = clip(4);
    let b = bundle(&model, &frames[0], &pose, 4);
    let x = noise(&model, 4, 2);
    let soft = model.denoise_with(&x, 250, &b, TemporalMode::Softmax).unwrap();
    let ident = model.denoise_with(&x, 250, &b, TemporalMode::Identity).unwrap();
    assert!(soft.max_abs_diff(&ident) > 1e-9);
}

#[test]
fn permuting_frames_permutes_the_prediction() {
    let mut model = AnimationModel::new(EngineConfig::toy()).unwrap();
    model.params_mut().perturb(0.02, &mut ChaCha8Rng::seed_from_u64(5));
    let (frames, pose) = clip(6);
    let b = bundle(&model, &frames[0], &pose, 6);
    let x = noise(&model, 6, 9);
    let perm = [3, 0, 5, 1, 4, 2];
    let out = model.denoise(&x, 400, &b).unwrap();

    let mut pb = b.clone();
    pb.pose_latents = permute_frames(&b.pose_latents, &perm);
    let permuted = model.denoise(&permute_frames(&x, &perm), 400, &pb).unwrap();
    assert!(permuted.max_abs_diff(&permute_frames(&out, &perm)) < 1e-10);
}

#[test]
fn inference_is_deterministic_and_seeded() {
    let a = AnimationModel::new(EngineConfig::toy()).unwrap();
    let b = AnimationModel::new(EngineConfig::toy()).unwrap();
    assert!(a.params().iter().zip(b.params().iter()).all(|(x, y)| x.0 == y.0 && x.1.bits_eq(y.1)));
    let c = AnimationModel::new(EngineConfig { seed: 1, ..EngineConfig::toy() }).unwrap();
    assert!(a.params().iter().zip(c.params().iter()).any(|(x, y)| !x.1.bits_eq(y.1)));
}
