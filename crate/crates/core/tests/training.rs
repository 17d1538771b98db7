mod common;

use common::clip;
use posedrive_core::engine::{
    load_checkpoint, sample_loss, save_checkpoint, AnimationModel, CodecKind, EngineConfig, EngineError, Tensor,
    TrainClip, TrainSample, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample(model: &AnimationModel) -> TrainSample {
    let (frames, pose) = clip(10);
    TrainSample::from_clip(model, &TrainClip::new(frames, pose).unwrap(), 2).unwrap()
}

#[test]
fn training_steps_update_parameters_and_log_loss() {
    let model = AnimationModel::new(EngineConfig::toy()).unwrap();
    let s = sample(&model);
    let mut trainer = Trainer::new(model.clone());
    for _ in 0..3 {
        let loss = trainer.train_step(&s).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
    }
    assert_eq!(trainer.history().len(), 3);
    let changed = model.params().iter().zip(trainer.model().params().iter()).filter(|(a, b)| !a.1.bits_eq(b.1)).count();
    assert!(changed > model.params().len() / 2);
}

#[test]
fn perfect_prediction_has_zero_loss_oracle() {
    // The loss is the plain mean squared error against the drawn noise.
    let model = AnimationModel::new(EngineConfig::toy()).unwrap();
    let s = sample(&model);
    let eps = Tensor::randn(&model.latent_shape(8), 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let a = sample_loss(&model, &s, 10, &eps).unwrap();
    let b = sample_loss(&model, &s, 10, &eps).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    // A near-zero initial prediction gives a loss close to the noise power.
    let power = eps.data().iter().map(|v| v * v).sum::<f64>() / eps.numel() as f64;
    assert!((a - power).abs() < 0.2 * power, "loss {a} vs noise power {power}");
}

#[test]
fn non_finite_loss_stops_before_updating() {
    let mut model = AnimationModel::new(EngineConfig::toy()).unwrap();
    let s = sample(&model);
    let id = model.params().id("unet.conv_out.bias").unwrap();
    model.params_mut().get_mut(id).data_mut()[0] = f64::NAN;
    let before = model.clone();
    let mut trainer = Trainer::new(model);
    assert!(matches!(trainer.train_step(&s), Err(EngineError::NonFiniteLoss(_))));
    assert!(trainer.history().is_empty());
    let unchanged = before.params().iter().zip(trainer.model().params().iter()).all(|(a, b)| a.1.bits_eq(b.1));
    assert!(unchanged);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut model = AnimationModel::new(EngineConfig { seed: 9, ..EngineConfig::toy() }).unwrap();
    model.params_mut().perturb(0.01, &mut ChaCha8Rng::seed_from_u64(2));
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.params().len(), model.params().len());
    for (a, b) in model.params().iter().zip(loaded.params().iter()) {
        assert_eq!(a.0, b.0);
        assert!(a.1.bits_eq(b.1), "{}", a.0);
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&AnimationModel::new(EngineConfig::toy()).unwrap(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let cases: Vec<(&str, Vec<u8>)> = vec![
        ("truncated", bytes[..bytes.len() - 9].to_vec()),
        ("trailing", [bytes.clone(), vec![0; 3]].concat()),
        ("magic", [b"XXXX".to_vec(), bytes[4..].to_vec()].concat()),
        ("empty", Vec::new()),
    ];
    for (what, data) in cases {
        std::fs::write(&path, data).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(EngineError::BadCheckpoint(_))), "{what}");
    }
}

#[test]
fn learned_codec_overfits_one_image() {
    let cfg = EngineConfig { codec: CodecKind::Learned, ..EngineConfig::toy() };
    let mut trainer = Trainer::new(AnimationModel::new(cfg).unwrap());
    let (frames, _) = clip(1);
    let mse = trainer.fit_codec(&frames, 400).unwrap();
    assert!(mse < 1e-3, "reconstruction mse {mse}");
    let model = trainer.model();
    let z = model.codec().encode_frames(model.params(), &frames).unwrap();
    let back = model.codec().decode_frames(model.params(), &z).unwrap();
    let err = back[0].data().iter().zip(frames[0].data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        / back[0].data().len() as f64;
    assert!(err < 1e-3, "decoded mse {err}");
}

#[test]
fn lossless_codec_needs_no_fitting() {
    let mut trainer = Trainer::new(AnimationModel::new(EngineConfig::toy()).unwrap());
    let (frames, _) = clip(2);
    assert_eq!(trainer.fit_codec(&frames, 10).unwrap(), 0.0);
    let model = trainer.model();
    let z = model.codec().encode_frames(model.params(), &frames).unwrap();
    assert_eq!(z.shape(), &[2, 48, 16, 16]);
    assert_eq!(model.codec().decode_frames(model.params(), &z).unwrap(), frames);
}
