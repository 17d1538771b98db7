use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posedrive_core::engine::{load_checkpoint, AnimationModel, EngineConfig};
use posedrive_core::pose::{load_pose, save_pose, PoseLibrary};
use posedrive_core::synthetic::talking_head_clip;
use posedrive_core::RgbFrame;
use posedrive_service::media::{encode_png, encode_wav};
use posedrive_service::video::{probe, RawArchiveEncoder, VideoEncoder};

fn posedrive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posedrive")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fast_config() -> EngineConfig {
    EngineConfig { sample_steps: 2, ..EngineConfig::toy() }
}

/// Config file plus a one-clip dataset of `frames` frames.
fn dataset(dir: &Path, frames: usize) -> (PathBuf, PathBuf) {
    let config = dir.join("config.json");
    fs::write(&config, fast_config().to_json()).unwrap();
    let data = dir.join("data");
    let (video, pose) = talking_head_clip(frames, 64);
    fs::create_dir_all(data.join("clip0")).unwrap();
    for (i, f) in video.iter().enumerate() {
        fs::write(data.join("clip0").join(format!("frame_{i:05}.png")), encode_png(f)).unwrap();
    }
    save_pose(&pose, data.join("clip0.pose.json")).unwrap();
    (config, data)
}

fn init_checkpoint(dir: &Path) -> PathBuf {
    let (config, data) = dataset(dir, 8);
    let ckpt = dir.join("init.ckpt");
    let out = posedrive(&["train", "--config", s(&config), "--data", s(&data), "--steps", "0", "--out", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    ckpt
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&posedrive(&["--help"])), 0);
    assert_eq!(code(&posedrive(&["--version"])), 0);
    assert_eq!(code(&posedrive(&["pose", "--help"])), 0);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&posedrive(&[])), 1);
    assert_eq!(code(&posedrive(&["frobnicate"])), 1);
    assert_eq!(code(&posedrive(&["train", "--steps", "3"])), 1);
    assert_eq!(code(&posedrive(&["train", "--config", "c", "--data", "d", "--steps", "many", "--out", "o"])), 1);
}

#[test]
fn train_logs_one_line_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data) = dataset(dir.path(), 8);
    let ckpt = dir.path().join("model.ckpt");
    let out = posedrive(&["train", "--config", s(&config), "--data", s(&data), "--steps", "3", "--out", s(&ckpt)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let (step, loss) = line.split_once(',').unwrap();
        assert_eq!(step.parse::<usize>().unwrap(), i + 1);
        assert!(loss.parse::<f64>().unwrap().is_finite());
    }
    let log = fs::read_to_string(dir.path().join("model.ckpt.loss.csv")).unwrap();
    assert_eq!(log, stdout);
    let model = load_checkpoint(&ckpt).unwrap();
    assert_eq!(model.config(), &fast_config());
}

#[test]
fn zero_steps_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = init_checkpoint(dir.path());
    let loaded = load_checkpoint(&ckpt).unwrap();
    let fresh = AnimationModel::new(fast_config()).unwrap();
    assert!(fresh.params().iter().zip(loaded.params().iter()).all(|(a, b)| a.0 == b.0 && a.1.bits_eq(b.1)));
    assert_eq!(fs::read_to_string(dir.path().join("init.ckpt.loss.csv")).unwrap(), "");
}

#[test]
fn unreadable_training_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let (config, _) = dataset(dir.path(), 8);
    let ckpt = dir.path().join("m.ckpt");
    let missing = dir.path().join("nope");
    let out = posedrive(&["train", "--config", s(&config), "--data", s(&missing), "--steps", "1", "--out", s(&ckpt)]);
    assert_eq!(code(&out), 2);
    assert!(!ckpt.exists());

    let (_, data) = dataset(dir.path(), 8);
    let out = posedrive(&["train", "--config", s(&missing), "--data", s(&data), "--steps", "1", "--out", s(&ckpt)]);
    assert_eq!(code(&out), 2);

    let short = tempfile::tempdir().unwrap();
    let (config, data) = dataset(short.path(), 4);
    let out = posedrive(&["train", "--config", s(&config), "--data", s(&data), "--steps", "1", "--out", s(&ckpt)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("clip_len"), "{}", stderr(&out));
}

#[test]
fn infer_writes_one_frame_per_pose_frame_and_reproducible_latents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = init_checkpoint(d);
    let (frames, pose) = talking_head_clip(10, 64);
    fs::write(d.join("ref.png"), encode_png(&frames[0])).unwrap();
    save_pose(&pose, d.join("drive.pose.json")).unwrap();

    let mut dumps = Vec::new();
    for run in 0..2 {
        let video = d.join(format!("out{run}.mp4"));
        let dump = d.join(format!("latents{run}.bin"));
        let out = posedrive(&[
            "infer",
            "--ref",
            s(&d.join("ref.png")),
            "--pose",
            s(&d.join("drive.pose.json")),
            "--ckpt",
            s(&ckpt),
            "--out",
            s(&video),
            "--seed",
            "5",
            "--debug-latents",
            s(&dump),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let info = probe(&fs::read(&video).unwrap()).unwrap();
        assert_eq!(info.frames, 10);
        assert_eq!(info.fps, 24.0);
        dumps.push(fs::read(&dump).unwrap());
    }
    assert_eq!(dumps[0], dumps[1]);
    assert!(dumps[0].starts_with(b"PDLT"));
}

#[test]
fn infer_resolves_library_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = init_checkpoint(d);
    let (frames, pose) = talking_head_clip(9, 64);
    fs::write(d.join("ref.png"), encode_png(&frames[0])).unwrap();
    PoseLibrary::open(d.join("lib")).unwrap().add("short_talk", &pose).unwrap();
    let video = d.join("out.mp4");
    let out = posedrive(&[
        "infer",
        "--ref",
        s(&d.join("ref.png")),
        "--pose",
        "short_talk",
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&video),
        "--library",
        s(&d.join("lib")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(probe(&fs::read(&video).unwrap()).unwrap().frames, 9);

    let out = posedrive(&[
        "infer",
        "--ref",
        s(&d.join("ref.png")),
        "--pose",
        "no_such_pose",
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&video),
        "--library",
        s(&d.join("lib")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn infer_without_a_face_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = init_checkpoint(d);
    let (_, pose) = talking_head_clip(4, 64);
    fs::write(d.join("blank.png"), encode_png(&RgbFrame::filled(64, 64, [0.4; 3]))).unwrap();
    save_pose(&pose, d.join("p.pose.json")).unwrap();
    let out = posedrive(&[
        "infer",
        "--ref",
        s(&d.join("blank.png")),
        "--pose",
        s(&d.join("p.pose.json")),
        "--ckpt",
        s(&ckpt),
        "--out",
        s(&d.join("o.mp4")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("NoFace"), "{}", stderr(&out));
}

#[test]
fn pose_render_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (_, pose) = talking_head_clip(5, 64);
    save_pose(&pose, d.join("p.pose.json")).unwrap();
    for out_dir in ["a", "b"] {
        let out = posedrive(&["pose", "render", "--pose", s(&d.join("p.pose.json")), "--out-dir", s(&d.join(out_dir))]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let mut names: Vec<String> =
        fs::read_dir(d.join("a")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, (0..5).map(|i| format!("frame_{i:05}.png")).collect::<Vec<_>>());
    for n in &names {
        assert_eq!(fs::read(d.join("a").join(n)).unwrap(), fs::read(d.join("b").join(n)).unwrap());
    }
}

#[test]
fn pose_from_audio_covers_the_duration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let tone: Vec<f64> = (0..16_000).map(|i| (i as f64 * 0.05).sin() * 0.5).collect();
    fs::write(d.join("a.wav"), encode_wav(&tone, 16_000)).unwrap();
    let out = posedrive(&["pose", "from-audio", "--audio", s(&d.join("a.wav")), "--out", s(&d.join("a.pose.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let seq = load_pose(d.join("a.pose.json")).unwrap();
    assert_eq!(seq.len(), 24);
    assert_eq!(seq.fps(), 24.0);

    fs::write(d.join("bad.wav"), b"not audio").unwrap();
    let out = posedrive(&["pose", "from-audio", "--audio", s(&d.join("bad.wav")), "--out", s(&d.join("b.pose.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn pose_extract_reads_video_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (frames, _) = talking_head_clip(6, 64);
    fs::write(d.join("v.bin"), RawArchiveEncoder.encode(&frames, 12).unwrap().bytes).unwrap();
    let out = posedrive(&["pose", "extract", "--video", s(&d.join("v.bin")), "--out", s(&d.join("v.pose.json"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let seq = load_pose(d.join("v.pose.json")).unwrap();
    assert_eq!(seq.len(), 6);
    assert_eq!(seq.fps(), 12.0);

    let out = posedrive(&["pose", "extract", "--video", s(&d.join("missing.mp4")), "--out", s(&d.join("x.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn serve_rejects_a_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("svc.json");
    fs::write(&path, "{ not json").unwrap();
    assert_eq!(code(&posedrive(&["serve", "--config", s(&path)])), 2);
}
