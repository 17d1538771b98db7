use posedrive_service::config::{check_params, ServiceConfig, VideoFormat};
use posedrive_service::jobs::JobParams;

#[test]
fn defaults_are_512_square_at_24_fps() {
    let cfg = ServiceConfig::default();
    let p = cfg.default_params();
    assert_eq!((p.width, p.height, p.fps), (512, 512, 24));
    assert_eq!(cfg.upload_limit_bytes, 100 * 1024 * 1024);
    assert_eq!(cfg.video_format, VideoFormat::Mp4);
}

#[test]
fn partial_config_file_fills_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("svc.json");
    std::fs::write(&path, r#"{"listen": "0.0.0.0:9000", "workers": 2, "video_format": "raw_frames"}"#).unwrap();
    let cfg = ServiceConfig::load(&path).unwrap();
    assert_eq!(cfg.listen, "0.0.0.0:9000");
    assert_eq!(cfg.workers, 2);
    assert_eq!(cfg.video_format, VideoFormat::RawFrames);
    assert_eq!(cfg.default_fps, 24);

    std::fs::write(&path, r#"{"lease_seconds": -1}"#).unwrap();
    assert!(ServiceConfig::load(&path).is_err());
    assert!(ServiceConfig::load(&dir.path().join("missing.json")).is_err());
}

#[test]
fn param_bounds() {
    let ok = JobParams { width: 64, height: 64, fps: 24, seed: 0 };
    assert!(check_params(&ok).is_ok());
    assert!(check_params(&JobParams { width: 63, ..ok }).is_err());
    assert!(check_params(&JobParams { height: 4096, ..ok }).is_err());
    assert!(check_params(&JobParams { fps: 0, ..ok }).is_err());
}
