use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use posedrive_core::engine::{
    generate_video_with, load_checkpoint, save_checkpoint, AnimationModel, EngineConfig, TrainClip, TrainSample,
    Trainer,
};
use posedrive_core::pose::{
    extract_pose_from_video, load_pose, neutral_face, pose_from_audio, render_pose_map, save_pose,
    EnergyMouthPredictor, ForegroundDetector, PoseLibrary, PoseSequence, RenderStyle,
};
use posedrive_service::media::{decode_image, decode_wav, encode_png};
use posedrive_service::video::{decode_video, encode_video};
use posedrive_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "posedrive", version, about = "Pose-driven face animation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a frame-directory dataset and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        /// Loss CSV path; defaults to `<out>.loss.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Optimizer steps spent fitting a learned latent codec first.
        #[arg(long, default_value_t = 300)]
        codec_steps: usize,
    },
    /// Animate a reference image along a pose sequence.
    Infer {
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Pose file, or the id of a library sequence.
        #[arg(long)]
        pose: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Writes the final latents of every clip to this file.
        #[arg(long)]
        debug_latents: Option<PathBuf>,
        #[arg(long, default_value = "library")]
        library: PathBuf,
    },
    /// Pose sequence utilities.
    Pose {
        #[command(subcommand)]
        command: PoseCommand,
    },
    /// Run the REST service and its workers.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum PoseCommand {
    /// Extract landmarks from a video file.
    Extract {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize every frame to `frame_%05d.png`.
    Render {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Predict mouth motion from a WAV file.
    FromAudio {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

/// `<clip>/frame_%05d.png` directories, each next to `<clip>.pose.json`.
fn load_dataset(dir: &Path) -> Result<Vec<TrainClip>> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read data dir {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    names.retain(|p| p.is_dir());
    names.sort();
    let mut clips = Vec::new();
    for clip_dir in names {
        let name = clip_dir.file_name().and_then(|n| n.to_str()).context("clip directory name is not UTF-8")?;
        let pose =
            load_pose(dir.join(format!("{name}.pose.json"))).with_context(|| format!("clip {name}: pose file"))?;
        let mut files: Vec<PathBuf> =
            fs::read_dir(&clip_dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        files.retain(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
        });
        files.sort();
        let frames = files.iter().map(|p| Ok(decode_image(&read(p)?)?)).collect::<Result<Vec<_>>>()?;
        clips.push(TrainClip::new(frames, pose).with_context(|| format!("clip {name}"))?);
    }
    if clips.is_empty() {
        bail!("no clips found in {}", dir.display());
    }
    Ok(clips)
}

fn train(config: &Path, data: &Path, steps: usize, out: &Path, log: Option<PathBuf>, codec_steps: usize) -> Result<()> {
    let raw = fs::read_to_string(config).with_context(|| format!("cannot read config {}", config.display()))?;
    let cfg = EngineConfig::from_json(&raw)?;
    let clips = load_dataset(data)?;
    let mut trainer = Trainer::new(AnimationModel::new(cfg.clone())?);
    if steps > 0 {
        let frames: Vec<_> = clips.iter().flat_map(|c| c.frames.iter().cloned()).collect();
        trainer.fit_codec(&frames, codec_steps)?;
    }
    let mut samples = Vec::new();
    for clip in &clips {
        let mut start = 0;
        while start + cfg.clip_len <= clip.frames.len() {
            samples.push(TrainSample::from_clip(trainer.model(), clip, start)?);
            start += cfg.clip_len;
        }
    }
    if samples.is_empty() {
        bail!("every clip is shorter than clip_len = {}", cfg.clip_len);
    }
    let log_path = log.unwrap_or_else(|| PathBuf::from(format!("{}.loss.csv", out.display())));
    let mut log =
        BufWriter::new(File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?);
    let stdout = std::io::stdout();
    for step in 1..=steps {
        let loss = trainer.train_step(&samples[(step - 1) % samples.len()])?;
        writeln!(stdout.lock(), "{step},{loss}")?;
        writeln!(log, "{step},{loss}")?;
    }
    log.flush()?;
    save_checkpoint(trainer.model(), out)?;
    Ok(())
}

fn resolve_pose(pose: &str, library: &Path) -> Result<PoseSequence> {
    let path = Path::new(pose);
    if path.exists() {
        return Ok(load_pose(path)?);
    }
    PoseLibrary::open(library)?
        .get(pose)
        .with_context(|| format!("{pose:?} is neither a pose file nor a library id in {}", library.display()))
}

fn infer(
    reference: &Path,
    pose: &str,
    ckpt: &Path,
    out: &Path,
    seed: Option<u64>,
    debug_latents: Option<PathBuf>,
    library: &Path,
) -> Result<()> {
    let model = load_checkpoint(ckpt).with_context(|| format!("cannot load checkpoint {}", ckpt.display()))?;
    let size = model.config().image_size;
    let reference = decode_image(&read(reference)?)?.resize_nearest(size, size);
    let pose = resolve_pose(pose, library)?;
    let seed = seed.unwrap_or(model.config().seed);
    let output = generate_video_with(&model, &reference, &pose, &ForegroundDetector::default(), seed, &mut |_, _| {})?;
    let fps = (pose.fps().round() as u32).max(1);
    fs::write(out, encode_video(&output.frames, fps)?.bytes)?;
    if let Some(path) = debug_latents {
        fs::write(&path, output.latent_dump())?;
    }
    println!("{} frames at {fps} fps -> {}", output.frames.len(), out.display());
    Ok(())
}

fn pose_command(cmd: PoseCommand) -> Result<()> {
    match cmd {
        PoseCommand::Extract { video, out } => {
            let (frames, fps) = decode_video(&read(&video)?)?;
            let seq = extract_pose_from_video(&frames, fps, &ForegroundDetector::default())?;
            save_pose(&seq, &out)?;
        }
        PoseCommand::Render { pose, out_dir } => {
            let seq = load_pose(&pose)?;
            fs::create_dir_all(&out_dir)?;
            let style = RenderStyle::default();
            for (i, frame) in seq.frames().iter().enumerate() {
                let map = render_pose_map(frame, seq.width() as usize, seq.height() as usize, &style)?;
                fs::write(out_dir.join(format!("frame_{i:05}.png")), encode_png(map.frame()))?;
            }
        }
        PoseCommand::FromAudio { audio, out } => {
            let (samples, rate) = decode_wav(&read(&audio)?)?;
            let seq = pose_from_audio(&samples, rate, &neutral_face(), &EnergyMouthPredictor::default())?;
            save_pose(&seq, &out)?;
        }
    }
    Ok(())
}

fn serve(config: &Path) -> Result<()> {
    let cfg = ServiceConfig::load(config)?;
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    tokio::runtime::Runtime::new()?.block_on(posedrive_service::serve(cfg))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, steps, out, log, codec_steps } => {
            train(&config, &data, steps, &out, log, codec_steps)
        }
        Command::Infer { reference, pose, ckpt, out, seed, debug_latents, library } => {
            infer(&reference, &pose, &ckpt, &out, seed, debug_latents, &library)
        }
        Command::Pose { command } => pose_command(command),
        Command::Serve { config } => serve(&config),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
