use super::{Keypoint, PoseError, PoseFrame, PoseSequence};

/// Resamples onto a `target_fps` timeline by linear interpolation.
///
/// Frame `i` of the source sits at `i / fps`; the output has
/// `max(1, round(duration * target_fps))` frames, output frame `j` sits at
/// `j / target_fps`, and times past the last source frame hold it.
/// Confidence is the minimum of the two bracketing frames.
pub fn resample_pose(seq: &PoseSequence, target_fps: f64) -> Result<PoseSequence, PoseError> {
    if !(target_fps.is_finite() && target_fps > 0.0) {
        return Err(PoseError::BadFps(target_fps));
    }
    if target_fps == seq.fps() {
        return Ok(seq.clone());
    }
    let n_src = seq.len();
    let n_out = ((seq.duration_s() * target_fps).round() as usize).max(1);
    let ratio = seq.fps() / target_fps;
    let frames = (0..n_out)
        .map(|j| {
            let pos = (j as f64 * ratio).min((n_src - 1) as f64);
            let lo = pos.floor() as usize;
            let w = pos - lo as f64;
            // exact hits use the source frame alone
            let hi = if w == 0.0 { lo } else { (lo + 1).min(n_src - 1) };
            let (a, b) = (&seq.frames()[lo], &seq.frames()[hi]);
            PoseFrame::clamped(
                a.keypoints()
                    .iter()
                    .zip(b.keypoints())
                    .map(|(p, q)| {
                        Keypoint::new(p.x + (q.x - p.x) * w, p.y + (q.y - p.y) * w, p.confidence.min(q.confidence))
                    })
                    .collect(),
            )
        })
        .collect();
    PoseSequence::new(target_fps, seq.width(), seq.height(), seq.schema_id(), frames)
}
