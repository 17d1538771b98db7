use super::template::MOUTH_LOWER;
use super::{Keypoint, PoseError, PoseFrame, PoseSequence};

pub const AUDIO_POSE_FPS: u32 = 24;

/// Audio to per-frame landmarks. `window(i)` of the input covers frame `i`.
pub trait AudioPosePredictor: Send + Sync {
    fn predict_frame(&self, window: &[f64], template: &PoseFrame) -> PoseFrame;
}

/// Opens the lower lip in proportion to the RMS energy of each frame window,
/// saturating at full-scale RMS (1.0).
#[derive(Clone, Debug)]
pub struct EnergyMouthPredictor {
    /// Lower-lip displacement at full-scale RMS, in normalized units.
    pub max_open: f64,
}

impl Default for EnergyMouthPredictor {
    fn default() -> Self {
        Self { max_open: 0.06 }
    }
}

impl EnergyMouthPredictor {
    pub fn rms(window: &[f64]) -> f64 {
        if window.is_empty() {
            return 0.0;
        }
        (window.iter().map(|s| s * s).sum::<f64>() / window.len() as f64).sqrt()
    }

    pub fn opening(&self, window: &[f64]) -> f64 {
        self.max_open * Self::rms(window).clamp(0.0, 1.0)
    }
}

impl AudioPosePredictor for EnergyMouthPredictor {
    fn predict_frame(&self, window: &[f64], template: &PoseFrame) -> PoseFrame {
        let offset = self.opening(window);
        if offset == 0.0 {
            return template.clone();
        }
        let mut kps = template.keypoints().to_vec();
        for &i in &MOUTH_LOWER {
            if let Some(k) = kps.get_mut(i) {
                *k = Keypoint { y: k.y + offset, ..*k };
            }
        }
        PoseFrame::clamped(kps)
    }
}

/// Mono PCM in `[-1, 1]` to a 24 fps pose sequence covering the whole audio
/// duration rounded down to whole frames.
pub fn pose_from_audio(
    audio: &[f64],
    sample_rate: u32,
    template: &PoseFrame,
    predictor: &dyn AudioPosePredictor,
) -> Result<PoseSequence, PoseError> {
    if audio.is_empty() {
        return Err(PoseError::EmptyAudio);
    }
    if sample_rate == 0 {
        return Err(PoseError::BadSampleRate);
    }
    let fps = u64::from(AUDIO_POSE_FPS);
    let sr = u64::from(sample_rate);
    let n_frames = audio.len() as u64 * fps / sr;
    if n_frames == 0 {
        return Err(PoseError::AudioTooShort);
    }
    let frames = (0..n_frames)
        .map(|i| {
            let start = (i * sr / fps) as usize;
            let end = (((i + 1) * sr / fps) as usize).min(audio.len());
            predictor.predict_frame(&audio[start..end], template)
        })
        .collect();
    PoseSequence::face68(f64::from(AUDIO_POSE_FPS), frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::neutral_face;
    use proptest::prelude::*;

    #[test]
    fn silence_keeps_template() {
        let t = neutral_face();
        let seq = pose_from_audio(&vec![0.0; 16_000], 16_000, &t, &EnergyMouthPredictor::default()).unwrap();
        assert_eq!(seq.len(), 24);
        assert_eq!(seq.fps(), 24.0);
        assert!(seq.frames().iter().all(|f| *f == t));
    }

    #[test]
    fn two_seconds_give_48_frames() {
        let audio: Vec<f64> = (0..88_200).map(|i| (i as f64 * 0.01).sin() * 0.3).collect();
        let seq = pose_from_audio(&audio, 44_100, &neutral_face(), &EnergyMouthPredictor::default()).unwrap();
        assert_eq!(seq.len(), 48);
    }

    #[test]
    fn duration_rounds_down() {
        // 1.03 s at 8 kHz -> 24.72 frames -> 24
        let seq = pose_from_audio(&vec![0.0; 8_240], 8_000, &neutral_face(), &EnergyMouthPredictor::default()).unwrap();
        assert_eq!(seq.len(), 24);
    }

    #[test]
    fn full_scale_square_wave_opens_fully() {
        let sr = 16_000;
        let audio: Vec<f64> = (0..sr).map(|i| if (i / 40) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let p = EnergyMouthPredictor::default();
        let t = neutral_face();
        let seq = pose_from_audio(&audio, sr as u32, &t, &p).unwrap();
        // Oracle: RMS of each 1/24 s window computed directly.
        for (i, frame) in seq.frames().iter().enumerate() {
            let w = &audio[i * sr / 24..(i + 1) * sr / 24];
            let rms = (w.iter().map(|s| s * s).sum::<f64>() / w.len() as f64).sqrt();
            assert_eq!(rms, 1.0);
            for &k in &MOUTH_LOWER {
                let offset = frame.keypoints()[k].y - t.keypoints()[k].y;
                assert!((offset - p.max_open).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let t = neutral_face();
        let p = EnergyMouthPredictor::default();
        assert!(matches!(pose_from_audio(&[], 16_000, &t, &p), Err(PoseError::EmptyAudio)));
        assert!(matches!(pose_from_audio(&[0.0; 10], 0, &t, &p), Err(PoseError::BadSampleRate)));
        assert!(matches!(pose_from_audio(&[0.0; 10], 16_000, &t, &p), Err(PoseError::AudioTooShort)));
    }

    proptest! {
        #[test]
        fn louder_never_opens_less(a in proptest::collection::vec(-1.0f64..1.0, 1..200), gain in 1.0f64..4.0) {
            let p = EnergyMouthPredictor::default();
            let louder: Vec<f64> = a.iter().map(|s| s * gain).collect();
            prop_assert!(p.opening(&louder) >= p.opening(&a));
            let t = neutral_face();
            let f = p.predict_frame(&a, &t);
            prop_assert!(f.keypoints().iter().all(|k| (0.0..=1.0).contains(&k.y)));
        }
    }
}
