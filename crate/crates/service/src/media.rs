//! Decoding of uploaded images and audio.

use std::io::Cursor;

use posedrive_core::RgbFrame;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MediaError {
    #[error("InvalidImage: {0}")]
    InvalidImage(String),
    #[error("UndecodableMedia: {0}")]
    Undecodable(String),
}

/// Any PNG or JPEG, converted to RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RgbFrame, MediaError> {
    let img = image::load_from_memory(bytes).map_err(|e| MediaError::InvalidImage(e.to_string()))?;
    Ok(RgbFrame::from_rgb8(&img.to_rgb8()))
}

pub fn encode_png(frame: &RgbFrame) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    frame.to_rgb8().write_to(&mut out, image::ImageFormat::Png).expect("PNG encoding into memory");
    out.into_inner()
}

/// WAV audio mixed down to mono samples in [-1, 1].
pub fn decode_wav(bytes: &[u8]) -> Result<(Vec<f64>, u32), MediaError> {
    let bad = |e: hound::Error| MediaError::Undecodable(e.to_string());
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(bad)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>().map_err(bad)?
        }
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample.clamp(1, 32) - 1));
            reader.samples::<i32>().map(|s| s.map(|v| f64::from(v) / scale)).collect::<Result<_, _>>().map_err(bad)?
        }
    };
    let mono = samples.chunks(channels).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    Ok((mono, spec.sample_rate))
}

/// 16-bit mono WAV, mostly for tests and tooling.
pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let spec =
        hound::WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut out = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut out, spec).expect("in-memory WAV");
        for &s in samples {
            w.write_sample((s.clamp(-1.0, 1.0) * f64::from(i16::MAX)) as i16).expect("in-memory WAV");
        }
        w.finalize().expect("in-memory WAV");
    }
    out.into_inner()
}
