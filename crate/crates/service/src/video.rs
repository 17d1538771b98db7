//! Video encoding and decoding: H.264 in MP4 through openh264, plus a raw
//! frames archive for environments that want no codec at all.

use std::io::Cursor;

use bytes::Bytes;
use mp4::{AvcConfig, MediaConfig, Mp4Config, Mp4Reader, Mp4Sample, Mp4Writer, TrackConfig, TrackType};
use openh264::decoder::Decoder;
use openh264::encoder::{Encoder, EncoderConfig, FrameRate};
use openh264::formats::{RgbSliceU8, YUVBuffer, YUVSource};
use openh264::OpenH264API;
use posedrive_core::RgbFrame;
use thiserror::Error;

pub const MP4_MEDIA_TYPE: &str = "video/mp4";
pub const RAW_MEDIA_TYPE: &str = "application/x-posedrive-frames";

const RAW_MAGIC: &[u8; 4] = b"PDRF";
const RAW_VERSION: u32 = 1;
const TICKS_PER_FRAME: u32 = 1000;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("EncoderUnavailable: {0}")]
    EncoderUnavailable(String),
    #[error("EncodeFailed: {0}")]
    EncodeFailed(String),
    #[error("UndecodableMedia: {0}")]
    Undecodable(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedVideo {
    pub bytes: Vec<u8>,
    pub media_type: &'static str,
}

/// Container-level facts about an encoded video.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoInfo {
    pub frames: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub duration_s: f64,
}

pub trait VideoEncoder: Send + Sync {
    fn encode(&self, frames: &[RgbFrame], fps: u32) -> Result<EncodedVideo, VideoError>;
}

fn check_input(frames: &[RgbFrame], fps: u32) -> Result<(usize, usize), VideoError> {
    let first = frames.first().ok_or_else(|| VideoError::EncodeFailed("no frames".into()))?;
    if fps == 0 {
        return Err(VideoError::EncodeFailed("fps must be positive".into()));
    }
    let dims = first.dims();
    if frames.iter().any(|f| f.dims() != dims) {
        return Err(VideoError::EncodeFailed("frames differ in size".into()));
    }
    Ok(dims)
}

/// Baseline H.264 in an MP4 container, one sample per frame.
#[derive(Clone, Copy, Debug, Default)]
pub struct H264Encoder;

fn split_nals(annexb: &[u8]) -> Vec<&[u8]> {
    let mut starts = Vec::new();
    let mut i = 0;
    while i + 3 <= annexb.len() {
        if annexb[i..i + 3] == [0, 0, 1] {
            starts.push((i, i + 3));
            i += 3;
        } else {
            i += 1;
        }
    }
    let mut out = Vec::new();
    for (k, &(_, body)) in starts.iter().enumerate() {
        let mut end = starts.get(k + 1).map_or(annexb.len(), |&(s, _)| s);
        while end > body && annexb[end - 1] == 0 {
            end -= 1;
        }
        if end > body {
            out.push(&annexb[body..end]);
        }
    }
    out
}

impl VideoEncoder for H264Encoder {
    fn encode(&self, frames: &[RgbFrame], fps: u32) -> Result<EncodedVideo, VideoError> {
        let (w, h) = check_input(frames, fps)?;
        if w % 2 != 0 || h % 2 != 0 || w > u16::MAX as usize || h > u16::MAX as usize {
            return Err(VideoError::EncodeFailed(format!("H.264 needs even dimensions, got {w}x{h}")));
        }
        let config = EncoderConfig::new().max_frame_rate(FrameRate::from_hz(fps as f32)).skip_frames(false);
        let mut encoder = Encoder::with_api_config(OpenH264API::from_source(), config)
            .map_err(|e| VideoError::EncoderUnavailable(e.to_string()))?;
        let (mut sps, mut pps) = (None, None);
        let mut samples = Vec::with_capacity(frames.len());
        for frame in frames {
            let rgb = frame.to_rgb8().into_raw();
            let yuv = YUVBuffer::from_rgb8_source(RgbSliceU8::new(&rgb, (w, h)));
            let stream = encoder.encode(&yuv).map_err(|e| VideoError::EncodeFailed(e.to_string()))?;
            let (mut sample, mut sync) = (Vec::new(), false);
            for nal in split_nals(&stream.to_vec()) {
                match nal[0] & 0x1f {
                    7 => {
                        sps.get_or_insert_with(|| nal.to_vec());
                    }
                    8 => {
                        pps.get_or_insert_with(|| nal.to_vec());
                    }
                    t => {
                        sync |= t == 5;
                        sample.extend_from_slice(&(nal.len() as u32).to_be_bytes());
                        sample.extend_from_slice(nal);
                    }
                }
            }
            if sample.is_empty() {
                return Err(VideoError::EncodeFailed("encoder produced no picture for a frame".into()));
            }
            samples.push((sample, sync));
        }
        let (Some(sps), Some(pps)) = (sps, pps) else {
            return Err(VideoError::EncodeFailed("encoder emitted no parameter sets".into()));
        };
        let fail = |e: mp4::Error| VideoError::EncodeFailed(e.to_string());
        let brand = |s: &str| s.parse().expect("four-character code");
        let config = Mp4Config {
            major_brand: brand("isom"),
            minor_version: 512,
            compatible_brands: ["isom", "iso2", "avc1", "mp41"].map(brand).to_vec(),
            timescale: 1000,
        };
        let mut writer = Mp4Writer::write_start(Cursor::new(Vec::new()), &config).map_err(fail)?;
        writer
            .add_track(&TrackConfig {
                track_type: TrackType::Video,
                timescale: fps * TICKS_PER_FRAME,
                language: "und".into(),
                media_conf: MediaConfig::AvcConfig(AvcConfig {
                    width: w as u16,
                    height: h as u16,
                    seq_param_set: sps,
                    pic_param_set: pps,
                }),
            })
            .map_err(fail)?;
        for (i, (sample, is_sync)) in samples.into_iter().enumerate() {
            let s = Mp4Sample {
                start_time: i as u64 * u64::from(TICKS_PER_FRAME),
                duration: TICKS_PER_FRAME,
                rendering_offset: 0,
                is_sync,
                bytes: Bytes::from(sample),
            };
            writer.write_sample(1, &s).map_err(fail)?;
        }
        writer.write_end().map_err(fail)?;
        Ok(EncodedVideo { bytes: writer.into_writer().into_inner(), media_type: MP4_MEDIA_TYPE })
    }
}

/// Uncompressed RGB8 frames behind a small header.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawArchiveEncoder;

impl VideoEncoder for RawArchiveEncoder {
    fn encode(&self, frames: &[RgbFrame], fps: u32) -> Result<EncodedVideo, VideoError> {
        let (w, h) = check_input(frames, fps)?;
        let mut out = Vec::with_capacity(24 + frames.len() * w * h * 3);
        out.extend_from_slice(RAW_MAGIC);
        for v in [RAW_VERSION, w as u32, h as u32, fps, frames.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for f in frames {
            out.extend_from_slice(f.to_rgb8().as_raw());
        }
        Ok(EncodedVideo { bytes: out, media_type: RAW_MEDIA_TYPE })
    }
}

pub fn encode_video(frames: &[RgbFrame], fps: u32) -> Result<EncodedVideo, VideoError> {
    H264Encoder.encode(frames, fps)
}

fn raw_header(bytes: &[u8]) -> Option<[u32; 5]> {
    if bytes.len() < 24 || &bytes[..4] != RAW_MAGIC {
        return None;
    }
    let mut h = [0u32; 5];
    for (i, v) in h.iter_mut().enumerate() {
        *v = u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    }
    Some(h)
}

type TrackReader<'a> = (Mp4Reader<Cursor<&'a [u8]>>, u32);

fn mp4_reader(bytes: &[u8]) -> Result<TrackReader<'_>, VideoError> {
    let bad = |e: mp4::Error| VideoError::Undecodable(e.to_string());
    let reader = Mp4Reader::read_header(Cursor::new(bytes), bytes.len() as u64).map_err(bad)?;
    let track = reader
        .tracks()
        .values()
        .find(|t| t.track_type().ok() == Some(TrackType::Video))
        .map(|t| t.track_id())
        .ok_or_else(|| VideoError::Undecodable("no video track".into()))?;
    Ok((reader, track))
}

/// Reads frame count, rate and size from container metadata only.
pub fn probe(bytes: &[u8]) -> Result<VideoInfo, VideoError> {
    if let Some([version, w, h, fps, n]) = raw_header(bytes) {
        if version != RAW_VERSION || fps == 0 {
            return Err(VideoError::Undecodable("unsupported frames archive".into()));
        }
        return Ok(VideoInfo {
            frames: n as usize,
            fps: f64::from(fps),
            width: w as usize,
            height: h as usize,
            duration_s: f64::from(n) / f64::from(fps),
        });
    }
    let (reader, id) = mp4_reader(bytes)?;
    let track = &reader.tracks()[&id];
    let frames = track.sample_count() as usize;
    // Track::duration truncates to microseconds; use the media timescale directly.
    let duration_s = track.trak.mdia.mdhd.duration as f64 / f64::from(track.timescale().max(1));
    if frames == 0 || duration_s <= 0.0 {
        return Err(VideoError::Undecodable("empty video track".into()));
    }
    Ok(VideoInfo {
        frames,
        fps: frames as f64 / duration_s,
        width: usize::from(track.width()),
        height: usize::from(track.height()),
        duration_s,
    })
}

fn annexb(nal: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&[0, 0, 0, 1]);
    out.extend_from_slice(nal);
}

/// Decodes a frames archive or an H.264 MP4 into frames and their rate.
pub fn decode_video(bytes: &[u8]) -> Result<(Vec<RgbFrame>, f64), VideoError> {
    let info = probe(bytes)?;
    if let Some([_, w, h, _, n]) = raw_header(bytes) {
        let frame_len = w as usize * h as usize * 3;
        let body = &bytes[24..];
        if w == 0 || h == 0 || body.len() != frame_len * n as usize {
            return Err(VideoError::Undecodable("frames archive is truncated".into()));
        }
        let frames = body
            .chunks_exact(frame_len)
            .map(|c| {
                let img = image::RgbImage::from_raw(w, h, c.to_vec()).expect("sized chunk");
                RgbFrame::from_rgb8(&img)
            })
            .collect();
        return Ok((frames, info.fps));
    }
    let bad = |e: &dyn std::fmt::Display| VideoError::Undecodable(e.to_string());
    let (mut reader, id) = mp4_reader(bytes)?;
    let (sps, pps) = {
        let t = &reader.tracks()[&id];
        (
            t.sequence_parameter_set().map_err(|e| bad(&e))?.to_vec(),
            t.picture_parameter_set().map_err(|e| bad(&e))?.to_vec(),
        )
    };
    let mut decoder = Decoder::with_api_config(OpenH264API::from_source(), Default::default()).map_err(|e| bad(&e))?;
    let mut frames = Vec::with_capacity(info.frames);
    let mut push = |yuv: &openh264::decoder::DecodedYUV<'_>| {
        let (w, h) = yuv.dimensions();
        let mut rgb = vec![0u8; w * h * 3];
        yuv.write_rgb8(&mut rgb);
        let img = image::RgbImage::from_raw(w as u32, h as u32, rgb).expect("sized buffer");
        frames.push(RgbFrame::from_rgb8(&img));
    };
    for id_sample in 1..=info.frames as u32 {
        let sample = reader.read_sample(id, id_sample).map_err(|e| bad(&e))?.ok_or_else(|| bad(&"missing sample"))?;
        let mut packet = Vec::new();
        if id_sample == 1 {
            annexb(&sps, &mut packet);
            annexb(&pps, &mut packet);
        }
        let mut rest = &sample.bytes[..];
        while rest.len() >= 4 {
            let n = u32::from_be_bytes(rest[..4].try_into().expect("4 bytes")) as usize;
            let nal = rest.get(4..4 + n).ok_or_else(|| bad(&"truncated sample"))?;
            annexb(nal, &mut packet);
            rest = &rest[4 + n..];
        }
        if let Some(yuv) = decoder.decode(&packet).map_err(|e| bad(&e))? {
            push(&yuv);
        }
    }
    for yuv in decoder.flush_remaining().map_err(|e| bad(&e))? {
        push(&yuv);
    }
    if frames.is_empty() {
        return Err(VideoError::Undecodable("no pictures decoded".into()));
    }
    Ok((frames, info.fps))
}
