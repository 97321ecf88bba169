//! Video decoding backends.
//!
//! Animated GIF is decoded in-process. Everything else (`.avi`, `.mp4`, ...)
//! goes through an `ffmpeg`/`ffprobe` subprocess when those are on `PATH`.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use std::process::{Command, Stdio};

use image::codecs::gif::GifDecoder;
use image::{AnimationDecoder, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frame rate as an exact rational `num / den` frames per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Option<Self> {
        if num == 0 || den == 0 {
            return None;
        }
        let g = gcd(num, den);
        Some(Self { num: num / g, den: den / g })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Nominal presentation time of frame `index`.
    pub fn timestamp_ms(self, index: usize) -> f64 {
        index as f64 * 1000.0 * self.den as f64 / self.num as f64
    }

    fn parse_ratio(text: &str) -> Option<Self> {
        let (n, d) = text.trim().split_once('/').unwrap_or((text.trim(), "1"));
        let n: f64 = n.parse().ok()?;
        let d: f64 = d.parse().ok()?;
        if !(n > 0.0 && d > 0.0) {
            return None;
        }
        if n.fract() == 0.0 && d.fract() == 0.0 && n <= u32::MAX as f64 && d <= u32::MAX as f64 {
            Self::new(n as u32, d as u32)
        } else {
            Self::new((n / d * 1000.0).round() as u32, 1000)
        }
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VideoInfo {
    pub width: u32,
    pub height: u32,
    pub fps: Fps,
    pub frame_count: usize,
}

pub struct DecodedFrame {
    /// Position in decode order.
    pub index: usize,
    /// Presentation time reported by the container.
    pub timestamp_ms: f64,
    pub image: RgbImage,
}

#[derive(Debug, Default, Clone)]
pub struct DecodeOutcome {
    pub frames_decoded: usize,
    pub warnings: Vec<String>,
}

pub trait VideoDecoder: Send + Sync {
    fn probe(&self, path: &Path) -> Result<VideoInfo>;

    /// Feed every frame, in decode order, to `sink`. A corrupt tail ends decoding
    /// with a warning instead of an error once at least one frame was produced.
    fn decode(&self, path: &Path, sink: &mut dyn FnMut(DecodedFrame) -> Result<()>) -> Result<DecodeOutcome>;
}

pub const VIDEO_EXTENSIONS: &[&str] = &["gif", "avi", "mp4", "mov", "mkv", "webm", "m4v", "mpg", "mpeg"];

pub fn is_video_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| VIDEO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Pick the decoder for a file based on its extension.
pub fn decoder_for(path: &Path) -> Box<dyn VideoDecoder> {
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("gif") => Box::new(GifVideoDecoder),
        _ => Box::new(FfmpegDecoder::default()),
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GifVideoDecoder;

/// GIF viewers treat a zero delay as 100 ms; so do we.
const GIF_DEFAULT_DELAY_MS: u32 = 100;

impl GifVideoDecoder {
    fn open(path: &Path) -> Result<GifDecoder<BufReader<File>>> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        GifDecoder::new(BufReader::new(file))
            .map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })
    }

    fn delay_ms(frame: &image::Frame) -> f64 {
        let (num, den) = frame.delay().numer_denom_ms();
        let ms = if den == 0 { 0.0 } else { num as f64 / den as f64 };
        if ms <= 0.0 {
            GIF_DEFAULT_DELAY_MS as f64
        } else {
            ms
        }
    }
}

impl VideoDecoder for GifVideoDecoder {
    fn probe(&self, path: &Path) -> Result<VideoInfo> {
        let decoder = Self::open(path)?;
        let (width, height) = image::ImageDecoder::dimensions(&decoder);
        let mut delays = Vec::new();
        for frame in decoder.into_frames() {
            match frame {
                Ok(frame) => delays.push(Self::delay_ms(&frame)),
                Err(e) if !delays.is_empty() => {
                    log::warn!("{}: stopping at corrupt frame {}: {e}", path.display(), delays.len());
                    break;
                }
                Err(e) => return Err(Error::Decode { path: path.to_path_buf(), reason: e.to_string() }),
            }
        }
        Ok(VideoInfo { width, height, fps: gif_fps(&delays), frame_count: delays.len() })
    }

    fn decode(&self, path: &Path, sink: &mut dyn FnMut(DecodedFrame) -> Result<()>) -> Result<DecodeOutcome> {
        let decoder = Self::open(path)?;
        let mut outcome = DecodeOutcome::default();
        let mut clock_ms = 0.0;
        for (index, frame) in decoder.into_frames().enumerate() {
            let frame = match frame {
                Ok(frame) => frame,
                Err(e) if index > 0 => {
                    let msg =
                        format!("{}: skipped corrupt trailing data after frame {}: {e}", path.display(), index - 1);
                    log::warn!("{msg}");
                    outcome.warnings.push(msg);
                    break;
                }
                Err(e) => return Err(Error::Decode { path: path.to_path_buf(), reason: e.to_string() }),
            };
            let delay = Self::delay_ms(&frame);
            let image = image::DynamicImage::ImageRgba8(frame.into_buffer()).to_rgb8();
            sink(DecodedFrame { index, timestamp_ms: clock_ms, image })?;
            clock_ms += delay;
            outcome.frames_decoded += 1;
        }
        Ok(outcome)
    }
}

fn gif_fps(delays_ms: &[f64]) -> Fps {
    let fallback = Fps::new(1000, GIF_DEFAULT_DELAY_MS).expect("non-zero");
    let Some(&first) = delays_ms.first() else {
        return fallback;
    };
    if delays_ms.iter().all(|&d| d == first) {
        Fps::new(1_000_000, (first * 1000.0).round() as u32).unwrap_or(fallback)
    } else {
        let total: f64 = delays_ms.iter().sum();
        Fps::new((delays_ms.len() * 1_000_000) as u32, (total * 1000.0).round() as u32).unwrap_or(fallback)
    }
}

/// Decoder that shells out to `ffprobe`/`ffmpeg`.
#[derive(Debug, Clone)]
pub struct FfmpegDecoder {
    pub ffmpeg: String,
    pub ffprobe: String,
}

impl Default for FfmpegDecoder {
    fn default() -> Self {
        Self {
            ffmpeg: std::env::var("YAWNFORGE_FFMPEG").unwrap_or_else(|_| "ffmpeg".into()),
            ffprobe: std::env::var("YAWNFORGE_FFPROBE").unwrap_or_else(|_| "ffprobe".into()),
        }
    }
}

#[derive(Deserialize)]
struct ProbeOutput {
    #[serde(default)]
    streams: Vec<ProbeStream>,
}

#[derive(Deserialize)]
struct ProbeStream {
    width: Option<u32>,
    height: Option<u32>,
    avg_frame_rate: Option<String>,
    r_frame_rate: Option<String>,
    nb_read_frames: Option<String>,
}

impl FfmpegDecoder {
    fn run(&self, program: &str, args: &[&str], path: &Path) -> Result<std::process::Output> {
        Command::new(program).args(args).arg(path).stdin(Stdio::null()).output().map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: format!("cannot run `{program}` (is ffmpeg installed?): {e}"),
        })
    }

    fn frame_timestamps(&self, path: &Path) -> Result<Vec<f64>> {
        let out = self.run(
            &self.ffprobe,
            &[
                "-v",
                "error",
                "-select_streams",
                "v:0",
                "-show_entries",
                "frame=best_effort_timestamp_time",
                "-of",
                "csv=p=0",
            ],
            path,
        )?;
        let text = String::from_utf8_lossy(&out.stdout);
        Ok(text
            .lines()
            .filter_map(|l| l.trim().trim_end_matches(',').parse::<f64>().ok())
            .map(|s| s * 1000.0)
            .collect())
    }
}

impl VideoDecoder for FfmpegDecoder {
    fn probe(&self, path: &Path) -> Result<VideoInfo> {
        let out = self.run(
            &self.ffprobe,
            &[
                "-v",
                "error",
                "-select_streams",
                "v:0",
                "-count_frames",
                "-show_entries",
                "stream=width,height,avg_frame_rate,r_frame_rate,nb_read_frames",
                "-of",
                "json",
            ],
            path,
        )?;
        let decode_err = |reason: String| Error::Decode { path: path.to_path_buf(), reason };
        if !out.status.success() {
            return Err(decode_err(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let parsed: ProbeOutput =
            serde_json::from_slice(&out.stdout).map_err(|e| decode_err(format!("unparseable ffprobe output: {e}")))?;
        let stream = parsed.streams.into_iter().next().ok_or_else(|| decode_err("no video stream".into()))?;
        let (width, height) = match (stream.width, stream.height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
            _ => return Err(decode_err("video stream has no dimensions".into())),
        };
        let fps = stream
            .avg_frame_rate
            .as_deref()
            .and_then(Fps::parse_ratio)
            .or_else(|| stream.r_frame_rate.as_deref().and_then(Fps::parse_ratio))
            .ok_or_else(|| decode_err("unknown frame rate".into()))?;
        let frame_count = stream.nb_read_frames.as_deref().and_then(|n| n.parse().ok()).unwrap_or(0);
        Ok(VideoInfo { width, height, fps, frame_count })
    }

    fn decode(&self, path: &Path, sink: &mut dyn FnMut(DecodedFrame) -> Result<()>) -> Result<DecodeOutcome> {
        let info = self.probe(path)?;
        let timestamps = self.frame_timestamps(path)?;
        let mut child = Command::new(&self.ffmpeg)
            .args(["-v", "error", "-i"])
            .arg(path)
            .args(["-map", "0:v:0", "-fps_mode", "passthrough", "-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"])
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Decode {
                path: path.to_path_buf(),
                reason: format!("cannot run `{}`: {e}", self.ffmpeg),
            })?;
        let mut stdout = child.stdout.take().expect("piped stdout");
        let frame_len = info.width as usize * info.height as usize * 3;
        let mut outcome = DecodeOutcome::default();
        let mut buf = vec![0u8; frame_len];
        loop {
            let mut filled = 0;
            while filled < frame_len {
                match stdout.read(&mut buf[filled..]) {
                    Ok(0) => break,
                    Ok(n) => filled += n,
                    Err(e) => return Err(Error::io(path, e)),
                }
            }
            if filled == 0 {
                break;
            }
            if filled < frame_len {
                let msg = format!("{}: dropped truncated trailing frame", path.display());
                log::warn!("{msg}");
                outcome.warnings.push(msg);
                break;
            }
            let index = outcome.frames_decoded;
            let image = RgbImage::from_raw(info.width, info.height, buf.clone()).expect("sized buffer");
            let timestamp_ms = timestamps.get(index).copied().unwrap_or_else(|| info.fps.timestamp_ms(index));
            sink(DecodedFrame { index, timestamp_ms, image })?;
            outcome.frames_decoded += 1;
        }
        let status = child.wait().map_err(|e| Error::io(path, e))?;
        if !status.success() {
            let mut stderr = String::new();
            if let Some(mut err) = child.stderr.take() {
                let _ = err.read_to_string(&mut stderr);
            }
            if outcome.frames_decoded == 0 {
                return Err(Error::Decode { path: path.to_path_buf(), reason: stderr.trim().to_string() });
            }
            let msg = format!(
                "{}: decoder reported errors after {} frames: {}",
                path.display(),
                outcome.frames_decoded,
                stderr.trim()
            );
            log::warn!("{msg}");
            outcome.warnings.push(msg);
        }
        Ok(outcome)
    }
}
