use std::io::Read;
use std::path::Path;

use super::{MediaError, MediaInfo};
use crate::cancel::CancelToken;
use crate::tool::{MediaTool, ToolStream};

/// Packed 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), (width * height * 3) as usize);
        Self { width, height, data }
    }

    pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take((width * height * 3) as usize).collect();
        Self { width, height, data }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Mean absolute difference over all channel samples, on the 0–255 scale.
    pub fn mean_abs_diff(&self, other: &RgbFrame) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height), "frame size mismatch");
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: u64 = self.data.iter().zip(&other.data).map(|(a, b)| a.abs_diff(*b) as u64).sum();
        sum as f64 / self.data.len() as f64
    }
}

/// Which frames to decode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Every decoded frame, timestamps untouched.
    All,
    /// A constant-rate resample; frame `i` stands for time `i / rate`.
    Rate(f64),
}

/// Sequential decoder yielding `(time_s, frame)` pairs.
pub struct FrameReader<'a> {
    stream: Option<ToolStream>,
    width: u32,
    height: u32,
    period: f64,
    index: usize,
    limit: Option<usize>,
    cancel: Option<&'a CancelToken>,
}

/// Decode frames of the first video stream as RGB, optionally rescaled.
pub fn read_frames<'a>(
    tool: &MediaTool,
    path: &Path,
    info: &MediaInfo,
    sampling: Sampling,
    size: Option<(u32, u32)>,
    cancel: Option<&'a CancelToken>,
) -> Result<FrameReader<'a>, MediaError> {
    let (width, height) = size.unwrap_or((info.width, info.height));
    let mut filters = Vec::new();
    let (period, limit) = match sampling {
        Sampling::All => (info.frame_period(), None),
        Sampling::Rate(rate) => {
            filters.push(format!("fps={rate}"));
            // Samples at i / rate for every i with i / rate < duration.
            let n = (info.duration_s * rate - 1e-6).ceil().max(1.0) as usize;
            (1.0 / rate, Some(n))
        }
    };
    if (width, height) != (info.width, info.height) {
        filters.push(format!("scale={width}:{height}:flags=area"));
    }
    let mut cmd = tool.command().args(["-v", "error", "-i"]).arg(path).args(["-map", "0:v:0", "-an", "-sn"]);
    if !filters.is_empty() {
        cmd = cmd.arg("-vf").arg(filters.join(","));
    }
    if sampling == Sampling::All {
        cmd = cmd.args(["-fps_mode", "passthrough"]);
    }
    let stream = cmd.args(["-f", "rawvideo", "-pix_fmt", "rgb24", "pipe:1"]).spawn_stdout()?;
    Ok(FrameReader { stream: Some(stream), width, height, period, index: 0, limit, cancel })
}

impl FrameReader<'_> {
    /// Read everything that remains into memory.
    pub fn collect_frames(self) -> Result<Vec<(f64, RgbFrame)>, MediaError> {
        self.collect()
    }
}

impl Iterator for FrameReader<'_> {
    type Item = Result<(f64, RgbFrame), MediaError>;

    fn next(&mut self) -> Option<Self::Item> {
        let stream = self.stream.as_mut()?;
        if self.cancel.is_some_and(CancelToken::is_cancelled) {
            self.stream = None;
            return Some(Err(MediaError::Cancelled));
        }
        if self.limit.is_some_and(|l| self.index >= l) {
            self.stream = None;
            return None;
        }
        let len = (self.width * self.height * 3) as usize;
        let mut buf = vec![0u8; len];
        let mut filled = 0;
        while filled < len {
            match stream.stdout().read(&mut buf[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => {
                    self.stream = None;
                    return Some(Err(MediaError::Io { path: Default::default(), source: e }));
                }
            }
        }
        if filled < len {
            // Clean end of stream, or a decode failure surfaced by the exit status.
            return match self.stream.take().expect("checked above").finish() {
                Ok(()) => None,
                Err(e) => Some(Err(e)),
            };
        }
        let t = self.index as f64 * self.period;
        self.index += 1;
        Some(Ok((t, RgbFrame::new(self.width, self.height, buf))))
    }
}

/// Encode the frame nearest to `t` as PNG.
pub fn extract_frame_png(tool: &MediaTool, path: &Path, t: f64) -> Result<Vec<u8>, MediaError> {
    let out = tool
        .command()
        .args(["-v", "error", "-ss", &format!("{t:.3}"), "-i"])
        .arg(path)
        .args(["-map", "0:v:0", "-frames:v", "1", "-f", "image2pipe", "-c:v", "png", "pipe:1"])
        .run()?;
    if out.stdout.is_empty() {
        return Err(MediaError::ToolFailure(format!("no frame decoded at t={t:.3}")));
    }
    Ok(out.stdout)
}
