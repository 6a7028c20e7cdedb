//! Deterministic synthetic recordings with known out-of-body spans.
//!
//! In-body frames are a scrolling mosaic of dark reds (reference heuristic at
//! most 0.16 for any mix); out-of-body frames use the same mosaic in skin tones
//! (at least 0.80). The mosaic has strong local contrast, so any blur visibly
//! changes it.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::interval::SensitiveInterval;
use crate::media::{MediaError, VideoCodec};
use crate::tool::MediaTool;

const BLOCK: u32 = 16;
/// Horizontal scroll in pixels per frame.
const SCROLL: u32 = 2;

const IN_BODY: [[u8; 3]; 2] = [[200, 30, 30], [20, 0, 0]];
const OUT_OF_BODY: [[u8; 3]; 2] = [[255, 235, 220], [200, 140, 110]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub duration_s: f64,
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    /// Disjoint, sorted `(start_s, end_s)` spans of out-of-body content.
    pub oob_intervals: Vec<(f64, f64)>,
    pub seed: u64,
    pub codec: VideoCodec,
    /// Seconds between forced keyframes.
    pub keyframe_interval_s: f64,
    pub audio: bool,
    /// Container tags written into the file, for metadata tests.
    pub tags: Vec<(String, String)>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            fps: 25,
            width: 640,
            height: 360,
            oob_intervals: Vec::new(),
            seed: 0,
            codec: VideoCodec::H264,
            keyframe_interval_s: 1.0,
            audio: false,
            tags: Vec::new(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), MediaError> {
        let bad = |m: String| Err(MediaError::InvalidProfile(m));
        if !(self.duration_s > 0.0) || self.fps == 0 || self.width < 2 || self.height < 2 {
            return bad("synthetic spec needs positive duration, fps and size".into());
        }
        if self.width % 2 == 1 || self.height % 2 == 1 {
            return bad(format!("synthetic size {}x{} must be even", self.width, self.height));
        }
        if !(self.keyframe_interval_s > 0.0) {
            return bad("keyframe interval must be positive".into());
        }
        let mut prev_end = 0.0;
        for &(s, e) in &self.oob_intervals {
            if !(s >= prev_end && e > s && e <= self.duration_s) {
                return bad(format!("out-of-body span ({s}, {e}) is not sorted, disjoint and within duration"));
            }
            prev_end = e;
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u32 {
        (self.duration_s * self.fps as f64).round() as u32
    }

    /// Whether frame `index` (shown at `index / fps`) is out-of-body.
    pub fn is_oob_frame(&self, index: u32) -> bool {
        let t = index as f64 / self.fps as f64;
        self.oob_intervals.iter().any(|&(s, e)| t >= s && t < e)
    }

    pub fn ground_truth(&self) -> Vec<SensitiveInterval> {
        self.oob_intervals.iter().map(|&(s, e)| SensitiveInterval::auto(s, e)).collect()
    }

    /// Pixels of frame `index`, independent of encoding.
    pub fn render_frame(&self, index: u32, mosaic: &Mosaic) -> Vec<u8> {
        let palette = if self.is_oob_frame(index) { OUT_OF_BODY } else { IN_BODY };
        let shift = index * SCROLL;
        let row_len = (self.width * 3) as usize;
        let mut data = Vec::with_capacity(row_len * self.height as usize);
        let mut row = Vec::with_capacity(row_len);
        for y in 0..self.height {
            if y % BLOCK == 0 {
                row.clear();
                for x in 0..self.width {
                    row.extend_from_slice(&palette[usize::from(mosaic.get((x + shift) / BLOCK, y / BLOCK))]);
                }
            }
            data.extend_from_slice(&row);
        }
        data
    }

    pub fn mosaic(&self) -> Mosaic {
        let cols = (self.width + self.frame_count() * SCROLL) / BLOCK + 2;
        let rows = self.height / BLOCK + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Mosaic { cols, bits: (0..cols * rows).map(|_| rng.gen()).collect() }
    }
}

/// Seeded two-colour block pattern, wider than the frame so it can scroll.
pub struct Mosaic {
    cols: u32,
    bits: Vec<bool>,
}

impl Mosaic {
    fn get(&self, col: u32, row: u32) -> bool {
        self.bits[(row * self.cols + col) as usize]
    }
}

/// Encode `spec` to `output` and return its path with the ground truth.
pub fn generate_synthetic_video(
    tool: &MediaTool,
    spec: &SyntheticSpec,
    output: &Path,
) -> Result<(PathBuf, Vec<SensitiveInterval>), MediaError> {
    spec.validate()?;
    let size = format!("{}x{}", spec.width, spec.height);
    let fps = spec.fps.to_string();
    let gop = ((spec.keyframe_interval_s * spec.fps as f64).round() as u32).max(1).to_string();
    let mut cmd = tool
        .command()
        .args(["-y", "-v", "error", "-f", "rawvideo", "-pix_fmt", "rgb24", "-s", &size, "-r", &fps])
        .args(["-i", "pipe:0"]);
    if spec.audio {
        let src = format!("sine=frequency=440:sample_rate=48000:duration={}", spec.duration_s);
        cmd = cmd.args(["-f", "lavfi", "-i", &src, "-map", "0:v", "-map", "1:a", "-c:a", "aac", "-shortest"]);
    }
    cmd = cmd.args(match spec.codec {
        VideoCodec::H264 => vec!["-c:v", "libx264", "-preset", "veryfast", "-crf", "18"],
        VideoCodec::Mpeg4 => vec!["-c:v", "mpeg4", "-q:v", "3"],
    });
    cmd = cmd.args(["-g", &gop, "-keyint_min", &gop, "-sc_threshold", "0", "-pix_fmt", "yuv420p"]);
    cmd = cmd.args(["-fflags", "+bitexact", "-flags:v", "+bitexact"]);
    for (k, v) in &spec.tags {
        cmd = cmd.arg("-metadata").arg(format!("{k}={v}"));
    }
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| MediaError::io(dir, e))?;
    }
    let mosaic = spec.mosaic();
    cmd.args(["-f", "mp4"]).arg(output).run_with_stdin(|stdin| {
        for i in 0..spec.frame_count() {
            stdin.write_all(&spec.render_frame(i, &mosaic))?;
        }
        stdin.flush()
    })?;
    Ok((output.to_path_buf(), spec.ground_truth()))
}

/// A directory of `parts` consecutive clips covering `spec` back to back.
/// Clip boundaries fall on whole seconds so they line up with keyframes.
pub fn generate_segmented_case(
    tool: &MediaTool,
    spec: &SyntheticSpec,
    parts: u32,
    dir: &Path,
) -> Result<Vec<PathBuf>, MediaError> {
    spec.validate()?;
    let parts = parts.max(1);
    let step = (spec.duration_s / parts as f64).floor().max(1.0);
    let mut out = Vec::new();
    let mut start = 0.0;
    for k in 0..parts {
        let end = if k + 1 == parts { spec.duration_s } else { (start + step).min(spec.duration_s) };
        if end <= start {
            break;
        }
        let oob = spec
            .oob_intervals
            .iter()
            .filter_map(|&(s, e)| {
                let (s, e) = (s.max(start) - start, e.min(end) - start);
                (e > s).then_some((s, e))
            })
            .collect();
        let part = SyntheticSpec {
            duration_s: end - start,
            oob_intervals: oob,
            seed: spec.seed.wrapping_add(k as u64),
            ..spec.clone()
        };
        let path = dir.join(format!("clip_{}.mp4", k + 1));
        generate_synthetic_video(tool, &part, &path)?;
        out.push(path);
        start = end;
    }
    Ok(out)
}

/// Sample `count` sorted, disjoint spans inside `[0, duration_s)` covering
/// roughly `fraction` of it.
pub fn random_oob_spans(duration_s: f64, fraction: f64, count: usize, seed: u64) -> Vec<(f64, f64)> {
    if count == 0 || fraction <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = (duration_s * fraction / count as f64).max(0.5);
    let slot = duration_s / count as f64;
    (0..count)
        .filter_map(|k| {
            let room = slot - span;
            if room <= 0.0 {
                return None;
            }
            let s = (k as f64 * slot + rng.gen_range(0.0..room)).round();
            let e = (s + span).round().min(duration_s);
            (e > s).then_some((s, e))
        })
        .collect()
}
