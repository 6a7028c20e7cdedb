use std::collections::BTreeMap;
use std::path::Path;

use super::{MediaError, MediaInfo};
use crate::tool::MediaTool;

/// What the tool's input banner (`ffmpeg -i <file>`) tells us.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BannerInfo {
    pub duration_s: Option<f64>,
    pub start_s: f64,
    pub video_codec: Option<String>,
    pub pix_fmt: Option<String>,
    pub width: u32,
    pub height: u32,
    pub fps: Option<f64>,
    pub timescale: Option<u32>,
    pub has_audio: bool,
    pub tags: BTreeMap<String, String>,
}

/// Probe a file: stream parameters and tags from the banner, keyframe times
/// from the packet list of the first video stream.
pub fn probe(tool: &MediaTool, path: &Path) -> Result<MediaInfo, MediaError> {
    let meta = std::fs::metadata(path).map_err(|e| MediaError::io(path, e))?;
    if meta.len() == 0 {
        return Err(MediaError::NotAVideo(path.to_path_buf()));
    }
    let out = tool.command().arg("-i").arg(path).allow_failure().run()?;
    let banner = parse_banner(&out.stderr);
    let (Some(codec), true) = (banner.video_codec.clone(), banner.width > 0 && banner.height > 0) else {
        return Err(MediaError::NotAVideo(path.to_path_buf()));
    };

    let packets = tool
        .command()
        .args(["-v", "error", "-i"])
        .arg(path)
        .args(["-map", "0:v:0", "-c", "copy", "-f", "framecrc", "-"])
        .run()
        .map_err(|_| MediaError::NotAVideo(path.to_path_buf()))?;
    let crc = parse_framecrc(&String::from_utf8_lossy(&packets.stdout));
    if crc.packets == 0 {
        return Err(MediaError::NotAVideo(path.to_path_buf()));
    }

    let fps = banner.fps.filter(|f| *f > 0.0).or(crc.mean_fps()).unwrap_or(25.0);
    let duration_s = banner.duration_s.filter(|d| *d > 0.0).or(crc.end_s).unwrap_or(0.0);
    if duration_s <= 0.0 {
        return Err(MediaError::NotAVideo(path.to_path_buf()));
    }
    let mut keyframes = crc.keyframes_s;
    if keyframes.is_empty() {
        keyframes.push(0.0);
    }
    Ok(MediaInfo {
        duration_s,
        fps,
        width: banner.width,
        height: banner.height,
        video_codec: codec,
        pix_fmt: banner.pix_fmt,
        timescale: banner.timescale,
        has_audio: banner.has_audio,
        tags: banner.tags,
        keyframe_times_s: keyframes,
    })
}

/// Packet-level facts from `-f framecrc` output.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct FramecrcInfo {
    pub packets: usize,
    pub keyframes_s: Vec<f64>,
    pub end_s: Option<f64>,
    pts_s: Vec<f64>,
}

impl FramecrcInfo {
    fn mean_fps(&self) -> Option<f64> {
        let mut pts = self.pts_s.clone();
        pts.sort_by(f64::total_cmp);
        let span = pts.last()? - pts.first()?;
        (pts.len() > 1 && span > 0.0).then(|| (pts.len() - 1) as f64 / span)
    }
}

/// Parse framecrc lines: `stream, dts, pts, duration, size, crc[, F=0x..]`.
/// Packets whose flags field is absent or has bit 0 set are keyframes.
pub fn parse_framecrc(text: &str) -> FramecrcInfo {
    let mut tb = 1.0;
    let mut info = FramecrcInfo::default();
    let mut end: f64 = f64::NEG_INFINITY;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("#tb 0:") {
            if let Some((n, d)) = rest.trim().split_once('/') {
                if let (Ok(n), Ok(d)) = (n.trim().parse::<f64>(), d.trim().parse::<f64>()) {
                    if d > 0.0 {
                        tb = n / d;
                    }
                }
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 6 || fields[0] != "0" {
            continue;
        }
        let Ok(pts) = fields[2].parse::<i64>() else { continue };
        let dur = fields[3].parse::<i64>().unwrap_or(0);
        let key = match fields.get(6).and_then(|f| f.strip_prefix("F=0x")) {
            None => true,
            Some(hex) => u32::from_str_radix(hex, 16).map(|f| f & 1 == 1).unwrap_or(false),
        };
        let t = pts as f64 * tb;
        info.packets += 1;
        info.pts_s.push(t);
        end = end.max(t + dur as f64 * tb);
        if key {
            info.keyframes_s.push(t);
        }
    }
    info.keyframes_s.sort_by(f64::total_cmp);
    info.keyframes_s.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if info.packets > 0 {
        info.end_s = Some(end);
    }
    info
}

/// Parse the human-readable input banner printed on stderr.
pub fn parse_banner(stderr: &str) -> BannerInfo {
    let mut info = BannerInfo::default();
    let mut in_input = false;
    let mut meta_indent: Option<usize> = None;
    let mut last_key: Option<String> = None;
    let mut video_seen = false;

    for line in stderr.lines() {
        let indent = line.len() - line.trim_start().len();
        let trimmed = line.trim();
        if line.starts_with("Input #") {
            in_input = true;
            meta_indent = None;
            continue;
        }
        if line.starts_with("Output #") || (!line.starts_with(' ') && !line.starts_with("Input")) {
            if in_input && !trimmed.is_empty() && indent == 0 {
                in_input = false;
            }
            meta_indent = None;
            continue;
        }
        if !in_input {
            continue;
        }
        if let Some(mi) = meta_indent {
            if indent > mi {
                if let Some((k, v)) = trimmed.split_once(':') {
                    let (k, v) = (k.trim(), v.trim());
                    if k.is_empty() {
                        if let Some(prev) = last_key.as_ref().and_then(|lk| info.tags.get_mut(lk)) {
                            prev.push('\n');
                            prev.push_str(v);
                        }
                    } else {
                        // Keys repeat across streams; an offending value is never overwritten.
                        if info.tags.get(k).is_none_or(|old| super::is_technical_tag(k, old)) {
                            info.tags.insert(k.to_string(), v.to_string());
                        }
                        last_key = Some(k.to_string());
                    }
                }
                continue;
            }
            meta_indent = None;
        }
        if trimmed == "Metadata:" {
            meta_indent = Some(indent);
            last_key = None;
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("Duration:") {
            parse_duration_line(rest, &mut info);
            continue;
        }
        if trimmed.starts_with("Stream #") {
            parse_stream_line(trimmed, &mut info, &mut video_seen);
        }
    }
    info
}

fn parse_duration_line(rest: &str, info: &mut BannerInfo) {
    for (i, part) in rest.split(',').enumerate() {
        let part = part.trim();
        if i == 0 {
            info.duration_s = parse_clock(part);
        } else if let Some(s) = part.strip_prefix("start:") {
            info.start_s = s.trim().parse().unwrap_or(0.0);
        }
    }
}

fn parse_clock(s: &str) -> Option<f64> {
    let mut parts = s.split(':');
    let h: f64 = parts.next()?.trim().parse().ok()?;
    let m: f64 = parts.next()?.trim().parse().ok()?;
    let sec: f64 = parts.next()?.trim().parse().ok()?;
    Some(h * 3600.0 + m * 60.0 + sec)
}

fn parse_stream_line(line: &str, info: &mut BannerInfo, video_seen: &mut bool) {
    let (head, kind, body) = if let Some(i) = line.find(": Video: ") {
        (&line[..i], "video", &line[i + 9..])
    } else if let Some(i) = line.find(": Audio: ") {
        (&line[..i], "audio", &line[i + 9..])
    } else {
        match line.find("): ") {
            Some(i) => (&line[..=i], "other", ""),
            None => (line, "other", ""),
        }
    };
    if let (Some(open), true) = (head.rfind('('), head.ends_with(')')) {
        let lang = &head[open + 1..head.len() - 1];
        if !lang.is_empty() && lang != "und" && lang.chars().all(|c| c.is_ascii_alphabetic()) {
            info.tags.insert("language".into(), lang.to_string());
        }
    }
    match kind {
        "audio" => info.has_audio = true,
        "video" if !*video_seen => {
            let parts = split_top_level(body);
            let Some(codec) = parts.first().and_then(|c| c.split_whitespace().next()) else { return };
            if codec == "mjpeg" && line.contains("(attached pic)") {
                return;
            }
            *video_seen = true;
            info.video_codec = Some(codec.to_string());
            if let Some(pf) = parts.get(1) {
                let name: String = pf.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '_').collect();
                if !name.is_empty() {
                    info.pix_fmt = Some(name);
                }
            }
            for part in &parts[1..] {
                let first = part.split_whitespace().next().unwrap_or("");
                if let Some((w, h)) = first.split_once('x') {
                    if let (Ok(w), Ok(h)) = (w.parse::<u32>(), h.parse::<u32>()) {
                        if info.width == 0 && w > 0 && h > 0 && !first.starts_with("0x") {
                            info.width = w;
                            info.height = h;
                        }
                    }
                }
                let mut words = part.split_whitespace();
                if let (Some(num), Some(unit)) = (words.next(), words.next()) {
                    match unit {
                        "fps" => info.fps = parse_rate(num),
                        "tbr" if info.fps.is_none() => info.fps = parse_rate(num),
                        "tbn" => info.timescale = parse_rate(num).map(|v| v.round() as u32),
                        _ => {}
                    }
                }
            }
        }
        _ => {}
    }
}

fn parse_rate(s: &str) -> Option<f64> {
    if let Some(k) = s.strip_suffix('k') {
        return k.parse::<f64>().ok().map(|v| v * 1000.0);
    }
    s.parse().ok()
}

/// Split on commas that are not nested in parentheses or brackets.
fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(s[start..].trim());
    parts
}
