use std::io::Write;
use std::path::{Path, PathBuf};

use super::plan::{ActionKind, PlanAction};
use super::{probe, temp_sibling, ExecContext, MediaError, MediaInfo, Mode, OutputProfile, ProcessingPlan, TempGuard, VideoCodec};
use crate::interval::SensitiveInterval;
use crate::progress::{ProgressSink, ScaledProgress};
use crate::tool::MediaTool;

// Relative cost of stream-copying a second of video versus re-encoding it.
const COPY_WEIGHT: f64 = 0.05;
// Redaction starts this much before the interval so frames stamped a hair early are caught.
const REDACT_LEAD_S: f64 = 1e-3;

/// Filter that destroys every frame whose timestamp lies in one of `intervals`
/// (times relative to the filter input). Box blur with a kernel of at least one
/// eighth of the larger frame dimension, or a solid grey fill when the tool has
/// no `boxblur`. `None` when there is nothing to redact.
pub fn redact_filter(tool: &MediaTool, width: u32, height: u32, intervals: &[SensitiveInterval]) -> Option<String> {
    if intervals.is_empty() {
        return None;
    }
    let enable = intervals
        .iter()
        .map(|iv| format!("gte(t,{:.6})*lt(t,{:.6})", (iv.start_s - REDACT_LEAD_S).max(0.0), iv.end_s))
        .collect::<Vec<_>>()
        .join("+");
    if tool.has_filter("boxblur") {
        // Kernel 2r+1 >= max(w,h)/8; radii are capped by what boxblur accepts per plane.
        let kernel = width.max(height).div_ceil(8);
        let luma = kernel.div_ceil(2).min(width.min(height) / 2).max(1);
        let chroma = luma.div_ceil(2).min(width.min(height) / 4).max(1);
        Some(format!(
            "boxblur=luma_radius={luma}:luma_power=3:chroma_radius={chroma}:chroma_power=3:enable='{enable}'"
        ))
    } else {
        Some(format!("drawbox=x=0:y=0:w=iw:h=ih:color=gray:t=fill:enable='{enable}'"))
    }
}

/// Realise `plan` on `input`, writing an MP4 to `output`.
///
/// Copy spans are stream-copied packet for packet; re-encode spans are encoded
/// with parameters matching the source (fast mode) or `profile` (advanced mode)
/// and carry the redaction filter. Partial files never survive a failure or a
/// cancellation.
pub fn execute_plan(
    tool: &MediaTool,
    input: &Path,
    plan: &ProcessingPlan,
    profile: &OutputProfile,
    output: &Path,
    ctx: ExecContext<'_>,
) -> Result<PathBuf, MediaError> {
    profile.validate()?;
    let info = probe(tool, input)?;
    plan.validate(&info)?;
    ctx.check_cancel()?;
    ctx.report(0.0);

    let tmp = TempGuard::new(temp_sibling(output));
    match plan.mode {
        Mode::Advanced => {
            let action = &plan.actions[0];
            let scaled = ctx.progress.map(|p| ScaledProgress::new(p, 0.0, 99.0));
            encode_full(tool, input, &info, profile, &action.redact, tmp.path(), ctx, scaled.as_ref().map(|s| s as &dyn ProgressSink))?;
        }
        Mode::Fast => execute_fast(tool, input, &info, plan, profile, tmp.path(), ctx)?,
    }
    ctx.check_cancel()?;
    tmp.commit(output)?;
    ctx.report(100.0);
    Ok(output.to_path_buf())
}

fn audio_args(profile: &OutputProfile, info: &MediaInfo, reencode: bool) -> Vec<&'static str> {
    if profile.drop_audio || !info.has_audio {
        vec!["-an"]
    } else if reencode {
        vec!["-map", "0:a?", "-c:a", "aac"]
    } else {
        vec!["-map", "0:a?", "-c:a", "copy"]
    }
}

#[allow(clippy::too_many_arguments)]
fn encode_full(
    tool: &MediaTool,
    input: &Path,
    info: &MediaInfo,
    profile: &OutputProfile,
    redact: &[SensitiveInterval],
    out: &Path,
    ctx: ExecContext<'_>,
    progress: Option<&dyn ProgressSink>,
) -> Result<(), MediaError> {
    let (w, h) = (profile.width, profile.height);
    let mut chain = vec![
        format!("scale={w}:{h}:force_original_aspect_ratio=decrease"),
        format!("pad={w}:{h}:(ow-iw)/2:(oh-ih)/2"),
        "setsar=1".to_string(),
        format!("fps={}", profile.fps),
        "format=yuv420p".to_string(),
    ];
    if let Some(f) = redact_filter(tool, w, h, redact) {
        chain.push(f);
    }
    let report = |frac: f64| {
        if let Some(p) = progress {
            p.report(frac * 100.0);
        }
    };
    tool.command()
        .args(["-y", "-v", "error", "-i"])
        .arg(input)
        .args(["-map", "0:v:0", "-vf", &chain.join(",")])
        .args(profile.video_codec.encoder_args(profile.quality))
        .args(audio_args(profile, info, true))
        .args(["-map_metadata", "-1", "-movflags", "+faststart", "-f", "mp4"])
        .arg(out)
        .cancel(ctx.cancel)
        .log(ctx.log)
        .progress(info.duration_s, &report)
        .run()?;
    Ok(())
}

/// Encoder settings that reproduce the source stream closely enough for the
/// parts to be concatenated by stream copy.
fn matching_encoder(info: &MediaInfo) -> Result<Vec<String>, MediaError> {
    let codec = VideoCodec::from_probe_name(&info.video_codec)
        .ok_or_else(|| MediaError::UnsupportedCodec(info.video_codec.clone()))?;
    let mut args = codec.encoder_args(super::FAST_SPAN_QUALITY);
    let gop = keyframe_interval_frames(info);
    args.extend(["-g".into(), gop.to_string()]);
    args.extend(["-pix_fmt".into(), info.pix_fmt.clone().unwrap_or_else(|| "yuv420p".into())]);
    if let Some(ts) = info.timescale {
        args.extend(["-video_track_timescale".into(), ts.to_string()]);
    }
    args.extend(["-fps_mode".into(), "passthrough".into()]);
    Ok(args)
}

fn keyframe_interval_frames(info: &MediaInfo) -> u32 {
    let k = &info.keyframe_times_s;
    if k.len() < 2 {
        return (info.fps * 2.0).round().max(1.0) as u32;
    }
    let mut gaps: Vec<f64> = k.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    (gaps[gaps.len() / 2] * info.fps).round().clamp(1.0, 600.0) as u32
}

fn execute_fast(
    tool: &MediaTool,
    input: &Path,
    info: &MediaInfo,
    plan: &ProcessingPlan,
    profile: &OutputProfile,
    out: &Path,
    ctx: ExecContext<'_>,
) -> Result<(), MediaError> {
    let weight = |a: &PlanAction| match a.kind {
        ActionKind::CopySpan => a.duration() * COPY_WEIGHT,
        ActionKind::ReencodeSpan => a.duration(),
    };
    let total: f64 = plan.actions.iter().map(weight).sum::<f64>().max(1e-9);
    let encoder = matching_encoder(info);

    if let [only] = plan.actions.as_slice() {
        return match only.kind {
            ActionKind::CopySpan => {
                tool.command()
                    .args(["-y", "-v", "error", "-i"])
                    .arg(input)
                    .args(["-map", "0:v:0", "-c:v", "copy"])
                    .args(audio_args(profile, info, false))
                    .args(["-map_metadata", "-1", "-f", "mp4"])
                    .arg(out)
                    .cancel(ctx.cancel)
                    .log(ctx.log)
                    .run()?;
                Ok(())
            }
            ActionKind::ReencodeSpan => encode_part(tool, input, info, &encoder?, &only.redact, 0.0, profile, out, ctx, 0.0, 99.0),
        };
    }
    let encoder = if plan.actions.iter().any(|a| a.kind == ActionKind::ReencodeSpan) { Some(encoder?) } else { None };

    let workdir = TempGuard::new(out.with_extension("parts"));
    std::fs::create_dir_all(workdir.path()).map_err(|e| MediaError::io(workdir.path(), e))?;

    // One stream-copied part per action; cuts sit exactly on keyframes, so the
    // segment muxer splits at precisely these boundaries.
    let cuts: Vec<String> = plan.actions[1..].iter().map(|a| format!("{:.6}", (a.start_s - 1e-3).max(0.0))).collect();
    let pattern = workdir.path().join("part%04d.mp4");
    tool.command()
        .args(["-y", "-v", "error", "-i"])
        .arg(input)
        .args(["-map", "0:v:0", "-c:v", "copy"])
        .args(audio_args(profile, info, false))
        .args(["-map_metadata", "-1", "-f", "segment", "-segment_format", "mp4", "-reset_timestamps", "1"])
        .args(["-segment_times", &cuts.join(",")])
        .arg(&pattern)
        .cancel(ctx.cancel)
        .log(ctx.log)
        .run()?;
    let parts: Vec<PathBuf> = (0..plan.actions.len()).map(|i| workdir.path().join(format!("part{i:04}.mp4"))).collect();
    if let Some(missing) = parts.iter().position(|p| !p.is_file()) {
        return Err(MediaError::ToolFailure(format!(
            "splitting produced {missing} parts, plan has {} actions",
            plan.actions.len()
        )));
    }
    if workdir.path().join(format!("part{:04}.mp4", plan.actions.len())).exists() {
        return Err(MediaError::ToolFailure("splitting produced more parts than planned".into()));
    }

    let mut done = 0.0;
    let mut list = String::new();
    for (i, (action, part)) in plan.actions.iter().zip(&parts).enumerate() {
        ctx.check_cancel()?;
        let lo = 99.0 * done / total;
        let hi = 99.0 * (done + weight(action)) / total;
        let piece = match action.kind {
            ActionKind::CopySpan => part.clone(),
            ActionKind::ReencodeSpan => {
                let re = workdir.path().join(format!("re{i:04}.mp4"));
                let encoder = encoder.as_ref().expect("computed when any re-encode exists");
                encode_part(tool, part, info, encoder, &action.redact, action.start_s, profile, &re, ctx, lo, hi)?;
                re
            }
        };
        ctx.report(hi);
        done += weight(action);
        list.push_str(&format!("file '{}'\n", piece.display().to_string().replace('\'', r"'\''")));
    }

    let list_path = workdir.path().join("concat.txt");
    let mut f = std::fs::File::create(&list_path).map_err(|e| MediaError::io(&list_path, e))?;
    f.write_all(list.as_bytes()).map_err(|e| MediaError::io(&list_path, e))?;
    drop(f);
    ctx.check_cancel()?;
    tool.command()
        .args(["-y", "-v", "error", "-f", "concat", "-safe", "0", "-i"])
        .arg(&list_path)
        .args(["-map", "0", "-c", "copy", "-map_metadata", "-1", "-movflags", "+faststart", "-f", "mp4"])
        .arg(out)
        .cancel(ctx.cancel)
        .log(ctx.log)
        .run()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn encode_part(
    tool: &MediaTool,
    part: &Path,
    info: &MediaInfo,
    encoder: &[String],
    redact: &[SensitiveInterval],
    offset_s: f64,
    profile: &OutputProfile,
    out: &Path,
    ctx: ExecContext<'_>,
    lo: f64,
    hi: f64,
) -> Result<(), MediaError> {
    let relative: Vec<SensitiveInterval> = redact
        .iter()
        .map(|iv| SensitiveInterval { start_s: iv.start_s - offset_s, end_s: iv.end_s - offset_s, ..*iv })
        .collect();
    let span = relative.iter().map(|r| r.end_s).fold(0.0, f64::max).max(1e-3);
    let report = |frac: f64| ctx.report(lo + (hi - lo) * frac);
    let mut cmd = tool.command().args(["-y", "-v", "error", "-i"]).arg(part).args(["-map", "0:v:0"]);
    if let Some(f) = redact_filter(tool, info.width, info.height, &relative) {
        cmd = cmd.args(["-vf", &f]);
    }
    cmd.args(encoder)
        .args(audio_args(profile, info, false))
        .args(["-map_metadata", "-1", "-f", "mp4"])
        .arg(out)
        .cancel(ctx.cancel)
        .log(ctx.log)
        .progress(span, &report)
        .run()?;
    Ok(())
}
