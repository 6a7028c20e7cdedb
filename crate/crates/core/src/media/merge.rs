use std::io::Write;
use std::path::{Path, PathBuf};

use super::{probe, temp_sibling, ExecContext, MediaError, MediaInfo, OutputProfile, TempGuard};
use crate::tool::MediaTool;

/// Join `segments` (in the given order) into one MP4 conforming to `profile`.
///
/// When every segment already matches the profile the streams are joined with
/// the concat demuxer and stream copy; otherwise each segment is scaled, padded
/// and resampled to the profile and re-encoded in one pass.
pub fn merge_segments(
    tool: &MediaTool,
    segments: &[PathBuf],
    profile: &OutputProfile,
    output: &Path,
    ctx: ExecContext<'_>,
) -> Result<PathBuf, MediaError> {
    if segments.is_empty() {
        return Err(MediaError::NoSegments);
    }
    profile.validate()?;
    let infos: Vec<MediaInfo> = segments
        .iter()
        .enumerate()
        .map(|(index, p)| {
            ctx.check_cancel()?;
            probe(tool, p).map_err(|e| match e {
                MediaError::Cancelled => e,
                _ => MediaError::SegmentUnreadable { index },
            })
        })
        .collect::<Result<_, _>>()?;
    ctx.report(5.0);

    let keep_audio = !profile.drop_audio && infos.iter().all(|i| i.has_audio);
    let expected: f64 = infos.iter().map(|i| i.duration_s).sum();
    let tmp = TempGuard::new(temp_sibling(output));
    let report = |frac: f64| ctx.report(5.0 + 90.0 * frac);

    if infos.iter().all(|i| profile.matches(i)) {
        let list = tmp.path().with_extension("txt");
        let _list_guard = TempGuard::new(list.clone());
        let mut f = std::fs::File::create(&list).map_err(|e| MediaError::io(&list, e))?;
        for seg in segments {
            let abs = std::path::absolute(seg).map_err(|e| MediaError::io(seg, e))?;
            writeln!(f, "file '{}'", abs.display().to_string().replace('\'', r"'\''"))
                .map_err(|e| MediaError::io(&list, e))?;
        }
        drop(f);
        let mut cmd = tool
            .command()
            .args(["-y", "-v", "error", "-f", "concat", "-safe", "0", "-i"])
            .arg(&list)
            .args(["-map", "0:v:0", "-c:v", "copy"]);
        cmd = if keep_audio { cmd.args(["-map", "0:a?", "-c:a", "copy"]) } else { cmd.arg("-an") };
        cmd.args(["-map_metadata", "-1", "-f", "mp4"])
            .arg(tmp.path())
            .cancel(ctx.cancel)
            .log(ctx.log)
            .progress(expected, &report)
            .run()?;
    } else {
        let (w, h, fps) = (profile.width, profile.height, profile.fps);
        let mut cmd = tool.command().args(["-y", "-v", "error"]);
        for seg in segments {
            cmd = cmd.arg("-i").arg(seg);
        }
        let mut graph = String::new();
        for i in 0..segments.len() {
            graph.push_str(&format!(
                "[{i}:v:0]scale={w}:{h}:force_original_aspect_ratio=decrease,pad={w}:{h}:(ow-iw)/2:(oh-ih)/2,setsar=1,fps={fps},format=yuv420p[v{i}];"
            ));
            if keep_audio {
                graph.push_str(&format!("[{i}:a:0]aresample=48000,aformat=channel_layouts=stereo[a{i}];"));
            }
        }
        for i in 0..segments.len() {
            graph.push_str(&format!("[v{i}]"));
            if keep_audio {
                graph.push_str(&format!("[a{i}]"));
            }
        }
        graph.push_str(&format!("concat=n={}:v=1:a={}[v]", segments.len(), u8::from(keep_audio)));
        if keep_audio {
            graph.push_str("[a]");
        }
        cmd = cmd.args(["-filter_complex", &graph, "-map", "[v]"]);
        cmd = if keep_audio { cmd.args(["-map", "[a]", "-c:a", "aac"]) } else { cmd.arg("-an") };
        cmd.args(profile.video_codec.encoder_args(profile.quality))
            .args(["-map_metadata", "-1", "-f", "mp4"])
            .arg(tmp.path())
            .cancel(ctx.cancel)
            .log(ctx.log)
            .progress(expected, &report)
            .run()?;
    }
    ctx.check_cancel()?;

    let merged = probe(tool, tmp.path())?;
    let slack = 0.2 + segments.len() as f64 / profile.fps;
    if (merged.duration_s - expected).abs() > slack {
        return Err(MediaError::ToolFailure(format!(
            "merged duration {:.3}s differs from segment total {:.3}s by more than {:.3}s",
            merged.duration_s, expected, slack
        )));
    }
    tmp.commit(output)?;
    ctx.report(100.0);
    Ok(output.to_path_buf())
}
