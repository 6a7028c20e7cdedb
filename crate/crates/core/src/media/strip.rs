use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{probe, temp_sibling, ExecContext, MediaError, TempGuard};
use crate::tool::MediaTool;

/// Tags that carry no information about the recording itself.
///
/// `encoder` is written by the muxer. The MP4 demuxer always synthesises the
/// `ftyp` brand fields and, for each track, the handler and vendor fields of the
/// sample description; those are accepted only with the generic values the
/// muxer writes, so a handler name smuggling free text is still caught.
pub fn is_technical_tag(key: &str, value: &str) -> bool {
    match key {
        "encoder" | "major_brand" | "minor_version" | "compatible_brands" => true,
        "handler_name" => matches!(value, "VideoHandler" | "SoundHandler" | ""),
        "vendor_id" => value == "[0][0][0][0]",
        _ => false,
    }
}

/// Keys of `tags` outside the technical allowlist.
pub fn non_allowlisted_tags(tags: &BTreeMap<String, String>) -> Vec<String> {
    tags.iter().filter(|(k, v)| !is_technical_tag(k, v)).map(|(k, _)| k.clone()).collect()
}

/// Remux `input` into `output` with all container, stream and chapter
/// metadata removed. Streams are copied, never re-encoded; only the first video
/// stream (and, if `keep_audio`, audio streams) survive.
pub fn strip_metadata(
    tool: &MediaTool,
    input: &Path,
    output: &Path,
    keep_audio: bool,
    ctx: ExecContext<'_>,
) -> Result<PathBuf, MediaError> {
    let info = probe(tool, input)?;
    let tmp = TempGuard::new(temp_sibling(output));
    let mut cmd = tool.command().args(["-y", "-v", "error", "-i"]).arg(input).args(["-map", "0:v:0"]);
    cmd = if keep_audio && info.has_audio { cmd.args(["-map", "0:a?"]) } else { cmd.arg("-an") };
    cmd.args(["-sn", "-dn", "-c", "copy"])
        .args(["-map_metadata", "-1", "-map_metadata:s", "-1", "-map_chapters", "-1"])
        .args(["-metadata:s:v", "language=und", "-metadata:s:a", "language=und"])
        .args(["-fflags", "+bitexact", "-flags:v", "+bitexact", "-flags:a", "+bitexact"])
        .args(["-movflags", "+faststart", "-f", "mp4"])
        .arg(tmp.path())
        .cancel(ctx.cancel)
        .log(ctx.log)
        .run()?;
    ctx.check_cancel()?;
    tmp.commit(output)?;
    ctx.report(100.0);
    Ok(output.to_path_buf())
}
