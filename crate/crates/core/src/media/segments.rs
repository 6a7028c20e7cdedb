use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use super::MediaError;

/// Container extensions accepted as input segments.
pub const VIDEO_EXTENSIONS: [&str; 4] = ["mp4", "avi", "mov", "mkv"];

pub fn is_video_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| VIDEO_EXTENSIONS.iter().any(|v| e.eq_ignore_ascii_case(v)))
}

/// Recognised video files directly inside `dir`, in natural filename order.
pub fn discover_segments(dir: &Path) -> Result<Vec<PathBuf>, MediaError> {
    let entries = std::fs::read_dir(dir).map_err(|e| MediaError::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| is_video_file(p))
        .collect();
    files.sort_by(|a, b| {
        let an = a.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
        let bn = b.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
        natural_cmp(&an, &bn)
    });
    Ok(files)
}

/// Lexicographic comparison where runs of ASCII digits compare by numeric value,
/// so `file_2` sorts before `file_10`.
/// Letters compare case-insensitively; case only breaks otherwise exact ties.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    natural_cmp_folded(a.as_bytes(), b.as_bytes()).then_with(|| a.cmp(b))
}

fn natural_cmp_folded(mut a: &[u8], mut b: &[u8]) -> Ordering {
    loop {
        match (a.first(), b.first()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let an = a.iter().take_while(|c| c.is_ascii_digit()).count();
                let bn = b.iter().take_while(|c| c.is_ascii_digit()).count();
                let (ad, bd) = (&a[..an], &b[..bn]);
                let at = trim_zeros(ad);
                let bt = trim_zeros(bd);
                let ord = at.len().cmp(&bt.len()).then_with(|| at.cmp(bt)).then_with(|| an.cmp(&bn));
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[an..];
                b = &b[bn..];
            }
            (Some(x), Some(y)) => {
                let ord = x.to_ascii_lowercase().cmp(&y.to_ascii_lowercase());
                if ord != Ordering::Equal {
                    return ord;
                }
                a = &a[1..];
                b = &b[1..];
            }
        }
    }
}

fn trim_zeros(d: &[u8]) -> &[u8] {
    let z = d.iter().take_while(|c| **c == b'0').count();
    &d[z.min(d.len().saturating_sub(1))..]
}
