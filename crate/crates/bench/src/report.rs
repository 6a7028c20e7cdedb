use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vidpriv_core::Mode;

use crate::record::{parse_video_duration, BenchRecord};
use crate::run::FailedRep;
use crate::stats::{mean, video_key, BenchStats, CiUnit};
use crate::{io_err, BenchError};

pub const SUMMARY_HEADER: &str = "machine,mode,video,n,mean_s,sd_s,speedup_x";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchReport {
    pub markdown: String,
    /// One row per machine, mode and video.
    pub csv: String,
}

struct Condition {
    machine: String,
    mode: Mode,
    video: String,
    n: usize,
    mean: f64,
    sd: f64,
    speedup: Option<f64>,
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn conditions(records: &[BenchRecord]) -> Vec<Condition> {
    let mut groups: BTreeMap<(String, u8, (u64, String)), Vec<f64>> = BTreeMap::new();
    for r in records {
        let mode_rank = match r.mode {
            Mode::Advanced => 0,
            Mode::Fast => 1,
        };
        groups.entry((r.machine.clone(), mode_rank, video_key(&r.video))).or_default().push(r.wall_time_s);
    }
    groups
        .into_iter()
        .map(|((machine, rank, (_, video)), times)| {
            let m = mean(&times);
            Condition {
                speedup: parse_video_duration(&video).map(|d| d / m),
                machine,
                mode: if rank == 0 { Mode::Advanced } else { Mode::Fast },
                video,
                n: times.len(),
                mean: m,
                sd: sample_sd(&times),
            }
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

/// Render the summary tables. Output depends only on the inputs.
pub fn emit_report(records: &[BenchRecord], stats: &BenchStats, failures: &[FailedRep]) -> Result<BenchReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    let conds = conditions(records);
    let mut md = String::new();
    let mut csv = format!("{SUMMARY_HEADER}\n");

    md.push_str("# Fast vs Advanced processing benchmark\n\n");
    md.push_str("## Summary statistics\n\n");
    md.push_str("| Machine | Mode | Video | n | Mean ± SD (s) | Speed-up (× realtime) |\n");
    md.push_str("|---|---|---|---:|---:|---:|\n");
    for c in &conds {
        let speed = c.speedup.map_or("n/a".to_string(), |s| format!("{s:.2}×"));
        let _ = writeln!(md, "| {} | {} | {} | {} | {:.1} ± {:.1} | {speed} |", md_cell(&c.machine), c.mode, md_cell(&c.video), c.n, c.mean, c.sd);
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6},{:.6},{}",
            csv_field(&c.machine),
            c.mode,
            csv_field(&c.video),
            c.n,
            c.mean,
            c.sd,
            c.speedup.map_or(String::new(), |s| format!("{s:.6}"))
        );
    }

    let g = &stats.gmr;
    md.push_str("\n## Paired comparisons (Advanced vs Fast) by video\n\n");
    md.push_str("| Video | n | GMR (Adv/Fast) | % Difference |\n");
    md.push_str("|---|---:|---:|---:|\n");
    for v in &g.per_video {
        let _ = writeln!(md, "| {} | {} | {:.6} | {:+.6}% |", md_cell(&v.video), v.machines.len(), v.gmr, v.percent_difference);
    }
    let _ = writeln!(md, "| Overall | {} | {:.6} | {:+.6}% |", g.pooled.len(), g.overall_gmr, g.overall_percent_difference);
    md.push('\n');
    match &stats.ci {
        Some(ci) => {
            let unit = match ci.unit {
                CiUnit::Machines => "per-machine pooled ratios",
                CiUnit::Videos => "per-video ratios",
            };
            let _ = writeln!(
                md,
                "Bootstrap 95% CI (Overall GMR): [{:.3}, {:.3}] ({} resamples of {unit}, seed {})",
                ci.low, ci.high, ci.resamples, ci.seed
            );
        }
        None => md.push_str("Bootstrap 95% CI (Overall GMR): n/a (fewer than two ratios to resample)\n"),
    }

    md.push_str("\n## Per-machine pooled ratios\n\n");
    md.push_str("| Machine | Σ Advanced / Σ Fast |\n|---|---:|\n");
    for m in &g.pooled {
        let _ = writeln!(md, "| {} | {:.6} |", md_cell(&m.machine), m.ratio);
    }

    md.push_str("\n## Failed repetitions\n\n");
    if failures.is_empty() {
        md.push_str("None.\n");
    } else {
        md.push_str("| Machine | Mode | Video | Rep | Reason |\n|---|---|---|---:|---|\n");
        for f in failures {
            let _ = writeln!(md, "| {} | {} | {} | {} | {} |", md_cell(&f.machine), f.mode, md_cell(&f.video), f.rep, md_cell(&f.reason));
        }
    }
    Ok(BenchReport { markdown: md, csv })
}

/// Write `bench_report.md` and `bench_summary.csv` into `dir`.
pub fn write_report(report: &BenchReport, dir: &Path) -> Result<(PathBuf, PathBuf), BenchError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let md = dir.join("bench_report.md");
    let csv = dir.join("bench_summary.csv");
    std::fs::write(&md, &report.markdown).map_err(io_err(&md))?;
    std::fs::write(&csv, &report.csv).map_err(io_err(&csv))?;
    Ok((md, csv))
}
