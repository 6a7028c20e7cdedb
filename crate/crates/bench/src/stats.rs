use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vidpriv_core::Mode;

use crate::record::{parse_video_duration, BenchRecord};
use crate::BenchError;

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 0x5eed_0001;
const MIN_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineRatio {
    pub machine: String,
    /// Mean Advanced time over mean Fast time.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoGmr {
    pub video: String,
    pub machines: Vec<MachineRatio>,
    /// Geometric mean of the per-machine ratios.
    pub gmr: f64,
    pub percent_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmrSummary {
    /// Ordered by video duration.
    pub per_video: Vec<VideoGmr>,
    /// Per machine, summed mean Advanced time over summed mean Fast time
    /// across all videos.
    pub pooled: Vec<MachineRatio>,
    /// Geometric mean of the pooled per-machine ratios.
    pub overall_gmr: f64,
    pub overall_percent_difference: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiUnit {
    /// Pooled per-machine ratios were resampled.
    Machines,
    /// Only one machine: per-video ratios were resampled.
    Videos,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    pub unit: CiUnit,
    pub resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub gmr: GmrSummary,
    /// `None` when fewer than two values are available to resample.
    pub ci: Option<BootstrapCi>,
}

pub fn geometric_mean(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sort key for video labels: by duration, unparseable labels last.
pub(crate) fn video_key(label: &str) -> (u64, String) {
    let d = parse_video_duration(label).map_or(u64::MAX, |d| (d * 1000.0).round() as u64);
    (d, label.to_string())
}

type Means = BTreeMap<(u64, String), BTreeMap<String, [Option<f64>; 2]>>;

fn slot(mode: Mode) -> usize {
    match mode {
        Mode::Advanced => 0,
        Mode::Fast => 1,
    }
}

/// Mean wall time per video, machine and mode.
fn condition_means(records: &[BenchRecord]) -> Means {
    let mut times: BTreeMap<(u64, String), BTreeMap<String, [Vec<f64>; 2]>> = BTreeMap::new();
    for r in records {
        times.entry(video_key(&r.video)).or_default().entry(r.machine.clone()).or_default()[slot(r.mode)].push(r.wall_time_s);
    }
    times
        .into_iter()
        .map(|(v, machines)| {
            let m = machines
                .into_iter()
                .map(|(name, [adv, fast])| {
                    let f = |xs: Vec<f64>| (!xs.is_empty()).then(|| mean(&xs));
                    (name, [f(adv), f(fast)])
                })
                .collect();
            (v, m)
        })
        .collect()
}

/// Advanced/Fast ratios per video and overall.
pub fn compute_gmr(records: &[BenchRecord]) -> Result<GmrSummary, BenchError> {
    if records.is_empty() {
        return Err(BenchError::Empty);
    }
    for r in records {
        r.validate()?;
    }
    let means = condition_means(records);
    let mut per_video = Vec::new();
    let mut sums: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for ((_, video), machines) in &means {
        let mut ratios = Vec::new();
        for (machine, [adv, fast]) in machines {
            let missing = |missing| BenchError::MissingPair { machine: machine.clone(), video: video.clone(), missing };
            let adv = adv.ok_or_else(|| missing(Mode::Advanced))?;
            let fast = fast.ok_or_else(|| missing(Mode::Fast))?;
            let s = sums.entry(machine.clone()).or_default();
            s.0 += adv;
            s.1 += fast;
            ratios.push(MachineRatio { machine: machine.clone(), ratio: adv / fast });
        }
        let gmr = geometric_mean(&ratios.iter().map(|r| r.ratio).collect::<Vec<_>>());
        per_video.push(VideoGmr { video: video.clone(), machines: ratios, gmr, percent_difference: (gmr - 1.0) * 100.0 });
    }
    let pooled: Vec<MachineRatio> =
        sums.into_iter().map(|(machine, (adv, fast))| MachineRatio { machine, ratio: adv / fast }).collect();
    let overall_gmr = geometric_mean(&pooled.iter().map(|r| r.ratio).collect::<Vec<_>>());
    Ok(GmrSummary { per_video, pooled, overall_gmr, overall_percent_difference: (overall_gmr - 1.0) * 100.0 })
}

/// Percentile bootstrap 95% interval of the geometric mean of `values`.
pub fn bootstrap_ci(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64), BenchError> {
    if values.len() < 2 {
        return Err(BenchError::TooFewSamples { needed: 2, got: values.len() });
    }
    if resamples < MIN_RESAMPLES {
        return Err(BenchError::TooFewResamples { needed: MIN_RESAMPLES, got: resamples });
    }
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = logs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<f64> = (0..resamples)
        .map(|_| ((0..n).map(|_| logs[rng.gen_range(0..n)]).sum::<f64>() / n as f64).exp())
        .collect();
    draws.sort_by(f64::total_cmp);
    Ok((percentile(&draws, 2.5), percentile(&draws, 97.5)))
}

/// Linear interpolation between closest ranks of sorted `xs`.
fn percentile(xs: &[f64], p: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * p / 100.0;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (h - lo as f64)
}

/// GMRs plus a bootstrap interval for the overall one.
pub fn compute_stats(records: &[BenchRecord], resamples: usize, seed: u64) -> Result<BenchStats, BenchError> {
    let gmr = compute_gmr(records)?;
    let (unit, values): (CiUnit, Vec<f64>) = if gmr.pooled.len() >= 2 {
        (CiUnit::Machines, gmr.pooled.iter().map(|m| m.ratio).collect())
    } else {
        (CiUnit::Videos, gmr.per_video.iter().map(|v| v.gmr).collect())
    };
    let ci = match bootstrap_ci(&values, resamples, seed) {
        Ok((low, high)) => Some(BootstrapCi { low, high, unit, resamples, seed }),
        Err(BenchError::TooFewSamples { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(BenchStats { gmr, ci })
}
