//! Hardware summary gathered from local OS facilities only.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub cpu_model: String,
    pub logical_cpus: usize,
    pub physical_cores: usize,
    pub memory_mb: Option<u64>,
}

impl MachineInfo {
    pub fn detect() -> Self {
        let logical_cpus = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let cpuinfo = std::fs::read_to_string("/proc/cpuinfo").unwrap_or_default();
        let meminfo = std::fs::read_to_string("/proc/meminfo").unwrap_or_default();
        let (cpu_model, physical) = parse_cpuinfo(&cpuinfo);
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpu_model: cpu_model.unwrap_or_else(|| "unknown cpu".into()),
            logical_cpus,
            physical_cores: physical.unwrap_or(logical_cpus).clamp(1, logical_cpus.max(1)),
            memory_mb: parse_meminfo(&meminfo),
        }
    }

    /// Short identifier used as the machine column of benchmark records.
    pub fn label(&self) -> String {
        format!("{}-{}-{}c", self.os, self.arch, self.logical_cpus)
    }

    pub fn summary(&self) -> String {
        let mem = self.memory_mb.map(|m| format!(", {m} MB RAM")).unwrap_or_default();
        format!(
            "{} {} / {} ({} physical cores, {} logical){mem}",
            self.os, self.arch, self.cpu_model, self.physical_cores, self.logical_cpus
        )
    }

    /// Default worker pool size: half the physical cores, at least one.
    pub fn default_workers(&self) -> usize {
        (self.physical_cores / 2).max(1)
    }
}

fn parse_cpuinfo(text: &str) -> (Option<String>, Option<usize>) {
    let mut model = None;
    let mut cores = BTreeSet::new();
    let mut phys = String::new();
    for line in text.lines() {
        let Some((k, v)) = line.split_once(':') else { continue };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "model name" | "Hardware" if model.is_none() => model = Some(v.to_string()),
            "physical id" => phys = v.to_string(),
            "core id" => {
                cores.insert((phys.clone(), v.to_string()));
            }
            _ => {}
        }
    }
    (model, (!cores.is_empty()).then_some(cores.len()))
}

fn parse_meminfo(text: &str) -> Option<u64> {
    let line = text.lines().find(|l| l.starts_with("MemTotal:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024)
}
