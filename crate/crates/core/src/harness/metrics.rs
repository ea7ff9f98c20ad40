//! Per-download and aggregate measurements, derived from the trace alone.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ids::{DeviceId, FileId, SimTime};
use crate::kernel::node::{Leg, NodeEvent};
use crate::sim::{TraceEvent, TraceRecord, WorldEvent};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DownloadMetrics {
    pub corr: u64,
    pub device: DeviceId,
    pub file: Option<FileId>,
    pub requested_at: SimTime,
    pub success: bool,
    pub failure: Option<String>,
    pub completed_at: Option<SimTime>,
    pub completion_ms: Option<SimTime>,
    pub already_held: bool,
    /// Forward subnet transitions made by couriers for this download.
    pub subnet_hops: u32,
    pub couriers: u32,
    pub frames: u64,
    pub bytes: u64,
    pub data_bytes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CourierCounts {
    pub catalog: u32,
    pub file: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub downloads: Vec<DownloadMetrics>,
    /// `None` when the run has no downloads.
    pub success_rate: Option<f64>,
    pub mean_completion_ms: Option<f64>,
    pub courier_assignments: BTreeMap<DeviceId, CourierCounts>,
    pub frames_total: u64,
    pub bytes_total: u64,
    pub frames_by_kind: BTreeMap<String, u64>,
    pub end_time: SimTime,
}

impl Metrics {
    pub fn from_trace(trace: &[TraceRecord]) -> Self {
        let mut downloads: BTreeMap<u64, DownloadMetrics> = BTreeMap::new();
        let mut assignments: BTreeMap<DeviceId, CourierCounts> = BTreeMap::new();
        let mut frames_by_kind: BTreeMap<String, u64> = BTreeMap::new();
        let (mut frames_total, mut bytes_total) = (0u64, 0u64);

        for r in trace {
            match &r.event {
                TraceEvent::World(WorldEvent::Script {
                    action,
                    corr: Some(corr),
                    detail,
                }) if action == "download" => {
                    let file = detail.split(' ').next().and_then(|h| FileId::from_hex(h).ok());
                    downloads.insert(
                        *corr,
                        DownloadMetrics {
                            corr: *corr,
                            device: r.device,
                            file,
                            requested_at: r.time,
                            success: false,
                            failure: None,
                            completed_at: None,
                            completion_ms: None,
                            already_held: false,
                            subnet_hops: 0,
                            couriers: 0,
                            frames: 0,
                            bytes: 0,
                            data_bytes: 0,
                        },
                    );
                }
                TraceEvent::World(WorldEvent::FrameSent {
                    frame,
                    corr,
                    bytes,
                    data_bytes,
                    ..
                }) => {
                    frames_total += 1;
                    bytes_total += *bytes as u64;
                    *frames_by_kind.entry(frame.to_string()).or_default() += 1;
                    if let Some(d) = downloads.get_mut(corr) {
                        d.frames += 1;
                        d.bytes += *bytes as u64;
                        d.data_bytes += *data_bytes as u64;
                    }
                }
                TraceEvent::World(WorldEvent::HopComplete {
                    leg: Leg::Forward,
                    corr,
                    arrived: true,
                    ..
                }) => {
                    if let Some(d) = downloads.get_mut(corr) {
                        d.subnet_hops += 1;
                    }
                }
                TraceEvent::Node(NodeEvent::CourierOrdered { corr, courier, file, .. }) => {
                    let c = assignments.entry(*courier).or_default();
                    if file.is_some() {
                        c.file += 1;
                    } else {
                        c.catalog += 1;
                    }
                    if let Some(d) = downloads.get_mut(corr) {
                        d.couriers += 1;
                    }
                }
                TraceEvent::Node(NodeEvent::DownloadComplete { corr, already_held, .. }) => {
                    if let Some(d) = downloads.get_mut(corr) {
                        if r.device == d.device && !d.success {
                            d.success = true;
                            d.already_held = *already_held;
                            d.completed_at = Some(r.time);
                            d.completion_ms = Some(r.time - d.requested_at);
                        }
                    }
                }
                TraceEvent::Node(NodeEvent::DownloadFailed { corr, reason, .. }) => {
                    if let Some(d) = downloads.get_mut(corr) {
                        if r.device == d.device && !d.success {
                            d.failure = Some(serde_json::to_value(reason).unwrap().as_str().unwrap_or("").to_string());
                        }
                    }
                }
                _ => {}
            }
        }

        let downloads: Vec<DownloadMetrics> = downloads.into_values().collect();
        let n = downloads.len();
        let ok: Vec<&DownloadMetrics> = downloads.iter().filter(|d| d.success).collect();
        let success_rate = (n > 0).then(|| ok.len() as f64 / n as f64);
        let mean_completion_ms = (!ok.is_empty())
            .then(|| ok.iter().map(|d| d.completion_ms.unwrap() as f64).sum::<f64>() / ok.len() as f64);
        Metrics {
            downloads,
            success_rate,
            mean_completion_ms,
            courier_assignments: assignments,
            frames_total,
            bytes_total,
            frames_by_kind,
            end_time: trace.last().map(|r| r.time).unwrap_or(0),
        }
    }

    pub fn all_downloads_succeeded(&self) -> bool {
        self.downloads.iter().all(|d| d.success)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }

    /// Human-readable summary with the courier fairness table.
    pub fn report(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let rate = match self.success_rate {
            Some(r) => format!("{:.1}%", r * 100.0),
            None => "n/a".to_string(),
        };
        let mean = match self.mean_completion_ms {
            Some(m) => format!("{:.0} ms", m),
            None => "n/a".to_string(),
        };
        writeln!(s, "simulated time   {} ms", self.end_time).unwrap();
        writeln!(s, "frames sent      {} ({} bytes)", self.frames_total, self.bytes_total).unwrap();
        writeln!(s, "downloads        {}", self.downloads.len()).unwrap();
        writeln!(s, "success rate     {rate}").unwrap();
        writeln!(s, "mean completion  {mean}").unwrap();
        if !self.downloads.is_empty() {
            writeln!(s).unwrap();
            writeln!(s, "{:>5} {:>7} {:>12} {:>8} {:>10} {:>5} {:>8} {:>7} {:>10}", "corr", "device", "file", "result", "time(ms)", "hops", "couriers", "frames", "bytes").unwrap();
            for d in &self.downloads {
                let result = if d.success {
                    if d.already_held { "held" } else { "ok" }.to_string()
                } else {
                    d.failure.clone().unwrap_or_else(|| "pending".into())
                };
                writeln!(
                    s,
                    "{:>5} {:>7} {:>12} {:>8} {:>10} {:>5} {:>8} {:>7} {:>10}",
                    d.corr,
                    d.device.0,
                    d.file.map(|f| f.short()).unwrap_or_default(),
                    result,
                    d.completion_ms.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
                    d.subnet_hops,
                    d.couriers,
                    d.frames,
                    d.bytes
                )
                .unwrap();
            }
        }
        if !self.courier_assignments.is_empty() {
            writeln!(s).unwrap();
            writeln!(s, "courier assignments").unwrap();
            writeln!(s, "{:>7} {:>8} {:>6}", "device", "catalog", "file").unwrap();
            for (dev, c) in &self.courier_assignments {
                writeln!(s, "{:>7} {:>8} {:>6}", dev.0, c.catalog, c.file).unwrap();
            }
        }
        s
    }
}
