use serde::Serialize;

use crate::ids::{DeviceId, SimTime};
use crate::kernel::node::{Leg, NodeEvent};
use crate::ssid::Ssid;

/// One line of the JSON-lines trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub device: DeviceId,
    #[serde(flatten)]
    pub event: TraceEvent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum TraceEvent {
    World(WorldEvent),
    Node(NodeEvent),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorldEvent {
    Script {
        action: String,
        corr: Option<u64>,
        detail: String,
    },
    Arrive,
    Depart {
        silent: bool,
    },
    Scan {
        visible: Vec<Ssid>,
    },
    HotspotUp {
        ssid: Ssid,
    },
    HotspotDown {
        ssid: Ssid,
    },
    Associate {
        ssid: Ssid,
        ok: bool,
    },
    FrameSent {
        frame: &'static str,
        to: String,
        corr: u64,
        bytes: usize,
        data_bytes: usize,
    },
    FrameDropped {
        frame: &'static str,
        to: String,
        corr: u64,
        reason: &'static str,
    },
    FrameDelivered {
        frame: &'static str,
        from: DeviceId,
        corr: u64,
    },
    HopStart {
        target: Ssid,
        leg: Leg,
        corr: u64,
    },
    HopRefused {
        target: Ssid,
        leg: Leg,
        corr: u64,
    },
    HopComplete {
        target: Ssid,
        leg: Leg,
        corr: u64,
        arrived: bool,
    },
    Disconnected {
        ssid: Ssid,
    },
    Link {
        peer: DeviceId,
        on: bool,
    },
}

impl TraceRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}

/// Renders a trace as JSON lines.
pub fn to_jsonl(trace: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in trace {
        out.push_str(&r.to_json());
        out.push('\n');
    }
    out
}
