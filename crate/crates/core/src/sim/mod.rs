//! Deterministic discrete-event radio environment.
//!
//! Devices are [`Node`]s; the world decides who can see whom, which hotspot
//! each device is attached to, and when frames, timers and hops land. Frames
//! only travel inside one hotspot. Everything is ordered by `(time, seq)` so a
//! seed fully determines a run.

pub mod trace;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bytes::Bytes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ids::{DeviceId, FileId, SimTime};
use crate::kernel::frame::{Destination, Frame, Payload, Query, BlockPayload};
use crate::kernel::node::{Input, Leg, Node, Output, Role, Timer, UserRequest};
use crate::kernel::wire::{decode_frame, encode_frame};
use crate::params::Params;
use crate::ssid::Ssid;
pub use trace::{to_jsonl, TraceEvent, TraceRecord, WorldEvent};

#[derive(Clone, Debug, PartialEq, Eq)]
enum Event {
    Input { device: DeviceId, input: Input },
    Scan { device: DeviceId },
    Deliver { to: DeviceId, hotspot: Ssid, bytes: Bytes },
    Timer { device: DeviceId, timer: Timer },
    HopComplete { device: DeviceId, target: Ssid, leg: Leg, corr: u64 },
    Link { a: DeviceId, b: DeviceId, on: bool },
}

/// Invariant breaches seen during a run; all zero in a correct run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Violations {
    pub over_capacity: u32,
    pub cross_subnet_blocks: u32,
}

pub struct World {
    params: Params,
    now: SimTime,
    seq: u64,
    queue: BTreeMap<(SimTime, u64), Event>,
    nodes: BTreeMap<DeviceId, Node>,
    visible: BTreeSet<(DeviceId, DeviceId)>,
    attached: BTreeMap<DeviceId, Ssid>,
    hosting: BTreeMap<DeviceId, Ssid>,
    rng: ChaCha8Rng,
    trace: Vec<TraceRecord>,
    next_corr: u64,
    violations: Violations,
    max_members_seen: usize,
}

impl World {
    pub fn new(params: Params, seed: u64) -> Self {
        World {
            params,
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            nodes: BTreeMap::new(),
            visible: BTreeSet::new(),
            attached: BTreeMap::new(),
            hosting: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
            next_corr: 1,
            violations: Violations::default(),
            max_members_seen: 0,
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Adds an offline device sharing `files`.
    pub fn add_device(&mut self, id: DeviceId, files: Vec<(String, Bytes)>) {
        let nonce_seed = self.rng.gen::<u32>();
        let mut node = Node::new(id, self.params, nonce_seed);
        for (name, content) in files {
            node.storage.insert(&name, content, self.params.block_size);
        }
        self.nodes.insert(id, node);
    }

    /// Makes two devices radio-visible to each other.
    pub fn set_visible(&mut self, a: DeviceId, b: DeviceId) {
        self.visible.insert((a, b));
        self.visible.insert((b, a));
    }

    pub fn set_invisible(&mut self, a: DeviceId, b: DeviceId) {
        self.visible.remove(&(a, b));
        self.visible.remove(&(b, a));
    }

    pub fn sees(&self, a: DeviceId, b: DeviceId) -> bool {
        self.visible.contains(&(a, b))
    }

    pub fn node(&self, id: DeviceId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn violations(&self) -> &Violations {
        &self.violations
    }

    pub fn max_members_seen(&self) -> usize {
        self.max_members_seen
    }

    /// Hotspots currently up, keyed by their root.
    pub fn hotspots(&self) -> &BTreeMap<DeviceId, Ssid> {
        &self.hosting
    }

    pub fn attachment(&self, id: DeviceId) -> Option<Ssid> {
        self.attached.get(&id).copied()
    }

    fn push(&mut self, at: SimTime, e: Event) {
        self.seq += 1;
        self.queue.insert((at.max(self.now), self.seq), e);
    }

    fn record(&mut self, device: DeviceId, e: WorldEvent) {
        self.trace.push(TraceRecord {
            time: self.now,
            device,
            event: TraceEvent::World(e),
        });
    }

    fn script(&mut self, device: DeviceId, action: &str, corr: Option<u64>, detail: String) {
        self.record(
            device,
            WorldEvent::Script {
                action: action.to_string(),
                corr,
                detail,
            },
        );
    }

    pub fn schedule(&mut self, at: SimTime, device: DeviceId, input: Input) {
        self.push(at, Event::Input { device, input });
    }

    pub fn arrive(&mut self, at: SimTime, device: DeviceId) {
        self.schedule(at, device, Input::Arrive);
    }

    pub fn depart(&mut self, at: SimTime, device: DeviceId, silent: bool) {
        self.schedule(at, device, Input::Depart { silent });
    }

    fn alloc_corr(&mut self) -> u64 {
        let c = self.next_corr;
        self.next_corr += 1;
        c
    }

    /// Schedules a search and returns its correlation id.
    pub fn search(&mut self, at: SimTime, device: DeviceId, query: Query) -> u64 {
        let corr = self.alloc_corr();
        self.schedule(at, device, Input::User(UserRequest::Search { corr, query }));
        corr
    }

    /// Schedules a download and returns its correlation id.
    pub fn download(&mut self, at: SimTime, device: DeviceId, file_id: FileId, ttl: Option<u32>) -> u64 {
        let corr = self.alloc_corr();
        self.schedule(at, device, Input::User(UserRequest::Download { corr, file_id, ttl }));
        corr
    }

    pub fn share(&mut self, at: SimTime, device: DeviceId, name: String, content: Bytes) {
        self.schedule(at, device, Input::User(UserRequest::Share { name, content }));
    }

    pub fn unshare(&mut self, at: SimTime, device: DeviceId, file_id: FileId) {
        self.schedule(at, device, Input::User(UserRequest::Unshare { file_id }));
    }

    /// Changes radio visibility between two devices at time `at`.
    pub fn link(&mut self, at: SimTime, a: DeviceId, b: DeviceId, on: bool) {
        self.push(at, Event::Link { a, b, on });
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.keys().next().map(|(t, _)| *t)
    }

    /// Runs every event up to and including time `until`.
    pub fn run_until(&mut self, until: SimTime) {
        while self.next_event_time().is_some_and(|t| t <= until) {
            self.step();
        }
        self.now = self.now.max(until);
    }

    /// Processes one event; false when the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(((t, _), event)) = self.queue.pop_first() else {
            return false;
        };
        self.now = t;
        let mut pending = VecDeque::new();
        match event {
            Event::Input { device, input } => {
                self.trace_script_input(device, &input);
                pending.push_back((device, input));
            }
            Event::Scan { device } => {
                if self.is_online(device) {
                    let visible = self.visible_hotspots(device);
                    self.record(device, WorldEvent::Scan { visible: visible.clone() });
                    pending.push_back((device, Input::ScanResult(visible)));
                }
            }
            Event::Deliver { to, hotspot, bytes } => {
                let frame = decode_frame(&bytes).expect("frames encoded by the world decode");
                // block data must not outlive its sender's presence
                let sender_left = matches!(frame.payload, Payload::BlockResponse { .. }) && !self.in_hotspot(frame.src, hotspot);
                if self.in_hotspot(to, hotspot) && !sender_left {
                    if matches!(frame.payload, Payload::BlockResponse { .. }) && self.hotspot_of(frame.src) != self.hotspot_of(to) {
                        self.violations.cross_subnet_blocks += 1;
                    }
                    self.record(
                        to,
                        WorldEvent::FrameDelivered {
                            frame: frame.kind().name(),
                            from: frame.src,
                            corr: frame.corr,
                        },
                    );
                    pending.push_back((to, Input::Frame(frame)));
                } else {
                    self.record(
                        to,
                        WorldEvent::FrameDropped {
                            frame: frame.kind().name(),
                            to: to.to_string(),
                            corr: frame.corr,
                            reason: if sender_left { "sender_left" } else { "left_hotspot" },
                        },
                    );
                }
            }
            Event::Timer { device, timer } => pending.push_back((device, Input::Timer(timer))),
            Event::Link { a, b, on } => {
                if on {
                    self.set_visible(a, b);
                } else {
                    self.set_invisible(a, b);
                }
                self.record(a, WorldEvent::Link { peer: b, on });
            }
            Event::HopComplete {
                device,
                target,
                leg,
                corr,
            } => {
                let arrived = self.hosting.get(&target.root_id) == Some(&target) && self.sees(device, target.root_id);
                if arrived {
                    self.attached.insert(device, target);
                }
                self.record(
                    device,
                    WorldEvent::HopComplete {
                        target,
                        leg,
                        corr,
                    arrived,
                    },
                );
                pending.push_back((device, Input::HopResult { target, arrived }));
            }
        }
        while let Some((device, input)) = pending.pop_front() {
            let Some(node) = self.nodes.get_mut(&device) else {
                continue;
            };
            let outputs = node.handle(self.now, input);
            for o in outputs {
                self.apply(device, o, &mut pending);
            }
        }
        self.check_invariants();
        true
    }

    fn trace_script_input(&mut self, device: DeviceId, input: &Input) {
        match input {
            Input::Arrive => self.record(device, WorldEvent::Arrive),
            Input::Depart { silent } => self.record(device, WorldEvent::Depart { silent: *silent }),
            Input::User(UserRequest::Search { corr, query }) => self.script(device, "search", Some(*corr), query.to_string()),
            Input::User(UserRequest::Download { corr, file_id, ttl }) => {
                let detail = match ttl {
                    Some(t) => format!("{file_id} ttl={t}"),
                    None => file_id.to_string(),
                };
                self.script(device, "download", Some(*corr), detail)
            }
            Input::User(UserRequest::Share { name, content }) => {
                self.script(device, "share", None, format!("{name} {}", crate::ids::compute_file_id(content)))
            }
            Input::User(UserRequest::Unshare { file_id }) => self.script(device, "unshare", None, file_id.to_string()),
            _ => {}
        }
    }

    fn is_online(&self, device: DeviceId) -> bool {
        self.nodes
            .get(&device)
            .is_some_and(|n| !matches!(n.role, Role::Offline))
    }

    fn visible_hotspots(&self, device: DeviceId) -> Vec<Ssid> {
        self.hosting
            .iter()
            .filter(|(root, _)| **root != device && self.sees(device, **root))
            .map(|(_, s)| *s)
            .collect()
    }

    fn hotspot_of(&self, device: DeviceId) -> Option<Ssid> {
        self.hosting.get(&device).or_else(|| self.attached.get(&device)).copied()
    }

    fn in_hotspot(&self, device: DeviceId, hotspot: Ssid) -> bool {
        self.hotspot_of(device) == Some(hotspot)
    }

    fn apply(&mut self, device: DeviceId, output: Output, pending: &mut VecDeque<(DeviceId, Input)>) {
        match output {
            Output::Send(frame) => self.send(device, frame),
            Output::Timer { at, timer } => self.push(at, Event::Timer { device, timer }),
            Output::Scan => self.push(self.now, Event::Scan { device }),
            Output::Host(ssid) => {
                self.attached.remove(&device);
                self.hosting.insert(device, ssid);
                self.record(device, WorldEvent::HotspotUp { ssid });
            }
            Output::StopHosting => {
                if let Some(ssid) = self.hosting.remove(&device) {
                    self.record(device, WorldEvent::HotspotDown { ssid });
                    let orphans: Vec<DeviceId> = self
                        .attached
                        .iter()
                        .filter(|(_, s)| **s == ssid)
                        .map(|(d, _)| *d)
                        .collect();
                    for d in orphans {
                        self.attached.remove(&d);
                        self.record(d, WorldEvent::Disconnected { ssid });
                        pending.push_back((d, Input::Disconnected));
                    }
                }
            }
            Output::Associate(ssid) => {
                let ok = self.hosting.get(&ssid.root_id) == Some(&ssid) && self.sees(device, ssid.root_id);
                if ok {
                    self.attached.insert(device, ssid);
                }
                self.record(device, WorldEvent::Associate { ssid, ok });
            }
            Output::Detach => {
                self.attached.remove(&device);
            }
            Output::Hop { target, leg, corr } => {
                let ok = !self.hosting.contains_key(&device)
                    && self.hosting.get(&target.root_id) == Some(&target)
                    && self.sees(device, target.root_id);
                if ok {
                    self.attached.remove(&device);
                    self.record(device, WorldEvent::HopStart { target, leg, corr });
                    let at = self.now + self.params.hop_latency;
                    self.push(
                        at,
                        Event::HopComplete {
                            device,
                            target,
                            leg,
                            corr,
                        },
                    );
                } else {
                    self.record(device, WorldEvent::HopRefused { target, leg, corr });
                    pending.push_back((device, Input::HopRefused { target }));
                }
            }
            Output::Note(e) => self.trace.push(TraceRecord {
                time: self.now,
                device,
                event: TraceEvent::Node(e),
            }),
        }
    }

    fn send(&mut self, src: DeviceId, frame: Frame) {
        let bytes = Bytes::from(encode_frame(&frame));
        let data_bytes = match &frame.payload {
            Payload::BlockResponse {
                payload: BlockPayload::Data(d),
                ..
            } => d.len(),
            _ => 0,
        };
        let name = frame.kind().name();
        let to = frame.dst.to_string();
        let Some(hotspot) = self.hotspot_of(src) else {
            self.record(
                src,
                WorldEvent::FrameDropped {
                    frame: name,
                    to,
                    corr: frame.corr,
                    reason: "not_attached",
                },
            );
            return;
        };
        let at = self.now + self.params.link_latency;
        match frame.dst {
            Destination::Device(dst) => {
                if !self.in_hotspot(dst, hotspot) {
                    self.record(
                        src,
                        WorldEvent::FrameDropped {
                            frame: name,
                            to,
                            corr: frame.corr,
                            reason: "other_hotspot",
                        },
                    );
                    return;
                }
                self.record(
                    src,
                    WorldEvent::FrameSent {
                        frame: name,
                        to,
                        corr: frame.corr,
                        bytes: bytes.len(),
                        data_bytes,
                    },
                );
                self.push(at, Event::Deliver { to: dst, hotspot, bytes });
            }
            Destination::Broadcast => {
                self.record(
                    src,
                    WorldEvent::FrameSent {
                        frame: name,
                        to,
                        corr: frame.corr,
                        bytes: bytes.len(),
                        data_bytes,
                    },
                );
                let receivers: Vec<DeviceId> = self
                    .nodes
                    .keys()
                    .copied()
                    .filter(|d| *d != src && self.in_hotspot(*d, hotspot))
                    .collect();
                for dst in receivers {
                    self.push(
                        at,
                        Event::Deliver {
                            to: dst,
                            hotspot,
                            bytes: bytes.clone(),
                        },
                    );
                }
            }
        }
    }

    fn check_invariants(&mut self) {
        for n in self.nodes.values() {
            if let Some(r) = n.root_state() {
                let count = r.members.len();
                self.max_members_seen = self.max_members_seen.max(count);
                if count > self.params.max_members {
                    self.violations.over_capacity += 1;
                }
            }
        }
    }

    pub fn trace_jsonl(&self) -> String {
        to_jsonl(&self.trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::compute_file_id;

    fn world() -> World {
        World::new(Params::default(), 7)
    }

    #[test]
    fn lone_device_hosts() {
        let mut w = world();
        w.add_device(DeviceId(1), vec![]);
        w.arrive(0, DeviceId(1));
        w.run_until(1_000);
        assert!(w.node(DeviceId(1)).unwrap().is_root());
        assert_eq!(w.hotspots().len(), 1);
    }

    #[test]
    fn two_visible_devices_form_one_subnet() {
        let mut w = world();
        w.add_device(DeviceId(1), vec![]);
        w.add_device(DeviceId(2), vec![("a".into(), Bytes::from_static(b"hello"))]);
        w.set_visible(DeviceId(1), DeviceId(2));
        w.arrive(0, DeviceId(1));
        w.arrive(100, DeviceId(2));
        w.run_until(1_000);
        let root = w.node(DeviceId(1)).unwrap().root_state().unwrap();
        assert!(root.is_member(DeviceId(2)));
        assert!(root.catalog.entry(&compute_file_id(b"hello")).is_some());
    }

    #[test]
    fn frames_do_not_cross_hotspots() {
        let mut w = world();
        w.add_device(DeviceId(1), vec![]);
        w.add_device(DeviceId(2), vec![]);
        w.arrive(0, DeviceId(1));
        w.arrive(0, DeviceId(2));
        w.run_until(100);
        w.send(DeviceId(1), Frame::to(DeviceId(1), DeviceId(2), Payload::Ping));
        assert!(w.trace().iter().any(|r| matches!(
            &r.event,
            TraceEvent::World(WorldEvent::FrameDropped { reason: "other_hotspot", .. })
        )));
    }

    #[test]
    fn root_departure_disconnects_members() {
        let mut w = world();
        for i in 1..=3 {
            w.add_device(DeviceId(i), vec![]);
        }
        w.set_visible(DeviceId(1), DeviceId(2));
        w.set_visible(DeviceId(1), DeviceId(3));
        w.arrive(0, DeviceId(1));
        w.arrive(10, DeviceId(2));
        w.arrive(10, DeviceId(3));
        w.run_until(1_000);
        w.depart(2_000, DeviceId(1), false);
        w.run_until(3_000);
        // members rescan and one of them hosts
        assert_eq!(w.hotspots().len(), 2);
        assert_eq!(w.violations(), &Violations::default());
    }
}
