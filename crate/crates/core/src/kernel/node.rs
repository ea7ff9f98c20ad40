//! Per-device protocol state machine.
//!
//! A [`Node`] consumes one [`Input`] at a time and answers with a list of
//! [`Output`]s for its host (the simulator, or a real transport) to carry
//! out. It never touches shared state.

use std::collections::BTreeMap;

use bytes::Bytes;
use serde::Serialize;

use super::frame::*;
use super::root::{Admission, PurgeReason, RootState};
use crate::catalog::NetworkFileCatalog;
use crate::ids::{BlockRange, DeviceId, FileId, FileMeta, SimTime};
use crate::params::Params;
use crate::ssid::Ssid;
use crate::transfer::courier::CourierMission;
use crate::transfer::session::TransferSession;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StoredFile {
    pub meta: FileMeta,
    #[serde(skip)]
    pub content: Bytes,
}

/// Complete files a device shares.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Storage {
    files: BTreeMap<FileId, StoredFile>,
}

impl Storage {
    /// Adds a file; a second name for known content is merged.
    pub fn insert(&mut self, name: &str, content: Bytes, block_size: u64) -> FileMeta {
        let meta = FileMeta::new(name, &content, block_size);
        let stored = self.files.entry(meta.file_id).or_insert(StoredFile {
            meta: meta.clone(),
            content,
        });
        stored.meta.merge_names(&meta);
        stored.meta.clone()
    }

    pub fn insert_meta(&mut self, meta: FileMeta, content: Bytes) {
        let stored = self.files.entry(meta.file_id).or_insert(StoredFile {
            meta: meta.clone(),
            content,
        });
        stored.meta.merge_names(&meta);
    }

    pub fn remove(&mut self, id: &FileId) -> Option<StoredFile> {
        self.files.remove(id)
    }

    pub fn contains(&self, id: &FileId) -> bool {
        self.files.contains_key(id)
    }

    pub fn get(&self, id: &FileId) -> Option<&StoredFile> {
        self.files.get(id)
    }

    pub fn metas(&self) -> Vec<FileMeta> {
        self.files.values().map(|f| f.meta.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct JoinAttempt {
    pub ssid: Ssid,
    pub deadline: SimTime,
    /// Other visible networks, best first, for one retry after a reject.
    pub fallback: Vec<Ssid>,
    pub retried: bool,
    pub temporary: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Offline,
    Scanning,
    Joining(JoinAttempt),
    Member {
        ssid: Ssid,
        root: DeviceId,
        temporary: bool,
    },
    /// Between hotspots on a courier hop.
    Floating,
    Root(Box<RootState>),
}

impl Role {
    pub fn name(&self) -> &'static str {
        match self {
            Role::Offline => "offline",
            Role::Scanning => "scanning",
            Role::Joining(_) => "joining",
            Role::Member { .. } => "member",
            Role::Floating => "floating",
            Role::Root(_) => "root",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Leg {
    Forward,
    Retry,
    Return,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Timer {
    JoinTimeout { epoch: u32 },
    Scan { epoch: u32 },
    Ping { epoch: u32 },
    CourierPeriod { epoch: u32 },
    LeaveCountdown { epoch: u32, peer: DeviceId },
    WantedRepeat { epoch: u32, corr: u64 },
    BlockTimeout { corr: u64, index: u32, source: DeviceId, since: SimTime },
    SessionDeadline { corr: u64 },
    MissionDeadline { order: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum UserRequest {
    Search { corr: u64, query: Query },
    Download { corr: u64, file_id: FileId, ttl: Option<u32> },
    Share { name: String, content: Bytes },
    Unshare { file_id: FileId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Input {
    Arrive,
    Depart { silent: bool },
    ScanResult(Vec<Ssid>),
    Frame(Frame),
    Timer(Timer),
    /// A hop finished; `arrived` is false when the target vanished meanwhile.
    HopResult { target: Ssid, arrived: bool },
    /// The host refused to start a hop.
    HopRefused { target: Ssid },
    /// The hotspot the device was attached to disappeared.
    Disconnected,
    User(UserRequest),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    Send(Frame),
    Timer { at: SimTime, timer: Timer },
    Scan,
    Host(Ssid),
    StopHosting,
    Associate(Ssid),
    Detach,
    Hop { target: Ssid, leg: Leg, corr: u64 },
    Note(NodeEvent),
}

/// Protocol-level happenings worth a trace line.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeEvent {
    Hosting { ssid: Ssid },
    Joining { ssid: Ssid, temporary: bool },
    Joined { ssid: Ssid, temporary: bool },
    JoinRejected { ssid: Ssid },
    JoinTimedOut { ssid: Ssid },
    Admitted { peer: DeviceId, temporary: bool, members: usize },
    Refused { peer: DeviceId, members: usize },
    LeaveMarked { peer: DeviceId },
    MemberPurged { peer: DeviceId, reason: PurgeReason },
    Disconnected,
    SearchResult { corr: u64, query: Query, hits: Vec<SearchHit> },
    WantedEmitted { corr: u64, query: Query, count: u32 },
    WantedResolved { corr: u64, requester: DeviceId },
    WantedExhausted { corr: u64 },
    CourierOrdered { corr: u64, order: u64, courier: DeviceId, target: Ssid, file: Option<FileId>, range: Option<BlockRange>, ttl: u32 },
    NoCourier { target: Ssid },
    MissionAccepted { order: u64, target: Ssid },
    DestinationCheck { corr: u64, subnet: Ssid, destination: Ssid, reached: bool },
    MissionFailed { corr: u64, order: u64, reason: FailReason },
    MissionDelivered { corr: u64, order: u64, blocks: u32 },
    MissionAbandoned { order: u64 },
    MissionReported { corr: u64, order: u64, courier: DeviceId, failure: Option<FailReason> },
    CatalogMerged { via: Ssid, inserted: usize, improved: usize, refreshed: usize },
    SourcesListed { corr: u64, file: FileId, sources: Vec<DeviceId> },
    BlocksAssigned { corr: u64, assignment: BTreeMap<DeviceId, Vec<u32>> },
    DownloadStarted { corr: u64, file: FileId, mode: &'static str },
    BlocksReassigned { corr: u64, from: DeviceId, blocks: Vec<u32> },
    DownloadRetry { corr: u64 },
    DownloadComplete { corr: u64, file: FileId, bytes: u64, already_held: bool },
    DownloadFailed { corr: u64, file: FileId, reason: FailReason },
    WantedReceived { query: Query },
    FileShared { file: FileId },
    FileUnshared { file: FileId },
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: DeviceId,
    pub params: Params,
    pub role: Role,
    pub clock: SimTime,
    pub storage: Storage,
    pub(crate) epoch: u32,
    pub(crate) next_nonce: u32,
    pub(crate) sessions: BTreeMap<u64, TransferSession>,
    pub(crate) mission: Option<CourierMission>,
    pub(crate) searches: BTreeMap<u64, Query>,
    out: Vec<Output>,
}

impl Node {
    pub fn new(id: DeviceId, params: Params, nonce_seed: u32) -> Self {
        Node {
            id,
            params,
            role: Role::Offline,
            clock: 0,
            storage: Storage::default(),
            epoch: 0,
            next_nonce: nonce_seed,
            sessions: BTreeMap::new(),
            mission: None,
            searches: BTreeMap::new(),
            out: Vec::new(),
        }
    }

    pub fn is_root(&self) -> bool {
        matches!(self.role, Role::Root(_))
    }

    pub fn root_state(&self) -> Option<&RootState> {
        match &self.role {
            Role::Root(r) => Some(r),
            _ => None,
        }
    }

    pub(crate) fn root_state_mut(&mut self) -> Option<&mut RootState> {
        match &mut self.role {
            Role::Root(r) => Some(r),
            _ => None,
        }
    }

    pub fn hosted_ssid(&self) -> Option<Ssid> {
        self.root_state().map(|r| r.ssid)
    }

    /// The subnet the device currently belongs to, as root or member.
    pub fn subnet(&self) -> Option<Ssid> {
        match &self.role {
            Role::Root(r) => Some(r.ssid),
            Role::Member { ssid, .. } => Some(*ssid),
            _ => None,
        }
    }

    /// The root this device talks to at home (itself when hosting).
    pub(crate) fn home_root(&self) -> Option<DeviceId> {
        match &self.role {
            Role::Root(_) => Some(self.id),
            Role::Member {
                root,
                temporary: false,
                ..
            } if self.mission.is_none() => Some(*root),
            _ => None,
        }
    }

    pub fn mission(&self) -> Option<&CourierMission> {
        self.mission.as_ref()
    }

    pub fn sessions(&self) -> impl Iterator<Item = &TransferSession> {
        self.sessions.values()
    }

    pub(crate) fn emit(&mut self, o: Output) {
        self.out.push(o);
    }

    pub(crate) fn send(&mut self, frame: Frame) {
        self.out.push(Output::Send(frame));
    }

    pub(crate) fn note(&mut self, e: NodeEvent) {
        self.out.push(Output::Note(e));
    }

    pub(crate) fn timer(&mut self, at: SimTime, timer: Timer) {
        self.out.push(Output::Timer { at, timer });
    }

    pub(crate) fn set_role(&mut self, role: Role) {
        self.epoch = self.epoch.wrapping_add(1);
        self.role = role;
    }

    /// Feeds one input at time `now` and returns what the host must do.
    pub fn handle(&mut self, now: SimTime, input: Input) -> Vec<Output> {
        debug_assert!(now >= self.clock, "time went backwards");
        self.clock = now;
        match input {
            Input::Arrive => self.on_arrive(),
            Input::Depart { silent } => self.on_depart(silent),
            Input::ScanResult(ssids) => self.on_scan(ssids),
            Input::Frame(frame) => self.on_frame(frame),
            Input::Timer(t) => self.on_timer(t),
            Input::HopResult { target, arrived } => self.on_hop_result(target, arrived),
            Input::HopRefused { target } => self.on_hop_refused(target),
            Input::Disconnected => self.on_disconnected(),
            Input::User(req) => self.on_user(req),
        }
        std::mem::take(&mut self.out)
    }

    fn on_arrive(&mut self) {
        if matches!(self.role, Role::Offline) {
            self.set_role(Role::Scanning);
            self.emit(Output::Scan);
        }
    }

    fn on_depart(&mut self, silent: bool) {
        match &self.role {
            Role::Member {
                root, temporary, ..
            } if !silent => {
                let root = *root;
                let _ = temporary;
                self.send(Frame::to(self.id, root, Payload::LeaveNotice));
            }
            Role::Root(_) => self.emit(Output::StopHosting),
            _ => {}
        }
        self.sessions.clear();
        self.mission = None;
        self.searches.clear();
        self.set_role(Role::Offline);
        self.emit(Output::Detach);
    }

    fn on_scan(&mut self, ssids: Vec<Ssid>) {
        match &self.role {
            Role::Scanning => self.bootstrap(&ssids),
            Role::Member {
                ssid,
                root,
                temporary: false,
            } if self.mission.is_none() => {
                let (ssid, root) = (*ssid, *root);
                let visible: Vec<Ssid> = ssids.into_iter().filter(|s| *s != ssid).collect();
                self.send(Frame::to(self.id, root, Payload::ScanReport { visible }));
            }
            _ => {}
        }
    }

    /// Joins the best visible protocol network, or hosts one when none is
    /// visible. Candidates are ordered by rendered SSID.
    pub fn bootstrap(&mut self, scan: &[Ssid]) {
        let mut candidates: Vec<Ssid> = scan.iter().copied().filter(|s| s.root_id != self.id).collect();
        candidates.sort();
        candidates.dedup();
        if candidates.is_empty() {
            self.become_root();
        } else {
            let best = candidates.remove(0);
            self.start_join(best, candidates, false, false);
        }
    }

    pub(crate) fn start_join(&mut self, ssid: Ssid, fallback: Vec<Ssid>, retried: bool, temporary: bool) {
        let deadline = self.clock + self.params.join_timeout;
        self.set_role(Role::Joining(JoinAttempt {
            ssid,
            deadline,
            fallback,
            retried,
            temporary,
        }));
        self.note(NodeEvent::Joining { ssid, temporary });
        self.emit(Output::Associate(ssid));
        self.send(Frame::to(self.id, ssid.root_id, Payload::JoinRequest { temporary }));
        self.timer(deadline, Timer::JoinTimeout { epoch: self.epoch });
    }

    /// Sends the join request for a hotspot the device is already attached to
    /// (after a courier hop).
    pub(crate) fn join_after_hop(&mut self, ssid: Ssid, temporary: bool) {
        let deadline = self.clock + self.params.join_timeout;
        self.set_role(Role::Joining(JoinAttempt {
            ssid,
            deadline,
            fallback: Vec::new(),
            retried: true,
            temporary,
        }));
        self.note(NodeEvent::Joining { ssid, temporary });
        self.send(Frame::to(self.id, ssid.root_id, Payload::JoinRequest { temporary }));
        self.timer(deadline, Timer::JoinTimeout { epoch: self.epoch });
    }

    pub(crate) fn allocate_ssid(&mut self) -> Ssid {
        let ssid = Ssid::new(self.id, self.next_nonce);
        self.next_nonce = self.next_nonce.wrapping_add(1);
        ssid
    }

    pub(crate) fn become_root(&mut self) {
        let ssid = self.allocate_ssid();
        let mut catalog = NetworkFileCatalog::new();
        catalog.register_files(self.id, &self.storage.metas());
        self.set_role(Role::Root(Box::new(RootState::new(ssid, catalog))));
        self.note(NodeEvent::Hosting { ssid });
        self.emit(Output::Host(ssid));
        let epoch = self.epoch;
        self.timer(self.clock + self.params.ping_interval, Timer::Ping { epoch });
        self.timer(self.clock + self.params.courier_period, Timer::CourierPeriod { epoch });
    }

    /// Gives up on a join whose deadline has passed and hosts instead.
    pub fn on_join_timeout(&mut self) {
        let Role::Joining(attempt) = &self.role else {
            return;
        };
        if self.clock < attempt.deadline {
            return;
        }
        let ssid = attempt.ssid;
        self.note(NodeEvent::JoinTimedOut { ssid });
        if self.mission.is_some() {
            self.courier_join_failed(FailReason::Timeout);
            return;
        }
        self.emit(Output::Detach);
        self.become_root();
    }

    fn become_member(&mut self, ssid: Ssid, root: DeviceId, known: bool) {
        self.set_role(Role::Member {
            ssid,
            root,
            temporary: false,
        });
        self.note(NodeEvent::Joined {
            ssid,
            temporary: false,
        });
        if !known {
            let files = self.storage.metas();
            self.send(Frame::to(self.id, root, Payload::FileList { files }));
        }
        self.emit(Output::Scan);
        self.timer(self.clock + self.params.scan_period, Timer::Scan { epoch: self.epoch });
    }

    fn on_frame(&mut self, frame: Frame) {
        let src = frame.src;
        let corr = frame.corr;
        let now = self.clock;
        if let Some(root) = self.root_state_mut() {
            root.touch(src, now);
        }
        match frame.payload {
            Payload::JoinRequest { temporary } => self.on_join_request(src, temporary),
            Payload::JoinAccept { root, ssid, known } => self.on_join_accept(root, ssid, known),
            Payload::JoinReject { ssid } => self.on_join_reject(ssid),
            Payload::FileList { files } => self.on_file_list(src, &files),
            Payload::FileChange { added, removed } => self.on_file_change_notice(src, &added, &removed),
            Payload::ScanReport { visible } => self.on_scan_report(src, &visible),
            Payload::LeaveNotice => self.on_leave(src),
            Payload::Ping => {
                if self.is_attached_to(src) {
                    self.send(Frame::to(self.id, src, Payload::Pong));
                }
            }
            Payload::Pong => {}
            Payload::SearchRequest { query } => self.on_search_request(src, corr, query),
            Payload::SearchResponse { query, results } => self.on_search_response(corr, query, results),
            Payload::DownloadRequest { file_id, range, budget } => {
                self.on_download_request(src, corr, file_id, range, budget)
            }
            Payload::SourceList { meta, sources } => self.on_source_list(corr, meta, sources),
            Payload::TransferStatus(status) => self.on_transfer_status(corr, status),
            Payload::BlockRequest { file_id, index } => self.on_block_request(src, corr, file_id, index),
            Payload::BlockResponse { file_id, index, payload } => {
                self.on_block_response(src, corr, file_id, index, payload)
            }
            Payload::CatalogRequest => self.on_catalog_request(src),
            Payload::CatalogSnapshot { snapshot, order } => self.on_catalog_snapshot(src, snapshot, order),
            Payload::CourierOrder(order) => self.on_courier_order(src, corr, order),
            Payload::MissionReport { order, failure } => self.on_mission_report(src, order, failure),
            Payload::WantedFile { query } => {
                if !self.is_root() {
                    self.note(NodeEvent::WantedReceived { query });
                }
            }
        }
    }

    fn is_attached_to(&self, root: DeviceId) -> bool {
        matches!(&self.role, Role::Member { root: r, .. } if *r == root)
    }

    fn on_join_request(&mut self, peer: DeviceId, temporary: bool) {
        let now = self.clock;
        let max = self.params.max_members;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let ssid = root.ssid;
        match root.admit_peer(peer, temporary, now, max) {
            Admission::Accepted { known } => {
                let members = root.members.len();
                self.note(NodeEvent::Admitted {
                    peer,
                    temporary,
                    members,
                });
                self.send(Frame::to(
                    self.id,
                    peer,
                    Payload::JoinAccept {
                        root: self.id,
                        ssid,
                        known,
                    },
                ));
            }
            Admission::Rejected => {
                let members = root.members.len();
                self.note(NodeEvent::Refused { peer, members });
                self.send(Frame::to(self.id, peer, Payload::JoinReject { ssid }));
            }
        }
    }

    fn on_join_accept(&mut self, root: DeviceId, ssid: Ssid, known: bool) {
        let Role::Joining(attempt) = &self.role else {
            return;
        };
        if attempt.ssid != ssid {
            return;
        }
        if self.mission.is_some() {
            self.courier_joined(ssid, root, known);
        } else {
            self.become_member(ssid, root, known);
        }
    }

    fn on_join_reject(&mut self, ssid: Ssid) {
        let Role::Joining(attempt) = &self.role else {
            return;
        };
        if attempt.ssid != ssid {
            return;
        }
        let mut fallback = attempt.fallback.clone();
        let retried = attempt.retried;
        self.note(NodeEvent::JoinRejected { ssid });
        if self.mission.is_some() {
            self.courier_rejected();
            return;
        }
        self.emit(Output::Detach);
        if !retried && !fallback.is_empty() {
            let next = fallback.remove(0);
            self.start_join(next, fallback, true, false);
        } else {
            self.become_root();
        }
    }

    fn on_file_list(&mut self, peer: DeviceId, files: &[FileMeta]) {
        if let Some(root) = self.root_state_mut() {
            if root.is_resident(peer) {
                root.catalog.register_files(peer, files);
                self.resolve_wanted();
            }
        }
    }

    fn on_file_change_notice(&mut self, peer: DeviceId, added: &[FileMeta], removed: &[FileId]) {
        if let Some(root) = self.root_state_mut() {
            if root.is_resident(peer) && root.catalog.on_file_change(peer, added, removed) {
                self.resolve_wanted();
            }
        }
    }

    fn on_scan_report(&mut self, peer: DeviceId, visible: &[Ssid]) {
        let now = self.clock;
        if let Some(root) = self.root_state_mut() {
            if root.is_resident(peer) && peer != root.root_id() {
                let home = root.ssid;
                root.subnets.report_scan(peer, visible, now, home);
            }
        }
    }

    /// Root side of a departure notice.
    pub fn on_leave_notice(&mut self, peer: DeviceId) {
        let now = self.clock;
        let countdown = self.params.leave_countdown;
        let epoch = self.epoch;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        match root.on_leave_notice(peer, now) {
            Some(PurgeReason::Left) => {
                self.note(NodeEvent::LeaveMarked { peer });
                self.timer(now + countdown, Timer::LeaveCountdown { epoch, peer });
            }
            Some(reason) => self.note(NodeEvent::MemberPurged { peer, reason }),
            None => {}
        }
    }

    fn on_leave(&mut self, peer: DeviceId) {
        self.on_leave_notice(peer);
    }

    /// Root liveness pass, run every ping interval.
    pub fn ping_cycle(&mut self) {
        let now = self.clock;
        let params = self.params;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let outcome = root.ping_cycle(now, &params);
        for peer in outcome.purged {
            self.note(NodeEvent::MemberPurged {
                peer,
                reason: PurgeReason::Silent,
            });
        }
        for o in outcome.expired_orders {
            self.on_order_expired(o);
        }
        for peer in outcome.pinged {
            self.send(Frame::to(self.id, peer, Payload::Ping));
        }
    }

    fn on_timer(&mut self, timer: Timer) {
        let epoch = self.epoch;
        match timer {
            Timer::JoinTimeout { epoch: e } if e == epoch => self.on_join_timeout(),
            Timer::Scan { epoch: e } if e == epoch => {
                if matches!(self.role, Role::Member { temporary: false, .. }) && self.mission.is_none() {
                    self.emit(Output::Scan);
                    self.timer(self.clock + self.params.scan_period, Timer::Scan { epoch });
                }
            }
            Timer::Ping { epoch: e } if e == epoch => {
                self.ping_cycle();
                self.timer(self.clock + self.params.ping_interval, Timer::Ping { epoch });
            }
            Timer::CourierPeriod { epoch: e } if e == epoch => {
                self.schedule_catalog_fetch();
                self.timer(self.clock + self.params.courier_period, Timer::CourierPeriod { epoch });
            }
            Timer::LeaveCountdown { epoch: e, peer } if e == epoch => {
                let now = self.clock;
                let countdown = self.params.leave_countdown;
                if let Some(root) = self.root_state_mut() {
                    if root.leave_countdown_due(peer, now, countdown) {
                        self.note(NodeEvent::MemberPurged {
                            peer,
                            reason: PurgeReason::Left,
                        });
                    }
                }
            }
            Timer::WantedRepeat { epoch: e, corr } if e == epoch => self.on_wanted_repeat(corr),
            Timer::BlockTimeout {
                corr,
                index,
                source,
                since,
            } => self.on_block_timeout(corr, index, source, since),
            Timer::SessionDeadline { corr } => self.on_session_deadline(corr),
            Timer::MissionDeadline { order } => self.on_mission_deadline(order),
            _ => {}
        }
    }

    fn on_disconnected(&mut self) {
        self.note(NodeEvent::Disconnected);
        if self.mission.is_some() {
            self.courier_disconnected();
            return;
        }
        match self.role {
            Role::Member { .. } | Role::Joining(_) => {
                self.fail_all_sessions(FailReason::Disconnected);
                self.set_role(Role::Scanning);
                self.emit(Output::Scan);
            }
            _ => {}
        }
    }

    fn on_user(&mut self, req: UserRequest) {
        match req {
            UserRequest::Search { corr, query } => self.start_search(corr, query),
            UserRequest::Download { corr, file_id, ttl } => self.start_download(corr, file_id, ttl),
            UserRequest::Share { name, content } => {
                let meta = self.storage.insert(&name, content, self.params.block_size);
                self.note(NodeEvent::FileShared { file: meta.file_id });
                self.notify_files(vec![meta], Vec::new());
            }
            UserRequest::Unshare { file_id } => {
                if self.storage.remove(&file_id).is_some() {
                    self.note(NodeEvent::FileUnshared { file: file_id });
                    self.notify_files(Vec::new(), vec![file_id]);
                }
            }
        }
    }

    /// Tells the home root about added or deleted files.
    pub(crate) fn notify_files(&mut self, added: Vec<FileMeta>, removed: Vec<FileId>) {
        if let Some(root) = self.home_root() {
            self.send(Frame::to(self.id, root, Payload::FileChange { added, removed }));
        }
    }

    fn start_search(&mut self, corr: u64, query: Query) {
        let Some(root) = self.home_root() else {
            self.note(NodeEvent::SearchResult {
                corr,
                query,
                hits: Vec::new(),
            });
            return;
        };
        self.searches.insert(corr, query.clone());
        self.send(Frame::to(self.id, root, Payload::SearchRequest { query }).with_corr(corr));
    }

    fn on_search_response(&mut self, corr: u64, query: Query, hits: Vec<SearchHit>) {
        // resolved wanted queries arrive as a second response
        self.searches.remove(&corr);
        self.note(NodeEvent::SearchResult { corr, query, hits });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: u64) -> Node {
        Node::new(DeviceId(id), Params::default(), 0)
    }

    fn frames(out: &[Output]) -> Vec<&Frame> {
        out.iter()
            .filter_map(|o| match o {
                Output::Send(f) => Some(f),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn empty_scan_hosts() {
        let mut n = node(1);
        n.handle(0, Input::Arrive);
        let out = n.handle(0, Input::ScanResult(vec![]));
        assert!(n.is_root());
        assert!(frames(&out).is_empty());
        assert!(out.contains(&Output::Host(Ssid::new(DeviceId(1), 0))));
    }

    #[test]
    fn visible_network_is_joined() {
        let mut n = node(2);
        n.handle(0, Input::Arrive);
        let target = Ssid::new(DeviceId(1), 0);
        let out = n.handle(100, Input::ScanResult(vec![Ssid::new(DeviceId(9), 0), target]));
        let Role::Joining(a) = &n.role else { panic!() };
        assert_eq!(a.ssid, target);
        assert_eq!(a.deadline, 100 + n.params.join_timeout);
        assert_eq!(frames(&out)[0].payload, Payload::JoinRequest { temporary: false });
    }

    #[test]
    fn join_timeout_guard() {
        let mut n = node(2);
        n.handle(0, Input::Arrive);
        n.handle(0, Input::ScanResult(vec![Ssid::new(DeviceId(1), 0)]));
        let epoch = n.epoch;
        n.handle(4_999, Input::Timer(Timer::JoinTimeout { epoch }));
        // the guard ignores an early call
        n.on_join_timeout();
        assert!(matches!(n.role, Role::Joining(_)));
        n.handle(5_000, Input::Timer(Timer::JoinTimeout { epoch }));
        assert!(n.is_root());
    }

    #[test]
    fn nonce_allocator_gives_distinct_ssids() {
        let mut a = Node::new(DeviceId(2), Params::default(), 7);
        let mut b = Node::new(DeviceId(3), Params::default(), 7);
        let sa = a.allocate_ssid();
        let sb = b.allocate_ssid();
        assert_ne!(sa, sb);
        assert_ne!(sa, a.allocate_ssid());
    }

    #[test]
    fn reject_retries_next_best_once_then_hosts() {
        let mut n = node(5);
        n.handle(0, Input::Arrive);
        let s1 = Ssid::new(DeviceId(1), 0);
        let s2 = Ssid::new(DeviceId(2), 0);
        n.handle(0, Input::ScanResult(vec![s2, s1]));
        n.handle(10, Input::Frame(Frame::to(DeviceId(1), DeviceId(5), Payload::JoinReject { ssid: s1 })));
        let Role::Joining(a) = &n.role else { panic!() };
        assert_eq!(a.ssid, s2);
        n.handle(20, Input::Frame(Frame::to(DeviceId(2), DeviceId(5), Payload::JoinReject { ssid: s2 })));
        assert!(n.is_root());
    }

    #[test]
    fn member_leave_sends_notice() {
        let mut n = node(2);
        n.handle(0, Input::Arrive);
        let s = Ssid::new(DeviceId(1), 0);
        n.handle(0, Input::ScanResult(vec![s]));
        n.handle(10, Input::Frame(Frame::to(DeviceId(1), DeviceId(2), Payload::JoinAccept { root: DeviceId(1), ssid: s, known: false })));
        assert!(matches!(n.role, Role::Member { .. }));
        let out = n.handle(20, Input::Depart { silent: false });
        assert_eq!(frames(&out)[0].payload, Payload::LeaveNotice);
        assert!(matches!(n.role, Role::Offline));
    }

    #[test]
    fn root_ping_cycle_with_no_members_is_silent() {
        let mut n = node(1);
        n.handle(0, Input::Arrive);
        n.handle(0, Input::ScanResult(vec![]));
        let epoch = n.epoch;
        let out = n.handle(10_000, Input::Timer(Timer::Ping { epoch }));
        assert!(frames(&out).is_empty());
    }
}
