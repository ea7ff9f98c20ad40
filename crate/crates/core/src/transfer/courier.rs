//! A courier's trip: hop to a neighboring subnet, join it as a visitor,
//! fetch a catalog or blocks there, come back and deliver.

use bytes::Bytes;
use serde::Serialize;

use crate::catalog::CatalogSnapshot;
use crate::ids::{BlockRange, DeviceId};
use crate::kernel::frame::*;
use crate::kernel::node::{Leg, Node, NodeEvent, Output, Role, Timer};
use crate::ssid::Ssid;
use crate::transfer::session::TransferSession;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionPhase {
    Outbound,
    Visiting,
    Returning,
}

#[derive(Clone, Debug, Serialize)]
pub struct CourierMission {
    pub order: CourierOrder,
    pub corr: u64,
    pub home: Ssid,
    pub home_root: DeviceId,
    pub phase: MissionPhase,
    pub retried: bool,
    pub path_taken: Vec<Ssid>,
    pub failure: Option<FailReason>,
    #[serde(skip)]
    pub session: Option<TransferSession>,
    #[serde(skip)]
    pub carried: Vec<(u32, Bytes)>,
    #[serde(skip)]
    pub snapshot: Option<CatalogSnapshot>,
}

impl CourierMission {
    pub fn range(&self) -> Option<BlockRange> {
        match &self.order.mission {
            Mission::FetchFile { range, .. } => Some(*range),
            Mission::FetchCatalog => None,
        }
    }
}

impl Node {
    pub(crate) fn on_courier_order(&mut self, src: DeviceId, corr: u64, order: CourierOrder) {
        let Role::Member {
            ssid,
            root,
            temporary: false,
        } = self.role
        else {
            return;
        };
        if root != src || order.courier != self.id {
            return;
        }
        if self.mission.is_some() || !self.sessions.is_empty() {
            let order_id = order.order_id;
            self.send(Frame::to(self.id, root, Payload::MissionReport { order: order_id, failure: Some(FailReason::Busy) }).with_corr(corr));
            return;
        }
        let target = order.target;
        self.note(NodeEvent::MissionAccepted {
            order: order.order_id,
            target,
        });
        let deadline = order.issued_at + self.params.mission_timeout;
        self.timer(deadline, Timer::MissionDeadline { order: order.order_id });
        self.mission = Some(CourierMission {
            order,
            corr,
            home: ssid,
            home_root: root,
            phase: MissionPhase::Outbound,
            retried: false,
            path_taken: Vec::new(),
            failure: None,
            session: None,
            carried: Vec::new(),
            snapshot: None,
        });
        self.set_role(Role::Floating);
        self.emit(Output::Hop {
            target,
            leg: Leg::Forward,
            corr,
        });
    }

    pub(crate) fn on_hop_result(&mut self, target: Ssid, arrived: bool) {
        let Some(m) = &self.mission else {
            return;
        };
        match m.phase {
            MissionPhase::Outbound if arrived => self.join_after_hop(target, true),
            MissionPhase::Outbound => self.fail_mission(FailReason::HopFailed),
            MissionPhase::Returning if arrived => self.join_after_hop(target, false),
            MissionPhase::Returning => self.abandon_mission(),
            MissionPhase::Visiting => {}
        }
    }

    pub(crate) fn on_hop_refused(&mut self, _target: Ssid) {
        let Some(m) = &self.mission else {
            return;
        };
        match m.phase {
            MissionPhase::Outbound if m.path_taken.is_empty() && !m.retried => {
                // never left home
                let m = self.mission.take().unwrap();
                self.set_role(Role::Member {
                    ssid: m.home,
                    root: m.home_root,
                    temporary: false,
                });
                self.restart_scans();
                self.note(NodeEvent::MissionFailed {
                    corr: m.corr,
                    order: m.order.order_id,
                    reason: FailReason::HopFailed,
                });
                self.send(
                    Frame::to(
                        self.id,
                        m.home_root,
                        Payload::MissionReport {
                            order: m.order.order_id,
                            failure: Some(FailReason::HopFailed),
                        },
                    )
                    .with_corr(m.corr),
                );
            }
            MissionPhase::Outbound => self.fail_mission(FailReason::HopFailed),
            _ => self.abandon_mission(),
        }
    }

    fn restart_scans(&mut self) {
        let epoch = self.epoch;
        self.timer(self.clock + self.params.scan_period, Timer::Scan { epoch });
    }

    pub(crate) fn courier_joined(&mut self, ssid: Ssid, root: DeviceId, known: bool) {
        let m = self.mission.as_ref().unwrap();
        if m.phase == MissionPhase::Returning {
            if ssid == m.home {
                self.deliver_home(root, known);
            }
            return;
        }
        let corr = m.corr;
        let mission = m.order.mission.clone();
        let ttl = m.order.ttl;
        self.set_role(Role::Member {
            ssid,
            root,
            temporary: true,
        });
        self.note(NodeEvent::Joined {
            ssid,
            temporary: true,
        });
        let m = self.mission.as_mut().unwrap();
        m.phase = MissionPhase::Visiting;
        m.path_taken.push(ssid);
        match mission {
            Mission::FetchCatalog => self.send(Frame::to(self.id, root, Payload::CatalogRequest)),
            Mission::FetchFile {
                meta,
                range,
                destination,
                ..
            } => {
                self.note(NodeEvent::DestinationCheck {
                    corr,
                    subnet: ssid,
                    destination,
                    reached: ssid == destination,
                });
                let file_id = meta.file_id;
                let session = TransferSession::pending(corr, self.id, file_id, self.clock, self.params.block_timeout);
                self.mission.as_mut().unwrap().session = Some(session);
                self.send(
                    Frame::to(
                        self.id,
                        root,
                        Payload::DownloadRequest {
                            file_id,
                            range: Some(range),
                            budget: Some(ttl - 1),
                        },
                    )
                    .with_corr(corr),
                );
            }
        }
    }

    pub(crate) fn courier_rejected(&mut self) {
        let m = self.mission.as_mut().unwrap();
        match m.phase {
            MissionPhase::Outbound if !m.retried => {
                m.retried = true;
                let (target, corr) = (m.order.target, m.corr);
                self.set_role(Role::Floating);
                self.emit(Output::Hop {
                    target,
                    leg: Leg::Retry,
                    corr,
                });
            }
            MissionPhase::Outbound => self.fail_mission(FailReason::JoinRejected),
            _ => self.abandon_mission(),
        }
    }

    pub(crate) fn courier_join_failed(&mut self, reason: FailReason) {
        match self.mission.as_ref().unwrap().phase {
            MissionPhase::Returning => self.abandon_mission(),
            _ => self.fail_mission(reason),
        }
    }

    pub(crate) fn courier_disconnected(&mut self) {
        match self.mission.as_ref().unwrap().phase {
            MissionPhase::Returning => self.abandon_mission(),
            _ => self.fail_mission(FailReason::Disconnected),
        }
    }

    pub(crate) fn courier_got_snapshot(&mut self, src: DeviceId, snapshot: CatalogSnapshot) {
        let visiting_root = match self.role {
            Role::Member {
                root,
                temporary: true,
                ..
            } => root,
            _ => return,
        };
        let Some(m) = self.mission.as_mut() else {
            return;
        };
        if src != visiting_root || m.phase != MissionPhase::Visiting || m.order.mission != Mission::FetchCatalog {
            return;
        }
        m.snapshot = Some(snapshot);
        self.start_return();
    }

    pub(crate) fn mission_blocks_ready(&mut self, blocks: Vec<(u32, Bytes)>) {
        let m = self.mission.as_mut().unwrap();
        m.session = None;
        m.carried = blocks;
        self.start_return();
    }

    pub(crate) fn on_mission_deadline(&mut self, order: u64) {
        let Some(m) = &self.mission else {
            return;
        };
        if m.order.order_id == order && m.phase == MissionPhase::Visiting {
            self.fail_mission(FailReason::Timeout);
        }
    }

    /// Records the failure and heads home to report it.
    pub(crate) fn fail_mission(&mut self, reason: FailReason) {
        let m = self.mission.as_mut().unwrap();
        if m.phase == MissionPhase::Returning {
            return;
        }
        m.failure = Some(reason);
        m.session = None;
        let (corr, order) = (m.corr, m.order.order_id);
        self.note(NodeEvent::MissionFailed { corr, order, reason });
        self.start_return();
    }

    fn start_return(&mut self) {
        if let Role::Member {
            root,
            temporary: true,
            ..
        } = self.role
        {
            self.send(Frame::to(self.id, root, Payload::LeaveNotice));
        }
        let m = self.mission.as_mut().unwrap();
        m.phase = MissionPhase::Returning;
        let (home, corr) = (m.home, m.corr);
        self.set_role(Role::Floating);
        self.emit(Output::Hop {
            target: home,
            leg: Leg::Return,
            corr,
        });
    }

    /// Gives up on getting home; the device starts over.
    fn abandon_mission(&mut self) {
        let m = self.mission.take().unwrap();
        self.note(NodeEvent::MissionAbandoned { order: m.order.order_id });
        self.emit(Output::Detach);
        self.set_role(Role::Scanning);
        self.emit(Output::Scan);
    }

    fn deliver_home(&mut self, root: DeviceId, known: bool) {
        let m = self.mission.take().unwrap();
        self.set_role(Role::Member {
            ssid: m.home,
            root,
            temporary: false,
        });
        self.note(NodeEvent::Joined {
            ssid: m.home,
            temporary: false,
        });
        if !known {
            let files = self.storage.metas();
            self.send(Frame::to(self.id, root, Payload::FileList { files }));
        }
        let order = m.order.order_id;
        let mut failure = m.failure;
        match &m.order.mission {
            Mission::FetchCatalog => {
                if let Some(snapshot) = m.snapshot {
                    self.send(Frame::to(
                        self.id,
                        root,
                        Payload::CatalogSnapshot {
                            snapshot,
                            order: Some(order),
                        },
                    ));
                } else if failure.is_none() {
                    failure = Some(FailReason::Timeout);
                }
            }
            Mission::FetchFile { meta, requester, .. } if failure.is_none() => {
                let blocks = m.carried.len() as u32;
                for (index, data) in m.carried {
                    self.send(
                        Frame::to(
                            self.id,
                            *requester,
                            Payload::BlockResponse {
                                file_id: meta.file_id,
                                index,
                                payload: BlockPayload::Data(data),
                            },
                        )
                        .with_corr(m.corr),
                    );
                }
                self.note(NodeEvent::MissionDelivered {
                    corr: m.corr,
                    order,
                    blocks,
                });
            }
            Mission::FetchFile { .. } => {}
        }
        self.send(Frame::to(self.id, root, Payload::MissionReport { order, failure }).with_corr(m.corr));
        self.emit(Output::Scan);
        self.restart_scans();
    }
}
