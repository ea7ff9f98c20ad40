//! The data path: block transfers inside a subnet and courier missions
//! between subnets.

pub mod courier;
pub mod session;

use bytes::Bytes;

use crate::ids::{DeviceId, FileId, FileMeta};
use crate::kernel::frame::*;
use crate::kernel::node::{Node, NodeEvent, Timer};
use session::{assign_blocks, reassemble, serve_block, SessionMode, SessionStep, TransferSession};

/// Which session a step belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Owner {
    Own(u64),
    Mission,
}

impl Node {
    pub(crate) fn start_download(&mut self, corr: u64, file_id: FileId, ttl: Option<u32>) {
        if self.storage.contains(&file_id) {
            self.note(NodeEvent::DownloadComplete {
                corr,
                file: file_id,
                bytes: 0,
                already_held: true,
            });
            return;
        }
        let Some(root) = self.home_root() else {
            self.note(NodeEvent::DownloadFailed {
                corr,
                file: file_id,
                reason: FailReason::NotAttached,
            });
            return;
        };
        let session = TransferSession::pending(corr, self.id, file_id, self.clock, self.params.block_timeout);
        self.sessions.insert(corr, session);
        let deadline = self.clock + 2 * self.params.mission_timeout + 4 * self.params.hop_latency;
        self.timer(deadline, Timer::SessionDeadline { corr });
        self.send(
            Frame::to(
                self.id,
                root,
                Payload::DownloadRequest {
                    file_id,
                    range: None,
                    budget: ttl,
                },
            )
            .with_corr(corr),
        );
    }

    fn owner_of(&self, corr: u64) -> Option<Owner> {
        if self
            .mission
            .as_ref()
            .is_some_and(|m| m.corr == corr && m.session.is_some())
        {
            Some(Owner::Mission)
        } else if self.sessions.contains_key(&corr) {
            Some(Owner::Own(corr))
        } else {
            None
        }
    }

    fn session_mut(&mut self, owner: Owner) -> Option<&mut TransferSession> {
        match owner {
            Owner::Own(corr) => self.sessions.get_mut(&corr),
            Owner::Mission => self.mission.as_mut().and_then(|m| m.session.as_mut()),
        }
    }

    pub(crate) fn on_source_list(&mut self, corr: u64, meta: FileMeta, sources: Vec<DeviceId>) {
        let now = self.clock;
        let Some(owner) = self.owner_of(corr) else {
            return;
        };
        let Some(s) = self.session_mut(owner) else {
            return;
        };
        if s.mode != SessionMode::Pending || s.file_id != meta.file_id {
            return;
        }
        let range = match owner {
            Owner::Mission => self.mission.as_ref().unwrap().range().unwrap_or(meta.full_range()),
            Owner::Own(_) => meta.full_range(),
        };
        let file = meta.file_id;
        let steps = self.session_mut(owner).unwrap().start_pull(meta, range, &sources, now);
        self.note(NodeEvent::DownloadStarted { corr, file, mode: "pull" });
        self.note(NodeEvent::BlocksAssigned {
            corr,
            assignment: assign_blocks(range, &sources),
        });
        self.apply_steps(owner, steps);
    }

    pub(crate) fn on_transfer_status(&mut self, corr: u64, status: TransferStatus) {
        let Some(owner) = self.owner_of(corr) else {
            return;
        };
        match status {
            TransferStatus::Dispatched { meta, legs } => {
                let s = self.session_mut(owner).unwrap();
                if s.mode != SessionMode::Pending || s.file_id != meta.file_id {
                    return;
                }
                let range = match owner {
                    Owner::Mission => self.mission.as_ref().unwrap().range().unwrap_or(meta.full_range()),
                    Owner::Own(_) => meta.full_range(),
                };
                let file = meta.file_id;
                self.session_mut(owner).unwrap().start_push(meta, range);
                let mode = if legs.len() > 1 { "swarm" } else { "courier" };
                self.note(NodeEvent::DownloadStarted { corr, file, mode });
                if range.is_empty() {
                    let now = self.clock;
                    let steps = self.session_mut(owner).unwrap().resume(now);
                    self.apply_steps(owner, steps);
                }
            }
            TransferStatus::Failed { reason, .. } => self.apply_steps(owner, vec![SessionStep::Failed(reason)]),
        }
    }

    pub(crate) fn on_block_request(&mut self, src: DeviceId, corr: u64, file_id: FileId, index: u32) {
        let stored = self.storage.get(&file_id).map(|f| f.content.clone());
        let payload = serve_block(stored.as_ref(), self.params.block_size, index);
        self.send(Frame::to(self.id, src, Payload::BlockResponse { file_id, index, payload }).with_corr(corr));
    }

    pub(crate) fn on_block_response(&mut self, src: DeviceId, corr: u64, file_id: FileId, index: u32, payload: BlockPayload) {
        let now = self.clock;
        let Some(owner) = self.owner_of(corr) else {
            return;
        };
        let s = self.session_mut(owner).unwrap();
        if s.file_id != file_id {
            return;
        }
        let steps = s.on_block(src, index, payload, now);
        self.apply_steps(owner, steps);
    }

    pub(crate) fn on_block_timeout(&mut self, corr: u64, index: u32, source: DeviceId, since: u64) {
        let now = self.clock;
        let Some(owner) = self.owner_of(corr) else {
            return;
        };
        let steps = self.session_mut(owner).unwrap().on_timeout(source, index, since, now);
        self.apply_steps(owner, steps);
    }

    pub(crate) fn on_session_deadline(&mut self, corr: u64) {
        if self.sessions.contains_key(&corr) {
            self.apply_steps(Owner::Own(corr), vec![SessionStep::Failed(FailReason::Timeout)]);
        }
    }

    pub(crate) fn fail_all_sessions(&mut self, reason: FailReason) {
        let corrs: Vec<u64> = self.sessions.keys().copied().collect();
        for corr in corrs {
            self.apply_steps(Owner::Own(corr), vec![SessionStep::Failed(reason)]);
        }
    }

    pub(crate) fn apply_steps(&mut self, owner: Owner, steps: Vec<SessionStep>) {
        let mut queue: std::collections::VecDeque<SessionStep> = steps.into();
        while let Some(step) = queue.pop_front() {
            let Some(s) = self.session_mut(owner) else {
                return;
            };
            let corr = s.corr;
            let file_id = s.file_id;
            match step {
                SessionStep::Request { source, index } => {
                    let since = self.clock;
                    let at = since + self.params.block_timeout;
                    self.send(Frame::to(self.id, source, Payload::BlockRequest { file_id, index }).with_corr(corr));
                    self.timer(
                        at,
                        Timer::BlockTimeout {
                            corr,
                            index,
                            source,
                            since,
                        },
                    );
                }
                SessionStep::SourceDropped { source, reassigned } => {
                    self.note(NodeEvent::BlocksReassigned {
                        corr,
                        from: source,
                        blocks: reassigned,
                    });
                }
                SessionStep::Retrying => {
                    self.note(NodeEvent::DownloadRetry { corr });
                    let now = self.clock;
                    queue.extend(s_resume(self, owner, now));
                }
                SessionStep::Complete(blocks) => {
                    self.finish_session(owner, blocks);
                    return;
                }
                SessionStep::Failed(reason) => {
                    self.fail_session(owner, reason);
                    return;
                }
            }
        }
    }

    fn finish_session(&mut self, owner: Owner, blocks: Vec<(u32, Bytes)>) {
        match owner {
            Owner::Own(corr) => {
                let s = self.sessions.remove(&corr).unwrap();
                let meta = s.meta.expect("completed session has metadata");
                let content = reassemble(&blocks);
                let bytes = content.len() as u64;
                self.storage.insert_meta(meta.clone(), content);
                self.note(NodeEvent::DownloadComplete {
                    corr,
                    file: meta.file_id,
                    bytes,
                    already_held: false,
                });
                self.notify_files(vec![meta], Vec::new());
            }
            Owner::Mission => self.mission_blocks_ready(blocks),
        }
    }

    fn fail_session(&mut self, owner: Owner, reason: FailReason) {
        match owner {
            Owner::Own(corr) => {
                let s = self.sessions.remove(&corr).unwrap();
                self.note(NodeEvent::DownloadFailed {
                    corr,
                    file: s.file_id,
                    reason,
                });
            }
            Owner::Mission => self.fail_mission(reason),
        }
    }
}

fn s_resume(node: &mut Node, owner: Owner, now: u64) -> Vec<SessionStep> {
    node.session_mut(owner).map(|s| s.resume(now)).unwrap_or_default()
}
