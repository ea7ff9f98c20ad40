use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bytes::{Bytes, BytesMut};
use serde::Serialize;

use crate::ids::{block_bounds, compute_file_id, BlockRange, DeviceId, FileId, FileMeta, SimTime};
use crate::kernel::frame::{BlockError, BlockPayload, FailReason};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockState {
    Missing,
    Requested { source: DeviceId, since: SimTime },
    Held,
}

/// Where the blocks of a session come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// Waiting for the root to answer the download request.
    Pending,
    /// Pulling blocks from holders in the same subnet.
    Pull,
    /// Couriers push blocks on their return.
    Push,
}

/// What the owner of a session has to do next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SessionStep {
    Request { source: DeviceId, index: u32 },
    SourceDropped { source: DeviceId, reassigned: Vec<u32> },
    Retrying,
    /// All blocks of the range are held; carries them in index order. For a
    /// full-file range the content has been verified against the file id.
    Complete(Vec<(u32, Bytes)>),
    Failed(FailReason),
}

/// Deals `range` over `sources` round robin by block index: block `i` goes
/// to the source at position `i % n` of the sorted source list.
pub fn assign_blocks(range: BlockRange, sources: &[DeviceId]) -> BTreeMap<DeviceId, Vec<u32>> {
    let mut sorted = sources.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out: BTreeMap<DeviceId, Vec<u32>> = sorted.iter().map(|s| (*s, Vec::new())).collect();
    if sorted.is_empty() {
        return out;
    }
    for i in range.iter() {
        let s = sorted[i as usize % sorted.len()];
        out.get_mut(&s).unwrap().push(i);
    }
    out
}

/// Splits `range` into `k` contiguous parts whose sizes differ by at most
/// one; the larger parts come first.
pub fn partition_blocks(range: BlockRange, k: u32) -> Vec<BlockRange> {
    let k = k.clamp(1, range.len().max(1));
    let base = range.len() / k;
    let extra = range.len() % k;
    let mut start = range.start;
    (0..k)
        .map(|i| {
            let len = base + u32::from(i < extra);
            let r = BlockRange::new(start, start + len);
            start += len;
            r
        })
        .collect()
}

/// Answers a block request from local storage.
pub fn serve_block(content: Option<&Bytes>, meta_block_size: u64, index: u32) -> BlockPayload {
    let Some(content) = content else {
        return BlockPayload::Error(BlockError::UnknownFile);
    };
    let size = content.len() as u64;
    if index >= crate::ids::block_count(size, meta_block_size) {
        return BlockPayload::Error(BlockError::OutOfRange);
    }
    let (start, end) = block_bounds(size, meta_block_size, index);
    BlockPayload::Data(content.slice(start as usize..end as usize))
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferSession {
    pub corr: u64,
    pub requester: DeviceId,
    pub file_id: FileId,
    pub meta: Option<FileMeta>,
    pub range: BlockRange,
    pub mode: SessionMode,
    /// Live sources, sorted.
    pub sources: Vec<DeviceId>,
    pub block_map: BTreeMap<u32, BlockState>,
    pub started_at: SimTime,
    #[serde(skip)]
    queues: BTreeMap<DeviceId, VecDeque<u32>>,
    #[serde(skip)]
    data: BTreeMap<u32, Bytes>,
    initial_sources: Vec<DeviceId>,
    reassignments_used: u32,
    hash_retries_used: u32,
    block_timeout: SimTime,
}

impl TransferSession {
    pub fn pending(corr: u64, requester: DeviceId, file_id: FileId, now: SimTime, block_timeout: SimTime) -> Self {
        TransferSession {
            corr,
            requester,
            file_id,
            meta: None,
            range: BlockRange::new(0, 0),
            mode: SessionMode::Pending,
            sources: Vec::new(),
            block_map: BTreeMap::new(),
            started_at: now,
            queues: BTreeMap::new(),
            data: BTreeMap::new(),
            initial_sources: Vec::new(),
            reassignments_used: 0,
            hash_retries_used: 0,
            block_timeout,
        }
    }

    pub fn is_full_file(&self) -> bool {
        self.meta.as_ref().is_some_and(|m| self.range == m.full_range())
    }

    pub fn held(&self) -> usize {
        self.data.len()
    }

    pub fn block_timeout(&self) -> SimTime {
        self.block_timeout
    }

    fn reset_blocks(&mut self) {
        self.block_map = self.range.iter().map(|i| (i, BlockState::Missing)).collect();
        self.data.clear();
    }

    /// Switches to pulling `range` from `sources` and returns the first
    /// request for every source (one request in flight per source).
    pub fn start_pull(&mut self, meta: FileMeta, range: BlockRange, sources: &[DeviceId], now: SimTime) -> Vec<SessionStep> {
        self.meta = Some(meta);
        self.range = range;
        self.mode = SessionMode::Pull;
        self.reset_blocks();
        let mut sorted = sources.to_vec();
        sorted.sort();
        sorted.dedup();
        self.initial_sources = sorted.clone();
        self.sources = sorted;
        if self.sources.is_empty() {
            return vec![SessionStep::Failed(FailReason::SourcesExhausted)];
        }
        if range.is_empty() {
            return self.check_complete();
        }
        self.queues = assign_blocks(range, &self.sources)
            .into_iter()
            .map(|(s, blocks)| (s, blocks.into()))
            .collect();
        self.kick_idle(now)
    }

    /// Switches to receiving pushed blocks for `range`.
    pub fn start_push(&mut self, meta: FileMeta, range: BlockRange) {
        self.meta = Some(meta);
        self.range = range;
        self.mode = SessionMode::Push;
        self.reset_blocks();
    }

    fn in_flight(&self, source: DeviceId) -> Option<u32> {
        self.block_map.iter().find_map(|(i, st)| match st {
            BlockState::Requested { source: s, .. } if *s == source => Some(*i),
            _ => None,
        })
    }

    fn kick_idle(&mut self, now: SimTime) -> Vec<SessionStep> {
        let mut steps = Vec::new();
        for source in self.sources.clone() {
            if self.in_flight(source).is_some() {
                continue;
            }
            let queue = self.queues.entry(source).or_default();
            while let Some(index) = queue.pop_front() {
                if self.block_map.get(&index) == Some(&BlockState::Missing) {
                    self.block_map.insert(index, BlockState::Requested { source, since: now });
                    steps.push(SessionStep::Request { source, index });
                    break;
                }
            }
        }
        steps
    }

    /// Handles a block arriving from `src`.
    pub fn on_block(&mut self, src: DeviceId, index: u32, payload: BlockPayload, now: SimTime) -> Vec<SessionStep> {
        match self.mode {
            SessionMode::Pending => Vec::new(),
            SessionMode::Push => match payload {
                BlockPayload::Data(data) if self.range.contains(index) => {
                    if self.block_map.get(&index) != Some(&BlockState::Held) {
                        self.block_map.insert(index, BlockState::Held);
                        self.data.insert(index, data);
                    }
                    self.check_complete()
                }
                _ => Vec::new(),
            },
            SessionMode::Pull => {
                let expected = matches!(
                    self.block_map.get(&index),
                    Some(BlockState::Requested { source, .. }) if *source == src
                );
                if !expected {
                    return Vec::new();
                }
                match payload {
                    BlockPayload::Data(data) => {
                        self.block_map.insert(index, BlockState::Held);
                        self.data.insert(index, data);
                        let mut steps = self.check_complete();
                        if steps.is_empty() {
                            steps = self.kick_idle(now);
                        }
                        steps
                    }
                    BlockPayload::Error(_) => self.drop_source(src, now),
                }
            }
        }
    }

    /// A request to `source` for `index` has gone unanswered.
    pub fn on_timeout(&mut self, source: DeviceId, index: u32, since: SimTime, now: SimTime) -> Vec<SessionStep> {
        match self.block_map.get(&index) {
            Some(BlockState::Requested { source: s, since: t }) if *s == source && *t == since => {
                self.drop_source(source, now)
            }
            _ => Vec::new(),
        }
    }

    /// Removes a source and deals its outstanding blocks over the remaining
    /// ones. Only one reassignment round is allowed per session.
    pub fn drop_source(&mut self, source: DeviceId, now: SimTime) -> Vec<SessionStep> {
        if !self.sources.contains(&source) {
            return Vec::new();
        }
        self.sources.retain(|s| *s != source);
        let mut orphaned: BTreeSet<u32> = self.queues.remove(&source).unwrap_or_default().into_iter().collect();
        if let Some(i) = self.in_flight(source) {
            self.block_map.insert(i, BlockState::Missing);
            orphaned.insert(i);
        }
        orphaned.retain(|i| self.block_map.get(i) == Some(&BlockState::Missing));
        if self.sources.is_empty() || (self.reassignments_used >= 1 && !orphaned.is_empty()) {
            return vec![SessionStep::Failed(FailReason::SourcesExhausted)];
        }
        let reassigned: Vec<u32> = orphaned.into_iter().collect();
        if !reassigned.is_empty() {
            self.reassignments_used += 1;
            for (k, i) in reassigned.iter().enumerate() {
                let s = self.sources[k % self.sources.len()];
                self.queues.entry(s).or_default().push_back(*i);
            }
        }
        let mut steps = vec![SessionStep::SourceDropped { source, reassigned }];
        steps.extend(self.kick_idle(now));
        steps
    }

    fn check_complete(&mut self) -> Vec<SessionStep> {
        if self.block_map.values().any(|s| *s != BlockState::Held) {
            return Vec::new();
        }
        let blocks: Vec<(u32, Bytes)> = std::mem::take(&mut self.data).into_iter().collect();
        if self.is_full_file() {
            let mut content = BytesMut::new();
            for (_, b) in &blocks {
                content.extend_from_slice(b);
            }
            if compute_file_id(&content) != self.file_id {
                return self.on_hash_mismatch();
            }
        }
        vec![SessionStep::Complete(blocks)]
    }

    fn on_hash_mismatch(&mut self) -> Vec<SessionStep> {
        if self.mode != SessionMode::Pull || self.hash_retries_used >= 1 {
            return vec![SessionStep::Failed(FailReason::HashMismatch)];
        }
        self.hash_retries_used += 1;
        self.reset_blocks();
        self.sources = self.initial_sources.clone();
        self.queues = assign_blocks(self.range, &self.sources)
            .into_iter()
            .map(|(s, blocks)| (s, blocks.into()))
            .collect();
        // requests are re-issued by the owner at its current time
        vec![SessionStep::Retrying]
    }

    /// Re-issues requests after a retry or for idle sources.
    pub fn resume(&mut self, now: SimTime) -> Vec<SessionStep> {
        self.kick_idle(now)
    }

    pub fn requested_since(&self, index: u32) -> Option<(DeviceId, SimTime)> {
        match self.block_map.get(&index) {
            Some(BlockState::Requested { source, since }) => Some((*source, *since)),
            _ => None,
        }
    }
}

/// Concatenates complete blocks back into file content.
pub fn reassemble(blocks: &[(u32, Bytes)]) -> Bytes {
    let mut out = BytesMut::new();
    for (_, b) in blocks {
        out.extend_from_slice(b);
    }
    out.freeze()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BS: u64 = 4;

    fn file(len: usize) -> (FileMeta, Bytes) {
        let content: Bytes = (0..len).map(|i| (i * 7 % 251) as u8).collect::<Vec<_>>().into();
        (FileMeta::new("f", &content, BS), content)
    }

    fn answer(session: &mut TransferSession, content: &Bytes, steps: Vec<SessionStep>, now: SimTime) -> Vec<SessionStep> {
        let mut out = Vec::new();
        for s in steps {
            match s {
                SessionStep::Request { source, index } => {
                    out.extend(session.on_block(source, index, serve_block(Some(content), BS, index), now))
                }
                other => out.push(other),
            }
        }
        out
    }

    fn drive(session: &mut TransferSession, content: &Bytes, mut steps: Vec<SessionStep>) -> Vec<SessionStep> {
        let mut terminal = Vec::new();
        while !steps.is_empty() {
            steps = answer(session, content, steps, 0);
            let (done, rest): (Vec<_>, Vec<_>) = steps
                .into_iter()
                .partition(|s| matches!(s, SessionStep::Complete(_) | SessionStep::Failed(_)));
            terminal.extend(done);
            steps = rest
                .into_iter()
                .filter(|s| matches!(s, SessionStep::Request { .. }))
                .collect();
        }
        terminal
    }

    #[test]
    fn round_robin_two_holders_four_blocks() {
        let a = DeviceId(10);
        let b = DeviceId(20);
        // brute recomputation: block i -> sorted[i % 2]
        let expected = BTreeMap::from([(a, vec![0, 2]), (b, vec![1, 3])]);
        assert_eq!(assign_blocks(BlockRange::new(0, 4), &[b, a]), expected);
    }

    #[test]
    fn partition_sizes() {
        let sizes = |n, k| partition_blocks(BlockRange::new(0, n), k).iter().map(|r| r.len()).collect::<Vec<_>>();
        assert_eq!(partition_blocks(BlockRange::new(0, 10), 2), vec![BlockRange::new(0, 5), BlockRange::new(5, 10)]);
        assert_eq!(sizes(10, 3), vec![4, 3, 3]);
        assert_eq!(sizes(32, 3), vec![11, 11, 10]);
    }

    proptest! {
        #[test]
        fn partition_matches_enumeration(n in 1u32..200, k in 1u32..8) {
            let parts = partition_blocks(BlockRange::new(0, n), k);
            // brute force: deal blocks one at a time to the part with the fewest
            let kk = k.min(n) as usize;
            let mut brute = vec![0u32; kk];
            for _ in 0..n {
                let i = (0..kk).min_by_key(|i| (brute[*i], *i)).unwrap();
                brute[i] += 1;
            }
            prop_assert_eq!(parts.iter().map(|r| r.len()).collect::<Vec<_>>(), brute);
            let mut next = 0;
            for r in &parts {
                prop_assert_eq!(r.start, next);
                next = r.end;
            }
            prop_assert_eq!(next, n);
        }

        #[test]
        fn assignment_is_deterministic_and_balanced(n in 1u32..100, k in 1u64..6) {
            let sources: Vec<DeviceId> = (0..k).map(|i| DeviceId(100 - i)).collect();
            let a = assign_blocks(BlockRange::new(0, n), &sources);
            prop_assert_eq!(&a, &assign_blocks(BlockRange::new(0, n), &sources));
            let counts: Vec<usize> = a.values().map(|v| v.len()).collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn serve_block_edges() {
        let one = Bytes::from_static(b"z");
        assert_eq!(serve_block(Some(&one), BS, 0), BlockPayload::Data(one.clone()));
        assert_eq!(serve_block(Some(&one), BS, 1), BlockPayload::Error(BlockError::OutOfRange));
        assert_eq!(serve_block(None, BS, 0), BlockPayload::Error(BlockError::UnknownFile));
        let empty = Bytes::new();
        assert_eq!(serve_block(Some(&empty), BS, 0), BlockPayload::Data(Bytes::new()));
    }

    #[test]
    fn single_source_completes_and_verifies() {
        let (meta, content) = file(16);
        let mut s = TransferSession::pending(1, DeviceId(1), meta.file_id, 0, 1000);
        let steps = s.start_pull(meta.clone(), meta.full_range(), &[DeviceId(2)], 0);
        assert_eq!(steps, vec![SessionStep::Request { source: DeviceId(2), index: 0 }]);
        let done = drive(&mut s, &content, steps);
        let SessionStep::Complete(blocks) = &done[0] else { panic!("{done:?}") };
        assert_eq!(blocks.len(), 4);
        assert_eq!(reassemble(blocks), content);
    }

    #[test]
    fn departed_source_is_reassigned() {
        let (meta, content) = file(12);
        let (a, b) = (DeviceId(2), DeviceId(3));
        let mut s = TransferSession::pending(1, DeviceId(1), meta.file_id, 0, 1000);
        let first = s.start_pull(meta.clone(), meta.full_range(), &[a, b], 0);
        // a serves block 0, b never answers block 1
        let after_a = s.on_block(a, 0, serve_block(Some(&content), BS, 0), 5);
        assert_eq!(after_a, vec![SessionStep::Request { source: a, index: 2 }]);
        let (_, since) = s.requested_since(1).unwrap();
        let mut steps = s.on_timeout(b, 1, since, 1000);
        assert_eq!(steps[0], SessionStep::SourceDropped { source: b, reassigned: vec![1] });
        steps.extend(answer(&mut s, &content, vec![SessionStep::Request { source: a, index: 2 }], 6));
        let done = drive(&mut s, &content, steps);
        assert!(matches!(&done[0], SessionStep::Complete(b) if reassemble(b) == content), "{first:?} {done:?}");
    }

    #[test]
    fn losing_every_source_fails() {
        let (meta, _) = file(8);
        let mut s = TransferSession::pending(1, DeviceId(1), meta.file_id, 0, 1000);
        s.start_pull(meta.clone(), meta.full_range(), &[DeviceId(2)], 0);
        assert_eq!(s.drop_source(DeviceId(2), 1), vec![SessionStep::Failed(FailReason::SourcesExhausted)]);
    }

    #[test]
    fn corrupt_source_retried_once_then_failed() {
        let (meta, content) = file(8);
        let corrupt: Bytes = content.iter().map(|b| b ^ 1).collect::<Vec<_>>().into();
        let mut s = TransferSession::pending(1, DeviceId(1), meta.file_id, 0, 1000);
        let steps = s.start_pull(meta.clone(), meta.full_range(), &[DeviceId(2)], 0);
        let out = drive(&mut s, &corrupt, steps);
        assert!(out.is_empty());
        // first mismatch triggers a retry
        assert!(s.block_map.values().all(|b| *b == BlockState::Missing));
        let again = s.resume(10);
        let out = drive(&mut s, &corrupt, again);
        assert_eq!(out, vec![SessionStep::Failed(FailReason::HashMismatch)]);
    }

    #[test]
    fn push_mode_collects_any_order() {
        let (meta, content) = file(10);
        let mut s = TransferSession::pending(1, DeviceId(1), meta.file_id, 0, 1000);
        s.start_push(meta.clone(), meta.full_range());
        let mut last = Vec::new();
        for i in [2u32, 0, 1] {
            last = s.on_block(DeviceId(9), i, serve_block(Some(&content), BS, i), 0);
        }
        assert!(matches!(&last[0], SessionStep::Complete(b) if reassemble(b) == content));
    }
}
