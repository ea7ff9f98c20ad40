//! Canonical binary encoding of frames.
//!
//! Layout: `version:u8 kind:u8 src:u64 dst corr:u64 payload`. `dst` is a tag
//! byte (0 broadcast, 1 device) followed by a `u64` for devices. Integers are
//! fixed-width big-endian, byte strings and lists carry a `u32` length prefix,
//! SSIDs and file ids are encoded in their binary forms. Collections are
//! written in their canonical (sorted) order, so equal frames always encode
//! to identical bytes.

use std::collections::BTreeSet;

use bytes::Bytes;
use thiserror::Error;

use super::frame::*;
use crate::catalog::{CatalogSnapshot, SnapshotEntry, SnapshotRemote};
use crate::ids::{BlockRange, DeviceId, FileId, FileMeta};
use crate::ssid::Ssid;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unknown frame kind {0}")]
    Kind(u8),
    #[error("truncated frame")]
    Truncated,
    #[error("invalid {0} tag {1}")]
    Tag(&'static str, u8),
    #[error("invalid utf-8 in string")]
    Utf8,
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length exceeds u32"));
    }
    fn bytes(&mut self, b: &[u8]) {
        self.len(b.len());
        self.buf.extend_from_slice(b);
    }
    fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
    fn device(&mut self, d: DeviceId) {
        self.u64(d.0);
    }
    fn devices(&mut self, ds: &[DeviceId]) {
        self.len(ds.len());
        ds.iter().for_each(|d| self.device(*d));
    }
    fn file_id(&mut self, id: &FileId) {
        self.buf.extend_from_slice(&id.0);
    }
    fn ssid(&mut self, s: &Ssid) {
        self.u64(s.root_id.0);
        self.u32(s.nonce);
    }
    fn range(&mut self, r: &BlockRange) {
        self.u32(r.start);
        self.u32(r.end);
    }
    fn opt_u32(&mut self, v: Option<u32>) {
        match v {
            None => self.u8(0),
            Some(v) => {
                self.u8(1);
                self.u32(v);
            }
        }
    }
    fn meta(&mut self, m: &FileMeta) {
        self.file_id(&m.file_id);
        self.len(m.names.len());
        m.names.iter().for_each(|n| self.str(n));
        self.u64(m.size);
        self.u32(m.block_count);
    }
    fn query(&mut self, q: &Query) {
        match q {
            Query::Name(n) => {
                self.u8(0);
                self.str(n);
            }
            Query::Id(id) => {
                self.u8(1);
                self.file_id(id);
            }
        }
    }
    fn reason(&mut self, r: FailReason) {
        self.u8(r as u8);
    }
    fn mission(&mut self, m: &Mission) {
        match m {
            Mission::FetchCatalog => self.u8(0),
            Mission::FetchFile {
                meta,
                range,
                requester,
                return_subnet,
                destination,
            } => {
                self.u8(1);
                self.meta(meta);
                self.range(range);
                self.device(*requester);
                self.ssid(return_subnet);
                self.ssid(destination);
            }
        }
    }
    fn snapshot(&mut self, s: &CatalogSnapshot) {
        self.ssid(&s.origin);
        self.len(s.entries.len());
        for e in &s.entries {
            self.meta(&e.meta);
            self.u32(e.local_holders);
            self.len(e.remote.len());
            for r in &e.remote {
                self.ssid(&r.subnet);
                self.u32(r.hops);
                self.u32(r.holder_count);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            t => Err(DecodeError::Tag("bool", t)),
        }
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize, DecodeError> {
        let n = self.u32()? as usize;
        // every element occupies at least one byte
        if n > self.buf.len() {
            return Err(DecodeError::Truncated);
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.len()?;
        self.take(n)
    }
    fn str(&mut self) -> Result<String, DecodeError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| DecodeError::Utf8)
    }
    fn device(&mut self) -> Result<DeviceId, DecodeError> {
        Ok(DeviceId(self.u64()?))
    }
    fn devices(&mut self) -> Result<Vec<DeviceId>, DecodeError> {
        let n = self.len()?;
        (0..n).map(|_| self.device()).collect()
    }
    fn file_id(&mut self) -> Result<FileId, DecodeError> {
        Ok(FileId(self.take(32)?.try_into().unwrap()))
    }
    fn ssid(&mut self) -> Result<Ssid, DecodeError> {
        Ok(Ssid::new(self.device()?, self.u32()?))
    }
    fn range(&mut self) -> Result<BlockRange, DecodeError> {
        let (start, end) = (self.u32()?, self.u32()?);
        if start > end {
            return Err(DecodeError::Tag("range", 0));
        }
        Ok(BlockRange::new(start, end))
    }
    fn opt_u32(&mut self) -> Result<Option<u32>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.u32()?)),
            t => Err(DecodeError::Tag("option", t)),
        }
    }
    fn meta(&mut self) -> Result<FileMeta, DecodeError> {
        let file_id = self.file_id()?;
        let n = self.len()?;
        let names = (0..n).map(|_| self.str()).collect::<Result<BTreeSet<_>, _>>()?;
        Ok(FileMeta {
            file_id,
            names,
            size: self.u64()?,
            block_count: self.u32()?,
        })
    }
    fn metas(&mut self) -> Result<Vec<FileMeta>, DecodeError> {
        let n = self.len()?;
        (0..n).map(|_| self.meta()).collect()
    }
    fn query(&mut self) -> Result<Query, DecodeError> {
        match self.u8()? {
            0 => Ok(Query::Name(self.str()?)),
            1 => Ok(Query::Id(self.file_id()?)),
            t => Err(DecodeError::Tag("query", t)),
        }
    }
    fn reason(&mut self) -> Result<FailReason, DecodeError> {
        let b = self.u8()?;
        FailReason::from_byte(b).ok_or(DecodeError::Tag("reason", b))
    }
    fn mission(&mut self) -> Result<Mission, DecodeError> {
        match self.u8()? {
            0 => Ok(Mission::FetchCatalog),
            1 => Ok(Mission::FetchFile {
                meta: self.meta()?,
                range: self.range()?,
                requester: self.device()?,
                return_subnet: self.ssid()?,
                destination: self.ssid()?,
            }),
            t => Err(DecodeError::Tag("mission", t)),
        }
    }
    fn snapshot(&mut self) -> Result<CatalogSnapshot, DecodeError> {
        let origin = self.ssid()?;
        let n = self.len()?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let meta = self.meta()?;
            let local_holders = self.u32()?;
            let m = self.len()?;
            let remote = (0..m)
                .map(|_| {
                    Ok(SnapshotRemote {
                        subnet: self.ssid()?,
                        hops: self.u32()?,
                        holder_count: self.u32()?,
                    })
                })
                .collect::<Result<Vec<_>, DecodeError>>()?;
            entries.push(SnapshotEntry {
                meta,
                local_holders,
                remote,
            });
        }
        Ok(CatalogSnapshot { origin, entries })
    }
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(PROTOCOL_VERSION);
    w.u8(frame.kind() as u8);
    w.device(frame.src);
    match frame.dst {
        Destination::Broadcast => w.u8(0),
        Destination::Device(d) => {
            w.u8(1);
            w.device(d);
        }
    }
    w.u64(frame.corr);
    use Payload::*;
    match &frame.payload {
        JoinRequest { temporary } => w.bool(*temporary),
        JoinAccept { root, ssid, known } => {
            w.device(*root);
            w.ssid(ssid);
            w.bool(*known);
        }
        JoinReject { ssid } => w.ssid(ssid),
        FileList { files } => {
            w.len(files.len());
            files.iter().for_each(|m| w.meta(m));
        }
        FileChange { added, removed } => {
            w.len(added.len());
            added.iter().for_each(|m| w.meta(m));
            w.len(removed.len());
            removed.iter().for_each(|id| w.file_id(id));
        }
        ScanReport { visible } => {
            w.len(visible.len());
            visible.iter().for_each(|s| w.ssid(s));
        }
        LeaveNotice | Ping | Pong | CatalogRequest => {}
        SearchRequest { query } => w.query(query),
        SearchResponse { query, results } => {
            w.query(query);
            w.len(results.len());
            for hit in results {
                w.meta(&hit.meta);
                match hit.locality {
                    Locality::Local => w.u8(0),
                    Locality::Remote { hops } => {
                        w.u8(1);
                        w.u32(hops);
                    }
                }
            }
        }
        DownloadRequest {
            file_id,
            range,
            budget,
        } => {
            w.file_id(file_id);
            match range {
                None => w.u8(0),
                Some(r) => {
                    w.u8(1);
                    w.range(r);
                }
            }
            w.opt_u32(*budget);
        }
        SourceList { meta, sources } => {
            w.meta(meta);
            w.devices(sources);
        }
        BlockRequest { file_id, index } => {
            w.file_id(file_id);
            w.u32(*index);
        }
        BlockResponse {
            file_id,
            index,
            payload,
        } => {
            w.file_id(file_id);
            w.u32(*index);
            match payload {
                BlockPayload::Data(data) => {
                    w.u8(0);
                    w.bytes(data);
                }
                BlockPayload::Error(e) => {
                    w.u8(1);
                    w.u8(*e as u8);
                }
            }
        }
        CatalogSnapshot { snapshot, order } => {
            w.snapshot(snapshot);
            match order {
                None => w.u8(0),
                Some(o) => {
                    w.u8(1);
                    w.u64(*o);
                }
            }
        }
        CourierOrder(o) => {
            w.u64(o.order_id);
            w.device(o.courier);
            w.ssid(&o.target);
            w.mission(&o.mission);
            w.u32(o.ttl);
            w.u64(o.issued_at);
        }
        MissionReport { order, failure } => {
            w.u64(*order);
            match failure {
                None => w.u8(0),
                Some(r) => w.reason(*r),
            }
        }
        TransferStatus(status) => match status {
            super::frame::TransferStatus::Dispatched { meta, legs } => {
                w.u8(0);
                w.meta(meta);
                w.len(legs.len());
                for (d, r) in legs {
                    w.device(*d);
                    w.range(r);
                }
            }
            super::frame::TransferStatus::Failed { file_id, reason } => {
                w.u8(1);
                w.file_id(file_id);
                w.reason(*reason);
            }
        },
        WantedFile { query } => w.query(query),
    }
    w.buf
}

pub fn decode_frame(buf: &[u8]) -> Result<Frame, DecodeError> {
    let mut r = Reader { buf };
    let version = r.u8()?;
    if version != PROTOCOL_VERSION {
        return Err(DecodeError::Version(version));
    }
    let kind_byte = r.u8()?;
    let kind = FrameKind::from_byte(kind_byte).ok_or(DecodeError::Kind(kind_byte))?;
    let src = r.device()?;
    let dst = match r.u8()? {
        0 => Destination::Broadcast,
        1 => Destination::Device(r.device()?),
        t => return Err(DecodeError::Tag("destination", t)),
    };
    let corr = r.u64()?;
    let payload = match kind {
        FrameKind::JoinRequest => Payload::JoinRequest {
            temporary: r.bool()?,
        },
        FrameKind::JoinAccept => Payload::JoinAccept {
            root: r.device()?,
            ssid: r.ssid()?,
            known: r.bool()?,
        },
        FrameKind::JoinReject => Payload::JoinReject { ssid: r.ssid()? },
        FrameKind::FileList => Payload::FileList { files: r.metas()? },
        FrameKind::FileChange => {
            let added = r.metas()?;
            let n = r.len()?;
            let removed = (0..n).map(|_| r.file_id()).collect::<Result<_, _>>()?;
            Payload::FileChange { added, removed }
        }
        FrameKind::ScanReport => {
            let n = r.len()?;
            Payload::ScanReport {
                visible: (0..n).map(|_| r.ssid()).collect::<Result<_, _>>()?,
            }
        }
        FrameKind::LeaveNotice => Payload::LeaveNotice,
        FrameKind::Ping => Payload::Ping,
        FrameKind::Pong => Payload::Pong,
        FrameKind::CatalogRequest => Payload::CatalogRequest,
        FrameKind::SearchRequest => Payload::SearchRequest { query: r.query()? },
        FrameKind::SearchResponse => {
            let query = r.query()?;
            let n = r.len()?;
            let mut results = Vec::with_capacity(n);
            for _ in 0..n {
                let meta = r.meta()?;
                let locality = match r.u8()? {
                    0 => Locality::Local,
                    1 => Locality::Remote { hops: r.u32()? },
                    t => return Err(DecodeError::Tag("locality", t)),
                };
                results.push(SearchHit { meta, locality });
            }
            Payload::SearchResponse { query, results }
        }
        FrameKind::DownloadRequest => {
            let file_id = r.file_id()?;
            let range = match r.u8()? {
                0 => None,
                1 => Some(r.range()?),
                t => return Err(DecodeError::Tag("option", t)),
            };
            Payload::DownloadRequest {
                file_id,
                range,
                budget: r.opt_u32()?,
            }
        }
        FrameKind::SourceList => Payload::SourceList {
            meta: r.meta()?,
            sources: r.devices()?,
        },
        FrameKind::BlockRequest => Payload::BlockRequest {
            file_id: r.file_id()?,
            index: r.u32()?,
        },
        FrameKind::BlockResponse => {
            let file_id = r.file_id()?;
            let index = r.u32()?;
            let payload = match r.u8()? {
                0 => BlockPayload::Data(Bytes::copy_from_slice(r.bytes()?)),
                1 => match r.u8()? {
                    1 => BlockPayload::Error(BlockError::UnknownFile),
                    2 => BlockPayload::Error(BlockError::OutOfRange),
                    t => return Err(DecodeError::Tag("block error", t)),
                },
                t => return Err(DecodeError::Tag("block payload", t)),
            };
            Payload::BlockResponse {
                file_id,
                index,
                payload,
            }
        }
        FrameKind::CatalogSnapshot => {
            let snapshot = r.snapshot()?;
            let order = match r.u8()? {
                0 => None,
                1 => Some(r.u64()?),
                t => return Err(DecodeError::Tag("option", t)),
            };
            Payload::CatalogSnapshot { snapshot, order }
        }
        FrameKind::CourierOrder => Payload::CourierOrder(CourierOrder {
            order_id: r.u64()?,
            courier: r.device()?,
            target: r.ssid()?,
            mission: r.mission()?,
            ttl: r.u32()?,
            issued_at: r.u64()?,
        }),
        FrameKind::MissionReport => {
            let order = r.u64()?;
            let failure = match r.u8()? {
                0 => None,
                b => Some(FailReason::from_byte(b).ok_or(DecodeError::Tag("reason", b))?),
            };
            Payload::MissionReport { order, failure }
        }
        FrameKind::TransferStatus => match r.u8()? {
            0 => {
                let meta = r.meta()?;
                let n = r.len()?;
                let legs = (0..n)
                    .map(|_| Ok((r.device()?, r.range()?)))
                    .collect::<Result<_, DecodeError>>()?;
                Payload::TransferStatus(TransferStatus::Dispatched { meta, legs })
            }
            1 => Payload::TransferStatus(TransferStatus::Failed {
                file_id: r.file_id()?,
                reason: r.reason()?,
            }),
            t => return Err(DecodeError::Tag("transfer status", t)),
        },
        FrameKind::WantedFile => Payload::WantedFile { query: r.query()? },
    };
    if !r.buf.is_empty() {
        return Err(DecodeError::Trailing(r.buf.len()));
    }
    Ok(Frame {
        src,
        dst,
        corr,
        payload,
    })
}
