use std::fmt;

use bytes::Bytes;
use serde::Serialize;

use crate::catalog::CatalogSnapshot;
use crate::ids::{BlockRange, DeviceId, FileId, FileMeta, SimTime};
use crate::ssid::Ssid;

pub const PROTOCOL_VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Destination {
    Broadcast,
    Device(DeviceId),
}

impl fmt::Display for Destination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Destination::Broadcast => f.write_str("*"),
            Destination::Device(d) => write!(f, "{d}"),
        }
    }
}

/// A protocol message. `corr` ties transfer-related frames to the user
/// request that caused them (0 when unrelated).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub src: DeviceId,
    pub dst: Destination,
    pub corr: u64,
    pub payload: Payload,
}

impl Frame {
    pub fn to(src: DeviceId, dst: DeviceId, payload: Payload) -> Self {
        Frame {
            src,
            dst: Destination::Device(dst),
            corr: 0,
            payload,
        }
    }

    pub fn broadcast(src: DeviceId, payload: Payload) -> Self {
        Frame {
            src,
            dst: Destination::Broadcast,
            corr: 0,
            payload,
        }
    }

    pub fn with_corr(mut self, corr: u64) -> Self {
        self.corr = corr;
        self
    }

    pub fn kind(&self) -> FrameKind {
        self.payload.kind()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum FrameKind {
    JoinRequest = 1,
    JoinAccept = 2,
    JoinReject = 3,
    FileList = 4,
    ScanReport = 5,
    LeaveNotice = 6,
    Ping = 7,
    Pong = 8,
    SearchRequest = 9,
    SearchResponse = 10,
    DownloadRequest = 11,
    SourceList = 12,
    BlockRequest = 13,
    BlockResponse = 14,
    CatalogSnapshot = 15,
    CourierOrder = 16,
    WantedFile = 17,
    FileChange = 18,
    CatalogRequest = 19,
    MissionReport = 20,
    TransferStatus = 21,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        use FrameKind::*;
        Some(match b {
            1 => JoinRequest,
            2 => JoinAccept,
            3 => JoinReject,
            4 => FileList,
            5 => ScanReport,
            6 => LeaveNotice,
            7 => Ping,
            8 => Pong,
            9 => SearchRequest,
            10 => SearchResponse,
            11 => DownloadRequest,
            12 => SourceList,
            13 => BlockRequest,
            14 => BlockResponse,
            15 => CatalogSnapshot,
            16 => CourierOrder,
            17 => WantedFile,
            18 => FileChange,
            19 => CatalogRequest,
            20 => MissionReport,
            21 => TransferStatus,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        use FrameKind::*;
        match self {
            JoinRequest => "join_request",
            JoinAccept => "join_accept",
            JoinReject => "join_reject",
            FileList => "file_list",
            ScanReport => "scan_report",
            LeaveNotice => "leave_notice",
            Ping => "ping",
            Pong => "pong",
            SearchRequest => "search_request",
            SearchResponse => "search_response",
            DownloadRequest => "download_request",
            SourceList => "source_list",
            BlockRequest => "block_request",
            BlockResponse => "block_response",
            CatalogSnapshot => "catalog_snapshot",
            CourierOrder => "courier_order",
            WantedFile => "wanted_file",
            FileChange => "file_change",
            CatalogRequest => "catalog_request",
            MissionReport => "mission_report",
            TransferStatus => "transfer_status",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    Name(String),
    Id(FileId),
}

impl Query {
    pub fn matches(&self, meta: &FileMeta) -> bool {
        match self {
            Query::Name(n) => meta.names.contains(n),
            Query::Id(id) => meta.file_id == *id,
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Name(n) => write!(f, "name:{n}"),
            Query::Id(id) => write!(f, "id:{}", id.short()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    Local,
    Remote { hops: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SearchHit {
    pub meta: FileMeta,
    pub locality: Locality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum FailReason {
    NotFound = 1,
    TtlExhausted = 2,
    NoCourier = 3,
    HopFailed = 4,
    JoinRejected = 5,
    Timeout = 6,
    HashMismatch = 7,
    SourcesExhausted = 8,
    Disconnected = 9,
    Busy = 10,
    NotAttached = 11,
}

impl FailReason {
    pub fn from_byte(b: u8) -> Option<Self> {
        use FailReason::*;
        Some(match b {
            1 => NotFound,
            2 => TtlExhausted,
            3 => NoCourier,
            4 => HopFailed,
            5 => JoinRejected,
            6 => Timeout,
            7 => HashMismatch,
            8 => SourcesExhausted,
            9 => Disconnected,
            10 => Busy,
            11 => NotAttached,
            _ => return None,
        })
    }

    /// Failures caused by a courier's trip rather than by the catalog; these
    /// are worth one reassignment to another courier.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            FailReason::HopFailed
                | FailReason::JoinRejected
                | FailReason::Timeout
                | FailReason::Disconnected
                | FailReason::Busy
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mission {
    FetchCatalog,
    FetchFile {
        meta: FileMeta,
        range: BlockRange,
        requester: DeviceId,
        return_subnet: Ssid,
        destination: Ssid,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CourierOrder {
    pub order_id: u64,
    pub courier: DeviceId,
    pub target: Ssid,
    pub mission: Mission,
    pub ttl: u32,
    pub issued_at: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockPayload {
    Data(Bytes),
    Error(BlockError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum BlockError {
    UnknownFile = 1,
    OutOfRange = 2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransferStatus {
    /// Couriers are on their way; each leg delivers the listed block range.
    Dispatched {
        meta: FileMeta,
        legs: Vec<(DeviceId, BlockRange)>,
    },
    Failed {
        file_id: FileId,
        reason: FailReason,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    JoinRequest {
        temporary: bool,
    },
    JoinAccept {
        root: DeviceId,
        ssid: Ssid,
        /// The requester was already a member (rejoin or returning courier).
        known: bool,
    },
    JoinReject {
        ssid: Ssid,
    },
    FileList {
        files: Vec<FileMeta>,
    },
    FileChange {
        added: Vec<FileMeta>,
        removed: Vec<FileId>,
    },
    ScanReport {
        visible: Vec<Ssid>,
    },
    LeaveNotice,
    Ping,
    Pong,
    SearchRequest {
        query: Query,
    },
    /// Empty `results` means not found.
    SearchResponse {
        query: Query,
        results: Vec<SearchHit>,
    },
    DownloadRequest {
        file_id: FileId,
        range: Option<BlockRange>,
        /// Remaining hop budget when the request comes from a courier.
        budget: Option<u32>,
    },
    SourceList {
        meta: FileMeta,
        sources: Vec<DeviceId>,
    },
    BlockRequest {
        file_id: FileId,
        index: u32,
    },
    BlockResponse {
        file_id: FileId,
        index: u32,
        payload: BlockPayload,
    },
    CatalogRequest,
    CatalogSnapshot {
        snapshot: CatalogSnapshot,
        order: Option<u64>,
    },
    CourierOrder(CourierOrder),
    MissionReport {
        order: u64,
        failure: Option<FailReason>,
    },
    TransferStatus(TransferStatus),
    WantedFile {
        query: Query,
    },
}

impl Payload {
    pub fn kind(&self) -> FrameKind {
        use Payload::*;
        match self {
            JoinRequest { .. } => FrameKind::JoinRequest,
            JoinAccept { .. } => FrameKind::JoinAccept,
            JoinReject { .. } => FrameKind::JoinReject,
            FileList { .. } => FrameKind::FileList,
            FileChange { .. } => FrameKind::FileChange,
            ScanReport { .. } => FrameKind::ScanReport,
            LeaveNotice => FrameKind::LeaveNotice,
            Ping => FrameKind::Ping,
            Pong => FrameKind::Pong,
            SearchRequest { .. } => FrameKind::SearchRequest,
            SearchResponse { .. } => FrameKind::SearchResponse,
            DownloadRequest { .. } => FrameKind::DownloadRequest,
            SourceList { .. } => FrameKind::SourceList,
            BlockRequest { .. } => FrameKind::BlockRequest,
            BlockResponse { .. } => FrameKind::BlockResponse,
            CatalogRequest => FrameKind::CatalogRequest,
            CatalogSnapshot { .. } => FrameKind::CatalogSnapshot,
            CourierOrder(_) => FrameKind::CourierOrder,
            MissionReport { .. } => FrameKind::MissionReport,
            TransferStatus(_) => FrameKind::TransferStatus,
            WantedFile { .. } => FrameKind::WantedFile,
        }
    }
}
