use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not a protocol ssid: {0:?}")]
    NotProtocolSsid(String),
    #[error("invalid file id: {0:?}")]
    InvalidFileId(String),
    #[error("frame decode error: {0}")]
    Decode(#[from] crate::kernel::wire::DecodeError),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("invalid value {value:?} for parameter {name}")]
    InvalidParam { name: String, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
