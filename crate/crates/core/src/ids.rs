//! Identity types shared by every layer: devices, content-addressed files and
//! simulation time.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;

/// Default block size used to split files for transfer (64 KiB).
pub const BLOCK_SIZE: u64 = 64 * 1024;

/// Simulation time in milliseconds.
pub type SimTime = u64;

/// Opaque device identity. Doubles as the device's network address inside a
/// subnet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u64);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// SHA-256 digest of a file's content. Names play no part in it, so renamed
/// copies and duplicates collapse to one identity.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileId(pub [u8; 32]);

impl FileId {
    pub fn to_hex(&self) -> String {
        data_encoding::HEXLOWER.encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, Error> {
        let bytes = data_encoding::HEXLOWER_PERMISSIVE
            .decode(s.as_bytes())
            .map_err(|_| Error::InvalidFileId(s.to_string()))?;
        let digest: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::InvalidFileId(s.to_string()))?;
        Ok(FileId(digest))
    }

    /// Short prefix for logs.
    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }
}

impl fmt::Debug for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FileId({})", self.short())
    }
}

impl fmt::Display for FileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for FileId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FileId::from_hex(s)
    }
}

impl Serialize for FileId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for FileId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FileId::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn compute_file_id(content: &[u8]) -> FileId {
    FileId(Sha256::digest(content).into())
}

/// Number of transfer blocks for a file of `size` bytes. An empty file is a
/// single empty block.
pub fn block_count(size: u64, block_size: u64) -> u32 {
    assert!(block_size > 0, "block size must be positive");
    if size == 0 {
        1
    } else {
        size.div_ceil(block_size) as u32
    }
}

/// Byte range `[start, end)` covered by block `index`.
pub fn block_bounds(size: u64, block_size: u64, index: u32) -> (u64, u64) {
    let start = (index as u64 * block_size).min(size);
    let end = (start + block_size).min(size);
    (start, end)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileMeta {
    pub file_id: FileId,
    pub names: BTreeSet<String>,
    pub size: u64,
    pub block_count: u32,
}

impl FileMeta {
    pub fn new(name: impl Into<String>, content: &[u8], block_size: u64) -> Self {
        FileMeta {
            file_id: compute_file_id(content),
            names: BTreeSet::from([name.into()]),
            size: content.len() as u64,
            block_count: block_count(content.len() as u64, block_size),
        }
    }

    pub fn merge_names(&mut self, other: &FileMeta) {
        self.names.extend(other.names.iter().cloned());
    }

    pub fn full_range(&self) -> BlockRange {
        BlockRange::new(0, self.block_count)
    }
}

/// Half-open range of block indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockRange {
    pub start: u32,
    pub end: u32,
}

impl BlockRange {
    pub fn new(start: u32, end: u32) -> Self {
        debug_assert!(start <= end);
        BlockRange { start, end }
    }

    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, index: u32) -> bool {
        (self.start..self.end).contains(&index)
    }

    pub fn iter(&self) -> std::ops::Range<u32> {
        self.start..self.end
    }
}

impl fmt::Display for BlockRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "[]")
        } else {
            write!(f, "[{}..{}]", self.start, self.end - 1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Published SHA-256 test vectors, independent of the sha2 crate.
    const EMPTY_DIGEST: &str = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855";
    const ABC_DIGEST: &str = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
    const ABD_DIGEST: &str = "a52d159f262b2c6ddb724a61840befc36eb30c88877a4030b65cbe86298449c9";

    #[test]
    fn empty_content_has_canonical_digest() {
        assert_eq!(compute_file_id(b"").to_hex(), EMPTY_DIGEST);
    }

    #[test]
    fn one_byte_difference_changes_id() {
        let a = compute_file_id(b"abc");
        let b = compute_file_id(b"abd");
        assert_eq!(a.to_hex(), ABC_DIGEST);
        assert_eq!(b.to_hex(), ABD_DIGEST);
        assert_ne!(a, b);
    }

    #[test]
    fn id_ignores_name() {
        let a = FileMeta::new("a.mp3", b"tune", BLOCK_SIZE);
        let b = FileMeta::new("b.mp3", b"tune", BLOCK_SIZE);
        assert_eq!(a.file_id, b.file_id);
    }

    #[test]
    fn block_count_edges() {
        assert_eq!(block_count(0, BLOCK_SIZE), 1);
        assert_eq!(block_count(1, BLOCK_SIZE), 1);
        assert_eq!(block_count(BLOCK_SIZE, BLOCK_SIZE), 1);
        assert_eq!(block_count(BLOCK_SIZE + 1, BLOCK_SIZE), 2);
        assert_eq!(block_count(5 * BLOCK_SIZE, BLOCK_SIZE), 5);
    }

    #[test]
    fn final_block_may_be_short() {
        assert_eq!(block_bounds(10, 4, 2), (8, 10));
        assert_eq!(block_bounds(0, 4, 0), (0, 0));
    }

    #[test]
    fn hex_round_trip() {
        let id = compute_file_id(b"x");
        assert_eq!(FileId::from_hex(&id.to_hex()).unwrap(), id);
        assert!(FileId::from_hex("abc").is_err());
    }
}
