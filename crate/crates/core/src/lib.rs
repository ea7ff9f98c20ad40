//! Hybrid peer-to-peer file sharing over wifi hotspots.
//!
//! Devices either host a hotspot (the root of a subnet) or join one. Roots
//! keep a catalog of the files their members share and send couriers to
//! neighboring hotspots to learn about, and fetch, files held elsewhere.
//! [`sim::World`] runs any number of devices in a deterministic simulated
//! radio environment, and [`harness`] drives it from scenario files.

pub mod catalog;
pub mod error;
pub mod harness;
pub mod ids;
pub mod kernel;
pub mod params;
pub mod routing;
pub mod sim;
pub mod ssid;
pub mod transfer;

pub use error::{Error, Result};
pub use ids::{compute_file_id, BlockRange, DeviceId, FileId, FileMeta, SimTime, BLOCK_SIZE};
pub use params::Params;
pub use ssid::{derive_passphrase, Passphrase, Ssid};
