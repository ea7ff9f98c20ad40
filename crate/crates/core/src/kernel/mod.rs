//! Subnet formation, membership and liveness, plus the frame vocabulary.

pub mod frame;
pub mod node;
pub mod root;
pub mod wire;

pub use frame::{Frame, Payload};
pub use node::{Input, Node, Output, Role};
