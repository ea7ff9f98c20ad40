//! Protocol and environment constants. Every value can be overridden per
//! scenario (`[params]` table) or from the command line (`--set name=value`).
//! Durations are simulated milliseconds.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::ids::{SimTime, BLOCK_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Hotspot capacity, excluding the root.
    pub max_members: usize,
    pub join_timeout: SimTime,
    pub ping_interval: SimTime,
    pub silent_timeout: SimTime,
    pub leave_countdown: SimTime,
    pub courier_period: SimTime,
    pub catalog_ttl: SimTime,
    pub neighbor_ttl: SimTime,
    pub block_size: u64,
    pub link_latency: SimTime,
    pub hop_latency: SimTime,
    /// Hop budget of a courier chain. Also caps recorded catalog distances.
    pub ttl: u32,
    /// Minimum block count for a multi-courier fetch.
    pub swarm_threshold: u32,
    pub max_swarm: u32,
    pub wanted_repeat: SimTime,
    /// Repeats after the first wanted-file broadcast; 0 means emit once.
    pub wanted_max: u32,
    /// Period of member scans reported to the root.
    pub scan_period: SimTime,
    /// A block request unanswered for this long marks its source as gone.
    pub block_timeout: SimTime,
    /// Upper bound on a courier mission and on a requester waiting for one.
    pub mission_timeout: SimTime,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            max_members: 7,
            join_timeout: 5_000,
            ping_interval: 10_000,
            silent_timeout: 30_000,
            leave_countdown: 30_000,
            courier_period: 20_000,
            catalog_ttl: 60_000,
            neighbor_ttl: 60_000,
            block_size: BLOCK_SIZE,
            link_latency: 10,
            hop_latency: 2_000,
            ttl: 8,
            swarm_threshold: 16,
            max_swarm: 4,
            wanted_repeat: 30_000,
            wanted_max: 3,
            scan_period: 10_000,
            block_timeout: 1_000,
            mission_timeout: 120_000,
        }
    }
}

impl Params {
    pub const NAMES: &'static [&'static str] = &[
        "max_members",
        "join_timeout",
        "ping_interval",
        "silent_timeout",
        "leave_countdown",
        "courier_period",
        "catalog_ttl",
        "neighbor_ttl",
        "block_size",
        "link_latency",
        "hop_latency",
        "ttl",
        "swarm_threshold",
        "max_swarm",
        "wanted_repeat",
        "wanted_max",
        "scan_period",
        "block_timeout",
        "mission_timeout",
    ];

    /// Overrides one parameter by name. Names are case-insensitive, so
    /// `MAX_MEMBERS=5` and `max_members=5` are equivalent.
    pub fn set(&mut self, name: &str, value: &str) -> Result<(), Error> {
        let key = name.trim().to_ascii_lowercase();
        let bad = || Error::InvalidParam {
            name: key.clone(),
            value: value.to_string(),
        };
        let num: u64 = value.trim().parse().map_err(|_| bad())?;
        let small = || u32::try_from(num).map_err(|_| bad());
        match key.as_str() {
            "max_members" => self.max_members = num as usize,
            "join_timeout" => self.join_timeout = num,
            "ping_interval" => self.ping_interval = num,
            "silent_timeout" => self.silent_timeout = num,
            "leave_countdown" => self.leave_countdown = num,
            "courier_period" => self.courier_period = num,
            "catalog_ttl" => self.catalog_ttl = num,
            "neighbor_ttl" => self.neighbor_ttl = num,
            "block_size" => self.block_size = num,
            "link_latency" => self.link_latency = num,
            "hop_latency" => self.hop_latency = num,
            "ttl" => self.ttl = small()?,
            "swarm_threshold" => self.swarm_threshold = small()?,
            "max_swarm" => self.max_swarm = small()?,
            "wanted_repeat" => self.wanted_repeat = num,
            "wanted_max" => self.wanted_max = small()?,
            "scan_period" => self.scan_period = num,
            "block_timeout" => self.block_timeout = num,
            "mission_timeout" => self.mission_timeout = num,
            _ => return Err(Error::UnknownParam(name.to_string())),
        }
        self.validate().map_err(|_| bad())
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        Some(match name.trim().to_ascii_lowercase().as_str() {
            "max_members" => self.max_members as u64,
            "join_timeout" => self.join_timeout,
            "ping_interval" => self.ping_interval,
            "silent_timeout" => self.silent_timeout,
            "leave_countdown" => self.leave_countdown,
            "courier_period" => self.courier_period,
            "catalog_ttl" => self.catalog_ttl,
            "neighbor_ttl" => self.neighbor_ttl,
            "block_size" => self.block_size,
            "link_latency" => self.link_latency,
            "hop_latency" => self.hop_latency,
            "ttl" => self.ttl.into(),
            "swarm_threshold" => self.swarm_threshold.into(),
            "max_swarm" => self.max_swarm.into(),
            "wanted_repeat" => self.wanted_repeat,
            "wanted_max" => self.wanted_max.into(),
            "scan_period" => self.scan_period,
            "block_timeout" => self.block_timeout,
            "mission_timeout" => self.mission_timeout,
            _ => return None,
        })
    }

    /// Every parameter by name.
    pub fn to_map(&self) -> std::collections::BTreeMap<&'static str, u64> {
        Self::NAMES.iter().map(|n| (*n, self.get(n).unwrap())).collect()
    }

    /// Parses `NAME=VALUE`.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), Error> {
        let (name, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::UnknownParam(assignment.to_string()))?;
        self.set(name, value)
    }

    pub fn validate(&self) -> Result<(), Error> {
        let positive = [
            ("block_size", self.block_size),
            ("ping_interval", self.ping_interval),
            ("courier_period", self.courier_period),
            ("scan_period", self.scan_period),
            ("wanted_repeat", self.wanted_repeat),
            ("ttl", self.ttl as u64),
            ("max_swarm", self.max_swarm as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParam {
                    name: name.to_string(),
                    value: "0".to_string(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_is_case_insensitive() {
        let mut p = Params::default();
        p.set("MAX_MEMBERS", "5").unwrap();
        p.apply_assignment("hop_latency=100").unwrap();
        assert_eq!(p.max_members, 5);
        assert_eq!(p.hop_latency, 100);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        let mut p = Params::default();
        assert!(matches!(p.set("warp", "1"), Err(Error::UnknownParam(_))));
        assert!(p.set("ttl", "x").is_err());
        assert!(p.set("block_size", "0").is_err());
    }

    #[test]
    fn every_name_is_settable() {
        for name in Params::NAMES {
            let mut p = Params::default();
            p.set(name, "3").unwrap();
            assert_eq!(p.get(name), Some(3), "{name}");
        }
        assert_eq!(Params::default().to_map().len(), Params::NAMES.len());
    }
}
