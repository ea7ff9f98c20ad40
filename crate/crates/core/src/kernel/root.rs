//! State held by a device while it hosts a hotspot.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::catalog::{NetworkFileCatalog, SubnetCatalog};
use crate::ids::{DeviceId, SimTime};
use crate::kernel::frame::CourierOrder;
use crate::params::Params;
use crate::routing::{Dispatch, WantedBoard};
use crate::ssid::Ssid;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MembershipRecord {
    pub peer: DeviceId,
    pub last_seen: SimTime,
    pub leaving_since: Option<SimTime>,
    /// Couriers visiting from another subnet hold no catalog entries and
    /// leave without a countdown.
    pub temporary: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Admission {
    Accepted { known: bool },
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PurgeReason {
    Silent,
    Left,
    VisitOver,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutstandingOrder {
    pub order: CourierOrder,
    pub corr: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PingOutcome {
    pub purged: Vec<DeviceId>,
    pub pinged: Vec<DeviceId>,
    pub expired_orders: Vec<OutstandingOrder>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RootState {
    pub ssid: Ssid,
    pub members: BTreeMap<DeviceId, MembershipRecord>,
    pub catalog: NetworkFileCatalog,
    pub subnets: SubnetCatalog,
    pub orders: BTreeMap<u64, OutstandingOrder>,
    #[serde(skip)]
    pub wanted: WantedBoard,
    #[serde(skip)]
    pub dispatches: BTreeMap<(u64, DeviceId), Dispatch>,
    pub(crate) next_order: u64,
    #[serde(skip)]
    pub(crate) fetch_backlog: Vec<Ssid>,
}

impl RootState {
    pub fn new(ssid: Ssid, catalog: NetworkFileCatalog) -> Self {
        RootState {
            ssid,
            members: BTreeMap::new(),
            catalog,
            subnets: SubnetCatalog::new(),
            orders: BTreeMap::new(),
            wanted: WantedBoard::default(),
            dispatches: BTreeMap::new(),
            next_order: 1,
            fetch_backlog: Vec::new(),
        }
    }

    pub fn root_id(&self) -> DeviceId {
        self.ssid.root_id
    }

    pub fn is_member(&self, peer: DeviceId) -> bool {
        self.members.contains_key(&peer)
    }

    /// A member that shares files and reports scans (not a visiting courier).
    pub fn is_resident(&self, peer: DeviceId) -> bool {
        peer == self.root_id() || self.members.get(&peer).is_some_and(|m| !m.temporary)
    }

    /// Admits `peer` if there is room. A request from an existing member is
    /// accepted without changing the member set and cancels a pending
    /// departure.
    pub fn admit_peer(&mut self, peer: DeviceId, temporary: bool, now: SimTime, max_members: usize) -> Admission {
        if peer == self.root_id() {
            return Admission::Rejected;
        }
        if let Some(rec) = self.members.get_mut(&peer) {
            rec.leaving_since = None;
            rec.last_seen = now;
            return Admission::Accepted { known: true };
        }
        if self.members.len() >= max_members {
            return Admission::Rejected;
        }
        self.members.insert(
            peer,
            MembershipRecord {
                peer,
                last_seen: now,
                leaving_since: None,
                temporary,
            },
        );
        Admission::Accepted { known: false }
    }

    /// Starts the departure countdown of a resident member, or removes a
    /// visiting courier at once. Returns `None` for stale notices.
    pub fn on_leave_notice(&mut self, peer: DeviceId, now: SimTime) -> Option<PurgeReason> {
        let rec = self.members.get_mut(&peer)?;
        if rec.temporary {
            self.purge_member(peer);
            return Some(PurgeReason::VisitOver);
        }
        rec.leaving_since = Some(now);
        rec.last_seen = now;
        Some(PurgeReason::Left)
    }

    /// Purges `peer` if its departure countdown has run out.
    pub fn leave_countdown_due(&mut self, peer: DeviceId, now: SimTime, countdown: SimTime) -> bool {
        let due = self
            .members
            .get(&peer)
            .and_then(|r| r.leaving_since)
            .is_some_and(|since| now.saturating_sub(since) >= countdown);
        if due {
            self.purge_member(peer);
        }
        due
    }

    pub fn touch(&mut self, peer: DeviceId, now: SimTime) {
        if let Some(rec) = self.members.get_mut(&peer) {
            rec.last_seen = rec.last_seen.max(now);
        }
    }

    /// Removes `peer` from the member set and from both catalogs.
    pub fn purge_member(&mut self, peer: DeviceId) {
        self.members.remove(&peer);
        self.catalog.remove_holder(peer);
        self.subnets.remove_member(peer);
    }

    fn exemption_end(&self, o: &OutstandingOrder, params: &Params) -> SimTime {
        o.order.issued_at + params.mission_timeout + 2 * params.hop_latency
    }

    /// Couriers on a mission are away without answering pings.
    pub fn is_exempt(&self, peer: DeviceId, now: SimTime, params: &Params) -> bool {
        self.orders
            .values()
            .any(|o| o.order.courier == peer && now < self.exemption_end(o, params))
    }

    /// Couriers currently carrying an order.
    pub fn busy_couriers(&self) -> std::collections::BTreeSet<DeviceId> {
        self.orders.values().map(|o| o.order.courier).collect()
    }

    /// Periodic liveness pass: drops expired orders, purges members silent
    /// for `silent_timeout` (unless on a mission), ages both catalogs and
    /// lists the members to ping.
    pub fn ping_cycle(&mut self, now: SimTime, params: &Params) -> PingOutcome {
        let expired: Vec<u64> = self
            .orders
            .iter()
            .filter(|(_, o)| now >= self.exemption_end(o, params))
            .map(|(id, _)| *id)
            .collect();
        let expired_orders = expired.iter().filter_map(|id| self.orders.remove(id)).collect();

        let silent: Vec<DeviceId> = self
            .members
            .values()
            .filter(|m| now.saturating_sub(m.last_seen) >= params.silent_timeout)
            .map(|m| m.peer)
            .filter(|p| !self.is_exempt(*p, now, params))
            .collect();
        for p in &silent {
            self.purge_member(*p);
        }
        self.subnets.expire(now, params.neighbor_ttl);
        self.catalog.expire(now, params.catalog_ttl, &self.subnets);
        PingOutcome {
            purged: silent,
            pinged: self.members.keys().copied().collect(),
            expired_orders,
        }
    }
}
