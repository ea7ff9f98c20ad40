//! Courier scheduling, source selection and the wanted-file board, plus the
//! root-side handlers that use them.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Bound;

use serde::Serialize;

use crate::catalog::{CatalogEntry, CatalogSnapshot, RemoteRecord, SubnetCatalog};
use crate::ids::{BlockRange, DeviceId, FileId, FileMeta, SimTime};
use crate::kernel::frame::*;
use crate::kernel::node::{Node, NodeEvent, Timer};
use crate::kernel::root::OutstandingOrder;
use crate::ssid::Ssid;
use crate::transfer::session::partition_blocks;

/// Next candidate after `cursor` in id order, wrapping around.
pub fn next_in_rotation(candidates: &BTreeSet<DeviceId>, cursor: Option<DeviceId>) -> Option<DeviceId> {
    cursor
        .and_then(|c| candidates.range((Bound::Excluded(c), Bound::Unbounded)).next())
        .or_else(|| candidates.iter().next())
        .copied()
}

/// Round-robin designation over the members that can reach `target`,
/// skipping `exclude`. Advances the neighbor's cursor.
pub fn designate_courier(subnets: &mut SubnetCatalog, target: &Ssid, exclude: &BTreeSet<DeviceId>) -> Option<DeviceId> {
    let n = subnets.get_mut(target)?;
    let candidates: BTreeSet<DeviceId> = n.reachable_by.difference(exclude).copied().collect();
    let pick = next_in_rotation(&candidates, n.cursor)?;
    n.cursor = Some(pick);
    Some(pick)
}

/// Members able to carry a mission to `target` right now.
pub fn eligible_couriers(subnets: &SubnetCatalog, target: &Ssid, exclude: &BTreeSet<DeviceId>) -> BTreeSet<DeviceId> {
    subnets
        .get(target)
        .map(|n| n.reachable_by.difference(exclude).copied().collect())
        .unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Source {
    Local(Vec<DeviceId>),
    Remote { subnet: Ssid, record: RemoteRecord },
    NotFound,
}

/// Local holders (other than `requester`) win; otherwise the remote subnet
/// with the fewest hops, then the most holders, then the lowest id.
pub fn select_source(entry: Option<&CatalogEntry>, requester: DeviceId) -> Source {
    let Some(entry) = entry else {
        return Source::NotFound;
    };
    let holders: Vec<DeviceId> = entry.holders.iter().copied().filter(|h| *h != requester).collect();
    if !holders.is_empty() {
        return Source::Local(holders);
    }
    entry
        .remote
        .iter()
        .min_by(|(sa, a), (sb, b)| {
            a.hops
                .cmp(&b.hops)
                .then(b.holder_count.cmp(&a.holder_count))
                .then(sa.cmp(sb))
        })
        .map(|(subnet, record)| Source::Remote {
            subnet: *subnet,
            record: record.clone(),
        })
        .unwrap_or(Source::NotFound)
}

/// Search results as seen from the root's subnet.
pub fn search_hits(entries: &[&CatalogEntry]) -> Vec<SearchHit> {
    entries
        .iter()
        .filter_map(|e| {
            let locality = if !e.holders.is_empty() {
                Locality::Local
            } else {
                Locality::Remote {
                    hops: e.remote.values().map(|r| r.hops).min()?,
                }
            };
            Some(SearchHit {
                meta: e.meta.clone(),
                locality,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WantedEntry {
    pub query: Query,
    pub requester: DeviceId,
    /// WantedFile frames emitted so far.
    pub sent: u32,
}

/// Unresolved searches, keyed by the correlation id of the search.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WantedBoard {
    pub entries: BTreeMap<u64, WantedEntry>,
}

impl WantedBoard {
    pub fn pending_for(&self, query: &Query, requester: DeviceId) -> bool {
        self.entries
            .values()
            .any(|e| e.query == *query && e.requester == requester)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LegState {
    Active,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DispatchLeg {
    pub order: u64,
    pub courier: DeviceId,
    pub range: BlockRange,
    pub state: LegState,
}

/// A download being served by couriers on behalf of one requester.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Dispatch {
    pub meta: FileMeta,
    pub destination: Ssid,
    pub gateway: Ssid,
    pub budget: u32,
    pub swarm: bool,
    pub legs: Vec<DispatchLeg>,
    pub reassigned: bool,
    /// Ranges waiting for a swarm courier to come back free.
    pub pending: Vec<BlockRange>,
}

impl Dispatch {
    fn settled(&self) -> bool {
        self.pending.is_empty() && self.legs.iter().all(|l| l.state != LegState::Active)
    }
}

impl Node {
    pub(crate) fn on_search_request(&mut self, src: DeviceId, corr: u64, query: Query) {
        let Some(root) = self.root_state() else {
            return;
        };
        let hits = search_hits(&root.catalog.search(&query));
        let pending = root.wanted.pending_for(&query, src);
        let respond = Frame::to(
            self.id,
            src,
            Payload::SearchResponse {
                query: query.clone(),
                results: hits.clone(),
            },
        )
        .with_corr(corr);
        self.send(respond);
        if hits.is_empty() && !pending {
            self.root_state_mut().unwrap().wanted.entries.insert(
                corr,
                WantedEntry {
                    query,
                    requester: src,
                    sent: 0,
                },
            );
            self.emit_wanted(corr);
        }
    }

    fn emit_wanted(&mut self, corr: u64) {
        let epoch = self.epoch;
        let at = self.clock + self.params.wanted_repeat;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let Some(entry) = root.wanted.entries.get_mut(&corr) else {
            return;
        };
        entry.sent += 1;
        let (query, count) = (entry.query.clone(), entry.sent);
        self.send(Frame::broadcast(self.id, Payload::WantedFile { query: query.clone() }).with_corr(corr));
        self.note(NodeEvent::WantedEmitted { corr, query, count });
        self.timer(at, Timer::WantedRepeat { epoch, corr });
    }

    pub(crate) fn on_wanted_repeat(&mut self, corr: u64) {
        let max = self.params.wanted_max;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let Some(entry) = root.wanted.entries.get(&corr) else {
            return;
        };
        if entry.sent > max {
            root.wanted.entries.remove(&corr);
            self.note(NodeEvent::WantedExhausted { corr });
        } else {
            self.emit_wanted(corr);
        }
    }

    /// Answers pending wanted searches the catalog can now satisfy.
    pub(crate) fn resolve_wanted(&mut self) {
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let mut resolved = Vec::new();
        for (corr, e) in &root.wanted.entries {
            let hits = search_hits(&root.catalog.search(&e.query));
            if !hits.is_empty() {
                resolved.push((*corr, e.clone(), hits));
            }
        }
        for (corr, _, _) in &resolved {
            root.wanted.entries.remove(corr);
        }
        for (corr, e, hits) in resolved {
            self.note(NodeEvent::WantedResolved {
                corr,
                requester: e.requester,
            });
            self.send(
                Frame::to(
                    self.id,
                    e.requester,
                    Payload::SearchResponse {
                        query: e.query,
                        results: hits,
                    },
                )
                .with_corr(corr),
            );
        }
    }

    fn reply_failed(&mut self, to: DeviceId, corr: u64, file_id: FileId, reason: FailReason) {
        self.send(Frame::to(self.id, to, Payload::TransferStatus(TransferStatus::Failed { file_id, reason })).with_corr(corr));
    }

    pub(crate) fn on_download_request(
        &mut self,
        src: DeviceId,
        corr: u64,
        file_id: FileId,
        range: Option<BlockRange>,
        budget: Option<u32>,
    ) {
        let ttl = self.params.ttl;
        let Some(root) = self.root_state() else {
            return;
        };
        match select_source(root.catalog.entry(&file_id), src) {
            Source::Local(sources) => {
                let meta = root.catalog.entry(&file_id).unwrap().meta.clone();
                self.note(NodeEvent::SourcesListed {
                    corr,
                    file: file_id,
                    sources: sources.clone(),
                });
                self.send(Frame::to(self.id, src, Payload::SourceList { meta, sources }).with_corr(corr));
            }
            Source::NotFound => self.reply_failed(src, corr, file_id, FailReason::NotFound),
            Source::Remote { subnet, record } => {
                let budget = budget.unwrap_or(ttl);
                if budget == 0 {
                    self.reply_failed(src, corr, file_id, FailReason::TtlExhausted);
                    return;
                }
                let meta = root.catalog.entry(&file_id).unwrap().meta.clone();
                let range = range.unwrap_or_else(|| meta.full_range());
                self.dispatch_couriers(src, corr, meta, range, subnet, record, budget);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn dispatch_couriers(
        &mut self,
        requester: DeviceId,
        corr: u64,
        meta: FileMeta,
        range: BlockRange,
        destination: Ssid,
        record: RemoteRecord,
        budget: u32,
    ) {
        let params = self.params;
        let root = self.root_state_mut().unwrap();
        let mut exclude = root.busy_couriers();
        exclude.insert(requester);
        let eligible = eligible_couriers(&root.subnets, &record.gateway, &exclude).len() as u32;
        if eligible == 0 {
            self.note(NodeEvent::NoCourier { target: record.gateway });
            self.reply_failed(requester, corr, meta.file_id, FailReason::NoCourier);
            return;
        }
        let swarm = range == meta.full_range()
            && record.hops == 1
            && meta.block_count >= params.swarm_threshold
            && eligible >= 2;
        let parts = if swarm {
            partition_blocks(range, eligible.min(params.max_swarm))
        } else {
            vec![range]
        };
        let mut dispatch = Dispatch {
            meta: meta.clone(),
            destination,
            gateway: record.gateway,
            budget,
            swarm,
            legs: Vec::new(),
            reassigned: false,
            pending: Vec::new(),
        };
        for part in parts {
            let subnets = &mut self.root_state_mut().unwrap().subnets;
            let Some(courier) = designate_courier(subnets, &record.gateway, &exclude) else {
                break;
            };
            exclude.insert(courier);
            let order = self.issue_file_order(corr, courier, &dispatch, requester, part);
            dispatch.legs.push(DispatchLeg {
                order,
                courier,
                range: part,
                state: LegState::Active,
            });
        }
        let legs = dispatch.legs.iter().map(|l| (l.courier, l.range)).collect();
        self.root_state_mut()
            .unwrap()
            .dispatches
            .insert((corr, requester), dispatch);
        self.send(Frame::to(self.id, requester, Payload::TransferStatus(TransferStatus::Dispatched { meta, legs })).with_corr(corr));
    }

    fn issue_file_order(&mut self, corr: u64, courier: DeviceId, d: &Dispatch, requester: DeviceId, range: BlockRange) -> u64 {
        let now = self.clock;
        let root = self.root_state_mut().unwrap();
        let order_id = root.next_order;
        root.next_order += 1;
        let order = CourierOrder {
            order_id,
            courier,
            target: d.gateway,
            mission: Mission::FetchFile {
                meta: d.meta.clone(),
                range,
                requester,
                return_subnet: root.ssid,
                destination: d.destination,
            },
            ttl: d.budget,
            issued_at: now,
        };
        root.orders.insert(
            order_id,
            OutstandingOrder {
                order: order.clone(),
                corr,
            },
        );
        self.note(NodeEvent::CourierOrdered {
            corr,
            order: order_id,
            courier,
            target: d.gateway,
            file: Some(d.meta.file_id),
            range: Some(range),
            ttl: d.budget,
        });
        self.send(Frame::to(self.id, courier, Payload::CourierOrder(order)).with_corr(corr));
        order_id
    }

    /// One catalog-fetch order per known neighbor with a free courier.
    pub fn schedule_catalog_fetch(&mut self) {
        let Some(root) = self.root_state_mut() else {
            return;
        };
        // least recently served first, so scarce couriers rotate across neighbors
        let mut targets: Vec<(Option<SimTime>, Ssid)> = root.subnets.neighbors().map(|(s, n)| (n.last_fetch, *s)).collect();
        targets.sort();
        root.fetch_backlog = targets.into_iter().map(|(_, s)| s).collect();
        self.drain_fetch_backlog();
    }

    /// Issues catalog orders for neighbors still unserved this period, as far
    /// as idle couriers allow. The rest wait for a courier to report back.
    pub(crate) fn drain_fetch_backlog(&mut self) {
        let now = self.clock;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let mut orders = Vec::new();
        let mut missing = Vec::new();
        for target in std::mem::take(&mut root.fetch_backlog) {
            let busy = root.busy_couriers();
            let Some(courier) = designate_courier(&mut root.subnets, &target, &busy) else {
                match root.subnets.get(&target) {
                    Some(n) if !n.reachable_by.is_empty() => root.fetch_backlog.push(target),
                    Some(_) => missing.push(target),
                    None => {}
                }
                continue;
            };
            if let Some(n) = root.subnets.get_mut(&target) {
                n.last_fetch = Some(now);
            }
            let order_id = root.next_order;
            root.next_order += 1;
            let order = CourierOrder {
                order_id,
                courier,
                target,
                mission: Mission::FetchCatalog,
                ttl: 1,
                issued_at: now,
            };
            root.orders.insert(
                order_id,
                OutstandingOrder {
                    order: order.clone(),
                    corr: 0,
                },
            );
            orders.push(order);
        }
        for target in missing {
            self.note(NodeEvent::NoCourier { target });
        }
        for order in orders {
            self.note(NodeEvent::CourierOrdered {
                corr: 0,
                order: order.order_id,
                courier: order.courier,
                target: order.target,
                file: None,
                range: None,
                ttl: order.ttl,
            });
            self.send(Frame::to(self.id, order.courier, Payload::CourierOrder(order)));
        }
    }

    pub(crate) fn on_catalog_request(&mut self, src: DeviceId) {
        if let Some(root) = self.root_state() {
            let snapshot = root.catalog.snapshot(root.ssid);
            self.send(Frame::to(self.id, src, Payload::CatalogSnapshot { snapshot, order: None }));
        }
    }

    pub(crate) fn on_catalog_snapshot(&mut self, src: DeviceId, snapshot: CatalogSnapshot, order: Option<u64>) {
        let Some(order_id) = order else {
            self.courier_got_snapshot(src, snapshot);
            return;
        };
        let now = self.clock;
        let ttl = self.params.ttl;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let Some(o) = root.orders.get(&order_id) else {
            return;
        };
        if o.order.courier != src || o.order.mission != Mission::FetchCatalog {
            return;
        }
        let via = o.order.target;
        let home = root.ssid;
        // the gateway must still be a neighbor or the records expire at once
        if !root.subnets.contains(&via) {
            return;
        }
        let stats = root.catalog.merge_remote(&snapshot, via, home, now, ttl);
        self.note(NodeEvent::CatalogMerged {
            via,
            inserted: stats.inserted,
            improved: stats.improved,
            refreshed: stats.refreshed,
        });
        if stats.changed() {
            self.resolve_wanted();
        }
    }

    pub(crate) fn on_mission_report(&mut self, src: DeviceId, order_id: u64, failure: Option<FailReason>) {
        let Some(root) = self.root_state_mut() else {
            return;
        };
        match root.orders.get(&order_id) {
            Some(o) if o.order.courier == src => {}
            _ => return,
        }
        let o = root.orders.remove(&order_id).unwrap();
        self.note(NodeEvent::MissionReported {
            corr: o.corr,
            order: order_id,
            courier: src,
            failure,
        });
        self.settle_order(o, failure);
        self.drain_fetch_backlog();
    }

    pub(crate) fn on_order_expired(&mut self, o: OutstandingOrder) {
        self.note(NodeEvent::MissionAbandoned { order: o.order.order_id });
        self.settle_order(o, Some(FailReason::Timeout));
        self.drain_fetch_backlog();
    }

    fn settle_order(&mut self, o: OutstandingOrder, failure: Option<FailReason>) {
        let Mission::FetchFile { meta, requester, .. } = &o.order.mission else {
            return;
        };
        let key = (o.corr, *requester);
        let requester = *requester;
        let file_id = meta.file_id;
        let order_id = o.order.order_id;
        let Some(root) = self.root_state_mut() else {
            return;
        };
        let Some(mut d) = root.dispatches.remove(&key) else {
            return;
        };
        let Some(li) = d.legs.iter().position(|l| l.order == order_id) else {
            root.dispatches.insert(key, d);
            return;
        };
        let courier = d.legs[li].courier;
        let range = d.legs[li].range;
        match failure {
            None => {
                d.legs[li].state = LegState::Done;
                if let Some(part) = d.pending.pop() {
                    self.reassign_leg(&mut d, key, courier, part);
                }
            }
            Some(reason) => {
                d.legs[li].state = LegState::Failed;
                if !reason.is_transient() {
                    root.catalog.forget_remote(&file_id, &d.destination);
                }
                if !reason.is_transient() || d.reassigned {
                    self.reply_failed(requester, key.0, file_id, reason);
                    return;
                }
                d.reassigned = true;
                if d.swarm {
                    let busy = root.busy_couriers();
                    let free = d
                        .legs
                        .iter()
                        .find(|l| l.state == LegState::Done && !busy.contains(&l.courier))
                        .map(|l| l.courier);
                    match free {
                        Some(c) => self.reassign_leg(&mut d, key, c, range),
                        None if d.legs.iter().any(|l| l.state == LegState::Active) => d.pending.push(range),
                        None => {
                            self.reply_failed(requester, key.0, file_id, FailReason::NoCourier);
                            return;
                        }
                    }
                } else {
                    let mut exclude = root.busy_couriers();
                    exclude.insert(requester);
                    exclude.insert(courier);
                    match designate_courier(&mut root.subnets, &d.gateway, &exclude) {
                        Some(c) => self.reassign_leg(&mut d, key, c, range),
                        None => {
                            self.reply_failed(requester, key.0, file_id, reason);
                            return;
                        }
                    }
                }
            }
        }
        if !d.settled() {
            self.root_state_mut().unwrap().dispatches.insert(key, d);
        }
    }

    fn reassign_leg(&mut self, d: &mut Dispatch, key: (u64, DeviceId), courier: DeviceId, range: BlockRange) {
        let order = self.issue_file_order(key.0, courier, d, key.1, range);
        d.legs.push(DispatchLeg {
            order,
            courier,
            range,
            state: LegState::Active,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{FileMeta, BLOCK_SIZE};

    fn set(ids: &[u64]) -> BTreeSet<DeviceId> {
        ids.iter().map(|i| DeviceId(*i)).collect()
    }

    fn neighbor_with(peers: &[u64]) -> (SubnetCatalog, Ssid) {
        let mut s = SubnetCatalog::new();
        let target = Ssid::new(DeviceId(50), 0);
        let home = Ssid::new(DeviceId(1), 0);
        for p in peers {
            s.report_scan(DeviceId(*p), &[target], 0, home);
        }
        (s, target)
    }

    #[test]
    fn rotation_alternates() {
        let (mut s, t) = neighbor_with(&[7, 3]);
        let picks: Vec<u64> = (0..4)
            .map(|_| designate_courier(&mut s, &t, &BTreeSet::new()).unwrap().0)
            .collect();
        assert_eq!(picks, vec![3, 7, 3, 7]);
    }

    #[test]
    fn singleton_and_empty() {
        let (mut s, t) = neighbor_with(&[4]);
        for _ in 0..3 {
            assert_eq!(designate_courier(&mut s, &t, &BTreeSet::new()), Some(DeviceId(4)));
        }
        assert_eq!(designate_courier(&mut s, &t, &set(&[4])), None);
        assert_eq!(designate_courier(&mut s, &Ssid::new(DeviceId(9), 0), &BTreeSet::new()), None);
    }

    #[test]
    fn four_peers_eight_missions() {
        let (mut s, t) = neighbor_with(&[2, 3, 4, 5]);
        let mut counts = BTreeMap::new();
        for _ in 0..8 {
            *counts.entry(designate_courier(&mut s, &t, &BTreeSet::new()).unwrap()).or_insert(0) += 1;
        }
        assert!(counts.values().all(|c| *c == 2));
    }

    #[test]
    fn rotation_skips_busy_and_survives_churn() {
        assert_eq!(next_in_rotation(&set(&[2, 4, 6]), Some(DeviceId(4))), Some(DeviceId(6)));
        assert_eq!(next_in_rotation(&set(&[2, 4, 6]), Some(DeviceId(6))), Some(DeviceId(2)));
        // cursor peer has left
        assert_eq!(next_in_rotation(&set(&[2, 6]), Some(DeviceId(4))), Some(DeviceId(6)));
        assert_eq!(next_in_rotation(&BTreeSet::new(), None), None);
    }

    fn rec(hops: u32, holders: u32) -> RemoteRecord {
        RemoteRecord {
            hops,
            gateway: Ssid::new(DeviceId(99), 0),
            holder_count: holders,
            last_refresh: 0,
        }
    }

    fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.to_vec();
            let x = rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x.clone());
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn select_source_ordering_is_total() {
        let meta = FileMeta::new("f", b"x", BLOCK_SIZE);
        let records = vec![
            (Ssid::new(DeviceId(10), 0), rec(2, 1)),
            (Ssid::new(DeviceId(11), 0), rec(1, 1)),
            (Ssid::new(DeviceId(12), 0), rec(1, 3)),
            (Ssid::new(DeviceId(13), 0), rec(1, 3)),
            (Ssid::new(DeviceId(14), 0), rec(3, 9)),
        ];
        for perm in permutations(&records) {
            let entry = CatalogEntry {
                meta: meta.clone(),
                holders: BTreeSet::new(),
                remote: perm.into_iter().collect(),
            };
            // brute force: lexicographic (hops, -holders, subnet)
            let expected = records
                .iter()
                .min_by_key(|(s, r)| (r.hops, u32::MAX - r.holder_count, *s))
                .unwrap();
            match select_source(Some(&entry), DeviceId(1)) {
                Source::Remote { subnet, .. } => assert_eq!(subnet, expected.0),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn local_holders_win_but_not_the_requester() {
        let meta = FileMeta::new("f", b"x", BLOCK_SIZE);
        let mut entry = CatalogEntry {
            meta,
            holders: set(&[3]),
            remote: [(Ssid::new(DeviceId(10), 0), rec(1, 1))].into_iter().collect(),
        };
        assert_eq!(select_source(Some(&entry), DeviceId(2)), Source::Local(vec![DeviceId(3)]));
        assert!(matches!(select_source(Some(&entry), DeviceId(3)), Source::Remote { .. }));
        entry.remote.clear();
        assert_eq!(select_source(Some(&entry), DeviceId(3)), Source::NotFound);
        assert_eq!(select_source(None, DeviceId(3)), Source::NotFound);
    }
}
