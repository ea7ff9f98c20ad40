//! Root-held knowledge about the subnet and its surroundings.
//!
//! [`NetworkFileCatalog`] maps content ids to the members holding them
//! locally and to remote subnets known to hold a copy, each with its hop
//! distance and the adjacent subnet (gateway) to go through.
//! [`SubnetCatalog`] lists the neighboring subnets members can see and who
//! can reach each of them.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::ids::{DeviceId, FileId, FileMeta, SimTime};
use crate::kernel::frame::Query;
use crate::ssid::Ssid;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RemoteRecord {
    pub hops: u32,
    pub gateway: Ssid,
    pub holder_count: u32,
    pub last_refresh: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CatalogEntry {
    pub meta: FileMeta,
    pub holders: BTreeSet<DeviceId>,
    /// One record per remote subnet holding the content, minimum hops kept.
    pub remote: BTreeMap<Ssid, RemoteRecord>,
}

impl CatalogEntry {
    fn new(meta: FileMeta) -> Self {
        CatalogEntry {
            meta,
            holders: BTreeSet::new(),
            remote: BTreeMap::new(),
        }
    }

    fn is_dead(&self) -> bool {
        self.holders.is_empty() && self.remote.is_empty()
    }
}

/// Wire form of a catalog, shipped by couriers. Entries are sorted by id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CatalogSnapshot {
    pub origin: Ssid,
    pub entries: Vec<SnapshotEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SnapshotEntry {
    pub meta: FileMeta,
    pub local_holders: u32,
    pub remote: Vec<SnapshotRemote>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SnapshotRemote {
    pub subnet: Ssid,
    pub hops: u32,
    pub holder_count: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MergeStats {
    pub inserted: usize,
    pub improved: usize,
    pub refreshed: usize,
}

impl MergeStats {
    pub fn changed(&self) -> bool {
        self.inserted + self.improved > 0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NetworkFileCatalog {
    entries: BTreeMap<FileId, CatalogEntry>,
}

impl NetworkFileCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Catalog of a freshly created subnet: the root's own shared files.
    pub fn init<'a>(
        root: DeviceId,
        shared_files: impl IntoIterator<Item = (&'a str, &'a [u8])>,
        block_size: u64,
    ) -> Self {
        let mut cat = Self::new();
        let metas: Vec<FileMeta> = shared_files
            .into_iter()
            .map(|(name, content)| FileMeta::new(name, content, block_size))
            .collect();
        cat.register_files(root, &metas);
        cat
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: &FileId) -> Option<&CatalogEntry> {
        self.entries.get(id)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&FileId, &CatalogEntry)> {
        self.entries.iter()
    }

    pub fn search(&self, query: &Query) -> Vec<&CatalogEntry> {
        match query {
            Query::Id(id) => self.entries.get(id).into_iter().collect(),
            Query::Name(_) => self.entries.values().filter(|e| query.matches(&e.meta)).collect(),
        }
    }

    /// Adds `peer` as a local holder of every listed file. Idempotent.
    pub fn register_files(&mut self, peer: DeviceId, files: &[FileMeta]) {
        for meta in files {
            let entry = self
                .entries
                .entry(meta.file_id)
                .or_insert_with(|| CatalogEntry::new(meta.clone()));
            entry.meta.merge_names(meta);
            entry.holders.insert(peer);
        }
    }

    /// Applies an add/delete notification. A file both added and removed in
    /// the same notice cancels out. Returns whether anything changed.
    pub fn on_file_change(&mut self, peer: DeviceId, added: &[FileMeta], removed: &[FileId]) -> bool {
        let added_ids: BTreeSet<FileId> = added.iter().map(|m| m.file_id).collect();
        let removed_ids: BTreeSet<FileId> = removed.iter().copied().collect();
        let before = self.clone();
        let net_added: Vec<FileMeta> = added
            .iter()
            .filter(|m| !removed_ids.contains(&m.file_id))
            .cloned()
            .collect();
        self.register_files(peer, &net_added);
        for id in removed_ids.difference(&added_ids) {
            if let Some(entry) = self.entries.get_mut(id) {
                entry.holders.remove(&peer);
                if entry.is_dead() {
                    self.entries.remove(id);
                }
            }
        }
        *self != before
    }

    /// Drops `peer` from every holder set. Returns the number of entries
    /// touched.
    pub fn remove_holder(&mut self, peer: DeviceId) -> usize {
        let mut touched = 0;
        self.entries.retain(|_, e| {
            if e.holders.remove(&peer) {
                touched += 1;
            }
            !e.is_dead()
        });
        touched
    }

    pub fn snapshot(&self, origin: Ssid) -> CatalogSnapshot {
        let entries = self
            .entries
            .values()
            .map(|e| SnapshotEntry {
                meta: e.meta.clone(),
                local_holders: e.holders.len() as u32,
                remote: e
                    .remote
                    .iter()
                    .map(|(subnet, r)| SnapshotRemote {
                        subnet: *subnet,
                        hops: r.hops,
                        holder_count: r.holder_count,
                    })
                    .collect(),
            })
            .collect();
        CatalogSnapshot { origin, entries }
    }

    /// Folds in a catalog fetched from the adjacent subnet `via`.
    ///
    /// Content held in `via` itself lands at one hop; content `via` knows at
    /// `h` hops lands at `h + 1`. Records about `home` are ignored, distances
    /// beyond `max_hops` are dropped, and per (file, subnet) the minimum hop
    /// count wins. A record is only refreshed by an equal-or-shorter report.
    pub fn merge_remote(
        &mut self,
        fetched: &CatalogSnapshot,
        via: Ssid,
        home: Ssid,
        now: SimTime,
        max_hops: u32,
    ) -> MergeStats {
        let mut stats = MergeStats::default();
        for e in &fetched.entries {
            let own = (e.local_holders > 0).then_some((fetched.origin, 1, e.local_holders));
            let relayed = e
                .remote
                .iter()
                .map(|r| (r.subnet, r.hops.saturating_add(1), r.holder_count));
            for (subnet, hops, holder_count) in own.into_iter().chain(relayed) {
                if subnet == home || hops > max_hops {
                    continue;
                }
                let entry = self
                    .entries
                    .entry(e.meta.file_id)
                    .or_insert_with(|| CatalogEntry::new(e.meta.clone()));
                entry.meta.merge_names(&e.meta);
                let fresh = RemoteRecord {
                    hops,
                    gateway: via,
                    holder_count,
                    last_refresh: now,
                };
                match entry.remote.get_mut(&subnet) {
                    None => {
                        entry.remote.insert(subnet, fresh);
                        stats.inserted += 1;
                    }
                    Some(rec) if hops < rec.hops => {
                        *rec = fresh;
                        stats.improved += 1;
                    }
                    Some(rec) if hops == rec.hops => {
                        rec.last_refresh = now;
                        rec.holder_count = holder_count;
                        rec.gateway = rec.gateway.min(via);
                        stats.refreshed += 1;
                    }
                    Some(_) => {}
                }
            }
        }
        stats
    }

    /// Drops remote records older than `ttl` or whose gateway is no longer a
    /// known neighbor. Returns the number of records removed.
    pub fn expire(&mut self, now: SimTime, ttl: SimTime, neighbors: &SubnetCatalog) -> usize {
        let mut removed = 0;
        self.entries.retain(|_, e| {
            let before = e.remote.len();
            e.remote.retain(|_, r| {
                now.saturating_sub(r.last_refresh) <= ttl && neighbors.contains(&r.gateway)
            });
            removed += before - e.remote.len();
            !e.is_dead()
        });
        removed
    }

    /// Forgets what is known about `file_id` in `subnet`, after a courier found
    /// the record stale.
    pub fn forget_remote(&mut self, file_id: &FileId, subnet: &Ssid) {
        if let Some(entry) = self.entries.get_mut(file_id) {
            entry.remote.remove(subnet);
            if entry.is_dead() {
                self.entries.remove(file_id);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Neighbor {
    pub reachable_by: BTreeSet<DeviceId>,
    pub last_seen: SimTime,
    /// Last courier designated for this neighbor.
    pub cursor: Option<DeviceId>,
    /// When a catalog courier was last sent there.
    pub last_fetch: Option<SimTime>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SubnetCatalog {
    neighbors: BTreeMap<Ssid, Neighbor>,
}

impl SubnetCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, ssid: &Ssid) -> bool {
        self.neighbors.contains_key(ssid)
    }

    pub fn get(&self, ssid: &Ssid) -> Option<&Neighbor> {
        self.neighbors.get(ssid)
    }

    pub fn get_mut(&mut self, ssid: &Ssid) -> Option<&mut Neighbor> {
        self.neighbors.get_mut(ssid)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = (&Ssid, &Neighbor)> {
        self.neighbors.iter()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Records what `peer` currently sees. Subnets it no longer reports lose
    /// it from their reachable set; `home` is never a neighbor of itself.
    pub fn report_scan(&mut self, peer: DeviceId, visible: &[Ssid], now: SimTime, home: Ssid) {
        let visible: BTreeSet<Ssid> = visible.iter().copied().filter(|s| *s != home).collect();
        for (ssid, n) in self.neighbors.iter_mut() {
            if !visible.contains(ssid) {
                n.reachable_by.remove(&peer);
            }
        }
        for ssid in visible {
            let n = self.neighbors.entry(ssid).or_default();
            n.reachable_by.insert(peer);
            n.last_seen = now;
        }
    }

    pub fn remove_member(&mut self, peer: DeviceId) {
        for n in self.neighbors.values_mut() {
            n.reachable_by.remove(&peer);
        }
    }

    /// Purges neighbors nobody has reported for longer than `ttl`.
    pub fn expire(&mut self, now: SimTime, ttl: SimTime) -> Vec<Ssid> {
        let gone: Vec<Ssid> = self
            .neighbors
            .iter()
            .filter(|(_, n)| now.saturating_sub(n.last_seen) > ttl)
            .map(|(s, _)| *s)
            .collect();
        for s in &gone {
            self.neighbors.remove(s);
        }
        gone
    }
}
