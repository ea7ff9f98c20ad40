mod common;

use std::collections::{BTreeMap, BTreeSet};

use meshshare::catalog::{CatalogSnapshot, NetworkFileCatalog, SnapshotEntry, SnapshotRemote};
use meshshare::harness::scenario::{generate_content, DeviceDecl, ScriptStep};
use meshshare::harness::{build_world, run, Action, Scenario};
use meshshare::kernel::frame::Query;
use meshshare::kernel::node::{Leg, NodeEvent};
use meshshare::sim::{TraceEvent, WorldEvent};
use meshshare::{DeviceId, FileId, FileMeta, Params, Ssid};
use proptest::prelude::*;
use sha2::{Digest, Sha256};

use common::*;

fn sha(bytes: &[u8]) -> FileId {
    FileId(Sha256::digest(bytes).into())
}

fn meta(tag: u8) -> FileMeta {
    FileMeta::new(format!("file{tag}"), &[tag], 1024)
}

fn snapshot(origin: u64, files: &[(u8, Vec<(u64, u32)>)]) -> CatalogSnapshot {
    CatalogSnapshot {
        origin: Ssid::new(DeviceId(origin), 0),
        entries: files
            .iter()
            .map(|(tag, remote)| SnapshotEntry {
                meta: meta(*tag),
                local_holders: u32::from(remote.is_empty()),
                remote: remote
                    .iter()
                    .map(|(s, h)| SnapshotRemote {
                        subnet: Ssid::new(DeviceId(*s), 0),
                        hops: *h,
                        holder_count: 1,
                    })
                    .collect(),
            })
            .collect(),
    }
}

/// Chain of `n` subnets with one bridge per adjacent pair; the holder sits in
/// the last subnet and the requester in the first.
fn chain_scenario(n: u64, ttl: Option<u32>) -> Scenario {
    let mut devices: Vec<DeviceDecl> = (1..=n)
        .map(|r| DeviceDecl { id: DeviceId(r), arrive_at: Some(0), files: Vec::new() })
        .collect();
    let mut visibility = BTreeSet::new();
    let mut vis = |a: u64, b: u64| {
        visibility.insert((DeviceId(a), DeviceId(b)));
        visibility.insert((DeviceId(b), DeviceId(a)));
    };
    for i in 1..n {
        let bridge = 100 + i;
        devices.push(DeviceDecl { id: DeviceId(bridge), arrive_at: Some(1_000), files: Vec::new() });
        vis(bridge, i);
        vis(bridge, i + 1);
    }
    let content = generate_content(9_000, 5);
    devices.push(DeviceDecl { id: DeviceId(200), arrive_at: Some(1_000), files: vec![("far.bin".into(), content.clone())] });
    vis(200, n);
    devices.push(DeviceDecl { id: DeviceId(201), arrive_at: Some(1_000), files: Vec::new() });
    vis(201, 1);
    let params = Params { block_size: 4096, ..Params::default() };
    Scenario {
        seed: n,
        duration: 260_000,
        params,
        devices,
        visibility,
        script: vec![ScriptStep {
            at: 125_000,
            device: DeviceId(201),
            action: Action::Download { file_id: sha(&content), ttl },
        }],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn register_files_is_idempotent(tags in proptest::collection::vec(0u8..8, 0..6), peer in 1u64..5) {
        let files: Vec<FileMeta> = tags.iter().map(|t| meta(*t)).collect();
        let mut once = NetworkFileCatalog::new();
        once.register_files(DeviceId(peer), &files);
        let mut twice = once.clone();
        twice.register_files(DeviceId(peer), &files);
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn merge_keeps_minimum_hops_in_any_order(
        reports in proptest::collection::vec((2u64..5, 0u8..4, proptest::collection::vec((10u64..14, 1u32..5), 0..3)), 1..6),
    ) {
        let home = Ssid::new(DeviceId(1), 0);
        let snaps: Vec<(Ssid, CatalogSnapshot)> = reports
            .iter()
            .map(|(via, tag, remote)| (Ssid::new(DeviceId(*via), 0), snapshot(*via, &[(*tag, remote.clone())])))
            .collect();
        let mut forward = NetworkFileCatalog::new();
        for (via, s) in &snaps {
            forward.merge_remote(s, *via, home, 0, 8);
        }
        let mut backward = NetworkFileCatalog::new();
        for (via, s) in snaps.iter().rev() {
            backward.merge_remote(s, *via, home, 0, 8);
        }
        let hops = |c: &NetworkFileCatalog| -> BTreeMap<(FileId, Ssid), u32> {
            c.entries().flat_map(|(f, e)| e.remote.iter().map(move |(s, r)| ((*f, *s), r.hops))).collect()
        };
        // oracle: the minimum offered distance per (file, subnet)
        let mut expected: BTreeMap<(FileId, Ssid), u32> = BTreeMap::new();
        for (via, tag, remote) in &reports {
            let id = meta(*tag).file_id;
            let offers: Vec<(u64, u32)> = if remote.is_empty() {
                vec![(*via, 1)]
            } else {
                remote.iter().map(|(s, h)| (*s, h + 1)).collect()
            };
            for (s, h) in offers {
                let e = expected.entry((id, Ssid::new(DeviceId(s), 0))).or_insert(h);
                *e = (*e).min(h);
            }
        }
        prop_assert_eq!(hops(&forward), expected.clone());
        prop_assert_eq!(hops(&backward), expected);
        prop_assert!(forward.entries().all(|(_, e)| e.remote.values().all(|r| r.hops >= 1)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn members_never_exceed_capacity(joiners in 1u64..16, spacing in 0u64..40, max in 1usize..8) {
        let params = Params { max_members: max, ..Params::default() };
        let mut devices = vec![DeviceDecl { id: DeviceId(1), arrive_at: Some(0), files: Vec::new() }];
        let mut visibility = BTreeSet::new();
        for j in 0..joiners {
            let id = DeviceId(2 + j);
            devices.push(DeviceDecl { id, arrive_at: Some(1_000 + j * spacing), files: Vec::new() });
            visibility.insert((DeviceId(1), id));
            visibility.insert((id, DeviceId(1)));
        }
        let s = Scenario { seed: joiners, duration: 40_000, params, devices, visibility, script: Vec::new() };
        let mut w = build_world(&s);
        while w.next_event_time().is_some_and(|t| t <= s.duration) {
            w.step();
            for n in w.nodes() {
                if let Some(r) = n.root_state() {
                    prop_assert!(r.members.len() <= max);
                }
            }
        }
        let members = w.node(DeviceId(1)).unwrap().root_state().unwrap().members.len();
        prop_assert_eq!(members, (joiners as usize).min(max));
        prop_assert_eq!(w.hotspots().len(), 1 + joiners as usize - members);
        prop_assert_eq!(w.violations().over_capacity, 0);
    }

    #[test]
    fn wanted_emission_is_bounded(wanted_max in 0u32..5, repeat in 5u64..40) {
        let mut s = load("wanted.toml");
        s.params.wanted_max = wanted_max;
        s.params.wanted_repeat = repeat * 1_000;
        s.duration = 1_000 + (wanted_max as u64 + 3) * s.params.wanted_repeat;
        let out = run(&s, None);
        let times: BTreeSet<u64> = frames_of(out.world.trace(), "wanted_file").map(|r| r.time).collect();
        let times: Vec<u64> = times.into_iter().collect();
        prop_assert_eq!(times.len() as u32, wanted_max + 1);
        prop_assert!(times.windows(2).all(|w| w[1] - w[0] == s.params.wanted_repeat));
    }

    #[test]
    fn random_networks_keep_catalog_invariants(seed in 100u64..10_000) {
        let mut s = random_scenario(seed);
        // a few downloads of whatever members share
        let shared: Vec<(DeviceId, FileId)> = s
            .devices
            .iter()
            .flat_map(|d| d.files.iter().map(move |(_, c)| (d.id, sha(c))))
            .collect();
        for (k, (holder, file)) in shared.iter().enumerate().take(3) {
            let requester = s.devices.iter().map(|d| d.id).find(|d| d != holder).unwrap();
            s.script.push(ScriptStep { at: 150_000 + k as u64 * 7_000, device: requester, action: Action::Download { file_id: *file, ttl: None } });
        }
        let out = run(&s, None);
        let w = &out.world;
        prop_assert_eq!(out.violations(), &meshshare::sim::Violations::default());
        let p = s.params;
        for root in w.hotspots().keys() {
            let state = w.node(*root).unwrap().root_state().unwrap();
            for (fid, entry) in state.catalog.entries() {
                // holders really have the bytes
                for h in &entry.holders {
                    let stored = w.node(*h).and_then(|n| n.storage.get(fid));
                    prop_assert!(stored.is_some_and(|f| sha(&f.content) == *fid));
                    prop_assert!(*h == *root || state.members.contains_key(h));
                }
                for rec in entry.remote.values() {
                    prop_assert!(rec.hops >= 1);
                    prop_assert!(state.subnets.contains(&rec.gateway));
                    prop_assert!(w.now() - rec.last_refresh <= p.catalog_ttl + p.ping_interval);
                }
            }
        }
        // every completed download is content-verified
        for r in w.trace() {
            if let TraceEvent::Node(NodeEvent::DownloadComplete { file, .. }) = &r.event {
                let stored = w.node(r.device).unwrap().storage.get(file);
                prop_assert!(stored.is_some_and(|f| sha(&f.content) == *file));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn chain_delivery_follows_ttl(n in 2u64..5, ttl in 1u32..6) {
        let s = chain_scenario(n, Some(ttl));
        let out = run(&s, None);
        let d = &out.metrics.downloads[0];
        let distance = (n - 1) as u32;
        let forward = out
            .world
            .trace()
            .iter()
            .filter(|r| matches!(&r.event, TraceEvent::World(WorldEvent::HopComplete { leg: Leg::Forward, corr, arrived: true, .. }) if *corr == d.corr))
            .count() as u32;
        prop_assert!(forward <= ttl);
        if ttl >= distance {
            prop_assert!(d.success, "ttl {} distance {}: {:?}", ttl, distance, d.failure);
            prop_assert_eq!(forward, distance);
        } else {
            prop_assert!(!d.success);
            prop_assert_eq!(d.failure.as_deref(), Some("ttl_exhausted"));
        }
    }
}

#[test]
fn searches_by_either_name_agree() {
    let s = load("duplicates.toml");
    let out = run(&s, None);
    let ids: BTreeSet<FileId> = out
        .world
        .trace()
        .iter()
        .filter_map(|r| match &r.event {
            TraceEvent::Node(NodeEvent::SearchResult { query: Query::Name(_), hits, .. }) => Some(hits.iter().map(|h| h.meta.file_id)),
            _ => None,
        })
        .flatten()
        .collect();
    assert_eq!(ids, BTreeSet::from([sha(b"same bytes")]));
}
