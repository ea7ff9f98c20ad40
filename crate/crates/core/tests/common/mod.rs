#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;

use bytes::Bytes;
use meshshare::harness::scenario::{generate_content, DeviceDecl};
use meshshare::harness::Scenario;
use meshshare::sim::{TraceEvent, TraceRecord, World, WorldEvent};
use meshshare::{DeviceId, Params, Ssid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn load(name: &str) -> Scenario {
    Scenario::load(&scenario_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn corpus() -> Vec<(String, Scenario)> {
    let mut names: Vec<String> = std::fs::read_dir(scenario_dir())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".toml"))
        .collect();
    names.sort();
    names.into_iter().map(|n| (n.clone(), load(&n))).collect()
}

/// Directed subnet graph: S -> T when a resident member of S can see T's root.
/// Built from radio visibility and membership only, never from catalogs.
pub fn subnet_graph(world: &World) -> BTreeMap<Ssid, BTreeSet<Ssid>> {
    let roots: Vec<(DeviceId, Ssid)> = world.hotspots().iter().map(|(d, s)| (*d, *s)).collect();
    let mut g: BTreeMap<Ssid, BTreeSet<Ssid>> = roots.iter().map(|(_, s)| (*s, BTreeSet::new())).collect();
    for (root, ssid) in &roots {
        let state = world.node(*root).unwrap().root_state().unwrap();
        for m in state.members.values().filter(|m| !m.temporary) {
            for (other, tssid) in &roots {
                if other != root && world.sees(m.peer, *other) {
                    g.get_mut(ssid).unwrap().insert(*tssid);
                }
            }
        }
    }
    g
}

pub fn bfs(graph: &BTreeMap<Ssid, BTreeSet<Ssid>>, from: Ssid) -> BTreeMap<Ssid, u32> {
    let mut dist = BTreeMap::from([(from, 0u32)]);
    let mut queue = VecDeque::from([from]);
    while let Some(s) = queue.pop_front() {
        let d = dist[&s];
        for t in graph.get(&s).into_iter().flatten() {
            if !dist.contains_key(t) {
                dist.insert(*t, d + 1);
                queue.push_back(*t);
            }
        }
    }
    dist
}

/// Every remote catalog record compared with the BFS distance; returns
/// `(checked, mismatches)`.
pub fn hop_mismatches(world: &World) -> (usize, Vec<String>) {
    let graph = subnet_graph(world);
    let mut checked = 0;
    let mut bad = Vec::new();
    for (root, ssid) in world.hotspots() {
        let state = world.node(*root).unwrap().root_state().unwrap();
        let dist = bfs(&graph, *ssid);
        for (fid, entry) in state.catalog.entries() {
            for (subnet, rec) in &entry.remote {
                checked += 1;
                if dist.get(subnet) != Some(&rec.hops) {
                    bad.push(format!(
                        "root {root} file {} subnet {subnet}: hops {} vs bfs {:?}",
                        fid.short(),
                        rec.hops,
                        dist.get(subnet)
                    ));
                }
            }
        }
    }
    (checked, bad)
}

/// A random static topology: up to six roots that cannot see each other,
/// and members that each see their home root plus some higher-id roots.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roots = rng.gen_range(2..=6u64);
    let total = rng.gen_range(roots + 2..=20u64.min(roots * 8));
    let mut devices = Vec::new();
    let mut visibility = BTreeSet::new();
    for r in 1..=roots {
        devices.push(DeviceDecl {
            id: DeviceId(r),
            arrive_at: Some(0),
            files: vec![(format!("root{r}.dat"), generate_content(64, seed * 100 + r))],
        });
    }
    let mut load: BTreeMap<u64, usize> = BTreeMap::new();
    for id in roots + 1..=total {
        let open: Vec<u64> = (1..=roots).filter(|r| load.get(r).copied().unwrap_or(0) < 7).collect();
        let home = open[rng.gen_range(0..open.len())];
        *load.entry(home).or_default() += 1;
        visibility.insert((DeviceId(home), DeviceId(id)));
        for other in home + 1..=roots {
            if rng.gen_bool(0.35) {
                visibility.insert((DeviceId(other), DeviceId(id)));
            }
        }
        let files = if rng.gen_bool(0.5) {
            vec![(format!("f{id}.dat"), generate_content(rng.gen_range(1..300), seed * 1000 + id))]
        } else {
            Vec::new()
        };
        devices.push(DeviceDecl {
            id: DeviceId(id),
            arrive_at: Some(1_000 + id * 50),
            files,
        });
    }
    Scenario {
        seed,
        duration: 300_000,
        params: Params::default(),
        devices,
        visibility,
        script: Vec::new(),
    }
}

/// Time of the last catalog change (insert or improvement) anywhere.
pub fn last_catalog_change(trace: &[TraceRecord]) -> u64 {
    trace
        .iter()
        .filter(|r| {
            matches!(
                &r.event,
                TraceEvent::Node(meshshare::kernel::node::NodeEvent::CatalogMerged { inserted, improved, .. })
                    if inserted + improved > 0
            )
        })
        .map(|r| r.time)
        .max()
        .unwrap_or(0)
}

pub fn frames_of<'a>(trace: &'a [TraceRecord], kind: &'a str) -> impl Iterator<Item = &'a TraceRecord> + 'a {
    trace.iter().filter(move |r| {
        matches!(&r.event, TraceEvent::World(WorldEvent::FrameSent { frame, .. }) if *frame == kind)
    })
}

pub fn content(bytes: &[u8]) -> Bytes {
    Bytes::copy_from_slice(bytes)
}
