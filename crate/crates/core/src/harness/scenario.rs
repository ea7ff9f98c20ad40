//! Scenario files (TOML).
//!
//! ```toml
//! seed = 7
//! duration = 300000          # ms of simulated time, optional
//!
//! [params]
//! max_members = 7
//!
//! [[device]]
//! id = 1
//! files = [{ name = "notes.txt", text = "hello" },
//!          { name = "big.bin", size = 2097152, seed = 3 }]
//!
//! [[device]]
//! id = 2
//! arrive_at = 500
//!
//! [topology]
//! visibility = [[1, 2]]
//! groups = [[3, 4, 5]]       # every pair in a group sees each other
//!
//! [[script]]
//! at = 60000
//! action = "download"
//! device = 2
//! file = "notes.txt"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use bytes::Bytes;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::ids::{compute_file_id, DeviceId, FileId, SimTime};
use crate::kernel::frame::Query;
use crate::params::Params;

/// Extra simulated time after the last scripted action.
pub const DEFAULT_TAIL: SimTime = 180_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceDecl {
    pub id: DeviceId,
    /// `None` keeps the device offline until a scripted arrival.
    pub arrive_at: Option<SimTime>,
    pub files: Vec<(String, Bytes)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Arrive,
    Depart { silent: bool },
    Search(Query),
    Download { file_id: FileId, ttl: Option<u32> },
    Share { name: String, content: Bytes },
    Unshare { file_id: FileId },
    Link { peer: DeviceId },
    Unlink { peer: DeviceId },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScriptStep {
    pub at: SimTime,
    pub device: DeviceId,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub duration: SimTime,
    pub params: Params,
    pub devices: Vec<DeviceDecl>,
    pub visibility: BTreeSet<(DeviceId, DeviceId)>,
    pub script: Vec<ScriptStep>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    seed: u64,
    duration: Option<SimTime>,
    #[serde(default)]
    params: Option<Spanned<toml::Table>>,
    #[serde(default)]
    device: Vec<Spanned<RawDevice>>,
    #[serde(default)]
    topology: RawTopology,
    #[serde(default)]
    script: Vec<Spanned<RawStep>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    #[serde(default)]
    visibility: Vec<Spanned<Vec<u64>>>,
    #[serde(default)]
    groups: Vec<Spanned<Vec<u64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    id: u64,
    #[serde(default)]
    arrive_at: Option<SimTime>,
    #[serde(default = "yes")]
    arrive: bool,
    #[serde(default)]
    files: Vec<RawFile>,
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    name: String,
    text: Option<String>,
    size: Option<u64>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    at: SimTime,
    action: String,
    device: u64,
    #[serde(default)]
    silent: bool,
    query: Option<String>,
    file: Option<String>,
    file_id: Option<String>,
    ttl: Option<u32>,
    name: Option<String>,
    text: Option<String>,
    size: Option<u64>,
    seed: Option<u64>,
    peer: Option<u64>,
}

/// Deterministic pseudo-random file content.
pub fn generate_content(size: u64, seed: u64) -> Bytes {
    let mut buf = vec![0u8; size as usize];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut buf);
    buf.into()
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Ctx<'a> {
    text: &'a str,
}

impl Ctx<'_> {
    fn err<T>(&self, span: std::ops::Range<usize>, msg: impl Into<String>) -> Result<T> {
        Err(Error::Scenario(format!("line {}: {}", line_of(self.text, span.start), msg.into())))
    }
}

fn file_content(ctx: &Ctx, span: std::ops::Range<usize>, text: &Option<String>, size: Option<u64>, seed: Option<u64>) -> Result<Bytes> {
    match (text, size) {
        (Some(t), None) => Ok(Bytes::from(t.clone().into_bytes())),
        (None, Some(size)) => Ok(generate_content(size, seed.unwrap_or(0))),
        (Some(_), Some(_)) => ctx.err(span, "file has both `text` and `size`"),
        (None, None) => ctx.err(span, "file needs `text` or `size`"),
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            Error::Scenario(format!("line {line}: {}", e.message()))
        })?;
        let ctx = Ctx { text };

        let mut params = Params::default();
        if let Some(table) = &raw.params {
            for (k, v) in table.get_ref() {
                let value = match v {
                    toml::Value::Integer(i) => i.to_string(),
                    other => return ctx.err(table.span(), format!("param `{k}` must be an integer, got {other}")),
                };
                if let Err(e) = params.set(k, &value) {
                    return ctx.err(table.span(), e.to_string());
                }
            }
        }
        if let Err(e) = params.validate() {
            let span = raw.params.as_ref().map(|t| t.span()).unwrap_or(0..0);
            return ctx.err(span, e.to_string());
        }

        let mut devices = Vec::new();
        let mut ids = BTreeSet::new();
        let mut names: BTreeMap<String, FileId> = BTreeMap::new();
        for d in &raw.device {
            let span = d.span();
            let d = d.get_ref();
            if !ids.insert(DeviceId(d.id)) {
                return ctx.err(span, format!("duplicate device id {}", d.id));
            }
            let mut files = Vec::new();
            for f in &d.files {
                let content = file_content(&ctx, span.clone(), &f.text, f.size, f.seed)?;
                names.entry(f.name.clone()).or_insert_with(|| compute_file_id(&content));
                files.push((f.name.clone(), content));
            }
            let arrive_at = match (d.arrive, d.arrive_at) {
                (false, Some(_)) => return ctx.err(span, "`arrive = false` conflicts with `arrive_at`"),
                (false, None) => None,
                (true, at) => Some(at.unwrap_or(0)),
            };
            devices.push(DeviceDecl {
                id: DeviceId(d.id),
                arrive_at,
                files,
            });
        }

        let mut visibility = BTreeSet::new();
        let check = |ctx: &Ctx, span: std::ops::Range<usize>, id: u64| -> Result<DeviceId> {
            if ids.contains(&DeviceId(id)) {
                Ok(DeviceId(id))
            } else {
                ctx.err(span, format!("unknown device {id}"))
            }
        };
        for pair in &raw.topology.visibility {
            let span = pair.span();
            let [a, b] = pair.get_ref()[..] else {
                return ctx.err(span, "visibility entries are pairs [a, b]");
            };
            if a == b {
                return ctx.err(span, "a device cannot be paired with itself");
            }
            let (a, b) = (check(&ctx, span.clone(), a)?, check(&ctx, span, b)?);
            visibility.insert((a.min(b), a.max(b)));
        }
        for group in &raw.topology.groups {
            let span = group.span();
            let members: Vec<DeviceId> = group
                .get_ref()
                .iter()
                .map(|id| check(&ctx, span.clone(), *id))
                .collect::<Result<_>>()?;
            for (i, a) in members.iter().enumerate() {
                for b in &members[i + 1..] {
                    if a != b {
                        visibility.insert((*a.min(b), *a.max(b)));
                    }
                }
            }
        }

        let mut script = Vec::new();
        for s in &raw.script {
            let span = s.span();
            let s = s.get_ref();
            let device = check(&ctx, span.clone(), s.device)?;
            let file_ref = |names: &BTreeMap<String, FileId>| -> Result<FileId> {
                match (&s.file, &s.file_id) {
                    (Some(name), None) => match names.get(name) {
                        Some(id) => Ok(*id),
                        None => ctx.err(span.clone(), format!("unknown file `{name}`")),
                    },
                    (None, Some(hex)) => FileId::from_hex(hex).or_else(|_| ctx.err(span.clone(), format!("bad file id `{hex}`"))),
                    _ => ctx.err(span.clone(), format!("`{}` needs exactly one of `file` or `file_id`", s.action)),
                }
            };
            let action = match s.action.as_str() {
                "arrive" => Action::Arrive,
                "depart" => Action::Depart { silent: s.silent },
                "search" => match (&s.query, &s.file_id) {
                    (Some(q), None) => Action::Search(Query::Name(q.clone())),
                    (None, Some(_)) => Action::Search(Query::Id(file_ref(&names)?)),
                    _ => return ctx.err(span, "`search` needs exactly one of `query` or `file_id`"),
                },
                "download" => Action::Download {
                    file_id: file_ref(&names)?,
                    ttl: s.ttl,
                },
                "share" => {
                    let Some(name) = &s.name else {
                        return ctx.err(span, "`share` needs `name`");
                    };
                    let content = file_content(&ctx, span.clone(), &s.text, s.size, s.seed)?;
                    names.entry(name.clone()).or_insert_with(|| compute_file_id(&content));
                    Action::Share {
                        name: name.clone(),
                        content,
                    }
                }
                "unshare" => Action::Unshare {
                    file_id: file_ref(&names)?,
                },
                "link" | "unlink" => {
                    let Some(peer) = s.peer else {
                        return ctx.err(span, format!("`{}` needs `peer`", s.action));
                    };
                    let peer = check(&ctx, span.clone(), peer)?;
                    if s.action == "link" {
                        Action::Link { peer }
                    } else {
                        Action::Unlink { peer }
                    }
                }
                other => return ctx.err(span, format!("unknown action `{other}`")),
            };
            script.push(ScriptStep {
                at: s.at,
                device,
                action,
            });
        }
        script.sort_by_key(|s| s.at);

        let last = script
            .iter()
            .map(|s| s.at)
            .chain(devices.iter().filter_map(|d| d.arrive_at))
            .max()
            .unwrap_or(0);
        Ok(Scenario {
            seed: raw.seed,
            duration: raw.duration.unwrap_or(last + DEFAULT_TAIL),
            params,
            devices,
            visibility,
            script,
        })
    }

    /// Applies `NAME=VALUE` overrides on top of the file's parameters.
    pub fn apply_overrides(&mut self, assignments: &[String]) -> Result<()> {
        for a in assignments {
            self.params.apply_assignment(a)?;
        }
        self.params.validate()
    }

    pub fn downloads(&self) -> impl Iterator<Item = &ScriptStep> {
        self.script
            .iter()
            .filter(|s| matches!(s.action, Action::Download { .. }))
    }
}
