//! Scenario-driven runs of the simulator.

pub mod metrics;
pub mod scenario;

use crate::ids::SimTime;
use crate::sim::{Violations, World};
pub use metrics::{CourierCounts, DownloadMetrics, Metrics};
pub use scenario::{Action, Scenario};

/// Builds the world for `scenario` with every scripted action queued.
pub fn build_world(scenario: &Scenario) -> World {
    let mut w = World::new(scenario.params, scenario.seed);
    for d in &scenario.devices {
        w.add_device(d.id, d.files.clone());
    }
    for (a, b) in &scenario.visibility {
        w.set_visible(*a, *b);
    }
    for d in &scenario.devices {
        if let Some(at) = d.arrive_at {
            w.arrive(at, d.id);
        }
    }
    for s in &scenario.script {
        match &s.action {
            Action::Arrive => w.arrive(s.at, s.device),
            Action::Depart { silent } => w.depart(s.at, s.device, *silent),
            Action::Search(q) => {
                w.search(s.at, s.device, q.clone());
            }
            Action::Download { file_id, ttl } => {
                w.download(s.at, s.device, *file_id, *ttl);
            }
            Action::Share { name, content } => w.share(s.at, s.device, name.clone(), content.clone()),
            Action::Unshare { file_id } => w.unshare(s.at, s.device, *file_id),
            Action::Link { peer } => w.link(s.at, s.device, *peer, true),
            Action::Unlink { peer } => w.link(s.at, s.device, *peer, false),
        }
    }
    w
}

pub struct RunOutcome {
    pub world: World,
    pub metrics: Metrics,
}

impl RunOutcome {
    pub fn violations(&self) -> &Violations {
        self.world.violations()
    }

    /// The run respected every invariant and all scripted downloads finished.
    pub fn succeeded(&self) -> bool {
        *self.violations() == Violations::default() && self.metrics.all_downloads_succeeded()
    }
}

/// Runs `scenario` up to `until` (default: the scenario's duration).
pub fn run(scenario: &Scenario, until: Option<SimTime>) -> RunOutcome {
    let mut world = build_world(scenario);
    world.run_until(until.unwrap_or(scenario.duration));
    let metrics = Metrics::from_trace(world.trace());
    RunOutcome { world, metrics }
}
