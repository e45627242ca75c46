//! Deterministic discrete-event simulator hosting one verifier per device,
//! with latency-weighted FIFO links, scenario drivers and metric collection.
//!
//! Events are processed in `(time, sequence)` order with deterministic
//! sequence assignment, so a scenario plus a seed fully determines the event
//! trace. Messages between one pair of devices travel over a fixed-latency
//! channel and are delivered reliably in order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::countalg::{self, CellVerdict, NodeCells};
use crate::dataplane::{DeviceFib, FibUpdateKind};
use crate::dvproto::{EqualViolation, ProtoError, UpdateMessage, Verifier};
use crate::planner::{self, Plan, PlanError, PlanKind, PlanOptions};
use crate::predicate::Store;
use crate::reqlang::{self, PrefixMap, ReqError, Requirement};
use crate::topology::{DeviceId, Topology};

#[derive(Error, Debug)]
pub enum SimError {
    #[error("simulation exceeded the event budget ({0}) without quiescing")]
    NonQuiescent(u64),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Req(#[from] ReqError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Dataplane(#[from] crate::dataplane::DataplaneError),
    #[error("line {line}: {msg}")]
    Script { line: usize, msg: String },
}

/// Scenario-level switches.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub min_info: bool,
    pub dampening: bool,
    pub merge: bool,
    pub seed: u64,
    /// Default per-link latency in microseconds.
    pub default_latency_us: u64,
    /// Constant added to every delivery, modeling processing cost.
    pub processing_cost_us: u64,
    /// Jitter band: when true, per-link latencies are drawn uniformly from
    /// [1, 2·base] under the seed.
    pub perturb_latencies: bool,
    pub event_budget: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            min_info: false,
            dampening: false,
            merge: true,
            seed: 0,
            default_latency_us: 10,
            processing_cost_us: 0,
            perturb_latencies: false,
            event_budget: 1_000_000,
        }
    }
}

/// A scripted data-plane event.
#[derive(Clone, Debug)]
pub enum ScriptAction {
    /// Insert-or-replace a rule (the `rule ...` directive), or delete by
    /// priority (`del <prio>`).
    Upsert(DeviceId, crate::dataplane::FibRule),
    Delete(DeviceId, u32),
    Link(DeviceId, DeviceId, bool),
}

#[derive(Clone, Debug)]
pub struct ScriptEvent {
    pub at_us: u64,
    pub action: ScriptAction,
}

/// Parse the event script format:
///
/// ```text
/// at <us> update <device> rule <PRIO> <src|-> <dst|-> <ALL|ANY> <hops|->
/// at <us> update <device> del <PRIO>
/// at <us> link <A> <B> <up|down>
/// ```
pub fn parse_events(
    store: &mut Store,
    topo: &Topology,
    text: &str,
) -> Result<Vec<ScriptEvent>, SimError> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SimError::Script {
            line: lineno + 1,
            msg,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 || toks[0] != "at" {
            return Err(err("expected `at <us> update|link ...`".into()));
        }
        let at_us: u64 = toks[1].parse().map_err(|_| err("bad timestamp".into()))?;
        let action = match toks[2] {
            "update" => {
                let device = topo
                    .device(toks[3])
                    .ok_or_else(|| err(format!("unknown device `{}`", toks[3])))?;
                match toks.get(4) {
                    Some(&"rule") => {
                        let rule =
                            crate::dataplane::parse_rule_directive(store, topo, device, &toks[5..])
                                .map_err(err)?;
                        ScriptAction::Upsert(device, rule)
                    }
                    Some(&"del") => {
                        let prio: u32 = toks
                            .get(5)
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| err("expected `del <priority>`".into()))?;
                        ScriptAction::Delete(device, prio)
                    }
                    _ => return Err(err("expected `rule ...` or `del <prio>`".into())),
                }
            }
            "link" => {
                if toks.len() != 6 {
                    return Err(err("expected `link <A> <B> <up|down>`".into()));
                }
                let a = topo
                    .device(toks[3])
                    .ok_or_else(|| err(format!("unknown device `{}`", toks[3])))?;
                let b = topo
                    .device(toks[4])
                    .ok_or_else(|| err(format!("unknown device `{}`", toks[4])))?;
                let up = match toks[5] {
                    "up" => true,
                    "down" => false,
                    other => return Err(err(format!("expected up|down, got `{other}`"))),
                };
                ScriptAction::Link(a, b, up)
            }
            other => return Err(err(format!("unknown event kind `{other}`"))),
        };
        out.push(ScriptEvent { at_us, action });
    }
    Ok(out)
}

/// Parse the latency spec: `latency <A> <B> <microseconds>` lines.
pub fn parse_latency(
    topo: &Topology,
    text: &str,
) -> Result<BTreeMap<(DeviceId, DeviceId), u64>, SimError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| SimError::Script {
            line: lineno + 1,
            msg,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "latency" {
            return Err(err("expected `latency <A> <B> <us>`".into()));
        }
        let a = topo
            .device(toks[1])
            .ok_or_else(|| err(format!("unknown device `{}`", toks[1])))?;
        let b = topo
            .device(toks[2])
            .ok_or_else(|| err(format!("unknown device `{}`", toks[2])))?;
        let us: u64 = toks[3].parse().map_err(|_| err("bad latency".into()))?;
        map.insert((a.min(b), a.max(b)), us);
    }
    Ok(map)
}

/// Per-window run statistics (one window per scenario event).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunStats {
    pub event_id: usize,
    pub convergence_us: u64,
    pub messages: u64,
    pub bytes_proxy: u64,
    pub devices_changed: u64,
}

pub fn stats_csv(stats: &[RunStats]) -> String {
    let mut s = String::from("event_id,convergence_us,messages,bytes_proxy,devices_changed\n");
    for r in stats {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.event_id, r.convergence_us, r.messages, r.bytes_proxy, r.devices_changed
        ));
    }
    s
}

/// A verdict for one plan after quiescence.
#[derive(Clone, Debug)]
pub struct PlanReport {
    pub plan: usize,
    pub kind: PlanKind,
    pub ingress_verdicts: Vec<countalg::IngressVerdict>,
    pub violations: Vec<EqualViolation>,
}

impl PlanReport {
    pub fn satisfied(&self) -> bool {
        self.violations.is_empty() && self.ingress_verdicts.iter().all(|v| v.satisfied())
    }
}

enum InboxItem {
    Message(UpdateMessage),
    Fib(FibUpdateKind),
    Link(DeviceId, bool),
}

enum Payload {
    Deliver(DeviceId, UpdateMessage),
    Process(DeviceId),
}

/// The simulator: topology, one verifier per device, plans, and the event
/// queue.
pub struct Sim {
    pub store: Store,
    pub topo: Topology,
    pub prefixes: PrefixMap,
    pub plans: Vec<Plan>,
    verifiers: BTreeMap<DeviceId, Verifier>,
    inboxes: BTreeMap<DeviceId, VecDeque<InboxItem>>,
    queue: BinaryHeap<Reverse<(u64, u64, usize)>>,
    payloads: Vec<Option<Payload>>,
    seq: u64,
    now: u64,
    latency: BTreeMap<(DeviceId, DeviceId), u64>,
    pub config: SimConfig,
    // Window counters.
    messages: u64,
    bytes: u64,
    change_marks: BTreeMap<DeviceId, u64>,
    installed: bool,
    version: u64,
    /// Rendered message log (for inspection); capped.
    pub log: Vec<String>,
    pub log_limit: usize,
}

impl Sim {
    /// Build a simulator: desugar, validate and plan every requirement, and
    /// stand up one verifier per device with the initial FIBs.
    pub fn new(
        mut store: Store,
        topo: Topology,
        fibs: BTreeMap<DeviceId, DeviceFib>,
        prefixes: PrefixMap,
        requirements: &[Requirement],
        latency: BTreeMap<(DeviceId, DeviceId), u64>,
        config: SimConfig,
    ) -> Result<Sim, SimError> {
        let mut plans = Vec::new();
        let opts = PlanOptions {
            min_info: config.min_info,
            merge: config.merge,
        };
        for req in requirements {
            let req = reqlang::desugar(req, &topo)?;
            reqlang::validate(&req, &topo, &prefixes, &mut store)?;
            plans.extend(planner::plan(&mut store, &topo, &prefixes, &req, opts)?);
        }
        let mut latency = latency;
        if config.perturb_latencies {
            let mut rng = StdRng::seed_from_u64(config.seed);
            for (a, b) in topo.links() {
                let base = latency
                    .get(&(a, b))
                    .copied()
                    .unwrap_or(config.default_latency_us)
                    .max(1);
                latency.insert((a, b), rng.gen_range(1..=2 * base));
            }
        }
        let verifiers: BTreeMap<DeviceId, Verifier> = fibs
            .into_iter()
            .map(|(d, fib)| (d, Verifier::new(d, fib)))
            .collect();
        let inboxes = verifiers.keys().map(|&d| (d, VecDeque::new())).collect();
        Ok(Sim {
            store,
            topo,
            prefixes,
            plans,
            verifiers,
            inboxes,
            queue: BinaryHeap::new(),
            payloads: Vec::new(),
            seq: 0,
            now: 0,
            latency,
            config,
            messages: 0,
            bytes: 0,
            change_marks: BTreeMap::new(),
            installed: false,
            version: 0,
            log: Vec::new(),
            log_limit: 0,
        })
    }

    fn push(&mut self, at: u64, payload: Payload) {
        let id = self.payloads.len();
        self.payloads.push(Some(payload));
        self.queue.push(Reverse((at, self.seq, id)));
        self.seq += 1;
    }

    fn link_latency(&self, a: DeviceId, b: DeviceId) -> u64 {
        self.latency
            .get(&(a.min(b), a.max(b)))
            .copied()
            .unwrap_or(self.config.default_latency_us)
    }

    /// Deliver the plans to every device at the current time and run to
    /// quiescence: the burst scenario.
    pub fn run_burst(&mut self) -> Result<RunStats, SimError> {
        let start = self.now;
        self.begin_window();
        self.version += 1;
        let devices: Vec<DeviceId> = self.verifiers.keys().copied().collect();
        for d in devices {
            let v = self.verifiers.get_mut(&d).unwrap();
            v.install_plans(&mut self.store, self.version, &self.plans);
            self.push(self.now, Payload::Process(d));
        }
        self.installed = true;
        self.drain()?;
        Ok(self.window_stats(0, start))
    }

    /// Apply one scripted event and run to quiescence, returning the window
    /// statistics.
    pub fn run_event(&mut self, event_id: usize, ev: &ScriptEvent) -> Result<RunStats, SimError> {
        assert!(self.installed, "burst phase must run first");
        let at = ev.at_us.max(self.now);
        self.now = at;
        self.begin_window();
        match &ev.action {
            ScriptAction::Upsert(device, rule) => {
                let exists = self.verifiers[device].fib.fib.get(rule.priority).is_some();
                let kind = if exists {
                    FibUpdateKind::Modify(rule.clone())
                } else {
                    FibUpdateKind::Insert(rule.clone())
                };
                self.inboxes
                    .get_mut(device)
                    .unwrap()
                    .push_back(InboxItem::Fib(kind));
                self.push(at, Payload::Process(*device));
            }
            ScriptAction::Delete(device, prio) => {
                self.inboxes
                    .get_mut(device)
                    .unwrap()
                    .push_back(InboxItem::Fib(FibUpdateKind::Delete(*prio)));
                self.push(at, Payload::Process(*device));
            }
            ScriptAction::Link(a, b, up) => {
                // Both endpoints observe the flap.
                self.inboxes
                    .get_mut(a)
                    .unwrap()
                    .push_back(InboxItem::Link(*b, *up));
                self.push(at, Payload::Process(*a));
                self.inboxes
                    .get_mut(b)
                    .unwrap()
                    .push_back(InboxItem::Link(*a, *up));
                self.push(at, Payload::Process(*b));
            }
        }
        self.drain()?;
        Ok(self.window_stats(event_id, at))
    }

    /// Burst plus the whole script, one quiescent window per event.
    pub fn run_incremental(&mut self, script: &[ScriptEvent]) -> Result<Vec<RunStats>, SimError> {
        let mut stats = vec![self.run_burst()?];
        for (i, ev) in script.iter().enumerate() {
            stats.push(self.run_event(i + 1, ev)?);
        }
        Ok(stats)
    }

    fn begin_window(&mut self) {
        self.messages = 0;
        self.bytes = 0;
        self.change_marks = self
            .verifiers
            .iter()
            .map(|(&d, v)| (d, v.count_changes))
            .collect();
    }

    fn window_stats(&self, event_id: usize, start: u64) -> RunStats {
        let devices_changed = self
            .verifiers
            .iter()
            .filter(|(d, v)| v.count_changes > self.change_marks[d])
            .count() as u64;
        RunStats {
            event_id,
            convergence_us: self.now - start,
            messages: self.messages,
            bytes_proxy: self.bytes,
            devices_changed,
        }
    }

    fn drain(&mut self) -> Result<(), SimError> {
        let mut budget = self.config.event_budget;
        while let Some(Reverse((at, _, id))) = self.queue.pop() {
            budget = budget
                .checked_sub(1)
                .ok_or(SimError::NonQuiescent(self.config.event_budget))?;
            self.now = self.now.max(at);
            let payload = self.payloads[id].take().expect("payload consumed once");
            match payload {
                Payload::Deliver(to, msg) => {
                    self.inboxes.get_mut(&to).unwrap().push_back(InboxItem::Message(msg));
                    self.push(self.now, Payload::Process(to));
                }
                Payload::Process(dev) => {
                    self.process_device(dev)?;
                }
            }
        }
        Ok(())
    }

    fn process_device(&mut self, dev: DeviceId) -> Result<(), SimError> {
        // Damped: drain the whole inbox before flushing. Undamped: handle
        // one item, flush, and reschedule if more is pending.
        loop {
            let item = match self.inboxes.get_mut(&dev).unwrap().pop_front() {
                Some(item) => item,
                None => {
                    // Nothing queued: emit whatever is pending (the initial
                    // announcements right after plan installation).
                    self.flush_device(dev);
                    return Ok(());
                }
            };
            let v = self.verifiers.get_mut(&dev).unwrap();
            match item {
                InboxItem::Message(msg) => v.handle_update(&mut self.store, &msg)?,
                InboxItem::Fib(kind) => v.handle_fib_update(&mut self.store, &self.topo, kind)?,
                InboxItem::Link(neighbor, up) => {
                    v.handle_link_event(&mut self.store, &self.topo, neighbor, up)?
                }
            }
            if !self.config.dampening {
                self.flush_device(dev);
                if !self.inboxes[&dev].is_empty() {
                    self.push(self.now, Payload::Process(dev));
                }
                return Ok(());
            }
            if self.inboxes[&dev].is_empty() {
                self.flush_device(dev);
                return Ok(());
            }
        }
    }

    fn flush_device(&mut self, dev: DeviceId) {
        let msgs = self
            .verifiers
            .get_mut(&dev)
            .unwrap()
            .flush(&mut self.store);
        for msg in msgs {
            let plan = &self.plans[msg.plan];
            let to = plan.tasks[msg.link.0.idx()].host;
            self.messages += 1;
            self.bytes += msg.bytes_proxy(&self.store);
            if self.log.len() < self.log_limit {
                let line = msg.render(plan);
                self.log.push(format!("{} {} -> {} {}", self.now,         self.topo.name(dev), self.topo.name(to), line));
            }
            let lat = self.link_latency(dev, to) + self.config.processing_cost_us;
            self.push(self.now + lat, Payload::Deliver(to, msg));
        }
    }

    /// Verdicts after quiescence, read from the source nodes' LocCIBs and
    /// the devices' local violation reports.
    pub fn reports(&mut self) -> Vec<PlanReport> {
        let mut out = Vec::new();
        for (plan_id, plan) in self.plans.iter().enumerate() {
            match plan.kind {
                PlanKind::Exist => {
                    let mut ingress_verdicts = Vec::new();
                    for &ing in &plan.ingress {
                        let cells: NodeCells = match plan.dvnet.sources.get(&ing) {
                            Some(&src) => self.verifiers[&ing]
                                .loc_cells(plan_id, src)
                                .expect("source node hosted at ingress"),
                            None => vec![(
                                plan.packet_space,
                                countalg::CountSet::zero(plan.m),
                            )],
                        };
                        ingress_verdicts.push(countalg::IngressVerdict {
                            ingress: ing,
                            cells: countalg::evaluate(
                                &plan.behavior,
                                &plan.leaf_components,
                                &cells,
                            ),
                        });
                    }
                    out.push(PlanReport {
                        plan: plan_id,
                        kind: plan.kind,
                        ingress_verdicts,
                        violations: Vec::new(),
                    });
                }
                PlanKind::EqualLocal => {
                    let mut violations = Vec::new();
                    for v in self.verifiers.values() {
                        violations.extend(
                            v.violations()
                                .iter()
                                .filter(|viol| viol.plan == plan_id)
                                .cloned(),
                        );
                    }
                    out.push(PlanReport {
                        plan: plan_id,
                        kind: plan.kind,
                        ingress_verdicts: Vec::new(),
                        violations,
                    });
                }
            }
        }
        out
    }

    /// Every hosted node's LocCIB must match the centralized sweep on the
    /// current data plane: the quiescent-consistency check.
    pub fn agrees_with_centralized(&mut self) -> bool {
        let fibs: BTreeMap<DeviceId, DeviceFib> = self
            .verifiers
            .iter()
            .map(|(&d, v)| (d, v.fib.clone()))
            .collect();
        for (plan_id, plan) in self.plans.iter().enumerate() {
            if plan.kind != PlanKind::Exist {
                continue;
            }
            let reference = countalg::centralized_count(&mut self.store, plan, &fibs);
            for task in &plan.tasks {
                let local = match self.verifiers[&task.host].loc_cells(plan_id, task.node) {
                    Some(cells) => cells,
                    None => return false,
                };
                if !crate::dvproto::cells_agree(
                    &mut self.store,
                    &local,
                    &reference.per_node[task.node.idx()],
                ) {
                    return false;
                }
            }
        }
        true
    }

    /// Deterministic digest of all LocCIB state, for cross-run comparison.
    /// Predicates are rendered structurally so digests are comparable across
    /// runs with different store histories.
    pub fn state_digest(&mut self) -> String {
        let mut s = String::new();
        let devices: Vec<DeviceId> = self.verifiers.keys().copied().collect();
        for dev in devices {
            for (plan_id, node) in self.verifiers[&dev].hosted_nodes() {
                let mut cells = self.verifiers[&dev].loc_cells(plan_id, node).unwrap();
                // Canonical form: merge cells by count set, render sorted.
                let mut merged: BTreeMap<String, crate::predicate::Predicate> = BTreeMap::new();
                for (p, c) in cells.drain(..) {
                    let key = c.render();
                    let cur = merged
                        .entry(key)
                        .or_insert(crate::predicate::FALSE);
                    *cur = self.store.or(*cur, p);
                }
                let label = &self.plans[plan_id].dvnet.nodes[node.idx()].label;
                for (count, pred) in merged {
                    s.push_str(&format!(
                        "{} {} {} {}\n",
                        self.topo.name(dev),
                        label,
                        crate::predicate::render_predicate(&self.store, pred),
                        count
                    ));
                }
            }
            for viol in self.verifiers[&dev].violations() {
                s.push_str(&format!(
                    "{} violation plan={} node={:?}\n",
                    self.topo.name(dev),
                    viol.plan,
                    viol.node
                ));
            }
        }
        s
    }

    pub fn verifier(&self, dev: DeviceId) -> &Verifier {
        &self.verifiers[&dev]
    }
}
