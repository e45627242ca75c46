//! The on-device verifier: counting state per hosted DVNet node, UPDATE
//! message processing, internal-event processing, and local verification of
//! equal-type tasks.
//!
//! Per hosted node the verifier keeps three tables: `CIBIn(v)`, the latest
//! counting results received from downstream neighbor `v`; `LocCIB`, its own
//! `(predicate, count, action, causality)` cells, where causality records the
//! downstream contributions the count was computed from; and `CIBOut`, the
//! pending announcement to upstream neighbors. Every emitted UPDATE message
//! keeps the invariant that the union of its withdrawn predicates equals the
//! union of its incoming entry predicates, so upstream state never decays.
//!
//! Removing a downstream contribution has no algebraic inverse over count
//! sets (union discards multiplicity), so affected cells are recomputed from
//! the retained `CIBIn` tables instead of inverted.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::countalg::{node_count, truncate_min_info, CountSet, NodeCells};
use crate::dataplane::{ActionGroup, DeltaCell, DeviceFib, FibUpdateKind, LecTable};
use crate::planner::{DeviceTask, NodeId, Plan, TaskMode};
use crate::predicate::{self, Predicate, Store};
use crate::topology::{DeviceId, Topology};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ProtoError {
    #[error("UPDATE message violates the withdrawn/incoming union invariant")]
    MessageInvariant,
    #[error("UPDATE message for link ({0:?}, {1:?}) reached a device hosting no such node")]
    NoSuchNode(NodeId, NodeId),
}

/// The DV protocol wire unit: counting results propagated against one DVNet
/// link.
#[derive(Clone, Debug)]
pub struct UpdateMessage {
    pub plan: usize,
    pub version: u64,
    /// (upstream node, downstream node): the DVNet link this result travels
    /// against.
    pub link: (NodeId, NodeId),
    pub withdrawn: Vec<Predicate>,
    pub entries: Vec<(Predicate, CountSet)>,
}

impl UpdateMessage {
    /// union(withdrawn) == union(incoming predicates), and incoming
    /// predicates pairwise disjoint.
    pub fn check_invariant(&self, store: &mut Store) -> Result<(), ProtoError> {
        let mut w = predicate::FALSE;
        for p in &self.withdrawn {
            w = store.or(w, *p);
        }
        let mut i = predicate::FALSE;
        for (p, _) in &self.entries {
            if store.intersects(i, *p) {
                return Err(ProtoError::MessageInvariant);
            }
            i = store.or(i, *p);
        }
        if w != i {
            return Err(ProtoError::MessageInvariant);
        }
        Ok(())
    }

    /// Message size proxy for statistics: predicates cost 16 bytes per
    /// decision-diagram node, counts 8 bytes per vector component.
    pub fn bytes_proxy(&self, store: &Store) -> u64 {
        let mut bytes = 0u64;
        for p in &self.withdrawn {
            bytes += store.size_nodes(*p) as u64 * 16;
        }
        for (p, set) in &self.entries {
            bytes += store.size_nodes(*p) as u64 * 16;
            bytes += 8 * set.len() as u64 * set.dim().max(1) as u64;
        }
        bytes
    }

    /// Deterministic log form: `UPD <up> <down> W:[ids] I:[(id,set)]`.
    pub fn render(&self, plan: &Plan) -> String {
        let label = |n: NodeId| plan.dvnet.nodes[n.idx()].label.clone();
        let w: Vec<String> = self.withdrawn.iter().map(|p| p.id().to_string()).collect();
        let i: Vec<String> = self
            .entries
            .iter()
            .map(|(p, s)| format!("({},{})", p.id(), s.render()))
            .collect();
        format!(
            "UPD {} {} W:[{}] I:[{}]",
            label(self.link.0),
            label(self.link.1),
            w.join(","),
            i.join(",")
        )
    }
}

/// One LocCIB cell.
#[derive(Clone, Debug)]
pub struct LocEntry {
    pub predicate: Predicate,
    pub count: CountSet,
    pub action: ActionGroup,
    /// (downstream node, contributing predicate, contributing count): the
    /// exact inputs `count` was computed from.
    pub causality: Vec<(NodeId, Predicate, CountSet)>,
}

/// Pending upstream announcement: a replaced region and its new cells.
#[derive(Clone, Debug)]
struct CibOut {
    region: Predicate,
    entries: Vec<(Predicate, CountSet)>,
}

impl CibOut {
    fn new() -> Self {
        CibOut {
            region: predicate::FALSE,
            entries: Vec::new(),
        }
    }

    /// Record that `pred` now counts `set`, superseding earlier pending
    /// announcements for the same headers.
    fn add(&mut self, store: &mut Store, pred: Predicate, set: CountSet) {
        if pred.is_false() {
            return;
        }
        for (p, _) in self.entries.iter_mut() {
            *p = store.diff(*p, pred);
        }
        self.entries.retain(|(p, _)| !p.is_false());
        self.entries.push((pred, set));
        self.region = store.or(self.region, pred);
    }

    fn is_empty(&self) -> bool {
        self.region.is_false()
    }

    /// Drain into wire form: withdrawn = the whole replaced region, incoming
    /// grouped by equal count set.
    fn drain(&mut self, store: &mut Store) -> (Vec<Predicate>, Vec<(Predicate, CountSet)>) {
        let mut grouped: Vec<(Predicate, CountSet)> = Vec::new();
        for (p, s) in self.entries.drain(..) {
            match grouped.iter_mut().find(|(_, gs)| *gs == s) {
                Some((gp, _)) => *gp = store.or(*gp, p),
                None => grouped.push((p, s)),
            }
        }
        let region = std::mem::replace(&mut self.region, predicate::FALSE);
        (vec![region], grouped)
    }
}

struct NodeState {
    task: DeviceTask,
    /// Headers this accepting node delivers (announced prefixes ∩ space);
    /// `None` for transit nodes.
    accept_covered: Option<Predicate>,
    cib_in: BTreeMap<NodeId, Vec<(Predicate, CountSet)>>,
    loc_cib: Vec<LocEntry>,
    cib_out: CibOut,
}

/// A local violation of an equal-type task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EqualViolation {
    pub plan: usize,
    pub node: NodeId,
    pub predicate: Predicate,
    pub found: ActionGroup,
    pub expected: Vec<DeviceId>,
}

struct EqualTask {
    plan_id: usize,
    node: NodeId,
    space: Predicate,
    expected: Vec<DeviceId>,
    accepting: bool,
}

/// The verifier instance of one device: its forwarding state plus the
/// counting state of every DVNet node hosted here.
pub struct Verifier {
    pub device: DeviceId,
    pub fib: DeviceFib,
    /// Monotone count of local result changes, for changed-device metrics.
    pub count_changes: u64,
    version: u64,
    nodes: BTreeMap<(usize, NodeId), NodeState>,
    equal_tasks: Vec<EqualTask>,
    violations: Vec<EqualViolation>,
}

impl Verifier {
    pub fn new(device: DeviceId, fib: DeviceFib) -> Self {
        Verifier {
            device,
            fib,
            count_changes: 0,
            version: 0,
            nodes: BTreeMap::new(),
            equal_tasks: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn violations(&self) -> &[EqualViolation] {
        &self.violations
    }

    /// Current LocCIB cells of a hosted node.
    pub fn loc_cells(&self, plan_id: usize, node: NodeId) -> Option<NodeCells> {
        self.nodes.get(&(plan_id, node)).map(|st| {
            st.loc_cib
                .iter()
                .map(|e| (e.predicate, e.count.clone()))
                .collect()
        })
    }

    pub fn hosted_nodes(&self) -> Vec<(usize, NodeId)> {
        self.nodes.keys().copied().collect()
    }

    /// Install the tasks of the given plans hosted on this device, replacing
    /// any previous plan state. Returns true when anything was installed;
    /// initial announcements are left pending for the next flush.
    pub fn install_plans(&mut self, store: &mut Store, version: u64, plans: &[Plan]) {
        self.version = version;
        self.nodes.clear();
        self.equal_tasks.clear();
        self.violations.clear();
        for (plan_id, plan) in plans.iter().enumerate() {
            for task in &plan.tasks {
                if task.host != self.device {
                    continue;
                }
                match task.mode {
                    TaskMode::EqualLocal => {
                        let u = task.node;
                        let expected: Vec<DeviceId> = plan.dvnet.out[u.idx()]
                            .iter()
                            .map(|&v| plan.topo.physical(plan.dvnet.nodes[v.idx()].dev))
                            .collect();
                        self.equal_tasks.push(EqualTask {
                            plan_id,
                            node: u,
                            space: task.packet_space,
                            expected,
                            accepting: !task.owners.is_empty(),
                        });
                    }
                    _ => {
                        let accept_covered = if task.owners.is_empty() {
                            None
                        } else {
                            let covered = match plan.prefixes.get(&task.host) {
                                Some(list) => store.dst_in_prefixes(list),
                                None => predicate::FALSE,
                            };
                            Some(store.and(covered, task.packet_space))
                        };
                        let mut st = NodeState {
                            task: task.clone(),
                            accept_covered,
                            cib_in: BTreeMap::new(),
                            loc_cib: Vec::new(),
                            cib_out: CibOut::new(),
                        };
                        self.init_node(store, &mut st);
                        self.nodes.insert((plan_id, task.node), st);
                    }
                }
            }
        }
        self.recheck_equal(store);
    }

    /// Seed a node: accepting nodes start at count 1 over the headers they
    /// deliver; everything else starts at {0} pending downstream input.
    fn init_node(&self, store: &mut Store, st: &mut NodeState) {
        if let Some(covered) = st.accept_covered {
            let m = st.task.dim;
            let one = CountSet::unit(m, st.task.owners.iter().copied());
            let rest = store.diff(st.task.packet_space, covered);
            let mut cells = Vec::new();
            if !covered.is_false() {
                cells.push((covered, one));
            }
            if !rest.is_false() {
                cells.push((rest, CountSet::zero(m)));
            }
            for (pred, count) in cells {
                let count = maybe_truncate(&st.task, count);
                st.cib_out.add(store, pred, count.clone());
                st.loc_cib.push(LocEntry {
                    predicate: pred,
                    count,
                    action: ActionGroup::drop(),
                    causality: Vec::new(),
                });
            }
            return;
        }
        for &(v, _) in &st.task.downstream {
            st.cib_in
                .insert(v, vec![(st.task.packet_space, CountSet::zero(st.task.dim))]);
        }
        let space = st.task.packet_space;
        let entries = recompute_region(store, &self.fib.lec, st, space);
        for e in &entries {
            st.cib_out.add(store, e.predicate, e.count.clone());
        }
        st.loc_cib = entries;
    }

    /// Handle one UPDATE message addressed to a node hosted here. Stale plan
    /// versions are dropped. Outbound changes are left pending for `flush`.
    pub fn handle_update(
        &mut self,
        store: &mut Store,
        msg: &UpdateMessage,
    ) -> Result<(), ProtoError> {
        if msg.version != self.version {
            return Ok(());
        }
        msg.check_invariant(store)?;
        let (up, down) = msg.link;
        let key = (msg.plan, up);
        let st = self
            .nodes
            .get_mut(&key)
            .ok_or(ProtoError::NoSuchNode(up, down))?;

        // Step 1: splice the announced region into CIBIn(down).
        let mut region = predicate::FALSE;
        for p in &msg.withdrawn {
            region = store.or(region, *p);
        }
        let cib = st
            .cib_in
            .get_mut(&down)
            .ok_or(ProtoError::NoSuchNode(up, down))?;
        for (p, _) in cib.iter_mut() {
            *p = store.diff(*p, region);
        }
        cib.retain(|(p, _)| !p.is_false());
        cib.extend(msg.entries.iter().cloned());

        // Step 2: rewrite the affected LocCIB cells — those whose causality
        // cites the sender over an overlapping region.
        let affected: Vec<usize> = st
            .loc_cib
            .iter()
            .enumerate()
            .filter(|(_, e)| {
                e.causality.iter().any(|(v, _, _)| *v == down)
                    && store.intersects(e.predicate, region)
            })
            .map(|(i, _)| i)
            .collect();
        self.rewrite_affected(store, key, &affected, None);
        Ok(())
    }

    /// Apply a forwarding-rule change to this device and rewrite the
    /// affected cells of every hosted node.
    pub fn handle_fib_update(
        &mut self,
        store: &mut Store,
        topo: &Topology,
        kind: FibUpdateKind,
    ) -> Result<(), crate::dataplane::DataplaneError> {
        let delta = self.fib.apply_update(store, topo, kind)?;
        self.apply_delta(store, &delta);
        Ok(())
    }

    /// Handle a link on this device going up or down.
    pub fn handle_link_event(
        &mut self,
        store: &mut Store,
        topo: &Topology,
        neighbor: DeviceId,
        up: bool,
    ) -> Result<(), crate::dataplane::DataplaneError> {
        let delta = self.fib.link_event(store, topo, neighbor, up)?;
        self.apply_delta(store, &delta);
        Ok(())
    }

    fn apply_delta(&mut self, store: &mut Store, delta: &[DeltaCell]) {
        if delta.is_empty() {
            return;
        }
        let mut region = predicate::FALSE;
        for cell in delta {
            region = store.or(region, cell.predicate);
        }
        let keys: Vec<(usize, NodeId)> = self.nodes.keys().copied().collect();
        for key in keys {
            let st = &self.nodes[&key];
            if st.accept_covered.is_some() {
                continue; // destination counts ignore the local data plane
            }
            let affected: Vec<usize> = st
                .loc_cib
                .iter()
                .enumerate()
                .filter(|(_, e)| store.intersects(e.predicate, region))
                .map(|(i, _)| i)
                .collect();
            if !affected.is_empty() {
                self.rewrite_affected(store, key, &affected, Some(region));
            }
        }
        self.recheck_equal(store);
    }

    /// Replace the listed LocCIB cells: the region they cover (clipped when
    /// a data plane delta is localized) is recomputed from CIBIn under the
    /// current LEC table; pieces whose count changed go to CIBOut.
    fn rewrite_affected(
        &mut self,
        store: &mut Store,
        key: (usize, NodeId),
        affected: &[usize],
        clip: Option<Predicate>,
    ) {
        if affected.is_empty() {
            return;
        }
        let lec = self.fib.lec.clone();
        let mut changes = 0u64;
        {
            let st = self.nodes.get_mut(&key).unwrap();
            let mut kept: Vec<LocEntry> = Vec::new();
            let mut removed: Vec<LocEntry> = Vec::new();
            for (i, e) in st.loc_cib.drain(..).enumerate() {
                if affected.contains(&i) {
                    removed.push(e);
                } else {
                    kept.push(e);
                }
            }
            for old in removed {
                let recompute_pred = match clip {
                    Some(c) => store.and(old.predicate, c),
                    None => old.predicate,
                };
                if let Some(c) = clip {
                    let untouched = store.diff(old.predicate, c);
                    if !untouched.is_false() {
                        kept.push(LocEntry {
                            predicate: untouched,
                            ..old.clone()
                        });
                    }
                }
                if recompute_pred.is_false() {
                    continue;
                }
                let new_entries = recompute_region(store, &lec, st, recompute_pred);
                for ne in new_entries {
                    if ne.count != old.count {
                        st.cib_out.add(store, ne.predicate, ne.count.clone());
                        changes += 1;
                    }
                    kept.push(ne);
                }
            }
            st.loc_cib = kept;
        }
        self.count_changes += changes;
    }

    /// Emit the pending announcements: one consolidated UPDATE per upstream
    /// neighbor of each node with pending changes.
    pub fn flush(&mut self, store: &mut Store) -> Vec<UpdateMessage> {
        let mut out = Vec::new();
        for ((plan_id, node), st) in self.nodes.iter_mut() {
            if st.cib_out.is_empty() {
                continue;
            }
            let (withdrawn, entries) = st.cib_out.drain(store);
            for &(up, _) in &st.task.upstream {
                out.push(UpdateMessage {
                    plan: *plan_id,
                    version: self.version,
                    link: (up, *node),
                    withdrawn: withdrawn.clone(),
                    entries: entries.clone(),
                });
            }
        }
        out
    }

    /// Re-run the local checks of all equal-type tasks against the current
    /// LEC table. Never produces messages.
    fn recheck_equal(&mut self, store: &mut Store) {
        self.violations.clear();
        for t in &self.equal_tasks {
            if t.accepting {
                continue; // destinations deliver; no forwarding obligation
            }
            for entry in &self.fib.lec.entries {
                let covered = store.and(entry.predicate, t.space);
                if covered.is_false() {
                    continue;
                }
                let hops = &entry.action.next_hops; // canonical: sorted
                if *hops != t.expected {
                    self.violations.push(EqualViolation {
                        plan: t.plan_id,
                        node: t.node,
                        predicate: covered,
                        found: entry.action.clone(),
                        expected: t.expected.clone(),
                    });
                }
            }
        }
    }

    /// Invariant check for tests: every LocCIB partitions its task space and
    /// counts are recomputable from causality.
    pub fn check_invariants(&self, store: &mut Store) -> Result<(), String> {
        for ((plan, node), st) in &self.nodes {
            let mut union = predicate::FALSE;
            for e in &st.loc_cib {
                if store.intersects(union, e.predicate) {
                    return Err(format!("plan {plan} node {node:?}: overlapping LocCIB cells"));
                }
                union = store.or(union, e.predicate);
                if st.accept_covered.is_none() {
                    let counts: BTreeMap<NodeId, CountSet> = e
                        .causality
                        .iter()
                        .map(|(v, _, c)| (*v, c.clone()))
                        .collect();
                    let recomputed = maybe_truncate(
                        &st.task,
                        node_count(&e.action, &st.task.downstream, &counts, st.task.dim),
                    );
                    if recomputed != e.count {
                        return Err(format!(
                            "plan {plan} node {node:?}: causality does not reproduce count"
                        ));
                    }
                }
            }
            if union != st.task.packet_space {
                return Err(format!(
                    "plan {plan} node {node:?}: LocCIB does not cover the task space"
                ));
            }
        }
        Ok(())
    }
}

fn maybe_truncate(task: &DeviceTask, set: CountSet) -> CountSet {
    match task.mode {
        TaskMode::MinInfo(cmp, _) => truncate_min_info(&set, cmp),
        _ => set,
    }
}

/// Recompute the cells of `region` for one node from its CIBIn tables and
/// the device's current LEC table: partition by action, refine by the
/// matching downstream neighbors' cells, and count.
fn recompute_region(
    store: &mut Store,
    lec: &LecTable,
    st: &NodeState,
    region: Predicate,
) -> Vec<LocEntry> {
    struct Part {
        pred: Predicate,
        action: ActionGroup,
        causality: Vec<(NodeId, Predicate, CountSet)>,
    }
    let mut parts: Vec<Part> = Vec::new();
    for e in &lec.entries {
        let pred = store.and(e.predicate, region);
        if !pred.is_false() {
            parts.push(Part {
                pred,
                action: e.action.clone(),
                causality: Vec::new(),
            });
        }
    }
    let mut done = Vec::new();
    for part in parts {
        let matching: Vec<NodeId> = st
            .task
            .downstream
            .iter()
            .filter(|(_, dev)| part.action.next_hops.contains(dev))
            .map(|&(n, _)| n)
            .collect();
        let mut frontier = vec![part];
        for v in matching {
            let cells = &st.cib_in[&v];
            let mut next = Vec::new();
            for f in frontier {
                for (q, c) in cells {
                    let pred = store.and(f.pred, *q);
                    if pred.is_false() {
                        continue;
                    }
                    let mut causality = f.causality.clone();
                    causality.push((v, *q, c.clone()));
                    next.push(Part {
                        pred,
                        action: f.action.clone(),
                        causality,
                    });
                }
            }
            frontier = next;
        }
        done.extend(frontier);
    }
    done.into_iter()
        .map(|p| {
            let counts: BTreeMap<NodeId, CountSet> = p
                .causality
                .iter()
                .map(|(v, _, c)| (*v, c.clone()))
                .collect();
            let count = maybe_truncate(
                &st.task,
                node_count(&p.action, &st.task.downstream, &counts, st.task.dim),
            );
            LocEntry {
                predicate: p.pred,
                count,
                action: p.action,
                causality: p.causality,
            }
        })
        .collect()
}

/// The equal-type local checks of one plan evaluated directly against a set
/// of forwarding tables, without standing up verifiers.
pub fn static_equal_violations(
    store: &mut Store,
    plan_id: usize,
    plan: &Plan,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
) -> Vec<EqualViolation> {
    let mut out = Vec::new();
    for task in &plan.tasks {
        if task.mode != TaskMode::EqualLocal || !task.owners.is_empty() {
            continue;
        }
        let u = task.node;
        let mut expected: Vec<DeviceId> = plan.dvnet.out[u.idx()]
            .iter()
            .map(|&v| plan.topo.physical(plan.dvnet.nodes[v.idx()].dev))
            .collect();
        expected.sort_unstable();
        expected.dedup();
        for entry in &fibs[&task.host].lec.entries {
            let covered = store.and(entry.predicate, task.packet_space);
            if covered.is_false() {
                continue;
            }
            if entry.action.next_hops != expected {
                out.push(EqualViolation {
                    plan: plan_id,
                    node: u,
                    predicate: covered,
                    found: entry.action.clone(),
                    expected: expected.clone(),
                });
            }
        }
    }
    out
}

/// Compare a node's LocCIB against reference cells, semantically: every
/// reference cell must be covered by local cells with the same count set.
pub fn cells_agree(store: &mut Store, local: &NodeCells, reference: &NodeCells) -> bool {
    for (rp, rc) in reference {
        let mut covered = predicate::FALSE;
        for (lp, lc) in local {
            let inter = store.and(*rp, *lp);
            if inter.is_false() {
                continue;
            }
            if lc != rc {
                return false;
            }
            covered = store.or(covered, inter);
        }
        if covered != *rp {
            return false;
        }
    }
    true
}
