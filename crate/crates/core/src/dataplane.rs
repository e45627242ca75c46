//! Per-device forwarding state: prioritized match-action rules and the
//! derived table of local equivalence classes (LECs).
//!
//! An LEC table partitions the header space into cells with identical action,
//! with no two cells sharing an action. It is maintained incrementally under
//! rule updates and link events; every mutation returns the delta of header
//! regions whose action changed, which drives the verifier protocol.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::predicate::{self, Cidr, Field, Predicate, Store};
use crate::topology::{DeviceId, Topology};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum ActionKind {
    All,
    Any,
}

/// A forwarding action: a group of next-hop devices, delivered to all of them
/// (`All`) or to exactly one unspecified member (`Any`). An empty group drops.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ActionGroup {
    pub kind: ActionKind,
    pub next_hops: Vec<DeviceId>,
}

impl ActionGroup {
    /// Canonical form: hops sorted and deduplicated; groups of at most one
    /// hop are forced to `All`, since choosing among one hop and forwarding
    /// to the single hop are the same action.
    pub fn new(kind: ActionKind, mut next_hops: Vec<DeviceId>) -> Self {
        next_hops.sort_unstable();
        next_hops.dedup();
        let kind = if next_hops.len() <= 1 {
            ActionKind::All
        } else {
            kind
        };
        ActionGroup { kind, next_hops }
    }

    pub fn drop() -> Self {
        ActionGroup {
            kind: ActionKind::All,
            next_hops: Vec::new(),
        }
    }

    pub fn is_drop(&self) -> bool {
        self.next_hops.is_empty()
    }

    /// The action with dead next hops removed.
    pub fn filtered(&self, dead: &BTreeSet<DeviceId>) -> ActionGroup {
        if self.next_hops.iter().any(|h| dead.contains(h)) {
            ActionGroup::new(
                self.kind,
                self.next_hops
                    .iter()
                    .copied()
                    .filter(|h| !dead.contains(h))
                    .collect(),
            )
        } else {
            self.clone()
        }
    }

    pub fn render(&self, topo: &Topology) -> String {
        if self.is_drop() {
            return "drop".to_string();
        }
        let hops: Vec<&str> = self.next_hops.iter().map(|&h| topo.name(h)).collect();
        format!(
            "{} {{{}}}",
            match self.kind {
                ActionKind::All => "ALL",
                ActionKind::Any => "ANY",
            },
            hops.join(",")
        )
    }
}

/// One prioritized match-action rule. Higher priority wins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FibRule {
    pub priority: u32,
    pub matches: Predicate,
    pub action: ActionGroup,
    /// CIDR pair the rule was written with, kept for serialization.
    pub src: Option<Cidr>,
    pub dst: Option<Cidr>,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum DataplaneError {
    #[error("device {device}: duplicate priority {priority}")]
    DuplicatePriority { device: String, priority: u32 },
    #[error("device {device}: no rule with priority {priority}")]
    UnknownPriority { device: String, priority: u32 },
    #[error("device {device}: next hop {hop} is not a neighbor")]
    HopNotNeighbor { device: String, hop: String },
    #[error("link {0} -- {1} does not exist")]
    UnknownLink(String, String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
    #[error(transparent)]
    Cidr(#[from] predicate::CidrError),
}

/// A device's FIB: rules kept in descending priority order, priorities unique.
#[derive(Clone, Debug, Default)]
pub struct Fib {
    rules: Vec<FibRule>,
}

impl Fib {
    pub fn new() -> Self {
        Fib::default()
    }

    pub fn rules(&self) -> &[FibRule] {
        &self.rules
    }

    pub fn get(&self, priority: u32) -> Option<&FibRule> {
        self.rules.iter().find(|r| r.priority == priority)
    }

    pub fn insert(&mut self, rule: FibRule, device: &str) -> Result<(), DataplaneError> {
        if self.get(rule.priority).is_some() {
            return Err(DataplaneError::DuplicatePriority {
                device: device.to_string(),
                priority: rule.priority,
            });
        }
        let pos = self
            .rules
            .iter()
            .position(|r| r.priority < rule.priority)
            .unwrap_or(self.rules.len());
        self.rules.insert(pos, rule);
        Ok(())
    }

    pub fn remove(&mut self, priority: u32, device: &str) -> Result<FibRule, DataplaneError> {
        let pos = self
            .rules
            .iter()
            .position(|r| r.priority == priority)
            .ok_or_else(|| DataplaneError::UnknownPriority {
                device: device.to_string(),
                priority,
            })?;
        Ok(self.rules.remove(pos))
    }
}

/// Highest-priority matching rule's action; drop when nothing matches.
pub fn effective_action(store: &Store, fib: &Fib, header: u64) -> ActionGroup {
    for rule in fib.rules() {
        if store.eval(rule.matches, header) {
            return rule.action.clone();
        }
    }
    ActionGroup::drop()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LecEntry {
    pub predicate: Predicate,
    pub action: ActionGroup,
}

/// Partition of the header space into minimal local equivalence classes.
#[derive(Clone, Debug, Default)]
pub struct LecTable {
    pub entries: Vec<LecEntry>,
}

impl LecTable {
    /// Build from scratch: sweep rules in descending priority, after removing
    /// dead next hops from every action.
    pub fn build(store: &mut Store, fib: &Fib, dead: &BTreeSet<DeviceId>) -> LecTable {
        let mut remaining = predicate::TRUE;
        let mut table = LecTable::default();
        for rule in fib.rules() {
            if remaining.is_false() {
                break;
            }
            let eff = store.and(rule.matches, remaining);
            if eff.is_false() {
                continue;
            }
            remaining = store.diff(remaining, rule.matches);
            table.merge(store, eff, rule.action.filtered(dead));
        }
        if !remaining.is_false() {
            table.merge(store, remaining, ActionGroup::drop());
        }
        table
    }

    fn merge(&mut self, store: &mut Store, pred: Predicate, action: ActionGroup) {
        if pred.is_false() {
            return;
        }
        for e in &mut self.entries {
            if e.action == action {
                e.predicate = store.or(e.predicate, pred);
                return;
            }
        }
        self.entries.push(LecEntry {
            predicate: pred,
            action,
        });
    }

    pub fn lookup(&self, store: &Store, header: u64) -> &ActionGroup {
        for e in &self.entries {
            if store.eval(e.predicate, header) {
                return &e.action;
            }
        }
        unreachable!("LEC entries partition the header space")
    }

    /// Canonical view for table comparison, keyed by action.
    pub fn canonical(&self) -> BTreeMap<ActionGroup, Predicate> {
        self.entries
            .iter()
            .map(|e| (e.action.clone(), e.predicate))
            .collect()
    }

    /// Partition and minimality invariants; used by tests and debug assertions.
    pub fn check_invariants(&self, store: &mut Store) -> Result<(), String> {
        let mut union = predicate::FALSE;
        for (i, e) in self.entries.iter().enumerate() {
            if e.predicate.is_false() {
                return Err(format!("entry {i} has empty predicate"));
            }
            if store.intersects(union, e.predicate) {
                return Err(format!("entry {i} overlaps earlier entries"));
            }
            union = store.or(union, e.predicate);
            for other in &self.entries[i + 1..] {
                if other.action == e.action {
                    return Err("duplicate action across entries".to_string());
                }
            }
        }
        if !union.is_true() {
            return Err("entries do not cover the header space".to_string());
        }
        Ok(())
    }
}

/// A header region whose action changed, with both actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeltaCell {
    pub predicate: Predicate,
    pub old_action: ActionGroup,
    pub new_action: ActionGroup,
}

/// Kinds of FIB mutation.
#[derive(Clone, Debug)]
pub enum FibUpdateKind {
    Insert(FibRule),
    Delete(u32),
    Modify(FibRule),
}

#[derive(Clone, Debug)]
pub struct FibUpdate {
    pub device: DeviceId,
    pub kind: FibUpdateKind,
}

/// A device's live forwarding state: its FIB, the set of currently dead
/// neighbors, and the LEC table kept consistent with both.
#[derive(Clone, Debug)]
pub struct DeviceFib {
    pub device: DeviceId,
    pub fib: Fib,
    pub dead: BTreeSet<DeviceId>,
    pub lec: LecTable,
}

impl DeviceFib {
    pub fn new(store: &mut Store, device: DeviceId, fib: Fib) -> Self {
        let lec = LecTable::build(store, &fib, &BTreeSet::new());
        DeviceFib {
            device,
            fib,
            dead: BTreeSet::new(),
            lec,
        }
    }

    /// Apply a rule update incrementally. Returns the disjoint delta cells
    /// whose action changed.
    pub fn apply_update(
        &mut self,
        store: &mut Store,
        topo: &Topology,
        kind: FibUpdateKind,
    ) -> Result<Vec<DeltaCell>, DataplaneError> {
        let device = topo.name(self.device).to_string();
        // Region of headers whose effective action may change, and the rules
        // that decide their new action.
        let (region, pivot) = match &kind {
            FibUpdateKind::Insert(rule) => {
                let higher = self.union_above(store, rule.priority);
                (store.diff(rule.matches, higher), rule.priority)
            }
            FibUpdateKind::Delete(priority) => {
                let old = self
                    .fib
                    .get(*priority)
                    .ok_or_else(|| DataplaneError::UnknownPriority {
                        device: device.clone(),
                        priority: *priority,
                    })?
                    .clone();
                let higher = self.union_above(store, *priority);
                (store.diff(old.matches, higher), *priority)
            }
            FibUpdateKind::Modify(rule) => {
                let old = self
                    .fib
                    .get(rule.priority)
                    .ok_or_else(|| DataplaneError::UnknownPriority {
                        device: device.clone(),
                        priority: rule.priority,
                    })?
                    .clone();
                let both = store.or(old.matches, rule.matches);
                let higher = self.union_above(store, rule.priority);
                (store.diff(both, higher), rule.priority)
            }
        };

        match kind {
            FibUpdateKind::Insert(rule) => self.fib.insert(rule, &device)?,
            FibUpdateKind::Delete(priority) => {
                self.fib.remove(priority, &device)?;
            }
            FibUpdateKind::Modify(rule) => {
                self.fib.remove(rule.priority, &device)?;
                self.fib.insert(rule, &device)?;
            }
        }

        if region.is_false() {
            return Ok(Vec::new());
        }
        let cells = self.partition_region(store, region, pivot);
        Ok(self.rewrite(store, region, cells))
    }

    /// Mark a link up or down and report the delta.
    pub fn link_event(
        &mut self,
        store: &mut Store,
        topo: &Topology,
        neighbor: DeviceId,
        up: bool,
    ) -> Result<Vec<DeltaCell>, DataplaneError> {
        if !topo.has_link(self.device, neighbor) {
            return Err(DataplaneError::UnknownLink(
                topo.name(self.device).to_string(),
                topo.name(neighbor).to_string(),
            ));
        }
        if up {
            self.dead.remove(&neighbor);
        } else {
            self.dead.insert(neighbor);
        }
        let new = LecTable::build(store, &self.fib, &self.dead);
        let delta = diff_tables(store, &self.lec, &new);
        self.lec = new;
        Ok(delta)
    }

    fn union_above(&self, store: &mut Store, priority: u32) -> Predicate {
        let mut acc = predicate::FALSE;
        for r in self.fib.rules() {
            if r.priority > priority {
                acc = store.or(acc, r.matches);
            } else {
                break;
            }
        }
        acc
    }

    /// Partition `region` by the rules at or below `pivot` priority in the
    /// (already mutated) FIB; uncovered remainder drops.
    fn partition_region(
        &self,
        store: &mut Store,
        region: Predicate,
        pivot: u32,
    ) -> Vec<(Predicate, ActionGroup)> {
        let mut remaining = region;
        let mut cells: Vec<(Predicate, ActionGroup)> = Vec::new();
        for rule in self.fib.rules() {
            if rule.priority > pivot || remaining.is_false() {
                if rule.priority > pivot {
                    continue;
                }
                break;
            }
            let hit = store.and(rule.matches, remaining);
            if hit.is_false() {
                continue;
            }
            remaining = store.diff(remaining, rule.matches);
            cells.push((hit, rule.action.filtered(&self.dead)));
        }
        if !remaining.is_false() {
            cells.push((remaining, ActionGroup::drop()));
        }
        cells
    }

    /// Replace `region` in the LEC table with `cells`, returning the delta.
    fn rewrite(
        &mut self,
        store: &mut Store,
        region: Predicate,
        cells: Vec<(Predicate, ActionGroup)>,
    ) -> Vec<DeltaCell> {
        let mut delta = Vec::new();
        let old_entries = std::mem::take(&mut self.lec.entries);
        let mut new_table = LecTable::default();
        for e in &old_entries {
            let kept = store.diff(e.predicate, region);
            new_table.merge(store, kept, e.action.clone());
        }
        for (pred, action) in cells {
            for e in &old_entries {
                if e.action == action {
                    continue;
                }
                let moved = store.and(e.predicate, pred);
                if !moved.is_false() {
                    delta.push(DeltaCell {
                        predicate: moved,
                        old_action: e.action.clone(),
                        new_action: action.clone(),
                    });
                }
            }
            new_table.merge(store, pred, action);
        }
        self.lec = new_table;
        delta
    }
}

/// Disjoint cells on which the two tables disagree.
pub fn diff_tables(store: &mut Store, old: &LecTable, new: &LecTable) -> Vec<DeltaCell> {
    let mut delta = Vec::new();
    for o in &old.entries {
        for n in &new.entries {
            if o.action == n.action {
                continue;
            }
            let cell = store.and(o.predicate, n.predicate);
            if !cell.is_false() {
                delta.push(DeltaCell {
                    predicate: cell,
                    old_action: o.action.clone(),
                    new_action: n.action.clone(),
                });
            }
        }
    }
    delta
}

/// Parse the FIB file format:
///
/// ```text
/// device <NAME>
/// rule <PRIORITY> <srcCIDR|-> <dstCIDR|-> <ALL|ANY> <hop1,hop2,...|->
/// ```
///
/// `-` means wildcard (for match fields) or the empty hop list (drop).
pub fn parse_fibs(
    store: &mut Store,
    topo: &Topology,
    text: &str,
) -> Result<BTreeMap<DeviceId, Fib>, DataplaneError> {
    let mut fibs: BTreeMap<DeviceId, Fib> = BTreeMap::new();
    let mut current: Option<DeviceId> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataplaneError::Parse {
            line: lineno + 1,
            msg,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "device" => {
                if toks.len() != 2 {
                    return Err(err("expected `device <NAME>`".into()));
                }
                let id = topo.require(toks[1])?;
                fibs.entry(id).or_default();
                current = Some(id);
            }
            "rule" => {
                let device = current.ok_or_else(|| err("rule before device".into()))?;
                let rule = parse_rule_directive(store, topo, device, &toks[1..])
                    .map_err(|msg| err(msg))?;
                fibs.get_mut(&device)
                    .unwrap()
                    .insert(rule, topo.name(device))?;
            }
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }
    Ok(fibs)
}

/// Parse the tokens after `rule`: priority, src, dst, kind, hops.
pub fn parse_rule_directive(
    store: &mut Store,
    topo: &Topology,
    device: DeviceId,
    toks: &[&str],
) -> Result<FibRule, String> {
    if toks.len() != 5 {
        return Err("expected `rule <PRIO> <src|-> <dst|-> <ALL|ANY> <hops|->`".into());
    }
    let priority: u32 = toks[0].parse().map_err(|_| "bad priority".to_string())?;
    let parse_field = |s: &str| -> Result<Option<Cidr>, String> {
        if s == "-" {
            Ok(None)
        } else {
            s.parse::<Cidr>().map(Some).map_err(|e| e.to_string())
        }
    };
    let src = parse_field(toks[1])?;
    let dst = parse_field(toks[2])?;
    let kind = match toks[3] {
        "ALL" => ActionKind::All,
        "ANY" => ActionKind::Any,
        other => return Err(format!("unknown action kind `{other}`")),
    };
    let mut hops = Vec::new();
    if toks[4] != "-" {
        for name in toks[4].split(',') {
            let hop = topo
                .device(name)
                .ok_or_else(|| format!("unknown device `{name}`"))?;
            if !topo.has_link(device, hop) {
                return Err(format!(
                    "next hop {} is not a neighbor of {}",
                    name,
                    topo.name(device)
                ));
            }
            hops.push(hop);
        }
    }
    let mut matches = predicate::TRUE;
    if let Some(c) = src {
        let p = store.from_cidr(Field::Src, c);
        matches = store.and(matches, p);
    }
    if let Some(c) = dst {
        let p = store.from_cidr(Field::Dst, c);
        matches = store.and(matches, p);
    }
    Ok(FibRule {
        priority,
        matches,
        action: ActionGroup::new(kind, hops),
        src,
        dst,
    })
}

pub fn render_fib(topo: &Topology, device: DeviceId, fib: &Fib) -> String {
    let mut out = format!("device {}\n", topo.name(device));
    let field = |c: &Option<Cidr>| c.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
    for r in fib.rules() {
        let hops = if r.action.next_hops.is_empty() {
            "-".to_string()
        } else {
            r.action
                .next_hops
                .iter()
                .map(|&h| topo.name(h).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let kind = match r.action.kind {
            ActionKind::All => "ALL",
            ActionKind::Any => "ANY",
        };
        out.push_str(&format!(
            "rule {} {} {} {} {}\n",
            r.priority,
            field(&r.src),
            field(&r.dst),
            kind,
            hops
        ));
    }
    out
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionKind::All => write!(f, "ALL"),
            ActionKind::Any => write!(f, "ANY"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn small_topo() -> Topology {
        Topology::parse(
            "node A\nnode B\nnode C\nnode W\nlink A B\nlink A C\nlink A W\nlink B C\nlink B W\n",
        )
        .unwrap()
    }

    fn rule(
        store: &mut Store,
        priority: u32,
        dst: &str,
        kind: ActionKind,
        hops: &[DeviceId],
    ) -> FibRule {
        let dst: Cidr = dst.parse().unwrap();
        let matches = store.from_cidr(Field::Dst, dst);
        FibRule {
            priority,
            matches,
            action: ActionGroup::new(kind, hops.to_vec()),
            src: None,
            dst: Some(dst),
        }
    }

    #[test]
    fn empty_fib_drops_everything() {
        let store = Store::new();
        let fib = Fib::new();
        assert!(effective_action(&store, &fib, 0x12345).is_drop());
    }

    #[test]
    fn higher_priority_wins() {
        let mut store = Store::new();
        let topo = small_topo();
        let a = topo.device("A").unwrap();
        let b = topo.device("B").unwrap();
        let c = topo.device("C").unwrap();
        let mut fib = Fib::new();
        fib.insert(rule(&mut store, 10, "10.0.0.0/8", ActionKind::All, &[b]), "A")
            .unwrap();
        fib.insert(rule(&mut store, 5, "10.0.0.0/8", ActionKind::All, &[c]), "A")
            .unwrap();
        let h = 0x0a000001u64; // dst 10.0.0.1
        assert_eq!(effective_action(&store, &fib, h).next_hops, vec![b]);
        let _ = a;
    }

    #[test]
    fn effective_action_matches_lec_lookup_exhaustively() {
        // Reduced space: treat the low 12 bits of dst as the whole space.
        let mut store = Store::with_width(12);
        let topo = small_topo();
        let b = topo.device("B").unwrap();
        let c = topo.device("C").unwrap();
        let w = topo.device("W").unwrap();
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..20 {
            let mut fib = Fib::new();
            for prio in 0..8u32 {
                // Random predicate over 12 bits.
                let mut m = predicate::TRUE;
                for _ in 0..rng.gen_range(1..4) {
                    let v = store.var(rng.gen_range(0..12));
                    let v = if rng.gen_bool(0.5) { store.not(v) } else { v };
                    m = if rng.gen_bool(0.5) {
                        store.and(m, v)
                    } else {
                        store.or(m, v)
                    };
                }
                let hops: Vec<DeviceId> = [b, c, w]
                    .into_iter()
                    .filter(|_| rng.gen_bool(0.5))
                    .collect();
                let kind = if rng.gen_bool(0.5) {
                    ActionKind::All
                } else {
                    ActionKind::Any
                };
                fib.insert(
                    FibRule {
                        priority: prio,
                        matches: m,
                        action: ActionGroup::new(kind, hops),
                        src: None,
                        dst: None,
                    },
                    "A",
                )
                .unwrap();
            }
            let table = LecTable::build(&mut store, &fib, &BTreeSet::new());
            table.check_invariants(&mut store).unwrap();
            for h in 0..(1u64 << 12) {
                assert_eq!(
                    effective_action(&store, &fib, h),
                    *table.lookup(&store, h),
                    "header {h:#x}"
                );
            }
        }
    }

    #[test]
    fn build_lec_table_examples() {
        let mut store = Store::new();
        let topo = small_topo();
        let b = topo.device("B").unwrap();

        // Empty FIB: single drop cell.
        let empty = LecTable::build(&mut store, &Fib::new(), &BTreeSet::new());
        assert_eq!(empty.entries.len(), 1);
        assert!(empty.entries[0].predicate.is_true());
        assert!(empty.entries[0].action.is_drop());

        // One rule: matched region forwards, complement drops.
        let mut fib = Fib::new();
        let r = rule(&mut store, 1, "10.0.0.0/23", ActionKind::All, &[b]);
        let p = r.matches;
        fib.insert(r, "A").unwrap();
        let t = LecTable::build(&mut store, &fib, &BTreeSet::new());
        t.check_invariants(&mut store).unwrap();
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.entries[0].predicate, p);
        assert_eq!(t.entries[0].action.next_hops, vec![b]);
        let not_p = store.not(p);
        assert_eq!(t.entries[1].predicate, not_p);
        assert!(t.entries[1].action.is_drop());
    }

    #[test]
    fn workflow_device_a_has_three_cells() {
        let mut store = Store::new();
        let topo = small_topo();
        let b = topo.device("B").unwrap();
        let w = topo.device("W").unwrap();
        let mut fib = Fib::new();
        fib.insert(
            rule(&mut store, 10, "10.0.0.0/24", ActionKind::Any, &[b, w]),
            "A",
        )
        .unwrap();
        fib.insert(rule(&mut store, 9, "10.0.1.0/24", ActionKind::All, &[w]), "A")
            .unwrap();
        let t = LecTable::build(&mut store, &fib, &BTreeSet::new());
        t.check_invariants(&mut store).unwrap();
        assert_eq!(t.entries.len(), 3);
        let p2 = store.from_cidr(Field::Dst, "10.0.0.0/24".parse().unwrap());
        let p3 = store.from_cidr(Field::Dst, "10.0.1.0/24".parse().unwrap());
        let p1 = store.or(p2, p3);
        let not_p1 = store.not(p1);
        assert_eq!(t.entries[0].predicate, p2);
        assert_eq!(t.entries[0].action, ActionGroup::new(ActionKind::Any, vec![b, w]));
        assert_eq!(t.entries[1].predicate, p3);
        assert_eq!(t.entries[1].action, ActionGroup::new(ActionKind::All, vec![w]));
        assert_eq!(t.entries[2].predicate, not_p1);
        assert!(t.entries[2].action.is_drop());
    }

    #[test]
    fn reinsert_identical_rule_is_noop() {
        let mut store = Store::new();
        let topo = small_topo();
        let a = topo.device("A").unwrap();
        let b = topo.device("B").unwrap();
        let mut fib = Fib::new();
        let r = rule(&mut store, 10, "10.0.0.0/23", ActionKind::All, &[b]);
        fib.insert(r.clone(), "A").unwrap();
        let mut dev = DeviceFib::new(&mut store, a, fib);
        let delta = dev
            .apply_update(&mut store, &topo, FibUpdateKind::Modify(r))
            .unwrap();
        assert!(delta.is_empty());
    }

    #[test]
    fn workflow_update_delta() {
        // B forwards P1 to W instead of to C: delta [(P1, ALL{C}, ALL{W})].
        let mut store = Store::new();
        let topo = small_topo();
        let b = topo.device("B").unwrap();
        let c = topo.device("C").unwrap();
        let w = topo.device("W").unwrap();
        let mut fib = Fib::new();
        fib.insert(rule(&mut store, 10, "10.0.0.0/23", ActionKind::All, &[c]), "B")
            .unwrap();
        let mut dev = DeviceFib::new(&mut store, b, fib);
        let newr = rule(&mut store, 10, "10.0.0.0/23", ActionKind::All, &[w]);
        let p1 = newr.matches;
        let delta = dev
            .apply_update(&mut store, &topo, FibUpdateKind::Modify(newr))
            .unwrap();
        assert_eq!(delta.len(), 1);
        assert_eq!(delta[0].predicate, p1);
        assert_eq!(delta[0].old_action.next_hops, vec![c]);
        assert_eq!(delta[0].new_action.next_hops, vec![w]);
    }

    #[test]
    fn incremental_matches_rebuild_on_random_updates() {
        let mut store = Store::with_width(12);
        let topo = small_topo();
        let a = topo.device("A").unwrap();
        let b = topo.device("B").unwrap();
        let c = topo.device("C").unwrap();
        let w = topo.device("W").unwrap();
        let mut rng = StdRng::seed_from_u64(99);
        let mut dev = DeviceFib::new(&mut store, a, Fib::new());
        for step in 0..1000 {
            let prio = rng.gen_range(0..12u32);
            let exists = dev.fib.get(prio).is_some();
            let kind = match rng.gen_range(0..3) {
                0 if exists => FibUpdateKind::Delete(prio),
                _ => {
                    let mut m = predicate::FALSE;
                    for _ in 0..rng.gen_range(1..3) {
                        let v = store.var(rng.gen_range(0..12));
                        let v = if rng.gen_bool(0.5) { store.not(v) } else { v };
                        m = store.or(m, v);
                    }
                    let hops: Vec<DeviceId> = [b, c, w]
                        .into_iter()
                        .filter(|_| rng.gen_bool(0.6))
                        .collect();
                    let kind = if rng.gen_bool(0.5) {
                        ActionKind::All
                    } else {
                        ActionKind::Any
                    };
                    let r = FibRule {
                        priority: prio,
                        matches: m,
                        action: ActionGroup::new(kind, hops),
                        src: None,
                        dst: None,
                    };
                    if exists {
                        FibUpdateKind::Modify(r)
                    } else {
                        FibUpdateKind::Insert(r)
                    }
                }
            };
            let before = dev.lec.canonical();
            let delta = dev.apply_update(&mut store, &topo, kind).unwrap();
            let rebuilt = LecTable::build(&mut store, &dev.fib, &dev.dead);
            assert_eq!(
                dev.lec.canonical(),
                rebuilt.canonical(),
                "diverged at step {step}"
            );
            dev.lec.check_invariants(&mut store).unwrap();
            // Delta cells must be disjoint and must report real changes.
            let mut acc = predicate::FALSE;
            for cell in &delta {
                assert_ne!(cell.old_action, cell.new_action);
                assert!(!store.intersects(acc, cell.predicate));
                acc = store.or(acc, cell.predicate);
                let old_pred = before.get(&cell.old_action).copied().unwrap();
                assert_eq!(store.and(old_pred, cell.predicate), cell.predicate);
            }
        }
    }

    #[test]
    fn link_events_filter_and_restore() {
        let mut store = Store::new();
        let topo = small_topo();
        let a = topo.device("A").unwrap();
        let b = topo.device("B").unwrap();
        let c = topo.device("C").unwrap();
        let w = topo.device("W").unwrap();
        let mut fib = Fib::new();
        fib.insert(rule(&mut store, 10, "10.0.0.0/24", ActionKind::Any, &[b, w]), "A")
            .unwrap();
        fib.insert(rule(&mut store, 9, "10.0.1.0/24", ActionKind::All, &[c]), "A")
            .unwrap();
        let mut dev = DeviceFib::new(&mut store, a, fib);
        let original = dev.lec.canonical();

        // C is in no surviving group once its link is down: that cell drops.
        let delta = dev.link_event(&mut store, &topo, c, false).unwrap();
        assert_eq!(delta.len(), 1);
        assert!(delta[0].new_action.is_drop());

        // A neighbor absent from all groups produces an empty delta.
        // (Re-use W by first removing it: here we instead check a no-op up.)
        let noop = dev.link_event(&mut store, &topo, b, true).unwrap();
        assert!(noop.is_empty());

        // Mixed group loses one hop but keeps forwarding.
        let delta = dev.link_event(&mut store, &topo, b, false).unwrap();
        assert_eq!(delta.len(), 1);
        assert_eq!(delta[0].new_action.next_hops, vec![w]);

        // Restoring both links restores the original table exactly.
        dev.link_event(&mut store, &topo, c, true).unwrap();
        dev.link_event(&mut store, &topo, b, true).unwrap();
        assert_eq!(dev.lec.canonical(), original);
    }

    #[test]
    fn parse_fib_file() {
        let mut store = Store::new();
        let topo = small_topo();
        let text = "\
# data plane
device A
rule 10 - 10.0.0.0/24 ANY B,W
rule 9 - 10.0.1.0/24 ALL W
device B
rule 1 - - ALL -
";
        let fibs = parse_fibs(&mut store, &topo, text).unwrap();
        let a = topo.device("A").unwrap();
        let b = topo.device("B").unwrap();
        assert_eq!(fibs[&a].rules().len(), 2);
        assert!(fibs[&b].rules()[0].action.is_drop());
        let rendered = render_fib(&topo, a, &fibs[&a]);
        assert!(rendered.contains("rule 10 - 10.0.0.0/24 ANY B,W"));

        // Duplicate priorities are rejected at ingestion.
        let dup = "device A\nrule 5 - - ALL B\nrule 5 - - ALL W\n";
        assert!(matches!(
            parse_fibs(&mut store, &topo, dup),
            Err(DataplaneError::DuplicatePriority { .. })
        ));
        // Hops must be neighbors.
        let bad = "device B\nrule 5 - - ALL B\n";
        assert!(parse_fibs(&mut store, &topo, bad).is_err());
    }
}
