//! Ground-truth engine: enumerate every universe of a packet on the concrete
//! data plane and evaluate requirements directly.
//!
//! A universe fixes one next-hop choice per ANY-forwarding device; ALL
//! actions fan out within a universe. A packet is delivered at the first
//! device whose external prefixes cover its destination; a trace that
//! revisits a device loops forever (choices are fixed per universe and
//! headers immutable) and matches nothing.
//!
//! Path matching here interprets the expression syntax tree directly, an
//! implementation route disjoint from the automaton pipeline the planner
//! uses, so agreement between the two is meaningful evidence.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::countalg::{CountSet, CountVector};
use crate::dataplane::{ActionKind, DeviceFib};
use crate::predicate::{Predicate, Store};
use crate::reqlang::{exist_components, Behavior, MatchOp, PathExpr, PrefixMap, Requirement};
use crate::topology::{DeviceId, Topology};

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("instance exceeds the universe bound ({bound}); the oracle only runs at desk scale")]
    ScaleRefusal { bound: u64 },
    #[error("path enumeration budget exceeded")]
    PathBudget,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Terminal {
    Delivered(DeviceId),
    Dropped,
    Loop,
}

/// One packet copy's journey: the devices visited, in order.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Trace {
    pub devices: Vec<DeviceId>,
    pub terminal: Terminal,
}

/// The coexisting traces of one universe.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub struct Universe {
    pub traces: Vec<Trace>,
}

pub const DEFAULT_UNIVERSE_BOUND: u64 = 1 << 16;

/// Enumerate all universes of `header` injected at `ingress`: one universe
/// per combination of ANY choices among the devices actually visited.
pub fn enumerate_universes(
    store: &Store,
    topo: &Topology,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
    prefixes: &PrefixMap,
    header: u64,
    ingress: DeviceId,
    bound: u64,
) -> Result<Vec<Universe>, OracleError> {
    let mut out = Vec::new();
    let mut choices: BTreeMap<DeviceId, DeviceId> = BTreeMap::new();
    explore(
        store, topo, fibs, prefixes, header, ingress, bound, &mut choices, &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn explore(
    store: &Store,
    topo: &Topology,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
    prefixes: &PrefixMap,
    header: u64,
    ingress: DeviceId,
    bound: u64,
    choices: &mut BTreeMap<DeviceId, DeviceId>,
    out: &mut Vec<Universe>,
) -> Result<(), OracleError> {
    // Depth-first over trace fan-out under the current partial choice
    // assignment; the first unassigned ANY device visited forces a branch.
    let mut traces: Vec<Trace> = Vec::new();
    let mut stack: Vec<Vec<DeviceId>> = vec![vec![ingress]];
    while let Some(path) = stack.pop() {
        let dev = *path.last().unwrap();
        let delivered = prefixes
            .get(&dev)
            .map(|list| {
                let dst = (header & 0xffff_ffff) as u32;
                list.iter().any(|c| c.contains(dst))
            })
            .unwrap_or(false);
        if delivered {
            traces.push(Trace {
                devices: path,
                terminal: Terminal::Delivered(dev),
            });
            continue;
        }
        let action = fibs[&dev].lec.lookup(store, header).clone();
        if action.is_drop() {
            traces.push(Trace {
                devices: path,
                terminal: Terminal::Dropped,
            });
            continue;
        }
        let hops: Vec<DeviceId> = match action.kind {
            ActionKind::All => action.next_hops.clone(),
            ActionKind::Any => match choices.get(&dev) {
                Some(&h) => vec![h],
                None => {
                    // Branch on this device's choice; each option re-runs the
                    // universe from scratch under the extended assignment.
                    for &h in &action.next_hops {
                        choices.insert(dev, h);
                        explore(
                            store, topo, fibs, prefixes, header, ingress, bound, choices, out,
                        )?;
                        choices.remove(&dev);
                    }
                    return Ok(());
                }
            },
        };
        for &h in hops.iter().rev() {
            let mut devices = path.clone();
            devices.push(h);
            if path.contains(&h) {
                traces.push(Trace {
                    devices,
                    terminal: Terminal::Loop,
                });
            } else {
                stack.push(devices);
            }
        }
    }
    if out.len() as u64 >= bound {
        return Err(OracleError::ScaleRefusal { bound });
    }
    traces.sort();
    out.push(Universe { traces });
    Ok(())
}

// ---------------------------------------------------------------------------
// Direct path matching (memoized syntax-tree interpreter)

/// Matcher for one path expression, memoized on (subexpression, word range).
pub struct PathMatcher<'a> {
    exprs: Vec<&'a PathExpr>,
    ids: HashMap<*const PathExpr, usize>,
    topo: &'a Topology,
}

impl<'a> PathMatcher<'a> {
    pub fn new(expr: &'a PathExpr, topo: &'a Topology) -> Self {
        let mut exprs = Vec::new();
        fn collect<'a>(e: &'a PathExpr, out: &mut Vec<&'a PathExpr>) {
            out.push(e);
            match e {
                PathExpr::Concat(xs) | PathExpr::Alt(xs) | PathExpr::And(xs) => {
                    for x in xs {
                        collect(x, out);
                    }
                }
                PathExpr::Star(x) | PathExpr::Not(x) => collect(x, out),
                _ => {}
            }
        }
        collect(expr, &mut exprs);
        let ids = exprs
            .iter()
            .enumerate()
            .map(|(i, &e)| (e as *const PathExpr, i))
            .collect();
        PathMatcher { exprs, ids, topo }
    }

    pub fn matches(&self, word: &[DeviceId]) -> bool {
        let mut memo = HashMap::new();
        self.m(0, word, 0, word.len(), &mut memo)
    }

    fn id_of(&self, e: &PathExpr) -> usize {
        self.ids[&(e as *const PathExpr)]
    }

    fn m(
        &self,
        id: usize,
        word: &[DeviceId],
        lo: usize,
        hi: usize,
        memo: &mut HashMap<(usize, usize, usize), bool>,
    ) -> bool {
        if let Some(&v) = memo.get(&(id, lo, hi)) {
            return v;
        }
        let expr = self.exprs[id];
        let result = match expr {
            PathExpr::Dev(name) => hi - lo == 1 && self.topo.device(name) == Some(word[lo]),
            PathExpr::Wildcard => hi - lo == 1,
            PathExpr::LoopFree => {
                let mut seen = BTreeSet::new();
                word[lo..hi].iter().all(|d| seen.insert(*d))
            }
            PathExpr::Concat(xs) => match xs.len() {
                0 => lo == hi,
                1 => self.m(self.id_of(&xs[0]), word, lo, hi, memo),
                _ => (lo..=hi).any(|k| {
                    self.m(self.id_of(&xs[0]), word, lo, k, memo)
                        && self.concat_rest(xs, 1, word, k, hi, memo)
                }),
            },
            PathExpr::Alt(xs) => xs.iter().any(|x| self.m(self.id_of(x), word, lo, hi, memo)),
            PathExpr::And(xs) => xs.iter().all(|x| self.m(self.id_of(x), word, lo, hi, memo)),
            PathExpr::Star(x) => {
                if lo == hi {
                    true
                } else {
                    let inner = self.id_of(x);
                    (lo + 1..=hi)
                        .any(|k| self.m(inner, word, lo, k, memo) && self.m(id, word, k, hi, memo))
                }
            }
            PathExpr::Not(x) => !self.m(self.id_of(x), word, lo, hi, memo),
        };
        memo.insert((id, lo, hi), result);
        result
    }

    fn concat_rest(
        &self,
        xs: &[PathExpr],
        idx: usize,
        word: &[DeviceId],
        lo: usize,
        hi: usize,
        memo: &mut HashMap<(usize, usize, usize), bool>,
    ) -> bool {
        if idx == xs.len() - 1 {
            return self.m(self.id_of(&xs[idx]), word, lo, hi, memo);
        }
        (lo..=hi).any(|k| {
            self.m(self.id_of(&xs[idx]), word, lo, k, memo)
                && self.concat_rest(xs, idx + 1, word, k, hi, memo)
        })
    }
}

/// Number of traces in the universe that are delivered with a device
/// sequence matching the expression. Dropped and looping traces never match.
pub fn count_matches(universe: &Universe, matcher: &PathMatcher<'_>) -> u64 {
    universe
        .traces
        .iter()
        .filter(|t| matches!(t.terminal, Terminal::Delivered(_)))
        .filter(|t| matcher.matches(&t.devices))
        .count() as u64
}

// ---------------------------------------------------------------------------
// Requirement evaluation

/// Verdict for one header class at one ingress.
#[derive(Clone, Debug)]
pub struct OracleCell {
    pub predicate: Predicate,
    pub representative: u64,
    /// Distinct per-universe count vectors (exist behaviors only).
    pub counts: Option<CountSet>,
    pub satisfied: bool,
    /// A falsifying universe's count vector, when unsatisfied.
    pub witness: Option<CountVector>,
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub ingress: DeviceId,
    pub cells: Vec<OracleCell>,
}

impl OracleReport {
    pub fn satisfied(&self) -> bool {
        self.cells.iter().all(|c| c.satisfied)
    }
}

/// Refine the packet space against every device's LEC predicates: forwarding
/// is constant per resulting cell, so one representative header per cell is
/// exhaustive.
pub fn global_cells(
    store: &mut Store,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
    space: Predicate,
) -> Vec<Predicate> {
    let mut cells = vec![space];
    if space.is_false() {
        return Vec::new();
    }
    for fib in fibs.values() {
        let preds: Vec<Predicate> = fib.lec.entries.iter().map(|e| e.predicate).collect();
        let mut next = Vec::new();
        for cell in cells {
            for p in &preds {
                let inter = store.and(cell, *p);
                if !inter.is_false() {
                    next.push(inter);
                }
            }
        }
        cells = next;
    }
    cells
}

/// Evaluate a desugared requirement directly on the concrete data plane.
pub fn oracle_verdict(
    store: &mut Store,
    topo: &Topology,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
    prefixes: &PrefixMap,
    req: &Requirement,
    bound: u64,
) -> Result<Vec<OracleReport>, OracleError> {
    let space = req.packet_space.to_predicate(store);
    let cells = global_cells(store, fibs, space);
    let (paths, leaf_map) = exist_components(&req.behavior);
    let equal_paths: Vec<&PathExpr> = req
        .behavior
        .leaves()
        .into_iter()
        .filter(|(op, _)| matches!(op, MatchOp::Equal))
        .map(|(_, p)| p)
        .collect();

    let mut reports = Vec::new();
    for name in &req.ingress {
        let ingress = topo.device(name).expect("validated ingress");
        let mut out_cells = Vec::new();
        for &cell in &cells {
            let header = store.sample_min(cell).expect("non-empty cell");
            let universes =
                enumerate_universes(store, topo, fibs, prefixes, header, ingress, bound)?;

            let mut satisfied = true;
            let mut witness = None;
            let mut counts = None;

            if !paths.is_empty() {
                let matchers: Vec<PathMatcher> =
                    paths.iter().map(|p| PathMatcher::new(p, topo)).collect();
                let mut vectors = Vec::new();
                for u in &universes {
                    let vector: CountVector =
                        matchers.iter().map(|m| count_matches(u, m)).collect();
                    let ok = eval_exist(&req.behavior, &leaf_map, &vector);
                    if !ok && satisfied {
                        satisfied = false;
                        witness = Some(vector.clone());
                    }
                    vectors.push(vector);
                }
                counts = Some(CountSet::new(vectors));
            }

            for p in &equal_paths {
                if !equal_holds(store, topo, prefixes, p, header, ingress, &universes)? {
                    satisfied = false;
                }
            }

            out_cells.push(OracleCell {
                predicate: cell,
                representative: header,
                counts,
                satisfied,
                witness,
            });
        }
        reports.push(OracleReport {
            ingress,
            cells: out_cells,
        });
    }
    Ok(reports)
}

fn eval_exist(behavior: &Behavior, leaf_map: &[usize], vector: &CountVector) -> bool {
    let mut exist_idx = 0;
    let truths: Vec<bool> = behavior
        .leaves()
        .iter()
        .map(|(op, _)| match op {
            MatchOp::Exist(cmp, n) => {
                let v = vector[leaf_map[exist_idx]];
                exist_idx += 1;
                cmp.holds(v, *n)
            }
            MatchOp::Equal => true,
        })
        .collect();
    behavior.eval(&truths)
}

/// The equal operator: the union of traces across universes must equal the
/// set of realizable paths matching the expression — simple paths from the
/// ingress that deliver at their last device and nowhere earlier.
fn equal_holds(
    store: &Store,
    topo: &Topology,
    prefixes: &PrefixMap,
    path: &PathExpr,
    header: u64,
    ingress: DeviceId,
    universes: &[Universe],
) -> Result<bool, OracleError> {
    let _ = store;
    let covers = |dev: DeviceId| {
        prefixes
            .get(&dev)
            .map(|list| {
                let dst = (header & 0xffff_ffff) as u32;
                list.iter().any(|c| c.contains(dst))
            })
            .unwrap_or(false)
    };
    let matcher = PathMatcher::new(path, topo);

    // All realizable matching paths, by bounded DFS over simple paths.
    let mut expected: BTreeSet<Vec<DeviceId>> = BTreeSet::new();
    let mut budget: u64 = 1_000_000;
    let mut stack: Vec<Vec<DeviceId>> = vec![vec![ingress]];
    while let Some(p) = stack.pop() {
        budget = budget.checked_sub(1).ok_or(OracleError::PathBudget)?;
        let last = *p.last().unwrap();
        if covers(last) {
            if matcher.matches(&p) {
                expected.insert(p);
            }
            continue; // delivery ends the walk
        }
        for &nb in topo.neighbors(last) {
            if !p.contains(&nb) {
                let mut q = p.clone();
                q.push(nb);
                stack.push(q);
            }
        }
    }

    // Union of all traces across universes, as device sequences.
    let mut union: BTreeSet<Vec<DeviceId>> = BTreeSet::new();
    for u in universes {
        for t in &u.traces {
            union.insert(t.devices.clone());
        }
    }
    Ok(union == expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::reqlang::desugar;

    fn seqs(topo: &Topology, u: &Universe) -> Vec<Vec<String>> {
        u.traces
            .iter()
            .map(|t| t.devices.iter().map(|&d| topo.name(d).to_string()).collect())
            .collect()
    }

    #[test]
    fn all_fanout_yields_one_universe_of_two_traces() {
        let mut store = Store::new();
        let f = fixtures::load(&mut store, &fixtures::all_fanout_universe());
        let s = f.topo.device("S").unwrap();
        let header = 0x0a000001u64; // dst 10.0.0.1
        let universes = enumerate_universes(
            &store,
            &f.topo,
            &f.fibs,
            &f.prefixes,
            header,
            s,
            DEFAULT_UNIVERSE_BOUND,
        )
        .unwrap();
        assert_eq!(universes.len(), 1);
        assert_eq!(
            seqs(&f.topo, &universes[0]),
            vec![vec!["S", "A", "B", "D"], vec!["S", "A", "C"]]
        );
        assert_eq!(
            universes[0].traces[0].terminal,
            Terminal::Delivered(f.topo.device("D").unwrap())
        );
        assert_eq!(universes[0].traces[1].terminal, Terminal::Dropped);
    }

    #[test]
    fn any_choice_yields_two_universes_of_two_traces() {
        let mut store = Store::new();
        let f = fixtures::load(&mut store, &fixtures::any_choice_universe());
        let s = f.topo.device("S").unwrap();
        let header = 0x0a000001u64;
        let universes = enumerate_universes(
            &store,
            &f.topo,
            &f.fibs,
            &f.prefixes,
            header,
            s,
            DEFAULT_UNIVERSE_BOUND,
        )
        .unwrap();
        assert_eq!(universes.len(), 2);
        let got: BTreeSet<Vec<Vec<String>>> = universes.iter().map(|u| seqs(&f.topo, u)).collect();
        let expect: BTreeSet<Vec<Vec<String>>> = BTreeSet::from([
            vec![
                vec!["S".into(), "A".into(), "B".into(), "C".into()],
                vec!["S".into(), "A".into(), "C".into()],
            ],
            vec![
                vec!["S".into(), "A".into(), "B".into(), "D".into()],
                vec!["S".into(), "A".into(), "C".into()],
            ],
        ]);
        assert_eq!(got, expect);
    }

    #[test]
    fn all_drop_network_has_single_dropped_trace() {
        let mut store = Store::new();
        let topo = Topology::parse("node S\nnode A\nlink S A\n").unwrap();
        let fibs = fixtures::complete_fibs(&mut store, &topo, BTreeMap::new());
        let s = topo.device("S").unwrap();
        let universes = enumerate_universes(
            &store,
            &topo,
            &fibs,
            &PrefixMap::new(),
            0,
            s,
            DEFAULT_UNIVERSE_BOUND,
        )
        .unwrap();
        assert_eq!(universes.len(), 1);
        assert_eq!(universes[0].traces.len(), 1);
        assert_eq!(universes[0].traces[0].terminal, Terminal::Dropped);
        assert_eq!(universes[0].traces[0].devices, vec![s]);
    }

    #[test]
    fn universe_count_is_product_of_visited_choice_widths() {
        let mut store = Store::new();
        // S -> ANY{A,B}; A -> ANY{C,D}; B -> ALL{C}; C and D deliver.
        let topo = Topology::parse(
            "node S\nnode A\nnode B\nnode C\nnode D\n\
             link S A\nlink S B\nlink A C\nlink A D\nlink B C\n",
        )
        .unwrap();
        let fib_text = "\
device S
rule 1 - 10.0.0.0/24 ANY A,B
device A
rule 1 - 10.0.0.0/24 ANY C,D
device B
rule 1 - 10.0.0.0/24 ALL C
";
        let raw = crate::dataplane::parse_fibs(&mut store, &topo, fib_text).unwrap();
        let fibs = fixtures::complete_fibs(&mut store, &topo, raw);
        let prefixes = crate::reqlang::parse_prefix_map(
            &topo,
            "prefix C 10.0.0.0/24\nprefix D 10.0.0.0/24\n",
        )
        .unwrap();
        let s = topo.device("S").unwrap();
        let universes =
            enumerate_universes(&store, &topo, &fibs, &prefixes, 0x0a000001, s, 1 << 16).unwrap();
        // Choosing A visits A (2 options), choosing B visits no further ANY
        // device: 2 + 1 = 3 universes, the per-branch product of visited
        // choice widths.
        assert_eq!(universes.len(), 3);
    }

    #[test]
    fn count_matches_examples() {
        let mut store = Store::new();
        let f = fixtures::load(&mut store, &fixtures::all_fanout_universe());
        let s = f.topo.device("S").unwrap();
        let universes = enumerate_universes(
            &store,
            &f.topo,
            &f.fibs,
            &f.prefixes,
            0x0a000001,
            s,
            1 << 16,
        )
        .unwrap();
        let path_of = |text: &str| {
            let req = crate::reqlang::parse(&format!("(true, [S], (exist >= 1, {text}))")).unwrap();
            match req.into_iter().next().unwrap().behavior {
                Behavior::Leaf(_, p) => p,
                _ => unreachable!(),
            }
        };
        // S .* D matches the delivered trace; the trace at C is dropped and
        // can never match.
        let p1 = path_of("S (.)* D");
        let matcher = PathMatcher::new(&p1, &f.topo);
        assert_eq!(count_matches(&universes[0], &matcher), 1);
        let p2 = path_of("S (.)* C");
        let matcher = PathMatcher::new(&p2, &f.topo);
        assert_eq!(count_matches(&universes[0], &matcher), 0);
    }

    #[test]
    fn workflow_fixture_verdict_violated_then_satisfied() {
        let mut store = Store::new();
        let f = fixtures::load(&mut store, &fixtures::waypoint_workflow());
        let req = desugar(&f.requirements[0], &f.topo).unwrap();
        let reports = oracle_verdict(
            &mut store,
            &f.topo,
            &f.fibs,
            &f.prefixes,
            &req,
            DEFAULT_UNIVERSE_BOUND,
        )
        .unwrap();
        assert_eq!(reports.len(), 1);
        // The 10.0.0.0/24 half can bypass W in one universe; the 10.0.1.0/24
        // half always passes W.
        assert!(!reports[0].satisfied());
        let p2 = store.from_cidr(crate::predicate::Field::Dst, "10.0.0.0/24".parse().unwrap());
        let p3 = store.from_cidr(crate::predicate::Field::Dst, "10.0.1.0/24".parse().unwrap());
        for cell in &reports[0].cells {
            if store.eval(p2, cell.representative) {
                assert!(!cell.satisfied);
                assert_eq!(cell.counts.as_ref().unwrap(), &CountSet::scalar([0, 1]));
                assert_eq!(cell.witness.as_ref().unwrap(), &vec![0]);
            } else {
                assert!(store.eval(p3, cell.representative));
                assert!(cell.satisfied);
                assert_eq!(cell.counts.as_ref().unwrap(), &CountSet::scalar([1]));
            }
        }

        // Apply the scripted repair at B and re-check: satisfied everywhere.
        let mut fibs = f.fibs;
        let b = f.topo.device("B").unwrap();
        let toks: Vec<&str> = "10 - 10.0.0.0/23 ALL W".split_whitespace().collect();
        let rule = crate::dataplane::parse_rule_directive(&mut store, &f.topo, b, &toks).unwrap();
        fibs.get_mut(&b)
            .unwrap()
            .apply_update(
                &mut store,
                &f.topo,
                crate::dataplane::FibUpdateKind::Modify(rule),
            )
            .unwrap();
        let reports = oracle_verdict(
            &mut store,
            &f.topo,
            &fibs,
            &f.prefixes,
            &req,
            DEFAULT_UNIVERSE_BOUND,
        )
        .unwrap();
        assert!(reports[0].satisfied());
        for cell in &reports[0].cells {
            assert_eq!(cell.counts.as_ref().unwrap(), &CountSet::scalar([1]));
        }
    }

    #[test]
    fn anycast_fixture_satisfied() {
        let mut store = Store::new();
        let f = fixtures::load(&mut store, &fixtures::anycast());
        let req = desugar(&f.requirements[0], &f.topo).unwrap();
        let reports = oracle_verdict(
            &mut store,
            &f.topo,
            &f.fibs,
            &f.prefixes,
            &req,
            DEFAULT_UNIVERSE_BOUND,
        )
        .unwrap();
        assert!(reports[0].satisfied());
    }

    #[test]
    fn shared_destination_fixture_satisfied() {
        let mut store = Store::new();
        let f = fixtures::load(&mut store, &fixtures::shared_destination());
        let req = desugar(&f.requirements[0], &f.topo).unwrap();
        let reports = oracle_verdict(
            &mut store,
            &f.topo,
            &f.fibs,
            &f.prefixes,
            &req,
            DEFAULT_UNIVERSE_BOUND,
        )
        .unwrap();
        assert!(reports[0].satisfied());
        // Per-universe joint vectors: two simple paths in the A branch, one
        // waypointed path in the B branch; the phantom combinations of the
        // naive per-expression cross-product are absent.
        let cell = &reports[0].cells[0];
        let set = cell.counts.as_ref().unwrap();
        let got: BTreeSet<&CountVector> = set.vectors().iter().collect();
        let want_a = vec![2u64, 0];
        let want_b = vec![1u64, 1];
        assert_eq!(got, BTreeSet::from([&want_a, &want_b]));
    }

    #[test]
    fn same_cell_headers_have_identical_universes() {
        let mut store = Store::new();
        let f = fixtures::load(&mut store, &fixtures::waypoint_workflow());
        let space = store.from_cidr(crate::predicate::Field::Dst, "10.0.0.0/23".parse().unwrap());
        let cells = global_cells(&mut store, &f.fibs, space);
        assert!(!cells.is_empty());
        let s = f.topo.device("S").unwrap();
        for cell in cells {
            let mut samples = vec![store.sample_min(cell).unwrap()];
            samples.push(store.sample_max(cell).unwrap());
            let lo = store.header_predicate(samples[0]);
            let rest = store.diff(cell, lo);
            if let Some(h) = store.sample_max(rest) {
                samples.push(h);
            }
            let mut all: Vec<Vec<Universe>> = Vec::new();
            for h in samples {
                assert!(store.eval(cell, h));
                all.push(
                    enumerate_universes(&store, &f.topo, &f.fibs, &f.prefixes, h, s, 1 << 16)
                        .unwrap(),
                );
            }
            for w in all.windows(2) {
                assert_eq!(w[0], w[1]);
            }
        }
    }
}
