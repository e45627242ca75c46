//! The count-set algebra and the centralized reference counting algorithm.
//!
//! A count set holds the distinct per-universe numbers of packet copies that
//! reach the destinations; one component per path expression of the plan.
//! `cross_sum` (⊗) combines branches a copy takes simultaneously, `union` (⊕)
//! combines alternatives a copy takes in different universes, and the zero
//! vector augments a union when some next hop leaves the DVNet entirely.
//!
//! The centralized algorithm sweeps the DVNet in reverse topological order
//! and is the reference the distributed protocol must converge to.

use std::collections::BTreeMap;

use crate::dataplane::{ActionGroup, ActionKind, DeviceFib};
use crate::planner::{DvNet, NodeId, Plan, PlanKind, TaskMode};
use crate::predicate::{self, Predicate, Store};
use crate::reqlang::{Behavior, Cmp, MatchOp};
use crate::topology::DeviceId;

/// Per-universe delivery counts, one component per path expression.
pub type CountVector = Vec<u64>;

/// A deduplicated, ordered set of count vectors.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct CountSet {
    vectors: Vec<CountVector>,
}

impl CountSet {
    pub fn new(mut vectors: Vec<CountVector>) -> CountSet {
        vectors.sort_unstable();
        vectors.dedup();
        CountSet { vectors }
    }

    pub fn zero(m: usize) -> CountSet {
        CountSet {
            vectors: vec![vec![0; m]],
        }
    }

    /// Singleton with 1 in each listed component.
    pub fn unit(m: usize, owners: impl IntoIterator<Item = usize>) -> CountSet {
        let mut v = vec![0; m];
        for o in owners {
            v[o] = 1;
        }
        CountSet { vectors: vec![v] }
    }

    pub fn scalar(values: impl IntoIterator<Item = u64>) -> CountSet {
        CountSet::new(values.into_iter().map(|v| vec![v]).collect())
    }

    pub fn vectors(&self) -> &[CountVector] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map(|v| v.len()).unwrap_or(0)
    }

    pub fn render(&self) -> String {
        let inner: Vec<String> = self
            .vectors
            .iter()
            .map(|v| {
                if v.len() == 1 {
                    v[0].to_string()
                } else {
                    format!(
                        "({})",
                        v.iter()
                            .map(|c| c.to_string())
                            .collect::<Vec<_>>()
                            .join(",")
                    )
                }
            })
            .collect();
        format!("{{{}}}", inner.join(","))
    }
}

/// ⊗: all pairwise componentwise sums. Over an empty operand collection the
/// cross-sum is `{0}`, the identity.
pub fn cross_sum(a: &CountSet, b: &CountSet) -> CountSet {
    debug_assert_eq!(a.dim(), b.dim());
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in &a.vectors {
        for y in &b.vectors {
            out.push(x.iter().zip(y).map(|(p, q)| p + q).collect());
        }
    }
    CountSet::new(out)
}

/// ⊕: set union.
pub fn union_set(a: &CountSet, b: &CountSet) -> CountSet {
    debug_assert!(a.is_empty() || b.is_empty() || a.dim() == b.dim());
    let mut out = a.vectors.clone();
    out.extend(b.vectors.iter().cloned());
    CountSet::new(out)
}

/// Add the zero vector: the δ=1 case when a next hop has no DVNet node.
pub fn zero_augment(a: &CountSet, m: usize) -> CountSet {
    let mut out = a.vectors.clone();
    out.push(vec![0; m]);
    CountSet::new(out)
}

/// The per-node counting rule. `downstream` pairs each downstream node with
/// the physical device it stands for; `counts` holds each downstream node's
/// count set for the packet class at hand.
///
/// ALL actions cross-sum the counts of every matching downstream node (a
/// virtual-replica hop contributes all its replicas simultaneously). ANY
/// actions union per-hop contributions and zero-augment when some hop has no
/// matching node at all.
pub fn node_count(
    action: &ActionGroup,
    downstream: &[(NodeId, DeviceId)],
    counts: &BTreeMap<NodeId, CountSet>,
    m: usize,
) -> CountSet {
    if action.is_drop() {
        return CountSet::zero(m);
    }
    let nodes_for = |hop: DeviceId| -> Vec<NodeId> {
        downstream
            .iter()
            .filter(|&&(_, dev)| dev == hop)
            .map(|&(n, _)| n)
            .collect()
    };
    match action.kind {
        ActionKind::All => {
            let mut acc = CountSet::zero(m);
            for &hop in &action.next_hops {
                for node in nodes_for(hop) {
                    acc = cross_sum(&acc, &counts[&node]);
                }
            }
            acc
        }
        ActionKind::Any => {
            let mut acc: Option<CountSet> = None;
            let mut escaped = false;
            for &hop in &action.next_hops {
                let nodes = nodes_for(hop);
                if nodes.is_empty() {
                    escaped = true;
                    continue;
                }
                let mut term = CountSet::zero(m);
                for node in nodes {
                    term = cross_sum(&term, &counts[&node]);
                }
                acc = Some(match acc {
                    None => term,
                    Some(prev) => union_set(&prev, &term),
                });
            }
            match (acc, escaped) {
                (Some(set), false) => set,
                (Some(set), true) => zero_augment(&set, m),
                (None, _) => CountSet::zero(m),
            }
        }
    }
}

/// Keep only the provably sufficient counting information for a comparison:
/// the minimum for `>=`/`>`, the maximum for `<=`/`<`, and the two smallest
/// elements for `==`. Scalar sets only.
pub fn truncate_min_info(c: &CountSet, cmp: Cmp) -> CountSet {
    assert_eq!(c.dim(), 1, "minimal-information mode is scalar only");
    let vals: Vec<u64> = c.vectors.iter().map(|v| v[0]).collect();
    match cmp {
        Cmp::Ge | Cmp::Gt => CountSet::scalar([*vals.iter().min().unwrap()]),
        Cmp::Le | Cmp::Lt => CountSet::scalar([*vals.iter().max().unwrap()]),
        Cmp::Eq => {
            // vals is ascending: CountSet vectors are sorted.
            CountSet::scalar(vals.into_iter().take(2))
        }
    }
}

/// Disjoint packet-class cells with their count sets; cells with equal count
/// sets are merged.
pub type NodeCells = Vec<(Predicate, CountSet)>;

fn merge_cell(store: &mut Store, cells: &mut NodeCells, pred: Predicate, set: CountSet) {
    if pred.is_false() {
        return;
    }
    for (p, s) in cells.iter_mut() {
        if *s == set {
            *p = store.or(*p, pred);
            return;
        }
    }
    cells.push((pred, set));
}

pub fn cells_to_map(cells: &NodeCells) -> BTreeMap<Predicate, CountSet> {
    cells.iter().map(|(p, s)| (*p, s.clone())).collect()
}

/// Look up the count set covering a header.
pub fn cell_for_header(store: &Store, cells: &NodeCells, header: u64) -> Option<CountSet> {
    cells
        .iter()
        .find(|(p, _)| store.eval(*p, header))
        .map(|(_, s)| s.clone())
}

/// Result of the centralized sweep: count cells per DVNet node.
#[derive(Clone, Debug)]
pub struct CentralResult {
    pub per_node: Vec<NodeCells>,
}

impl CentralResult {
    /// Cells at an ingress's source node; ingresses without a live source
    /// node count zero over the whole space.
    pub fn source_cells(&self, plan: &Plan, ingress: DeviceId) -> NodeCells {
        match plan.dvnet.sources.get(&ingress) {
            Some(&u) => self.per_node[u.idx()].clone(),
            None => vec![(plan.packet_space, CountSet::zero(plan.m))],
        }
    }
}

/// The initial cells of an accepting node: count 1 per owning component over
/// the part of the packet space the device's external prefixes deliver, zero
/// elsewhere.
pub fn accepting_cells(store: &mut Store, plan: &Plan, node: NodeId) -> NodeCells {
    let dv = &plan.dvnet;
    let n = &dv.nodes[node.idx()];
    let phys = plan.topo.physical(n.dev);
    let delivered = match plan.prefixes.get(&phys) {
        Some(list) => store.dst_in_prefixes(list),
        None => predicate::FALSE,
    };
    let covered = store.and(delivered, plan.packet_space);
    let rest = store.diff(plan.packet_space, covered);
    let mut cells = NodeCells::new();
    merge_cell(
        store,
        &mut cells,
        covered,
        CountSet::unit(plan.m, n.owners.iter().copied()),
    );
    merge_cell(store, &mut cells, rest, CountSet::zero(plan.m));
    cells
}

/// Reverse-topological counting sweep over the DVNet against the given data
/// plane. Each node's packet space is refined against the hosting device's
/// LEC cells and the downstream cells, so the result is a per-node partition
/// of the plan's packet space.
pub fn centralized_count(
    store: &mut Store,
    plan: &Plan,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
) -> CentralResult {
    let dv = &plan.dvnet;
    let mut per_node: Vec<NodeCells> = vec![NodeCells::new(); dv.len()];
    for &u in plan.dvnet.order.iter().rev() {
        per_node[u.idx()] = count_node(store, plan, fibs, dv, u, &per_node);
    }
    CentralResult { per_node }
}

fn count_node(
    store: &mut Store,
    plan: &Plan,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
    dv: &DvNet,
    u: NodeId,
    per_node: &[NodeCells],
) -> NodeCells {
    if dv.is_accepting(u) {
        let mut cells = accepting_cells(store, plan, u);
        if let TaskMode::MinInfo(cmp, _) = plan.mode {
            for (_, s) in cells.iter_mut() {
                *s = truncate_min_info(s, cmp);
            }
        }
        return cells;
    }
    let task = &plan.tasks[u.idx()];
    let host = task.host;
    let lec = &fibs[&host].lec;

    // Refine space ∩ LEC cells against every downstream partition.
    struct Part {
        pred: Predicate,
        action: ActionGroup,
        counts: BTreeMap<NodeId, CountSet>,
    }
    let mut parts: Vec<Part> = Vec::new();
    for e in &lec.entries {
        let pred = store.and(e.predicate, plan.packet_space);
        if !pred.is_false() {
            parts.push(Part {
                pred,
                action: e.action.clone(),
                counts: BTreeMap::new(),
            });
        }
    }
    for &(v, _) in &task.downstream {
        let mut next = Vec::with_capacity(parts.len());
        for part in parts {
            for (q, set) in &per_node[v.idx()] {
                let pred = store.and(part.pred, *q);
                if pred.is_false() {
                    continue;
                }
                let mut counts = part.counts.clone();
                counts.insert(v, set.clone());
                next.push(Part {
                    pred,
                    action: part.action.clone(),
                    counts,
                });
            }
        }
        parts = next;
    }

    let mut cells = NodeCells::new();
    for part in parts {
        let mut set = node_count(&part.action, &task.downstream, &part.counts, plan.m);
        if let TaskMode::MinInfo(cmp, _) = plan.mode {
            set = truncate_min_info(&set, cmp);
        }
        merge_cell(store, &mut cells, part.pred, set);
    }
    cells
}

// ---------------------------------------------------------------------------
// Verdicts

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellVerdict {
    Satisfied,
    /// A universe whose counts falsify the behavior.
    Violated { witness: CountVector },
}

/// Evaluate a behavior over one cell's count set: satisfied only if every
/// vector (universe) makes the boolean combination true.
pub fn evaluate_set(behavior: &Behavior, leaf_components: &[usize], set: &CountSet) -> CellVerdict {
    let leaves = behavior.leaves();
    for vector in set.vectors() {
        let truths: Vec<bool> = leaves
            .iter()
            .enumerate()
            .map(|(i, (op, _))| match op {
                MatchOp::Exist(cmp, n) => cmp.holds(vector[leaf_components[i]], *n),
                MatchOp::Equal => true,
            })
            .collect();
        if !behavior.eval(&truths) {
            return CellVerdict::Violated {
                witness: vector.clone(),
            };
        }
    }
    CellVerdict::Satisfied
}

/// Per-cell verdicts for one ingress's source cells.
pub fn evaluate(
    behavior: &Behavior,
    leaf_components: &[usize],
    cells: &NodeCells,
) -> Vec<(Predicate, CellVerdict)> {
    cells
        .iter()
        .map(|(p, s)| (*p, evaluate_set(behavior, leaf_components, s)))
        .collect()
}

/// Verdict report for one ingress.
#[derive(Clone, Debug)]
pub struct IngressVerdict {
    pub ingress: DeviceId,
    pub cells: Vec<(Predicate, CellVerdict)>,
}

impl IngressVerdict {
    pub fn satisfied(&self) -> bool {
        self.cells
            .iter()
            .all(|(_, v)| *v == CellVerdict::Satisfied)
    }
}

/// Full verdict of a counting plan from a centralized sweep.
pub fn plan_verdict(
    store: &mut Store,
    plan: &Plan,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
) -> Vec<IngressVerdict> {
    assert_eq!(plan.kind, PlanKind::Exist);
    let result = centralized_count(store, plan, fibs);
    plan.ingress
        .iter()
        .map(|&ing| IngressVerdict {
            ingress: ing,
            cells: evaluate(
                &plan.behavior,
                &plan.leaf_components,
                &result.source_cells(plan, ing),
            ),
        })
        .collect()
}

/// The naive compound evaluation: count each component on its own DVNet and
/// cross-product the per-component scalar sets at the source. Reproduces the
/// false positives the single-DVNet construction exists to avoid.
pub fn naive_verdict(
    store: &mut Store,
    naive: &crate::planner::NaivePlans,
    fibs: &BTreeMap<DeviceId, DeviceFib>,
) -> Vec<IngressVerdict> {
    let results: Vec<CentralResult> = naive
        .plans
        .iter()
        .map(|p| centralized_count(store, p, fibs))
        .collect();
    let m = naive.plans.len();
    let ingresses = naive.plans[0].ingress.clone();
    let space = naive.plans[0].packet_space;
    ingresses
        .iter()
        .map(|&ing| {
            // Joint refinement of the per-component source cells.
            let mut parts: Vec<(Predicate, Vec<CountSet>)> = vec![(space, Vec::new())];
            for (plan, result) in naive.plans.iter().zip(&results) {
                let cells = result.source_cells(plan, ing);
                let mut next = Vec::new();
                for (pred, sets) in parts {
                    for (q, s) in &cells {
                        let inter = store.and(pred, *q);
                        if inter.is_false() {
                            continue;
                        }
                        let mut sets = sets.clone();
                        sets.push(s.clone());
                        next.push((inter, sets));
                    }
                }
                parts = next;
            }
            let cells = parts
                .into_iter()
                .map(|(pred, sets)| {
                    // All combinations of one scalar per component.
                    let mut combos: Vec<CountVector> = vec![Vec::with_capacity(m)];
                    for s in &sets {
                        let mut next = Vec::new();
                        for c in combos {
                            for v in s.vectors() {
                                let mut c = c.clone();
                                c.push(v[0]);
                                next.push(c);
                            }
                        }
                        combos = next;
                    }
                    let set = CountSet::new(combos);
                    (
                        pred,
                        evaluate_set(&naive.behavior, &naive.leaf_components, &set),
                    )
                })
                .collect();
            IngressVerdict {
                ingress: ing,
                cells,
            }
        })
        .collect()
}

/// Status agreement between a computed source-cell partition and the
/// oracle's per-cell reports: each oracle cell's representative header must
/// land in a computed cell with the same satisfied/violated status. With
/// `compare_counts`, the count sets must match exactly as well (full-count
/// mode only; truncated runs keep subsets).
pub fn agrees_with_oracle(
    store: &mut Store,
    behavior: &Behavior,
    leaf_components: &[usize],
    cells: &NodeCells,
    report: &crate::oracle::OracleReport,
    compare_counts: bool,
) -> bool {
    for oc in &report.cells {
        let set = match cell_for_header(store, cells, oc.representative) {
            Some(set) => set,
            None => return false,
        };
        let verdict = evaluate_set(behavior, leaf_components, &set);
        let satisfied = verdict == CellVerdict::Satisfied;
        if satisfied != oc.satisfied {
            return false;
        }
        if compare_counts {
            if let Some(expected) = &oc.counts {
                if &set != expected {
                    return false;
                }
            }
        }
    }
    true
}

/// Joint evaluation across all ingresses: a pseudo source forwards one copy
/// into every ingress simultaneously, so per-ingress source sets combine by
/// cross-sum before evaluation.
pub fn joint_source_cells(store: &mut Store, plan: &Plan, result: &CentralResult) -> NodeCells {
    let mut parts: Vec<(Predicate, CountSet)> = vec![(plan.packet_space, CountSet::zero(plan.m))];
    for &ing in &plan.ingress {
        let cells = result.source_cells(plan, ing);
        let mut next = Vec::new();
        for (pred, acc) in parts {
            for (q, s) in &cells {
                let inter = store.and(pred, *q);
                if !inter.is_false() {
                    next.push((inter, cross_sum(&acc, s)));
                }
            }
        }
        parts = next;
    }
    let mut cells = NodeCells::new();
    for (pred, set) in parts {
        merge_cell(store, &mut cells, pred, set);
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn set(vals: &[&[u64]]) -> CountSet {
        CountSet::new(vals.iter().map(|v| v.to_vec()).collect())
    }

    #[test]
    fn cross_sum_examples() {
        assert_eq!(
            cross_sum(&CountSet::scalar([1]), &CountSet::scalar([1])),
            CountSet::scalar([2])
        );
        // Enumerating pairs: {0,1} ⊗ {1} = {1,2}.
        assert_eq!(
            cross_sum(&CountSet::scalar([0, 1]), &CountSet::scalar([1])),
            CountSet::scalar([1, 2])
        );
        assert_eq!(
            cross_sum(&set(&[&[1, 0]]), &set(&[&[0, 1]])),
            set(&[&[1, 1]])
        );
    }

    #[test]
    fn union_and_zero_augment_examples() {
        assert_eq!(
            union_set(&CountSet::scalar([0]), &CountSet::scalar([1])),
            CountSet::scalar([0, 1])
        );
        assert_eq!(zero_augment(&CountSet::scalar([1]), 1), CountSet::scalar([0, 1]));
        let a = CountSet::scalar([2, 5]);
        assert_eq!(union_set(&a, &a), a);
    }

    #[test]
    fn algebra_laws_randomized() {
        let mut rng = StdRng::seed_from_u64(17);
        let rand_set = |rng: &mut StdRng| {
            CountSet::new(
                (0..rng.gen_range(1..5))
                    .map(|_| vec![rng.gen_range(0..5u64), rng.gen_range(0..5u64)])
                    .collect(),
            )
        };
        for _ in 0..200 {
            let a = rand_set(&mut rng);
            let b = rand_set(&mut rng);
            let c = rand_set(&mut rng);
            // ⊗: commutative, associative, identity {0}.
            assert_eq!(cross_sum(&a, &b), cross_sum(&b, &a));
            assert_eq!(
                cross_sum(&cross_sum(&a, &b), &c),
                cross_sum(&a, &cross_sum(&b, &c))
            );
            assert_eq!(cross_sum(&a, &CountSet::zero(2)), a);
            // ⊕: commutative, associative, idempotent.
            assert_eq!(union_set(&a, &b), union_set(&b, &a));
            assert_eq!(
                union_set(&union_set(&a, &b), &c),
                union_set(&a, &union_set(&b, &c))
            );
            assert_eq!(union_set(&a, &a), a);
        }
    }

    #[test]
    fn cross_sum_monotonicity() {
        // Every element of a ⊗ b dominates both operands' minima.
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..500 {
            let a = CountSet::scalar((0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..6)));
            let b = CountSet::scalar((0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..6)));
            let min_a = a.vectors().iter().map(|v| v[0]).min().unwrap();
            let min_b = b.vectors().iter().map(|v| v[0]).min().unwrap();
            for v in cross_sum(&a, &b).vectors() {
                assert!(v[0] >= min_a.max(min_b));
            }
        }
    }

    fn plan_fixture(
        store: &mut Store,
        texts: &crate::fixtures::FixtureTexts,
        min_info: bool,
    ) -> (crate::fixtures::Loaded, Plan) {
        let f = crate::fixtures::load(store, texts);
        let req = crate::reqlang::desugar(&f.requirements[0], &f.topo).unwrap();
        crate::reqlang::validate(&req, &f.topo, &f.prefixes, store).unwrap();
        let opts = crate::planner::PlanOptions {
            min_info,
            ..Default::default()
        };
        let plans = crate::planner::plan(store, &f.topo, &f.prefixes, &req, opts).unwrap();
        (f, plans.into_iter().next().unwrap())
    }

    fn dst(store: &mut Store, cidr: &str) -> Predicate {
        store.from_cidr(crate::predicate::Field::Dst, cidr.parse().unwrap())
    }

    #[test]
    fn workflow_counting_matches_published_numbers() {
        let mut store = Store::new();
        let (f, plan) = plan_fixture(&mut store, &crate::fixtures::waypoint_workflow(), false);
        let result = centralized_count(&mut store, &plan, &f.fibs);
        let p1 = dst(&mut store, "10.0.0.0/23");
        let p2 = dst(&mut store, "10.0.0.0/24");
        let p3 = dst(&mut store, "10.0.1.0/24");

        let cells_of = |label: &str, result: &CentralResult| {
            let u = plan.dvnet.node_by_label(label).unwrap();
            cells_to_map(&result.per_node[u.idx()])
        };
        // Interior nodes of the counting walkthrough.
        assert_eq!(cells_of("D1", &result)[&p1], CountSet::scalar([1]));
        assert_eq!(cells_of("C1", &result)[&p1], CountSet::scalar([0])); // pre-W C
        assert_eq!(cells_of("C2", &result)[&p1], CountSet::scalar([1])); // post-W C
        // W1 descends from A directly; W3 only reaches D. W forwards to C,
        // so the post-W C node's value flows into W1/W2 and W3 stays 0.
        assert_eq!(cells_of("W1", &result)[&p1], CountSet::scalar([1]));
        assert_eq!(cells_of("W2", &result)[&p1], CountSet::scalar([1]));
        assert_eq!(cells_of("W3", &result)[&p1], CountSet::scalar([0]));
        assert_eq!(cells_of("B1", &result)[&p1], CountSet::scalar([0]));
        // A splits: the ANY half {0,1}, the ALL-to-W half {1}.
        let a1 = cells_of("A1", &result);
        assert_eq!(a1[&p2], CountSet::scalar([0, 1]));
        assert_eq!(a1[&p3], CountSet::scalar([1]));
        // Source result, the verification outcome.
        let s1 = result.source_cells(&plan, f.topo.device("S").unwrap());
        let s1 = cells_to_map(&s1);
        assert_eq!(s1.len(), 2);
        assert_eq!(s1[&p2], CountSet::scalar([0, 1]));
        assert_eq!(s1[&p3], CountSet::scalar([1]));

        let verdicts = plan_verdict(&mut store, &plan, &f.fibs);
        assert!(!verdicts[0].satisfied());
        let violated: Vec<_> = verdicts[0]
            .cells
            .iter()
            .filter(|(_, v)| *v != CellVerdict::Satisfied)
            .collect();
        assert_eq!(violated.len(), 1);
        assert_eq!(violated[0].0, p2);
        assert_eq!(
            violated[0].1,
            CellVerdict::Violated { witness: vec![0] }
        );

        // Apply the update at B: S1 collapses to [(P1, {1})], satisfied.
        let mut fibs = f.fibs;
        let b = f.topo.device("B").unwrap();
        let toks: Vec<&str> = "10 - 10.0.0.0/23 ALL W".split_whitespace().collect();
        let rule =
            crate::dataplane::parse_rule_directive(&mut store, &f.topo, b, &toks).unwrap();
        fibs.get_mut(&b)
            .unwrap()
            .apply_update(
                &mut store,
                &f.topo,
                crate::dataplane::FibUpdateKind::Modify(rule),
            )
            .unwrap();
        let result = centralized_count(&mut store, &plan, &fibs);
        let s1 = cells_to_map(&result.source_cells(&plan, f.topo.device("S").unwrap()));
        assert_eq!(s1.len(), 1);
        assert_eq!(s1[&p1], CountSet::scalar([1]));
        let verdicts = plan_verdict(&mut store, &plan, &fibs);
        assert!(verdicts[0].satisfied());
    }

    #[test]
    fn anycast_counting_and_naive_false_positive() {
        let mut store = Store::new();
        let (f, plan) = plan_fixture(&mut store, &crate::fixtures::anycast(), false);
        let result = centralized_count(&mut store, &plan, &f.fibs);
        let space = dst(&mut store, "10.9.0.0/24");
        let cells_of = |label: &str| {
            let u = plan.dvnet.node_by_label(label).unwrap();
            cells_to_map(&result.per_node[u.idx()])
        };
        assert_eq!(cells_of("D1")[&space], CountSet::new(vec![vec![1, 0]]));
        assert_eq!(cells_of("E1")[&space], CountSet::new(vec![vec![0, 1]]));
        let s = f.topo.device("S").unwrap();
        let s1 = cells_to_map(&result.source_cells(&plan, s));
        assert_eq!(
            s1[&space],
            CountSet::new(vec![vec![1, 0], vec![0, 1]])
        );
        let verdicts = plan_verdict(&mut store, &plan, &f.fibs);
        assert!(verdicts[0].satisfied());

        // The naive per-expression cross-product manufactures (0,0) and
        // (1,1): a false positive.
        let req = crate::reqlang::desugar(&f.requirements[0], &f.topo).unwrap();
        let naive = crate::planner::plan_naive_compound(
            &mut store,
            &f.topo,
            &f.prefixes,
            &req,
            Default::default(),
        )
        .unwrap();
        let nv = naive_verdict(&mut store, &naive, &f.fibs);
        assert!(!nv[0].satisfied());
    }

    #[test]
    fn shared_destination_counting_and_naive_phantom() {
        let mut store = Store::new();
        let (f, plan) = plan_fixture(&mut store, &crate::fixtures::shared_destination(), false);
        let result = centralized_count(&mut store, &plan, &f.fibs);
        let space = dst(&mut store, "10.1.0.0/24");
        let s = f.topo.device("S").unwrap();
        let s1 = cells_to_map(&result.source_cells(&plan, s));
        // True joint outcomes: two plain copies via A, or one waypointed
        // copy via B.
        assert_eq!(
            s1[&space],
            CountSet::new(vec![vec![2, 0], vec![1, 1]])
        );
        let verdicts = plan_verdict(&mut store, &plan, &f.fibs);
        assert!(verdicts[0].satisfied());

        // Naive mode: projections {1,2} × {0,1} produce the documented
        // phantom set and a phantom violation.
        let req = crate::reqlang::desugar(&f.requirements[0], &f.topo).unwrap();
        let naive = crate::planner::plan_naive_compound(
            &mut store,
            &f.topo,
            &f.prefixes,
            &req,
            Default::default(),
        )
        .unwrap();
        let results: Vec<CentralResult> = naive
            .plans
            .iter()
            .map(|p| centralized_count(&mut store, p, &f.fibs))
            .collect();
        let proj0 = cells_to_map(&results[0].source_cells(&naive.plans[0], s));
        let proj1 = cells_to_map(&results[1].source_cells(&naive.plans[1], s));
        assert_eq!(proj0[&space], CountSet::scalar([1, 2]));
        assert_eq!(proj1[&space], CountSet::scalar([0, 1]));
        let nv = naive_verdict(&mut store, &naive, &f.fibs);
        assert!(!nv[0].satisfied());
        match &nv[0].cells[0].1 {
            CellVerdict::Violated { witness } => assert_eq!(witness, &vec![1, 0]),
            other => panic!("expected phantom violation, got {other:?}"),
        }
    }

    #[test]
    fn min_info_truncation_preserves_workflow_verdict() {
        let mut store = Store::new();
        let (f, plan) = plan_fixture(&mut store, &crate::fixtures::waypoint_workflow(), true);
        assert!(matches!(plan.mode, TaskMode::MinInfo(Cmp::Ge, 1)));
        let verdicts = plan_verdict(&mut store, &plan, &f.fibs);
        assert!(!verdicts[0].satisfied());
        let p2 = dst(&mut store, "10.0.0.0/24");
        // Truncated sets carry only the minimum: witness {0}.
        let result = centralized_count(&mut store, &plan, &f.fibs);
        let s1 = cells_to_map(&result.source_cells(&plan, f.topo.device("S").unwrap()));
        assert_eq!(s1[&p2], CountSet::scalar([0]));
    }

    #[test]
    fn truncation_rules() {
        let c = CountSet::scalar([0, 1, 2]);
        assert_eq!(truncate_min_info(&c, Cmp::Ge), CountSet::scalar([0]));
        assert_eq!(truncate_min_info(&c, Cmp::Gt), CountSet::scalar([0]));
        assert_eq!(truncate_min_info(&c, Cmp::Le), CountSet::scalar([2]));
        assert_eq!(truncate_min_info(&c, Cmp::Lt), CountSet::scalar([2]));
        assert_eq!(truncate_min_info(&c, Cmp::Eq), CountSet::scalar([0, 1]));
        let single = CountSet::scalar([5]);
        assert_eq!(truncate_min_info(&single, Cmp::Le), single);
        assert_eq!(truncate_min_info(&single, Cmp::Eq), single);
    }
}
