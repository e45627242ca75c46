//! Path expressions compiled to deterministic finite automata over the
//! device alphabet.
//!
//! The chain is the standard one: syntax tree → nondeterministic automaton
//! (Thompson construction) → subset construction → partition-refinement
//! minimization. Complement and intersection recurse into compiled child
//! automata, so `not` and `and` may appear anywhere in a path expression.
//! States are renumbered canonically (breadth-first in sorted symbol order),
//! making the compiled automaton deterministic across runs.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::reqlang::PathExpr;
use crate::topology::{DeviceId, Topology};

/// Deterministic automaton with a partial transition function; a missing
/// transition is the (pruned) dead state. `owners[q]` lists the component
/// regex ids accepting at `q`; for single-expression automata it is `{0}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dfa {
    pub initial: usize,
    pub trans: Vec<BTreeMap<DeviceId, usize>>,
    pub owners: Vec<BTreeSet<usize>>,
}

impl Dfa {
    fn empty_language() -> Dfa {
        Dfa {
            initial: 0,
            trans: vec![BTreeMap::new()],
            owners: vec![BTreeSet::new()],
        }
    }

    pub fn len(&self) -> usize {
        self.trans.len()
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        !self.owners[q].is_empty()
    }

    pub fn step(&self, q: usize, sym: DeviceId) -> Option<usize> {
        self.trans[q].get(&sym).copied()
    }

    pub fn accepts(&self, word: &[DeviceId]) -> bool {
        let mut q = self.initial;
        for &x in word {
            match self.step(q, x) {
                Some(n) => q = n,
                None => return false,
            }
        }
        self.is_accepting(q)
    }

    /// Devices that can end an accepted word: symbols with an edge into an
    /// accepting state. Callable only on pruned automata, where every state
    /// is live.
    pub fn destination_symbols(&self) -> BTreeSet<DeviceId> {
        let mut out = BTreeSet::new();
        for row in &self.trans {
            for (&sym, &to) in row {
                if self.is_accepting(to) {
                    out.insert(sym);
                }
            }
        }
        // The empty word: the initial state itself accepting has no last
        // symbol; it contributes nothing here.
        out
    }

    /// Keep reachable states that can still reach acceptance, then minimize
    /// and renumber canonically.
    pub fn normalize(&self) -> Dfa {
        let pruned = self.prune();
        pruned.minimize()
    }

    fn prune(&self) -> Dfa {
        let n = self.len();
        let mut reach = vec![false; n];
        let mut queue = VecDeque::from([self.initial]);
        reach[self.initial] = true;
        while let Some(q) = queue.pop_front() {
            for &t in self.trans[q].values() {
                if !reach[t] {
                    reach[t] = true;
                    queue.push_back(t);
                }
            }
        }
        // Co-reachability: reverse BFS from accepting states.
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (q, row) in self.trans.iter().enumerate() {
            for &t in row.values() {
                rev[t].push(q);
            }
        }
        let mut live = vec![false; n];
        let mut queue: VecDeque<usize> = (0..n).filter(|&q| self.is_accepting(q)).collect();
        for &q in &queue {
            live[q] = true;
        }
        while let Some(q) = queue.pop_front() {
            for &p in &rev[q] {
                if !live[p] {
                    live[p] = true;
                    queue.push_back(p);
                }
            }
        }
        if !reach[self.initial] || !live[self.initial] {
            return Dfa::empty_language();
        }
        let keep: Vec<usize> = (0..n).filter(|&q| reach[q] && live[q]).collect();
        let mut remap = vec![usize::MAX; n];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut trans = Vec::with_capacity(keep.len());
        let mut owners = Vec::with_capacity(keep.len());
        for &old in &keep {
            let row = self.trans[old]
                .iter()
                .filter(|(_, &t)| remap[t] != usize::MAX)
                .map(|(&s, &t)| (s, remap[t]))
                .collect();
            trans.push(row);
            owners.push(self.owners[old].clone());
        }
        Dfa {
            initial: remap[self.initial],
            trans,
            owners,
        }
    }

    /// Moore partition refinement. The initial partition separates states by
    /// owner set, so minimization never conflates different accepting roles.
    fn minimize(&self) -> Dfa {
        let n = self.len();
        if n <= 1 {
            return self.clone();
        }
        let mut owner_index: BTreeMap<&BTreeSet<usize>, usize> = BTreeMap::new();
        let mut class: Vec<usize> = Vec::with_capacity(n);
        for o in &self.owners {
            let next = owner_index.len();
            let idx = *owner_index.entry(o).or_insert(next);
            class.push(idx);
        }
        loop {
            // Signature: own class plus the class reached on every symbol.
            let mut sig_index: BTreeMap<(usize, Vec<(DeviceId, usize)>), usize> = BTreeMap::new();
            let mut next_class = vec![0usize; n];
            for q in 0..n {
                let row: Vec<(DeviceId, usize)> = self.trans[q]
                    .iter()
                    .map(|(&s, &t)| (s, class[t]))
                    .collect();
                let key = (class[q], row);
                let next = sig_index.len();
                next_class[q] = *sig_index.entry(key).or_insert(next);
            }
            let stable = (0..n).all(|q| {
                (0..n).all(|p| (class[p] == class[q]) == (next_class[p] == next_class[q]))
            });
            class = next_class;
            if stable {
                break;
            }
        }
        // Quotient, then canonical BFS renumbering.
        let n_classes = class.iter().max().unwrap() + 1;
        let mut trans: Vec<BTreeMap<DeviceId, usize>> = vec![BTreeMap::new(); n_classes];
        let mut owners: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_classes];
        for q in 0..n {
            owners[class[q]] = self.owners[q].clone();
            for (&s, &t) in &self.trans[q] {
                trans[class[q]].insert(s, class[t]);
            }
        }
        let quotient = Dfa {
            initial: class[self.initial],
            trans,
            owners,
        };
        quotient.renumber()
    }

    fn renumber(&self) -> Dfa {
        let mut order = Vec::new();
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([self.initial]);
        seen[self.initial] = true;
        while let Some(q) = queue.pop_front() {
            order.push(q);
            for &t in self.trans[q].values() {
                if !seen[t] {
                    seen[t] = true;
                    queue.push_back(t);
                }
            }
        }
        let mut remap = vec![usize::MAX; self.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut trans = Vec::with_capacity(order.len());
        let mut owners = Vec::with_capacity(order.len());
        for &old in &order {
            trans.push(
                self.trans[old]
                    .iter()
                    .map(|(&s, &t)| (s, remap[t]))
                    .collect(),
            );
            owners.push(self.owners[old].clone());
        }
        Dfa {
            initial: 0,
            trans,
            owners,
        }
    }

    /// Complement over the given alphabet. Totalizes with a sink first, so
    /// the result accepts exactly the words the input rejects.
    pub fn complement(&self, alphabet: &[DeviceId]) -> Dfa {
        let n = self.len();
        let sink = n;
        let mut trans: Vec<BTreeMap<DeviceId, usize>> = Vec::with_capacity(n + 1);
        for q in 0..n {
            let mut row = BTreeMap::new();
            for &sym in alphabet {
                row.insert(sym, self.step(q, sym).unwrap_or(sink));
            }
            trans.push(row);
        }
        trans.push(alphabet.iter().map(|&s| (s, sink)).collect());
        let mut owners: Vec<BTreeSet<usize>> = Vec::with_capacity(n + 1);
        for q in 0..n {
            owners.push(if self.is_accepting(q) {
                BTreeSet::new()
            } else {
                BTreeSet::from([0])
            });
        }
        owners.push(BTreeSet::from([0]));
        Dfa {
            initial: self.initial,
            trans,
            owners,
        }
        .normalize()
    }

    /// Language intersection via the lazily-explored product.
    pub fn intersect(&self, other: &Dfa) -> Dfa {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut trans: Vec<BTreeMap<DeviceId, usize>> = Vec::new();
        let mut owners: Vec<BTreeSet<usize>> = Vec::new();
        let mut queue = VecDeque::new();
        let start = (self.initial, other.initial);
        index.insert(start, 0);
        trans.push(BTreeMap::new());
        owners.push(if self.is_accepting(self.initial) && other.is_accepting(other.initial) {
            BTreeSet::from([0])
        } else {
            BTreeSet::new()
        });
        queue.push_back(start);
        while let Some((a, b)) = queue.pop_front() {
            let from = index[&(a, b)];
            // Symbols live in both rows.
            let moves: Vec<(DeviceId, usize, usize)> = self.trans[a]
                .iter()
                .filter_map(|(&s, &ta)| other.step(b, s).map(|tb| (s, ta, tb)))
                .collect();
            for (s, ta, tb) in moves {
                let key = (ta, tb);
                let to = *index.entry(key).or_insert_with(|| {
                    let id = trans.len();
                    trans.push(BTreeMap::new());
                    owners.push(
                        if self.is_accepting(ta) && other.is_accepting(tb) {
                            BTreeSet::from([0])
                        } else {
                            BTreeSet::new()
                        },
                    );
                    queue.push_back(key);
                    id
                });
                trans[from].insert(s, to);
            }
        }
        Dfa {
            initial: 0,
            trans,
            owners,
        }
        .normalize()
    }
}

// ---------------------------------------------------------------------------
// Thompson construction

struct Nfa {
    // Per state: symbol moves and epsilon moves.
    moves: Vec<Vec<(DeviceId, usize)>>,
    eps: Vec<Vec<usize>>,
    start: usize,
    accept: usize,
}

struct NfaBuilder {
    moves: Vec<Vec<(DeviceId, usize)>>,
    eps: Vec<Vec<usize>>,
}

impl NfaBuilder {
    fn new() -> Self {
        NfaBuilder {
            moves: Vec::new(),
            eps: Vec::new(),
        }
    }

    fn state(&mut self) -> usize {
        self.moves.push(Vec::new());
        self.eps.push(Vec::new());
        self.moves.len() - 1
    }

    fn fragment(&mut self, expr: &PathExpr, alphabet: &[DeviceId], topo: &Topology) -> (usize, usize) {
        match expr {
            PathExpr::Dev(name) => {
                let (s, e) = (self.state(), self.state());
                // Unknown devices (validated earlier) yield the empty
                // language rather than a panic.
                if let Some(id) = topo.device(name) {
                    self.moves[s].push((id, e));
                }
                (s, e)
            }
            PathExpr::Wildcard => {
                let (s, e) = (self.state(), self.state());
                for &sym in alphabet {
                    self.moves[s].push((sym, e));
                }
                (s, e)
            }
            PathExpr::Concat(xs) => {
                let mut cur: Option<(usize, usize)> = None;
                for x in xs {
                    let frag = self.fragment(x, alphabet, topo);
                    cur = Some(match cur {
                        None => frag,
                        Some((s, e)) => {
                            self.eps[e].push(frag.0);
                            (s, frag.1)
                        }
                    });
                }
                cur.unwrap_or_else(|| {
                    let s = self.state();
                    (s, s)
                })
            }
            PathExpr::Alt(xs) => {
                let (s, e) = (self.state(), self.state());
                for x in xs {
                    let frag = self.fragment(x, alphabet, topo);
                    self.eps[s].push(frag.0);
                    self.eps[frag.1].push(e);
                }
                (s, e)
            }
            PathExpr::Star(x) => {
                let (s, e) = (self.state(), self.state());
                let frag = self.fragment(x, alphabet, topo);
                self.eps[s].push(frag.0);
                self.eps[s].push(e);
                self.eps[frag.1].push(frag.0);
                self.eps[frag.1].push(e);
                (s, e)
            }
            // Boolean operators compile the children fully and embed the
            // resulting automaton as a fragment.
            PathExpr::Not(_) | PathExpr::And(_) | PathExpr::LoopFree => {
                let dfa = compile_with_alphabet(expr, alphabet, topo);
                self.embed(&dfa)
            }
        }
    }

    fn embed(&mut self, dfa: &Dfa) -> (usize, usize) {
        let base = self.moves.len();
        for _ in 0..dfa.len() {
            self.state();
        }
        let accept = self.state();
        for (q, row) in dfa.trans.iter().enumerate() {
            for (&s, &t) in row {
                self.moves[base + q].push((s, base + t));
            }
            if dfa.is_accepting(q) {
                self.eps[base + q].push(accept);
            }
        }
        (base + dfa.initial, accept)
    }
}

fn closure(nfa: &Nfa, set: &mut BTreeSet<usize>) {
    let mut stack: Vec<usize> = set.iter().copied().collect();
    while let Some(q) = stack.pop() {
        for &t in &nfa.eps[q] {
            if set.insert(t) {
                stack.push(t);
            }
        }
    }
}

fn subset_construct(nfa: &Nfa) -> Dfa {
    let mut start = BTreeSet::from([nfa.start]);
    closure(nfa, &mut start);
    let mut index: HashMap<BTreeSet<usize>, usize> = HashMap::new();
    let mut trans: Vec<BTreeMap<DeviceId, usize>> = Vec::new();
    let mut owners: Vec<BTreeSet<usize>> = Vec::new();
    let accepting = |set: &BTreeSet<usize>| {
        if set.contains(&nfa.accept) {
            BTreeSet::from([0])
        } else {
            BTreeSet::new()
        }
    };
    owners.push(accepting(&start));
    trans.push(BTreeMap::new());
    index.insert(start.clone(), 0);
    let mut queue = VecDeque::from([start]);
    while let Some(set) = queue.pop_front() {
        let from = index[&set];
        let mut by_sym: BTreeMap<DeviceId, BTreeSet<usize>> = BTreeMap::new();
        for &q in &set {
            for &(s, t) in &nfa.moves[q] {
                by_sym.entry(s).or_default().insert(t);
            }
        }
        for (sym, mut next) in by_sym {
            closure(nfa, &mut next);
            let to = match index.get(&next) {
                Some(&id) => id,
                None => {
                    let id = trans.len();
                    trans.push(BTreeMap::new());
                    owners.push(accepting(&next));
                    index.insert(next.clone(), id);
                    queue.push_back(next);
                    id
                }
            };
            trans[from].insert(sym, to);
        }
    }
    Dfa {
        initial: 0,
        trans,
        owners,
    }
}

fn compile_with_alphabet(expr: &PathExpr, alphabet: &[DeviceId], topo: &Topology) -> Dfa {
    match expr {
        PathExpr::Not(inner) => compile_with_alphabet(inner, alphabet, topo).complement(alphabet),
        PathExpr::And(xs) => {
            let mut acc: Option<Dfa> = None;
            for x in xs {
                let d = compile_with_alphabet(x, alphabet, topo);
                acc = Some(match acc {
                    None => d,
                    Some(prev) => prev.intersect(&d),
                });
            }
            acc.unwrap_or_else(|| {
                // Empty conjunction: the universal language.
                compile_with_alphabet(
                    &PathExpr::Star(Box::new(PathExpr::Wildcard)),
                    alphabet,
                    topo,
                )
            })
        }
        PathExpr::LoopFree => {
            let names: Vec<String> = alphabet
                .iter()
                .filter(|d| !topo.is_virtual(**d))
                .map(|&d| topo.name(d).to_string())
                .collect();
            compile_with_alphabet(&crate::reqlang::loop_free_expr(&names), alphabet, topo)
        }
        _ => {
            let mut b = NfaBuilder::new();
            let (start, accept) = b.fragment(expr, alphabet, topo);
            let nfa = Nfa {
                moves: b.moves,
                eps: b.eps,
                start,
                accept,
            };
            subset_construct(&nfa).normalize()
        }
    }
}

/// Compile a path expression over the full device alphabet of `topo`.
/// The result is minimal and canonically numbered.
pub fn compile(expr: &PathExpr, topo: &Topology) -> Dfa {
    let alphabet: Vec<DeviceId> = topo.devices().collect();
    compile_with_alphabet(expr, &alphabet, topo)
}

/// Synchronized product of per-expression automata: the union automaton.
/// State q accepts for component i exactly when component i's automaton
/// accepts, so `owners` distinguishes which expressions each accepting node
/// satisfies.
pub fn union_with_owners(dfas: &[Dfa]) -> Dfa {
    assert!(!dfas.is_empty());
    type Key = Vec<Option<usize>>;
    let start: Key = dfas.iter().map(|d| Some(d.initial)).collect();
    let owners_of = |key: &Key| -> BTreeSet<usize> {
        key.iter()
            .enumerate()
            .filter_map(|(i, q)| match q {
                Some(q) if dfas[i].is_accepting(*q) => Some(i),
                _ => None,
            })
            .collect()
    };
    let mut index: HashMap<Key, usize> = HashMap::new();
    let mut trans: Vec<BTreeMap<DeviceId, usize>> = vec![BTreeMap::new()];
    let mut owners = vec![owners_of(&start)];
    index.insert(start.clone(), 0);
    let mut queue = VecDeque::from([start]);
    while let Some(key) = queue.pop_front() {
        let from = index[&key];
        let mut syms: BTreeSet<DeviceId> = BTreeSet::new();
        for (i, q) in key.iter().enumerate() {
            if let Some(q) = q {
                syms.extend(dfas[i].trans[*q].keys().copied());
            }
        }
        for sym in syms {
            let next: Key = key
                .iter()
                .enumerate()
                .map(|(i, q)| q.and_then(|q| dfas[i].step(q, sym)))
                .collect();
            if next.iter().all(|q| q.is_none()) {
                continue;
            }
            let to = match index.get(&next) {
                Some(&id) => id,
                None => {
                    let id = trans.len();
                    trans.push(BTreeMap::new());
                    owners.push(owners_of(&next));
                    index.insert(next.clone(), id);
                    queue.push_back(next);
                    id
                }
            };
            trans[from].insert(sym, to);
        }
    }
    Dfa {
        initial: 0,
        trans,
        owners,
    }
    .normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reqlang::{loop_free_expr, parse, Behavior, PathExpr};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn topo6() -> Topology {
        Topology::parse(
            "node S\nnode W\nnode A\nnode B\nnode C\nnode D\n\
             link S A\nlink A B\nlink A W\nlink B W\nlink B C\nlink W C\nlink W D\nlink C D\n",
        )
        .unwrap()
    }

    fn path_of(text: &str) -> PathExpr {
        let req = parse(&format!("(true, [S], (exist >= 1, {text}))"))
            .unwrap()
            .remove(0);
        match req.behavior {
            Behavior::Leaf(_, p) => p,
            _ => unreachable!(),
        }
    }

    /// Direct interpreter over the syntax tree, the independent membership
    /// oracle for the compiled automata.
    fn matches(expr: &PathExpr, word: &[DeviceId], topo: &Topology, alphabet: &[DeviceId]) -> bool {
        match expr {
            PathExpr::Dev(name) => word.len() == 1 && topo.device(name) == Some(word[0]),
            PathExpr::Wildcard => word.len() == 1,
            PathExpr::LoopFree => {
                let mut seen = BTreeSet::new();
                word.iter().all(|d| seen.insert(*d))
            }
            PathExpr::Concat(xs) => match xs.len() {
                0 => word.is_empty(),
                1 => matches(&xs[0], word, topo, alphabet),
                _ => {
                    let rest = PathExpr::Concat(xs[1..].to_vec());
                    (0..=word.len()).any(|k| {
                        matches(&xs[0], &word[..k], topo, alphabet)
                            && matches(&rest, &word[k..], topo, alphabet)
                    })
                }
            },
            PathExpr::Alt(xs) => xs.iter().any(|x| matches(x, word, topo, alphabet)),
            PathExpr::And(xs) => xs.iter().all(|x| matches(x, word, topo, alphabet)),
            PathExpr::Star(x) => {
                if word.is_empty() {
                    return true;
                }
                (1..=word.len()).any(|k| {
                    matches(x, &word[..k], topo, alphabet)
                        && matches(expr, &word[k..], topo, alphabet)
                })
            }
            PathExpr::Not(x) => !matches(x, word, topo, alphabet),
        }
    }

    #[test]
    fn waypoint_automaton_has_three_live_states() {
        // S .* W .* D over {S, W, A, B, C, D}: before W, after W, accepted.
        let topo = topo6();
        let dfa = compile(&path_of("S (.)* W (.)* D"), &topo);
        // Canonical minimal form: q0 (nothing), q1 (S seen, no W), q2 (W
        // seen), q3 (accepted, D may recur).
        assert_eq!(dfa.len(), 4);
        assert_eq!(
            dfa.owners.iter().filter(|o| !o.is_empty()).count(),
            1,
            "single accepting state"
        );
        let s = topo.device("S").unwrap();
        let w = topo.device("W").unwrap();
        let a = topo.device("A").unwrap();
        let d = topo.device("D").unwrap();
        assert!(dfa.accepts(&[s, w, d]));
        assert!(dfa.accepts(&[s, a, w, a, d]));
        assert!(!dfa.accepts(&[s, a, d]));
        assert!(!dfa.accepts(&[a, w, d]));
        assert!(dfa.accepts(&[s, w, d, d]));
        assert_eq!(dfa.destination_symbols(), BTreeSet::from([d]));
    }

    #[test]
    fn empty_language_has_no_accepting_state() {
        let topo = topo6();
        let dfa = compile(&path_of("D and not D"), &topo);
        assert_eq!(dfa.len(), 1);
        assert!(!dfa.is_accepting(dfa.initial));
        assert!(dfa.destination_symbols().is_empty());
    }

    #[test]
    fn loop_free_matches_no_repeated_device() {
        let topo = topo6();
        let devices: Vec<DeviceId> = topo.devices().collect();
        let names: Vec<String> = devices.iter().map(|&d| topo.name(d).to_string()).collect();
        let lf = loop_free_expr(&names);
        let dfa = compile(&lf, &topo);
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..1000 {
            let len = rng.gen_range(0..8);
            let word: Vec<DeviceId> = (0..len)
                .map(|_| devices[rng.gen_range(0..devices.len())])
                .collect();
            let mut seen = BTreeSet::new();
            let simple = word.iter().all(|d| seen.insert(*d));
            assert_eq!(dfa.accepts(&word), simple, "word {word:?}");
        }
    }

    fn random_expr(rng: &mut StdRng, names: &[&str], depth: usize) -> PathExpr {
        if depth == 0 {
            return match rng.gen_range(0..3) {
                0 => PathExpr::Wildcard,
                _ => PathExpr::Dev(names[rng.gen_range(0..names.len())].to_string()),
            };
        }
        match rng.gen_range(0..6) {
            0 => PathExpr::Concat(
                (0..rng.gen_range(1..4))
                    .map(|_| random_expr(rng, names, depth - 1))
                    .collect(),
            ),
            1 => PathExpr::Alt(
                (0..rng.gen_range(1..4))
                    .map(|_| random_expr(rng, names, depth - 1))
                    .collect(),
            ),
            2 => PathExpr::Star(Box::new(random_expr(rng, names, depth - 1))),
            3 => PathExpr::Not(Box::new(random_expr(rng, names, depth - 1))),
            4 => PathExpr::And(
                (0..rng.gen_range(1..3))
                    .map(|_| random_expr(rng, names, depth - 1))
                    .collect(),
            ),
            _ => random_expr(rng, names, 0),
        }
    }

    #[test]
    fn random_expressions_agree_with_interpreter() {
        let topo = Topology::parse("node S\nnode A\nnode B\nlink S A\nlink A B\nlink S B\n").unwrap();
        let devices: Vec<DeviceId> = topo.devices().collect();
        let names = ["S", "A", "B"];
        let mut rng = StdRng::seed_from_u64(42);
        for case in 0..300 {
            let expr = random_expr(&mut rng, &names, 3);
            let dfa = compile(&expr, &topo);
            for _ in 0..40 {
                let len = rng.gen_range(0..=6);
                let word: Vec<DeviceId> = (0..len)
                    .map(|_| devices[rng.gen_range(0..devices.len())])
                    .collect();
                assert_eq!(
                    dfa.accepts(&word),
                    matches(&expr, &word, &topo, &devices),
                    "case {case}: expr {expr} word {word:?}"
                );
            }
        }
    }

    #[test]
    fn union_tracks_owner_components() {
        let topo = Topology::parse(
            "node S\nnode D\nnode E\nlink S D\nlink S E\n",
        )
        .unwrap();
        let s = topo.device("S").unwrap();
        let d = topo.device("D").unwrap();
        let e = topo.device("E").unwrap();
        let d1 = compile(&path_of("S (.)* D"), &topo);
        let d2 = compile(&path_of("S (.)* E"), &topo);
        let u = union_with_owners(&[d1, d2]);
        let q_d = {
            let q = u.step(u.initial, s).unwrap();
            u.step(q, d).unwrap()
        };
        assert_eq!(u.owners[q_d], BTreeSet::from([0]));
        let q_e = {
            let q = u.step(u.initial, s).unwrap();
            u.step(q, e).unwrap()
        };
        assert_eq!(u.owners[q_e], BTreeSet::from([1]));
    }

    #[test]
    fn compilation_is_deterministic() {
        let topo = topo6();
        let a = compile(&path_of("S (.)* W (.)* D and loop_free"), &topo);
        let b = compile(&path_of("S (.)* W (.)* D and loop_free"), &topo);
        assert_eq!(a, b);
    }
}
