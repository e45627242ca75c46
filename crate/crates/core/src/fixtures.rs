//! Built-in example networks, written in the external file formats so they
//! exercise the parsers, plus a seeded random-instance generator for
//! equivalence testing.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::dataplane::{parse_fibs, DeviceFib, Fib};
use crate::predicate::Store;
use crate::reqlang::{self, PrefixMap, Requirement};
use crate::topology::{DeviceId, Topology};

/// One self-contained example in file-format text.
#[derive(Clone, Copy, Debug)]
pub struct FixtureTexts {
    pub name: &'static str,
    pub topology: &'static str,
    pub fibs: &'static str,
    pub prefixes: &'static str,
    pub requirements: &'static str,
    pub events: &'static str,
}

/// A fixture parsed into working form.
pub struct Loaded {
    pub topo: Topology,
    pub fibs: BTreeMap<DeviceId, DeviceFib>,
    pub prefixes: PrefixMap,
    pub requirements: Vec<Requirement>,
}

pub fn load(store: &mut Store, texts: &FixtureTexts) -> Loaded {
    let topo = Topology::parse(texts.topology).expect("fixture topology");
    let raw = parse_fibs(store, &topo, texts.fibs).expect("fixture fibs");
    let fibs = complete_fibs(store, &topo, raw);
    let prefixes = reqlang::parse_prefix_map(&topo, texts.prefixes).expect("fixture prefixes");
    let requirements = reqlang::parse(texts.requirements).expect("fixture requirements");
    Loaded {
        topo,
        fibs,
        prefixes,
        requirements,
    }
}

/// Give every topology device a live forwarding state, empty (drop-all) when
/// the FIB file has no section for it.
pub fn complete_fibs(
    store: &mut Store,
    topo: &Topology,
    mut raw: BTreeMap<DeviceId, Fib>,
) -> BTreeMap<DeviceId, DeviceFib> {
    topo.devices()
        .map(|d| {
            let fib = raw.remove(&d).unwrap_or_default();
            (d, DeviceFib::new(store, d, fib))
        })
        .collect()
}

/// Waypoint workflow example: packets to 10.0.0.0/23 from S must reach D via
/// a simple path through W. The initial data plane is erroneous (A may send
/// the 10.0.0.0/24 half to B, which forwards toward C, bypassing W); the
/// scripted update at B repairs it.
pub fn waypoint_workflow() -> FixtureTexts {
    FixtureTexts {
        name: "waypoint-workflow",
        topology: "\
node S
node A
node B
node C
node W
node D
link S A
link A B
link A W
link B W
link B C
link W C
link W D
link C D
",
        fibs: "\
device S
rule 10 - 10.0.0.0/23 ALL A
device A
rule 10 - 10.0.0.0/24 ANY B,W
rule 9 - 10.0.1.0/24 ALL W
device B
rule 10 - 10.0.0.0/23 ALL C
device W
rule 10 - 10.0.0.0/23 ALL C
device C
rule 10 - 10.0.0.0/23 ALL D
",
        prefixes: "prefix D 10.0.0.0/23\n",
        requirements: "(dstIP in 10.0.0.0/23, [S], (exist >= 1, S (.)* W (.)* D) and loop_free)\n",
        events: "at 1000 update B rule 10 - 10.0.0.0/23 ALL W\n",
    }
}

/// One packet, one universe of two traces: A forwards to both B and C.
pub fn all_fanout_universe() -> FixtureTexts {
    FixtureTexts {
        name: "all-fanout",
        topology: "node S\nnode A\nnode B\nnode C\nnode D\nlink S A\nlink A B\nlink A C\nlink B D\n",
        fibs: "\
device S
rule 1 - 10.0.0.0/24 ALL A
device A
rule 1 - 10.0.0.0/24 ALL B,C
device B
rule 1 - 10.0.0.0/24 ALL D
",
        prefixes: "prefix D 10.0.0.0/24\n",
        requirements: "(dstIP in 10.0.0.0/24, [S], (exist >= 1, S (.)* D and loop_free))\n",
        events: "",
    }
}

/// Same network with B choosing one of C and D: two universes of two traces.
pub fn any_choice_universe() -> FixtureTexts {
    FixtureTexts {
        name: "any-choice",
        topology: "\
node S\nnode A\nnode B\nnode C\nnode D\nlink S A\nlink A B\nlink A C\nlink B C\nlink B D\n",
        fibs: "\
device S
rule 1 - 10.0.0.0/24 ALL A
device A
rule 1 - 10.0.0.0/24 ALL B,C
device B
rule 1 - 10.0.0.0/24 ANY C,D
",
        prefixes: "prefix D 10.0.0.0/24\n",
        requirements: "(dstIP in 10.0.0.0/24, [S], (exist >= 1, S (.)* D and loop_free))\n",
        events: "",
    }
}

/// Anycast: S sends each packet to exactly one of D and E, both announcing
/// the anycast prefix. Satisfied; the naive per-expression cross-product
/// reports a phantom violation.
pub fn anycast() -> FixtureTexts {
    FixtureTexts {
        name: "anycast",
        topology: "node S\nnode D\nnode E\nlink S D\nlink S E\n",
        fibs: "\
device S
rule 1 - 10.9.0.0/24 ANY D,E
",
        prefixes: "prefix D 10.9.0.0/24\nprefix E 10.9.0.0/24\n",
        requirements: "\
(dstIP in 10.9.0.0/24, [S], ((exist >= 1, S (.)* D) and (exist == 0, S (.)* E)) \
or ((exist == 0, S (.)* D) and (exist == 1, S (.)* E)))\n",
        events: "",
    }
}

/// Two path expressions sharing destination D: at least two copies along
/// simple paths, or at least one along a simple path through W. Satisfied
/// (universe via A delivers two copies; universe via B delivers one through
/// W); the naive cross-product finds a phantom violation.
pub fn shared_destination() -> FixtureTexts {
    FixtureTexts {
        name: "shared-destination",
        topology: "\
node S\nnode A\nnode B\nnode C\nnode W\nnode D
link S A
link S B
link A C
link A D
link C D
link B W
link W D
",
        fibs: "\
device S
rule 1 - 10.1.0.0/24 ANY A,B
device A
rule 1 - 10.1.0.0/24 ALL C,D
device C
rule 1 - 10.1.0.0/24 ALL D
device B
rule 1 - 10.1.0.0/24 ALL W
device W
rule 1 - 10.1.0.0/24 ALL D
",
        prefixes: "prefix D 10.1.0.0/24\n",
        requirements: "\
(dstIP in 10.1.0.0/24, [S], (exist >= 2, S (.)* D and loop_free) \
or (exist >= 1, S (.)* W (.)* D and loop_free))\n",
        events: "",
    }
}

pub fn all_fixtures() -> Vec<FixtureTexts> {
    vec![
        waypoint_workflow(),
        all_fanout_universe(),
        any_choice_universe(),
        anycast(),
        shared_destination(),
    ]
}

// ---------------------------------------------------------------------------
// Random instances

/// A randomized small verification instance: connected topology, random
/// forwarding state over sub-prefixes of one /24, and a random anchored
/// loop-free path requirement whose destinations announce the space.
pub struct RandomInstance {
    pub topo: Topology,
    pub fibs: BTreeMap<DeviceId, DeviceFib>,
    pub prefixes: PrefixMap,
    pub requirement: Requirement,
}

pub struct InstanceConfig {
    pub max_devices: usize,
    pub max_any_width: usize,
    pub regex_depth: usize,
    /// Force a single `exist` leaf with this comparator (minimal-information
    /// experiments); `None` allows small random behaviors.
    pub force_cmp: Option<crate::reqlang::Cmp>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig {
            max_devices: 8,
            max_any_width: 3,
            regex_depth: 4,
            force_cmp: None,
        }
    }
}

/// Generate an instance from a seed. Regeneration with different sub-seeds
/// continues until the requirement validates and plans (patterns that are
/// cyclic or deliver mid-path are re-rolled).
pub fn random_instance(store: &mut Store, seed: u64, cfg: &InstanceConfig) -> RandomInstance {
    let mut attempt = 0u64;
    loop {
        let mut rng = StdRng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(attempt));
        if let Some(inst) = try_instance(store, &mut rng, cfg) {
            return inst;
        }
        attempt += 1;
    }
}

fn try_instance(store: &mut Store, rng: &mut StdRng, cfg: &InstanceConfig) -> Option<RandomInstance> {
    let n = rng.gen_range(3..=cfg.max_devices);
    let mut topo = Topology::new();
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    for name in &names {
        topo.add_device(name).unwrap();
    }
    let devs: Vec<DeviceId> = topo.devices().collect();
    // Random connected graph: a random spanning tree plus extra links.
    for i in 1..n {
        let j = rng.gen_range(0..i);
        topo.add_link(devs[i], devs[j]);
    }
    for _ in 0..rng.gen_range(0..=n) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            topo.add_link(devs[a], devs[b]);
        }
    }

    // Random path expression anchored at the ingress.
    let ingress = devs[rng.gen_range(0..n)];
    let body = random_path(rng, &names, cfg.regex_depth);
    let path = crate::reqlang::PathExpr::And(vec![
        crate::reqlang::PathExpr::Concat(vec![
            crate::reqlang::PathExpr::Dev(topo.name(ingress).to_string()),
            body,
        ]),
        crate::reqlang::PathExpr::LoopFree,
    ]);

    let behavior = match cfg.force_cmp {
        Some(cmp) => crate::reqlang::Behavior::Leaf(
            crate::reqlang::MatchOp::Exist(cmp, rng.gen_range(0..=2)),
            path,
        ),
        None => crate::reqlang::Behavior::Leaf(
            crate::reqlang::MatchOp::Exist(
                match rng.gen_range(0..5) {
                    0 => crate::reqlang::Cmp::Eq,
                    1 => crate::reqlang::Cmp::Ge,
                    2 => crate::reqlang::Cmp::Gt,
                    3 => crate::reqlang::Cmp::Le,
                    _ => crate::reqlang::Cmp::Lt,
                },
                rng.gen_range(0..=2),
            ),
            path,
        ),
    };
    let requirement = Requirement {
        packet_space: crate::reqlang::PacketSpaceExpr::DstIn("10.0.0.0/24".parse().unwrap()),
        ingress: vec![topo.name(ingress).to_string()],
        behavior,
    };
    let requirement = reqlang::desugar(&requirement, &topo).ok()?;

    // Destinations of the pattern announce the space; everyone else nothing.
    let dfa = crate::planner::dfa::compile(&requirement.behavior.leaves()[0].1, &topo);
    let dests = dfa.destination_symbols();
    if dests.is_empty() || dests.contains(&ingress) {
        return None;
    }
    let mut prefixes = PrefixMap::new();
    for &d in &dests {
        prefixes.insert(d, vec!["10.0.0.0/24".parse().unwrap()]);
    }

    reqlang::validate(&requirement, &topo, &prefixes, store).ok()?;
    // Plan once to filter out cyclic or mid-path-delivery patterns.
    crate::planner::plan(
        store,
        &topo,
        &prefixes,
        &requirement,
        crate::planner::PlanOptions::default(),
    )
    .ok()?;

    // Random forwarding state over sub-prefixes of the /24: a few rules per
    // device, ALL or narrow ANY groups over neighbors.
    let mut fibs: BTreeMap<DeviceId, Fib> = BTreeMap::new();
    for &d in &devs {
        if dests.contains(&d) {
            continue; // destinations deliver; their FIB is irrelevant
        }
        let neighbors: Vec<DeviceId> = topo.neighbors(d).iter().copied().collect();
        let mut fib = Fib::new();
        for prio in 0..rng.gen_range(1..=3u32) {
            let dst = match rng.gen_range(0..3) {
                0 => "10.0.0.0/24",
                1 => "10.0.0.0/25",
                _ => "10.0.0.128/25",
            };
            let width = rng.gen_range(0..=cfg.max_any_width.min(neighbors.len()));
            let mut hops = neighbors.clone();
            // Deterministic partial shuffle.
            for i in 0..hops.len() {
                let j = rng.gen_range(0..hops.len());
                hops.swap(i, j);
            }
            hops.truncate(width);
            let kind = if rng.gen_bool(0.5) { "ALL" } else { "ANY" };
            let hops_txt = if hops.is_empty() {
                "-".to_string()
            } else {
                hops.iter()
                    .map(|&h| topo.name(h).to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let toks = format!("{prio} - {dst} {kind} {hops_txt}");
            let toks: Vec<&str> = toks.split_whitespace().collect();
            let rule =
                crate::dataplane::parse_rule_directive(store, &topo, d, &toks).ok()?;
            fib.insert(rule, topo.name(d)).ok()?;
        }
        fibs.insert(d, fib);
    }
    let fibs = complete_fibs(store, &topo, fibs);
    Some(RandomInstance {
        topo,
        fibs,
        prefixes,
        requirement,
    })
}

fn random_path(rng: &mut StdRng, names: &[String], depth: usize) -> crate::reqlang::PathExpr {
    use crate::reqlang::PathExpr;
    if depth == 0 {
        return match rng.gen_range(0..4) {
            0..=1 => PathExpr::Wildcard,
            _ => PathExpr::Dev(names[rng.gen_range(0..names.len())].clone()),
        };
    }
    match rng.gen_range(0..7) {
        0 | 1 => PathExpr::Concat(
            (0..rng.gen_range(1..4))
                .map(|_| random_path(rng, names, depth - 1))
                .collect(),
        ),
        2 | 3 => PathExpr::Alt(
            (0..rng.gen_range(2..4))
                .map(|_| random_path(rng, names, depth - 1))
                .collect(),
        ),
        4 => PathExpr::Star(Box::new(random_path(rng, names, depth - 1))),
        _ => random_path(rng, names, 0),
    }
}
