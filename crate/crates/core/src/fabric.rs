//! Fat-tree / Clos fabric generation: topology, ECMP shortest-path FIBs,
//! prefix map and the requirement-template inputs.
//!
//! Device naming: ToR `t<pod>_<i>`, aggregation `a<pod>_<i>`, core
//! `c<group>_<i>` where aggregation switch `i` of every pod uplinks to core
//! group `i`. Each ToR announces `10.<pod>.<i>.0/24`; optional peering
//! routers hang off every core and announce `128.0.0.0/1`.

use thiserror::Error;

use crate::dataplane::ActionKind;
use crate::predicate::Cidr;
use crate::reqlang::{FabricSpec, TorInfo};
use crate::topology::Topology;

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum FabricError {
    #[error("fat-tree arity must be even and at least 4, got {0}")]
    BadArity(usize),
}

/// A generated fabric, carried as file-format text so the artifacts can be
/// written out verbatim and re-parsed.
#[derive(Clone, Debug)]
pub struct Fabric {
    pub topo: Topology,
    pub topology_text: String,
    pub fibs_text: String,
    pub prefixes_text: String,
    pub spec: FabricSpec,
}

/// `k`-ary fat-tree: `k` pods of `k/2` ToR and `k/2` aggregation switches,
/// `(k/2)²` cores.
pub fn fattree(k: usize, ecmp: ActionKind, prs: usize) -> Result<Fabric, FabricError> {
    if k < 4 || k % 2 != 0 {
        return Err(FabricError::BadArity(k));
    }
    Ok(clos(k, k / 2, k / 2, ecmp, prs))
}

/// The smallest Clos exercising both the 2-hop same-pod and 4-hop cross-pod
/// patterns: two pods of two ToRs and two aggregations, one core per group.
pub fn two_pod_clos(ecmp: ActionKind, prs: usize) -> Fabric {
    clos(2, 2, 1, ecmp, prs)
}

/// General three-stage Clos: `pods` pods of `half` ToR + `half` aggregation
/// switches; aggregation `j` of every pod shares `cores_per_group` cores.
pub fn clos(
    pods: usize,
    half: usize,
    cores_per_group: usize,
    ecmp: ActionKind,
    prs: usize,
) -> Fabric {
    let kind = match ecmp {
        ActionKind::All => "ALL",
        ActionKind::Any => "ANY",
    };
    let tor = |p: usize, i: usize| format!("t{p}_{i}");
    let agg = |p: usize, i: usize| format!("a{p}_{i}");
    let core = |g: usize, i: usize| format!("c{g}_{i}");
    let pr = |i: usize| format!("pr{i}");
    let tor_prefix = |p: usize, i: usize| format!("10.{p}.{i}.0/24");
    let external = "128.0.0.0/1";

    let mut topology_text = String::new();
    for p in 0..pods {
        for i in 0..half {
            topology_text.push_str(&format!("node {}\n", tor(p, i)));
        }
        for i in 0..half {
            topology_text.push_str(&format!("node {}\n", agg(p, i)));
        }
    }
    for g in 0..half {
        for i in 0..cores_per_group {
            topology_text.push_str(&format!("node {}\n", core(g, i)));
        }
    }
    for i in 0..prs {
        topology_text.push_str(&format!("node {}\n", pr(i)));
    }
    for p in 0..pods {
        for i in 0..half {
            for j in 0..half {
                topology_text.push_str(&format!("link {} {}\n", tor(p, i), agg(p, j)));
            }
        }
        for j in 0..half {
            for x in 0..cores_per_group {
                topology_text.push_str(&format!("link {} {}\n", agg(p, j), core(j, x)));
            }
        }
    }
    for g in 0..half {
        for x in 0..cores_per_group {
            for i in 0..prs {
                topology_text.push_str(&format!("link {} {}\n", core(g, x), pr(i)));
            }
        }
    }

    let mut fibs = String::new();
    let all_aggs = |p: usize| -> String {
        (0..half).map(|j| agg(p, j)).collect::<Vec<_>>().join(",")
    };
    let all_cores_of_agg = |j: usize| -> String {
        (0..cores_per_group)
            .map(|x| core(j, x))
            .collect::<Vec<_>>()
            .join(",")
    };

    // ToR switches: one rule per remote ToR prefix, plus the external route.
    for p in 0..pods {
        for i in 0..half {
            fibs.push_str(&format!("device {}\n", tor(p, i)));
            let mut prio = 1000u32;
            for dp in 0..pods {
                for di in 0..half {
                    if dp == p && di == i {
                        continue;
                    }
                    fibs.push_str(&format!(
                        "rule {} - {} {} {}\n",
                        prio,
                        tor_prefix(dp, di),
                        kind,
                        all_aggs(p)
                    ));
                    prio -= 1;
                }
            }
            if prs > 0 {
                fibs.push_str(&format!(
                    "rule {} - {} {} {}\n",
                    prio,
                    external,
                    kind,
                    all_aggs(p)
                ));
            }
        }
    }
    // Aggregation switches: down to local ToRs, up to own cores otherwise.
    for p in 0..pods {
        for j in 0..half {
            fibs.push_str(&format!("device {}\n", agg(p, j)));
            let mut prio = 1000u32;
            for di in 0..half {
                fibs.push_str(&format!(
                    "rule {} - {} ALL {}\n",
                    prio,
                    tor_prefix(p, di),
                    tor(p, di)
                ));
                prio -= 1;
            }
            // Everything else in the fabric space goes up.
            for dp in 0..pods {
                if dp == p {
                    continue;
                }
                for di in 0..half {
                    fibs.push_str(&format!(
                        "rule {} - {} {} {}\n",
                        prio,
                        tor_prefix(dp, di),
                        kind,
                        all_cores_of_agg(j)
                    ));
                    prio -= 1;
                }
            }
            if prs > 0 {
                fibs.push_str(&format!(
                    "rule {} - {} {} {}\n",
                    prio,
                    external,
                    kind,
                    all_cores_of_agg(j)
                ));
            }
        }
    }
    // Cores: down to the destination pod's aggregation in their group.
    for g in 0..half {
        for x in 0..cores_per_group {
            fibs.push_str(&format!("device {}\n", core(g, x)));
            let mut prio = 1000u32;
            for dp in 0..pods {
                for di in 0..half {
                    fibs.push_str(&format!(
                        "rule {} - {} ALL {}\n",
                        prio,
                        tor_prefix(dp, di),
                        agg(dp, g)
                    ));
                    prio -= 1;
                }
            }
            if prs > 0 {
                let all_prs = (0..prs).map(pr).collect::<Vec<_>>().join(",");
                fibs.push_str(&format!("rule {} - {} {} {}\n", prio, external, kind, all_prs));
            }
        }
    }
    // Peering routers: down into the fabric via any core.
    if prs > 0 {
        let all_cores: Vec<String> = (0..half)
            .flat_map(|g| (0..cores_per_group).map(move |x| core(g, x)))
            .collect();
        for i in 0..prs {
            fibs.push_str(&format!("device {}\n", pr(i)));
            let mut prio = 1000u32;
            for dp in 0..pods {
                for di in 0..half {
                    fibs.push_str(&format!(
                        "rule {} - {} {} {}\n",
                        prio,
                        tor_prefix(dp, di),
                        kind,
                        all_cores.join(",")
                    ));
                    prio -= 1;
                }
            }
        }
    }

    let mut prefixes_text = String::new();
    let mut tors = Vec::new();
    for p in 0..pods {
        for i in 0..half {
            prefixes_text.push_str(&format!("prefix {} {}\n", tor(p, i), tor_prefix(p, i)));
            tors.push(TorInfo {
                name: tor(p, i),
                pod: p as u32,
                prefix: tor_prefix(p, i).parse().unwrap(),
            });
        }
    }
    for i in 0..prs {
        prefixes_text.push_str(&format!("prefix {} {}\n", pr(i), external));
    }

    let topo = Topology::parse(&topology_text).expect("generated topology parses");
    Fabric {
        topo,
        topology_text,
        fibs_text: fibs,
        prefixes_text,
        spec: FabricSpec {
            tors,
            prs: (0..prs).map(pr).collect(),
            external: external.parse::<Cidr>().unwrap(),
        },
    }
}
