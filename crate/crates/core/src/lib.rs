//! Distributed data plane verification toolkit.
//!
//! The pipeline: operators write path-pattern requirements in a small
//! declarative language ([`reqlang`]); the [`planner`] compiles a requirement
//! and a topology into a DVNet, a DAG of (device, automaton-state) nodes that
//! compactly represents every requirement-valid path, and decomposes it into
//! per-device counting tasks; the [`dvproto`] verifiers execute those tasks by
//! exchanging counting results in a distance-vector style, hosted inside the
//! deterministic event simulator [`simnet`]; and the [`oracle`] checks any
//! result against brute-force universe enumeration on the concrete data plane.

pub mod countalg;
pub mod dataplane;
pub mod dvproto;
pub mod fabric;
pub mod fixtures;
pub mod oracle;
pub mod planner;
pub mod predicate;
pub mod reqlang;
pub mod simnet;
pub mod topology;
