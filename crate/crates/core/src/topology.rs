//! Network topology: interned device names and undirected links.
//!
//! Virtual devices (added when a plan rewrites destinations) carry a `^` in
//! their name, which the file formats never accept, so they cannot collide
//! with operator-defined devices.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

/// Interned device identifier, valid for one [`Topology`] (and the extended
/// topologies derived from it).
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct DeviceId(pub u32);

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("duplicate device `{0}`")]
    DuplicateDevice(String),
    #[error("invalid device name `{0}`")]
    BadName(String),
    #[error("unknown link {0} -- {1}")]
    UnknownLink(String, String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, Default)]
pub struct Topology {
    names: Vec<String>,
    index: BTreeMap<String, DeviceId>,
    neighbors: Vec<BTreeSet<DeviceId>>,
    /// Maps a virtual device to the physical device whose forwarding state it
    /// shares. Physical devices are absent from this map.
    virtual_of: BTreeMap<DeviceId, DeviceId>,
}

pub fn valid_device_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl Topology {
    pub fn new() -> Self {
        Topology::default()
    }

    pub fn add_device(&mut self, name: &str) -> Result<DeviceId, TopologyError> {
        if !valid_device_name(name) {
            return Err(TopologyError::BadName(name.to_string()));
        }
        self.intern(name.to_string())
            .ok_or_else(|| TopologyError::DuplicateDevice(name.to_string()))
    }

    fn intern(&mut self, name: String) -> Option<DeviceId> {
        if self.index.contains_key(&name) {
            return None;
        }
        let id = DeviceId(self.names.len() as u32);
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.neighbors.push(BTreeSet::new());
        Some(id)
    }

    pub fn device(&self, name: &str) -> Option<DeviceId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<DeviceId, TopologyError> {
        self.device(name)
            .ok_or_else(|| TopologyError::UnknownDevice(name.to_string()))
    }

    pub fn name(&self, id: DeviceId) -> &str {
        &self.names[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn devices(&self) -> impl Iterator<Item = DeviceId> + '_ {
        (0..self.names.len() as u32).map(DeviceId)
    }

    pub fn add_link(&mut self, a: DeviceId, b: DeviceId) {
        if a != b {
            self.neighbors[a.0 as usize].insert(b);
            self.neighbors[b.0 as usize].insert(a);
        }
    }

    pub fn has_link(&self, a: DeviceId, b: DeviceId) -> bool {
        self.neighbors[a.0 as usize].contains(&b)
    }

    pub fn neighbors(&self, id: DeviceId) -> &BTreeSet<DeviceId> {
        &self.neighbors[id.0 as usize]
    }

    /// Undirected links, each reported once with the lower id first.
    pub fn links(&self) -> Vec<(DeviceId, DeviceId)> {
        let mut out = Vec::new();
        for a in self.devices() {
            for &b in &self.neighbors[a.0 as usize] {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Physical device behind `id`: identity for real devices.
    pub fn physical(&self, id: DeviceId) -> DeviceId {
        self.virtual_of.get(&id).copied().unwrap_or(id)
    }

    pub fn is_virtual(&self, id: DeviceId) -> bool {
        self.virtual_of.contains_key(&id)
    }

    pub fn virtual_of(&self) -> &BTreeMap<DeviceId, DeviceId> {
        &self.virtual_of
    }

    /// Extend a copy of the topology with `count` virtual replicas of `base`,
    /// each adopting `base`'s neighbor set. The base device keeps its id and
    /// is additionally recorded as replica 1's physical identity; replicas
    /// are named `<base>^1..<base>^count`.
    pub fn with_virtual_replicas(&self, base: DeviceId, count: usize) -> (Topology, Vec<DeviceId>) {
        let mut topo = self.clone();
        let base_neighbors: Vec<DeviceId> = self.neighbors(base).iter().copied().collect();
        let mut replicas = Vec::with_capacity(count);
        for i in 1..=count {
            let name = format!("{}^{}", self.name(base), i);
            let id = topo
                .intern(name)
                .expect("virtual names cannot collide with parsed devices");
            topo.virtual_of.insert(id, base);
            for &n in &base_neighbors {
                topo.add_link(id, n);
            }
            replicas.push(id);
        }
        // The base itself drops out of the link set: every path must commit
        // to one replica.
        for &n in &base_neighbors {
            topo.neighbors[base.0 as usize].remove(&n);
            topo.neighbors[n.0 as usize].remove(&base);
        }
        (topo, replicas)
    }

    /// Parse the topology file format: `node <NAME>` and `link <A> <B>` lines,
    /// `#` comments.
    pub fn parse(text: &str) -> Result<Topology, TopologyError> {
        let mut topo = Topology::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let err = |msg: String| TopologyError::Parse {
                line: lineno + 1,
                msg,
            };
            match parts.next() {
                Some("node") => {
                    let name = parts.next().ok_or_else(|| err("missing node name".into()))?;
                    topo.add_device(name)?;
                }
                Some("link") => {
                    let a = parts.next().ok_or_else(|| err("missing endpoint".into()))?;
                    let b = parts.next().ok_or_else(|| err("missing endpoint".into()))?;
                    let a = topo.require(a)?;
                    let b = topo.require(b)?;
                    topo.add_link(a, b);
                }
                Some(other) => return Err(err(format!("unknown directive `{other}`"))),
                None => {}
            }
            if parts.next().is_some() {
                return Err(err("trailing tokens".into()));
            }
        }
        Ok(topo)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in self.devices() {
            out.push_str(&format!("node {}\n", self.name(d)));
        }
        for (a, b) in self.links() {
            out.push_str(&format!("link {} {}\n", self.name(a), self.name(b)));
        }
        out
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_roundtrip() {
        let text = "# example\nnode S\nnode A\nnode B\nlink S A\nlink A B # comment\n";
        let topo = Topology::parse(text).unwrap();
        assert_eq!(topo.len(), 3);
        let s = topo.device("S").unwrap();
        let a = topo.device("A").unwrap();
        let b = topo.device("B").unwrap();
        assert!(topo.has_link(s, a));
        assert!(topo.has_link(a, b));
        assert!(!topo.has_link(s, b));
        let again = Topology::parse(&topo.to_text()).unwrap();
        assert_eq!(again.to_text(), topo.to_text());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Topology::parse("node S\nnode S\n").is_err());
        assert!(Topology::parse("link A B\n").is_err());
        assert!(Topology::parse("nodes S\n").is_err());
        assert!(Topology::parse("node S^1\n").is_err());
    }

    #[test]
    fn virtual_replicas_copy_neighbors_and_detach_base() {
        let topo = Topology::parse("node S\nnode A\nnode D\nlink S A\nlink A D\n").unwrap();
        let d = topo.device("D").unwrap();
        let a = topo.device("A").unwrap();
        let (ext, reps) = topo.with_virtual_replicas(d, 2);
        assert_eq!(reps.len(), 2);
        assert_eq!(ext.name(reps[0]), "D^1");
        assert_eq!(ext.name(reps[1]), "D^2");
        for &r in &reps {
            assert!(ext.has_link(r, a));
            assert_eq!(ext.physical(r), d);
            assert!(ext.is_virtual(r));
        }
        assert!(!ext.has_link(d, a));
    }
}
