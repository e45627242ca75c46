//! Canonical packet-set predicates over a fixed-width header space.
//!
//! A predicate denotes a set of packet headers. Headers are bit vectors of a
//! fixed width, 64 bits in normal use: a 32-bit source IP followed by a
//! 32-bit destination IP. Sets are stored as reduced ordered binary decision
//! diagrams in an append-only, hash-consed [`Store`], so two predicates denote
//! the same packet set if and only if their handles are equal.
//!
//! The store is single-writer: every operation takes `&mut Store`, and handles
//! are plain `Copy` values that may be shared freely within one process.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Full header width: srcIP(32) ++ dstIP(32).
pub const HEADER_WIDTH: u8 = 64;
/// Number of leading bits holding the source field.
pub const SRC_BITS: u8 = 32;

/// Handle to a canonical predicate inside a [`Store`].
///
/// Handle equality is set equality for predicates from the same store.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Predicate(u32);

/// The empty packet set.
pub const FALSE: Predicate = Predicate(0);
/// The full header space.
pub const TRUE: Predicate = Predicate(1);

impl Predicate {
    /// Stable numeric id of the canonical node, usable in serialized output.
    pub fn id(self) -> u32 {
        self.0
    }

    pub fn is_false(self) -> bool {
        self == FALSE
    }

    pub fn is_true(self) -> bool {
        self == TRUE
    }
}

/// Which header field a CIDR constraint applies to.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Field {
    Src,
    Dst,
}

/// An IPv4 prefix.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Cidr {
    pub addr: u32,
    pub len: u8,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum CidrError {
    #[error("malformed CIDR `{0}`")]
    Malformed(String),
    #[error("prefix length {0} out of range 0..=32")]
    BadLength(u8),
}

impl Cidr {
    pub fn new(addr: u32, len: u8) -> Result<Self, CidrError> {
        if len > 32 {
            return Err(CidrError::BadLength(len));
        }
        Ok(Cidr {
            addr: addr & Self::mask(len),
            len,
        })
    }

    fn mask(len: u8) -> u32 {
        if len == 0 {
            0
        } else {
            u32::MAX << (32 - len)
        }
    }

    /// Whether `ip` lies inside this prefix.
    pub fn contains(&self, ip: u32) -> bool {
        (ip & Self::mask(self.len)) == self.addr
    }
}

impl FromStr for Cidr {
    type Err = CidrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CidrError::Malformed(s.to_string());
        let (ip, len) = s.split_once('/').ok_or_else(bad)?;
        let len: u8 = len.parse().map_err(|_| bad())?;
        let mut octets = [0u32; 4];
        let mut n = 0;
        for part in ip.split('.') {
            if n == 4 {
                return Err(bad());
            }
            octets[n] = part.parse::<u8>().map_err(|_| bad())? as u32;
            n += 1;
        }
        if n != 4 {
            return Err(bad());
        }
        let addr = (octets[0] << 24) | (octets[1] << 16) | (octets[2] << 8) | octets[3];
        Cidr::new(addr, len)
    }
}

impl fmt::Display for Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = self.addr;
        write!(
            f,
            "{}.{}.{}.{}/{}",
            a >> 24,
            (a >> 16) & 0xff,
            (a >> 8) & 0xff,
            a & 0xff,
            self.len
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Node {
    var: u8,
    lo: u32,
    hi: u32,
}

/// Append-only, hash-consed store of decision-diagram nodes.
///
/// Variable `v` tests header bit `width - 1 - v`, i.e. variables run from the
/// most significant header bit down. The ordering is fixed per store, which
/// makes node counts reproducible across runs.
pub struct Store {
    width: u8,
    nodes: Vec<Node>,
    dedup: HashMap<Node, u32>,
    and_cache: HashMap<(u32, u32), u32>,
    or_cache: HashMap<(u32, u32), u32>,
    not_cache: HashMap<u32, u32>,
}

impl Store {
    /// A store over the standard 64-bit src++dst header space.
    pub fn new() -> Self {
        Self::with_width(HEADER_WIDTH)
    }

    /// A store over a reduced header space, for exhaustive-oracle tests.
    pub fn with_width(width: u8) -> Self {
        assert!(width >= 1 && width <= 64, "width out of range");
        Store {
            width,
            // Index 0 and 1 are the FALSE and TRUE terminals; `var` is a
            // sentinel one past the last real variable.
            nodes: vec![
                Node { var: width, lo: 0, hi: 0 },
                Node { var: width, lo: 1, hi: 1 },
            ],
            dedup: HashMap::new(),
            and_cache: HashMap::new(),
            or_cache: HashMap::new(),
            not_cache: HashMap::new(),
        }
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    fn mk(&mut self, var: u8, lo: u32, hi: u32) -> u32 {
        if lo == hi {
            return lo;
        }
        let node = Node { var, lo, hi };
        if let Some(&id) = self.dedup.get(&node) {
            return id;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(node);
        self.dedup.insert(node, id);
        id
    }

    /// Predicate that is true exactly when variable `var` is 1.
    pub fn var(&mut self, var: u8) -> Predicate {
        assert!(var < self.width);
        Predicate(self.mk(var, FALSE.0, TRUE.0))
    }

    /// Headers whose `field` lies in `prefix`.
    pub fn from_cidr(&mut self, field: Field, prefix: Cidr) -> Predicate {
        assert_eq!(
            self.width, HEADER_WIDTH,
            "CIDR predicates need the full src++dst header space"
        );
        let base = match field {
            Field::Src => 0,
            Field::Dst => SRC_BITS,
        };
        // Build bottom-up so each constrained bit adds one node.
        let mut acc = TRUE.0;
        for i in (0..prefix.len).rev() {
            let var = base + i;
            let bit = (prefix.addr >> (31 - i)) & 1;
            acc = if bit == 1 {
                self.mk(var, FALSE.0, acc)
            } else {
                self.mk(var, acc, FALSE.0)
            };
        }
        Predicate(acc)
    }

    /// Headers whose destination lies in any of `prefixes`.
    pub fn dst_in_prefixes(&mut self, prefixes: &[Cidr]) -> Predicate {
        let mut acc = FALSE;
        for p in prefixes {
            let q = self.from_cidr(Field::Dst, *p);
            acc = self.or(acc, q);
        }
        acc
    }

    pub fn and(&mut self, p: Predicate, q: Predicate) -> Predicate {
        Predicate(self.and_rec(p.0, q.0))
    }

    pub fn or(&mut self, p: Predicate, q: Predicate) -> Predicate {
        Predicate(self.or_rec(p.0, q.0))
    }

    pub fn not(&mut self, p: Predicate) -> Predicate {
        Predicate(self.not_rec(p.0))
    }

    /// Set difference `p \ q`.
    pub fn diff(&mut self, p: Predicate, q: Predicate) -> Predicate {
        let nq = self.not(q);
        self.and(p, nq)
    }

    pub fn is_empty(&self, p: Predicate) -> bool {
        p == FALSE
    }

    /// Canonicity makes semantic equality a handle comparison.
    pub fn equals(&self, p: Predicate, q: Predicate) -> bool {
        p == q
    }

    /// Whether `p` and `q` share any header, without materializing `p ∧ q`.
    pub fn intersects(&mut self, p: Predicate, q: Predicate) -> bool {
        !self.and(p, q).is_false()
    }

    fn and_rec(&mut self, a: u32, b: u32) -> u32 {
        if a == b {
            return a;
        }
        if a == FALSE.0 || b == FALSE.0 {
            return FALSE.0;
        }
        if a == TRUE.0 {
            return b;
        }
        if b == TRUE.0 {
            return a;
        }
        let key = (a.min(b), a.max(b));
        if let Some(&r) = self.and_cache.get(&key) {
            return r;
        }
        let (na, nb) = (self.nodes[a as usize], self.nodes[b as usize]);
        let var = na.var.min(nb.var);
        let (alo, ahi) = if na.var == var { (na.lo, na.hi) } else { (a, a) };
        let (blo, bhi) = if nb.var == var { (nb.lo, nb.hi) } else { (b, b) };
        let lo = self.and_rec(alo, blo);
        let hi = self.and_rec(ahi, bhi);
        let r = self.mk(var, lo, hi);
        self.and_cache.insert(key, r);
        r
    }

    fn or_rec(&mut self, a: u32, b: u32) -> u32 {
        if a == b {
            return a;
        }
        if a == TRUE.0 || b == TRUE.0 {
            return TRUE.0;
        }
        if a == FALSE.0 {
            return b;
        }
        if b == FALSE.0 {
            return a;
        }
        let key = (a.min(b), a.max(b));
        if let Some(&r) = self.or_cache.get(&key) {
            return r;
        }
        let (na, nb) = (self.nodes[a as usize], self.nodes[b as usize]);
        let var = na.var.min(nb.var);
        let (alo, ahi) = if na.var == var { (na.lo, na.hi) } else { (a, a) };
        let (blo, bhi) = if nb.var == var { (nb.lo, nb.hi) } else { (b, b) };
        let lo = self.or_rec(alo, blo);
        let hi = self.or_rec(ahi, bhi);
        let r = self.mk(var, lo, hi);
        self.or_cache.insert(key, r);
        r
    }

    fn not_rec(&mut self, a: u32) -> u32 {
        if a == FALSE.0 {
            return TRUE.0;
        }
        if a == TRUE.0 {
            return FALSE.0;
        }
        if let Some(&r) = self.not_cache.get(&a) {
            return r;
        }
        let n = self.nodes[a as usize];
        let lo = self.not_rec(n.lo);
        let hi = self.not_rec(n.hi);
        let r = self.mk(n.var, lo, hi);
        self.not_cache.insert(a, r);
        r
    }

    /// Whether `header` is a member of `p`. Bit `width-1-v` of `header`
    /// corresponds to variable `v`.
    pub fn eval(&self, p: Predicate, header: u64) -> bool {
        let mut cur = p.0;
        loop {
            match cur {
                0 => return false,
                1 => return true,
                _ => {
                    let n = self.nodes[cur as usize];
                    let bit = (header >> (self.width - 1 - n.var)) & 1;
                    cur = if bit == 1 { n.hi } else { n.lo };
                }
            }
        }
    }

    /// Node count of the canonical DAG rooted at `p`, internal plus terminal
    /// nodes. `size_nodes(FALSE) == 1`: the single terminal it consists of.
    pub fn size_nodes(&self, p: Predicate) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![p.0];
        while let Some(id) = stack.pop() {
            if seen.insert(id) && id > 1 {
                let n = self.nodes[id as usize];
                stack.push(n.lo);
                stack.push(n.hi);
            }
        }
        seen.len()
    }

    /// Lexicographically smallest header in `p`, or `None` if empty.
    pub fn sample_min(&self, p: Predicate) -> Option<u64> {
        if p == FALSE {
            return None;
        }
        let mut header = 0u64;
        let mut cur = p.0;
        while cur != TRUE.0 {
            let n = self.nodes[cur as usize];
            if n.lo != FALSE.0 {
                cur = n.lo;
            } else {
                header |= 1u64 << (self.width - 1 - n.var);
                cur = n.hi;
            }
        }
        Some(header)
    }

    /// Lexicographically largest header in `p`, or `None` if empty.
    pub fn sample_max(&self, p: Predicate) -> Option<u64> {
        if p == FALSE {
            return None;
        }
        let mut header = 0u64;
        let mut cur = p.0;
        let mut var = 0u8;
        while cur != TRUE.0 {
            let n = self.nodes[cur as usize];
            // Unconstrained variables above this node go to 1.
            while var < n.var {
                header |= 1u64 << (self.width - 1 - var);
                var += 1;
            }
            if n.hi != FALSE.0 {
                header |= 1u64 << (self.width - 1 - n.var);
                cur = n.hi;
            } else {
                cur = n.lo;
            }
            var = n.var + 1;
        }
        while var < self.width {
            header |= 1u64 << (self.width - 1 - var);
            var += 1;
        }
        Some(header)
    }

    /// The singleton predicate containing exactly `header`.
    pub fn header_predicate(&mut self, header: u64) -> Predicate {
        let mut acc = TRUE.0;
        for var in (0..self.width).rev() {
            let bit = (header >> (self.width - 1 - var)) & 1;
            acc = if bit == 1 {
                self.mk(var, FALSE.0, acc)
            } else {
                self.mk(var, acc, FALSE.0)
            };
        }
        Predicate(acc)
    }

    /// Existentially quantify away the source field, leaving the destination
    /// constraint of `p`.
    pub fn project_dst(&mut self, p: Predicate) -> Predicate {
        let mut memo = HashMap::new();
        Predicate(self.project_rec(p.0, SRC_BITS, &mut memo))
    }

    fn project_rec(&mut self, a: u32, below: u8, memo: &mut HashMap<u32, u32>) -> u32 {
        if a <= 1 {
            return a;
        }
        let n = self.nodes[a as usize];
        if n.var >= below {
            return a;
        }
        if let Some(&r) = memo.get(&a) {
            return r;
        }
        let lo = self.project_rec(n.lo, below, memo);
        let hi = self.project_rec(n.hi, below, memo);
        let r = self.or_rec(lo, hi);
        memo.insert(a, r);
        r
    }

    /// Decompose `p` into disjoint `(src, dst)` prefix pairs, `None` meaning
    /// the field is unconstrained. Exact: the union of the returned pairs is
    /// `p`. Used for human-readable reports.
    pub fn to_cidr_pairs(&self, p: Predicate) -> Vec<(Option<Cidr>, Option<Cidr>)> {
        assert_eq!(self.width, HEADER_WIDTH);
        let mut cubes = Vec::new();
        self.collect_cubes(p.0, 0, 0, &mut cubes);
        let mut out = Vec::new();
        for (mask, value) in cubes {
            Self::split_cube(mask, value, &mut out);
        }
        out.sort();
        out
    }

    // Cube = (mask, value): header h is in the cube iff h & mask == value.
    fn collect_cubes(&self, a: u32, mask: u64, value: u64, out: &mut Vec<(u64, u64)>) {
        match a {
            0 => {}
            1 => out.push((mask, value)),
            _ => {
                let n = self.nodes[a as usize];
                let bit = 1u64 << (self.width - 1 - n.var);
                self.collect_cubes(n.lo, mask | bit, value, out);
                self.collect_cubes(n.hi, mask | bit, value | bit, out);
            }
        }
    }

    // A cube is a CIDR pair only when the fixed bits of each field form a
    // prefix; split on the highest gap bit otherwise.
    fn split_cube(mask: u64, value: u64, out: &mut Vec<(Option<Cidr>, Option<Cidr>)>) {
        for field in 0..2u32 {
            let fmask = ((mask >> ((1 - field) * 32)) & 0xffff_ffff) as u32;
            if fmask == 0 {
                continue;
            }
            let prefix_len = fmask.leading_ones();
            let lowest_fixed = 32 - fmask.trailing_zeros();
            if prefix_len < lowest_fixed {
                // Gap: bit `prefix_len` (from MSB) is free but a lower bit is
                // fixed. Enumerate both values of the gap bit.
                let bit = 1u64 << ((1 - field) * 32 + (31 - prefix_len));
                Self::split_cube(mask | bit, value, out);
                Self::split_cube(mask | bit, value | bit, out);
                return;
            }
        }
        let to_cidr = |field: u32| {
            let fmask = ((mask >> ((1 - field) * 32)) & 0xffff_ffff) as u32;
            let fval = ((value >> ((1 - field) * 32)) & 0xffff_ffff) as u32;
            if fmask == 0 {
                None
            } else {
                Some(Cidr {
                    addr: fval,
                    len: fmask.leading_ones() as u8,
                })
            }
        };
        out.push((to_cidr(0), to_cidr(1)));
    }
}

impl Default for Store {
    fn default() -> Self {
        Store::new()
    }
}

/// Render a predicate as a `;`-separated union of `src=CIDR,dst=CIDR` terms.
pub fn render_predicate(store: &Store, p: Predicate) -> String {
    if p.is_true() {
        return "true".to_string();
    }
    if p.is_false() {
        return "false".to_string();
    }
    let pairs = store.to_cidr_pairs(p);
    let mut terms = Vec::new();
    for (src, dst) in pairs {
        let mut parts = Vec::new();
        if let Some(c) = src {
            parts.push(format!("src={c}"));
        }
        if let Some(c) = dst {
            parts.push(format!("dst={c}"));
        }
        terms.push(parts.join(","));
    }
    terms.join(";")
}
