//! The requirement specification language: lexer, parser, desugarer and
//! validator, plus the fabric requirement templates.
//!
//! A requirement is a `(packet_space, ingress_set, behavior)` tuple: for every
//! packet in `packet_space` entering at any listed ingress, the packet's
//! traces in every universe must satisfy `behavior`. Behaviors combine
//! `(exist CMP N, path)` and `(equal, path)` leaves with `and`/`or`/`not`,
//! where a path is a regular expression over device names.
//!
//! Concrete syntax, one requirement per parenthesized form, `#` comments:
//!
//! ```text
//! (dstIP in 10.0.0.0/23, [S], (exist >= 1, S (.)* W (.)* D) and loop_free)
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::predicate::{Cidr, Field, Predicate, Store};
use crate::topology::{DeviceId, Topology};

// ---------------------------------------------------------------------------
// AST

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PacketSpaceExpr {
    True,
    SrcIn(Cidr),
    DstIn(Cidr),
    And(Box<PacketSpaceExpr>, Box<PacketSpaceExpr>),
    Or(Box<PacketSpaceExpr>, Box<PacketSpaceExpr>),
    Not(Box<PacketSpaceExpr>),
}

impl PacketSpaceExpr {
    pub fn to_predicate(&self, store: &mut Store) -> Predicate {
        match self {
            PacketSpaceExpr::True => crate::predicate::TRUE,
            PacketSpaceExpr::SrcIn(c) => store.from_cidr(Field::Src, *c),
            PacketSpaceExpr::DstIn(c) => store.from_cidr(Field::Dst, *c),
            PacketSpaceExpr::And(a, b) => {
                let (pa, pb) = (a.to_predicate(store), b.to_predicate(store));
                store.and(pa, pb)
            }
            PacketSpaceExpr::Or(a, b) => {
                let (pa, pb) = (a.to_predicate(store), b.to_predicate(store));
                store.or(pa, pb)
            }
            PacketSpaceExpr::Not(a) => {
                let pa = a.to_predicate(store);
                store.not(pa)
            }
        }
    }
}

/// Regular expression over device names. `LoopFree` is the surface token;
/// desugaring replaces it by the explicit no-repeated-device expression over
/// the concrete alphabet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PathExpr {
    Dev(String),
    Wildcard,
    LoopFree,
    Concat(Vec<PathExpr>),
    Alt(Vec<PathExpr>),
    And(Vec<PathExpr>),
    Star(Box<PathExpr>),
    Not(Box<PathExpr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cmp {
    Eq,
    Ge,
    Gt,
    Le,
    Lt,
}

impl Cmp {
    pub fn holds(self, value: u64, n: u64) -> bool {
        match self {
            Cmp::Eq => value == n,
            Cmp::Ge => value >= n,
            Cmp::Gt => value > n,
            Cmp::Le => value <= n,
            Cmp::Lt => value < n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MatchOp {
    Exist(Cmp, u64),
    Equal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Behavior {
    Leaf(MatchOp, PathExpr),
    /// `subset P`: traces form a non-empty subset of the matching paths.
    Subset(PathExpr),
    /// Surface `loop_free` conjunct; removed by desugaring.
    LoopFree,
    And(Vec<Behavior>),
    Or(Vec<Behavior>),
    Not(Box<Behavior>),
}

impl Behavior {
    /// Leaves in left-to-right order; their position is the regex id.
    pub fn leaves(&self) -> Vec<(&MatchOp, &PathExpr)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a MatchOp, &'a PathExpr)>) {
        match self {
            Behavior::Leaf(op, p) => out.push((op, p)),
            Behavior::And(xs) | Behavior::Or(xs) => {
                for x in xs {
                    x.collect_leaves(out);
                }
            }
            Behavior::Not(x) => x.collect_leaves(out),
            Behavior::Subset(_) | Behavior::LoopFree => {}
        }
    }

    /// Evaluate the boolean structure given per-leaf truth values, consumed
    /// in leaf order.
    pub fn eval(&self, leaf_truth: &[bool]) -> bool {
        let mut idx = 0;
        self.eval_inner(leaf_truth, &mut idx)
    }

    fn eval_inner(&self, leaf_truth: &[bool], idx: &mut usize) -> bool {
        match self {
            Behavior::Leaf(..) => {
                let v = leaf_truth[*idx];
                *idx += 1;
                v
            }
            Behavior::And(xs) => {
                let mut all = true;
                for x in xs {
                    all &= x.eval_inner(leaf_truth, idx);
                }
                all
            }
            Behavior::Or(xs) => {
                let mut any = false;
                for x in xs {
                    any |= x.eval_inner(leaf_truth, idx);
                }
                any
            }
            Behavior::Not(x) => !x.eval_inner(leaf_truth, idx),
            Behavior::Subset(_) | Behavior::LoopFree => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Requirement {
    pub packet_space: PacketSpaceExpr,
    pub ingress: Vec<String>,
    pub behavior: Behavior,
}

/// Distinct exist-leaf path expressions (the count-vector components) and
/// the component index of each exist leaf in leaf order. Leaves with
/// identical paths count the same quantity and share a component.
pub fn exist_components(behavior: &Behavior) -> (Vec<PathExpr>, Vec<usize>) {
    let mut distinct: Vec<PathExpr> = Vec::new();
    let mut leaf_map = Vec::new();
    for (op, p) in behavior.leaves() {
        if matches!(op, MatchOp::Equal) {
            continue;
        }
        let comp = match distinct.iter().position(|q| q == p) {
            Some(i) => i,
            None => {
                distinct.push(p.clone());
                distinct.len() - 1
            }
        };
        leaf_map.push(comp);
    }
    (distinct, leaf_map)
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Pipe,
    Star,
    Dot,
    Cmp(Cmp),
    Num(u64),
    CidrTok(Cidr),
    Name(String),
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum ReqError {
    #[error("line {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("destination space not covered by the external prefixes of {devices:?} (missing {missing})")]
    PrefixMismatch { devices: Vec<String>, missing: String },
    #[error("ingress set is empty")]
    EmptyIngress,
    #[error("`equal` may not appear under `not`")]
    NegatedEqual,
    #[error("`equal` may only stand alone or as a top-level conjunct")]
    MisplacedEqual,
    #[error("`loop_free` must be conjoined with a path behavior")]
    DanglingLoopFree,
    #[error("behavior has no path leaves")]
    NoLeaves,
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

fn lex(text: &str) -> Result<Vec<Spanned>, ReqError> {
    let mut toks = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        let bytes: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let col = i + 1;
            let mut push = |tok: Tok, adv: usize| {
                toks.push(Spanned {
                    tok,
                    line: lineno + 1,
                    col,
                });
                adv
            };
            i += match c {
                ' ' | '\t' | '\r' => 1,
                '(' => push(Tok::LParen, 1),
                ')' => push(Tok::RParen, 1),
                '[' => push(Tok::LBracket, 1),
                ']' => push(Tok::RBracket, 1),
                ',' => push(Tok::Comma, 1),
                '|' => push(Tok::Pipe, 1),
                '*' => push(Tok::Star, 1),
                '.' => push(Tok::Dot, 1),
                '=' if bytes.get(i + 1) == Some(&'=') => push(Tok::Cmp(Cmp::Eq), 2),
                '>' if bytes.get(i + 1) == Some(&'=') => push(Tok::Cmp(Cmp::Ge), 2),
                '<' if bytes.get(i + 1) == Some(&'=') => push(Tok::Cmp(Cmp::Le), 2),
                '>' => push(Tok::Cmp(Cmp::Gt), 1),
                '<' => push(Tok::Cmp(Cmp::Lt), 1),
                '0'..='9' => {
                    let start = i;
                    let mut j = i;
                    while j < bytes.len() && matches!(bytes[j], '0'..='9' | '.' | '/') {
                        j += 1;
                    }
                    let text: String = bytes[start..j].iter().collect();
                    let tok = if text.contains('/') {
                        let cidr = text.parse::<Cidr>().map_err(|e| ReqError::Syntax {
                            line: lineno + 1,
                            col,
                            msg: e.to_string(),
                        })?;
                        Tok::CidrTok(cidr)
                    } else if text.contains('.') {
                        return Err(ReqError::Syntax {
                            line: lineno + 1,
                            col,
                            msg: format!("`{text}` is neither a number nor a CIDR"),
                        });
                    } else {
                        Tok::Num(text.parse().unwrap())
                    };
                    push(tok, j - start)
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let start = i;
                    let mut j = i;
                    while j < bytes.len()
                        && (bytes[j].is_ascii_alphanumeric() || bytes[j] == '_' || bytes[j] == '-')
                    {
                        j += 1;
                    }
                    let name: String = bytes[start..j].iter().collect();
                    push(Tok::Name(name), j - start)
                }
                other => {
                    return Err(ReqError::Syntax {
                        line: lineno + 1,
                        col,
                        msg: format!("unexpected character `{other}`"),
                    })
                }
            };
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.toks.get(self.pos + 1).map(|s| &s.tok)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        t
    }

    fn err(&self, msg: impl Into<String>) -> ReqError {
        let (line, col) = self
            .toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1));
        ReqError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ReqError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Name(n)) if n == kw)
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn parse_reqs(&mut self) -> Result<Vec<Requirement>, ReqError> {
        let mut reqs = Vec::new();
        while self.peek().is_some() {
            reqs.push(self.parse_req()?);
        }
        Ok(reqs)
    }

    fn parse_req(&mut self) -> Result<Requirement, ReqError> {
        self.expect(Tok::LParen, "`(` opening a requirement")?;
        let packet_space = self.parse_ps_or()?;
        self.expect(Tok::Comma, "`,` after packet space")?;
        self.expect(Tok::LBracket, "`[` opening the ingress set")?;
        let mut ingress = Vec::new();
        loop {
            match self.next() {
                Some(Tok::Name(n)) => ingress.push(n),
                _ => return Err(self.err("expected device name in ingress set")),
            }
            match self.next() {
                Some(Tok::Comma) => continue,
                Some(Tok::RBracket) => break,
                _ => return Err(self.err("expected `,` or `]` in ingress set")),
            }
        }
        self.expect(Tok::Comma, "`,` after ingress set")?;
        let behavior = self.parse_b_or()?;
        self.expect(Tok::RParen, "`)` closing the requirement")?;
        Ok(Requirement {
            packet_space,
            ingress,
            behavior,
        })
    }

    // Packet space: or < and < not < atom.
    fn parse_ps_or(&mut self) -> Result<PacketSpaceExpr, ReqError> {
        let mut e = self.parse_ps_and()?;
        while self.eat_kw("or") {
            let rhs = self.parse_ps_and()?;
            e = PacketSpaceExpr::Or(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn parse_ps_and(&mut self) -> Result<PacketSpaceExpr, ReqError> {
        let mut e = self.parse_ps_not()?;
        while self.eat_kw("and") {
            let rhs = self.parse_ps_not()?;
            e = PacketSpaceExpr::And(Box::new(e), Box::new(rhs));
        }
        Ok(e)
    }

    fn parse_ps_not(&mut self) -> Result<PacketSpaceExpr, ReqError> {
        if self.eat_kw("not") {
            let e = self.parse_ps_not()?;
            return Ok(PacketSpaceExpr::Not(Box::new(e)));
        }
        if self.eat_kw("true") {
            return Ok(PacketSpaceExpr::True);
        }
        if self.is_kw("srcIP") || self.is_kw("dstIP") {
            let field = match self.next() {
                Some(Tok::Name(n)) => n,
                _ => unreachable!(),
            };
            if !self.eat_kw("in") {
                return Err(self.err("expected `in` after field name"));
            }
            let cidr = match self.next() {
                Some(Tok::CidrTok(c)) => c,
                _ => return Err(self.err("expected CIDR")),
            };
            return Ok(if field == "srcIP" {
                PacketSpaceExpr::SrcIn(cidr)
            } else {
                PacketSpaceExpr::DstIn(cidr)
            });
        }
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let e = self.parse_ps_or()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(e);
        }
        Err(self.err("expected packet-space expression"))
    }

    // Behavior: or < and < not < atom.
    fn parse_b_or(&mut self) -> Result<Behavior, ReqError> {
        let mut items = vec![self.parse_b_and()?];
        while self.eat_kw("or") {
            items.push(self.parse_b_and()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Behavior::Or(items)
        })
    }

    fn parse_b_and(&mut self) -> Result<Behavior, ReqError> {
        let mut items = vec![self.parse_b_not()?];
        while self.eat_kw("and") {
            items.push(self.parse_b_not()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            Behavior::And(items)
        })
    }

    fn parse_b_not(&mut self) -> Result<Behavior, ReqError> {
        if self.eat_kw("not") {
            let e = self.parse_b_not()?;
            return Ok(Behavior::Not(Box::new(e)));
        }
        self.parse_b_atom()
    }

    fn parse_b_atom(&mut self) -> Result<Behavior, ReqError> {
        if self.eat_kw("loop_free") {
            return Ok(Behavior::LoopFree);
        }
        if self.eat_kw("subset") {
            let p = self.parse_path()?;
            return Ok(Behavior::Subset(p));
        }
        if self.peek() == Some(&Tok::LParen) {
            // `(exist ...)` / `(equal, ...)` leaf or a parenthesized behavior.
            let leaf = matches!(self.peek2(), Some(Tok::Name(n)) if n == "exist" || n == "exists" || n == "equal");
            self.pos += 1;
            if leaf {
                let op = self.parse_match_op()?;
                self.expect(Tok::Comma, "`,` after match operator")?;
                let p = self.parse_path()?;
                self.expect(Tok::RParen, "`)` closing the behavior leaf")?;
                return Ok(Behavior::Leaf(op, p));
            }
            let b = self.parse_b_or()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(b);
        }
        Err(self.err("expected behavior"))
    }

    fn parse_match_op(&mut self) -> Result<MatchOp, ReqError> {
        if self.eat_kw("equal") {
            return Ok(MatchOp::Equal);
        }
        // Both spellings are accepted: `exist` and `exists`.
        if self.eat_kw("exist") || self.eat_kw("exists") {
            let cmp = match self.next() {
                Some(Tok::Cmp(c)) => c,
                _ => return Err(self.err("expected comparison operator")),
            };
            let n = match self.next() {
                Some(Tok::Num(n)) => n,
                _ => return Err(self.err("expected count")),
            };
            return Ok(MatchOp::Exist(cmp, n));
        }
        Err(self.err("expected `exist`, `exists` or `equal`"))
    }

    // Path: and < | < concat < postfix * < atom.
    fn parse_path(&mut self) -> Result<PathExpr, ReqError> {
        let mut items = vec![self.parse_p_alt()?];
        while self.eat_kw("and") {
            items.push(self.parse_p_alt()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            PathExpr::And(items)
        })
    }

    fn parse_p_alt(&mut self) -> Result<PathExpr, ReqError> {
        let mut items = vec![self.parse_p_cat()?];
        while self.peek() == Some(&Tok::Pipe) {
            self.pos += 1;
            items.push(self.parse_p_cat()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            PathExpr::Alt(items)
        })
    }

    fn parse_p_cat(&mut self) -> Result<PathExpr, ReqError> {
        let mut items = vec![self.parse_p_post()?];
        while self.starts_path_atom() {
            items.push(self.parse_p_post()?);
        }
        Ok(if items.len() == 1 {
            items.pop().unwrap()
        } else {
            PathExpr::Concat(items)
        })
    }

    fn starts_path_atom(&self) -> bool {
        match self.peek() {
            Some(Tok::Dot) | Some(Tok::LParen) => true,
            // `and` and `or` terminate a concatenation; `not` opens an atom.
            Some(Tok::Name(n)) => n != "and" && n != "or",
            _ => false,
        }
    }

    fn parse_p_post(&mut self) -> Result<PathExpr, ReqError> {
        let mut e = self.parse_p_atom()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            e = PathExpr::Star(Box::new(e));
        }
        Ok(e)
    }

    fn parse_p_atom(&mut self) -> Result<PathExpr, ReqError> {
        match self.peek().cloned() {
            Some(Tok::Dot) => {
                self.pos += 1;
                Ok(PathExpr::Wildcard)
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.parse_path()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Name(n)) if n == "not" => {
                self.pos += 1;
                let e = self.parse_p_atom()?;
                Ok(PathExpr::Not(Box::new(e)))
            }
            Some(Tok::Name(n)) if n == "loop_free" => {
                self.pos += 1;
                Ok(PathExpr::LoopFree)
            }
            Some(Tok::Name(n)) if n != "and" && n != "or" => {
                self.pos += 1;
                Ok(PathExpr::Dev(n))
            }
            _ => Err(self.err("expected path expression")),
        }
    }
}

/// Parse a requirement file.
pub fn parse(text: &str) -> Result<Vec<Requirement>, ReqError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    p.parse_reqs()
}

// ---------------------------------------------------------------------------
// Printing (print ∘ parse is identity on the AST)

macro_rules! paren {
    ($f:expr, $cond:expr, $inner:expr) => {{
        if $cond {
            write!($f, "(")?;
            $inner?;
            write!($f, ")")
        } else {
            $inner
        }
    }};
}

impl PacketSpaceExpr {
    fn is_atom(&self) -> bool {
        matches!(
            self,
            PacketSpaceExpr::True | PacketSpaceExpr::SrcIn(_) | PacketSpaceExpr::DstIn(_)
        )
    }
}

impl fmt::Display for PacketSpaceExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PacketSpaceExpr::True => write!(f, "true"),
            PacketSpaceExpr::SrcIn(c) => write!(f, "srcIP in {c}"),
            PacketSpaceExpr::DstIn(c) => write!(f, "dstIP in {c}"),
            PacketSpaceExpr::And(a, b) => {
                paren!(f, !a.is_atom(), write!(f, "{a}"))?;
                write!(f, " and ")?;
                paren!(f, !b.is_atom(), write!(f, "{b}"))
            }
            PacketSpaceExpr::Or(a, b) => {
                paren!(f, !a.is_atom(), write!(f, "{a}"))?;
                write!(f, " or ")?;
                paren!(f, !b.is_atom(), write!(f, "{b}"))
            }
            PacketSpaceExpr::Not(a) => {
                write!(f, "not ")?;
                paren!(f, !a.is_atom(), write!(f, "{a}"))
            }
        }
    }
}

impl PathExpr {
    fn is_atom(&self) -> bool {
        matches!(
            self,
            PathExpr::Dev(_) | PathExpr::Wildcard | PathExpr::LoopFree
        )
    }
}

impl fmt::Display for PathExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathExpr::Dev(d) => write!(f, "{d}"),
            PathExpr::Wildcard => write!(f, "."),
            PathExpr::LoopFree => write!(f, "loop_free"),
            PathExpr::Concat(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    let needs = !matches!(x, PathExpr::Dev(_) | PathExpr::Wildcard
                        | PathExpr::LoopFree | PathExpr::Star(_) | PathExpr::Not(_));
                    paren!(f, needs, write!(f, "{x}"))?;
                }
                Ok(())
            }
            PathExpr::Alt(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " | ")?;
                    }
                    let needs = matches!(x, PathExpr::Alt(_) | PathExpr::And(_));
                    paren!(f, needs, write!(f, "{x}"))?;
                }
                Ok(())
            }
            PathExpr::And(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " and ")?;
                    }
                    let needs = matches!(x, PathExpr::And(_));
                    paren!(f, needs, write!(f, "{x}"))?;
                }
                Ok(())
            }
            PathExpr::Star(x) => {
                paren!(f, !x.is_atom(), write!(f, "{x}"))?;
                write!(f, "*")
            }
            PathExpr::Not(x) => {
                write!(f, "not ")?;
                paren!(f, !x.is_atom(), write!(f, "{x}"))
            }
        }
    }
}

impl fmt::Display for Cmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Cmp::Eq => "==",
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
        };
        write!(f, "{s}")
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Behavior::Leaf(MatchOp::Exist(cmp, n), p) => write!(f, "(exist {cmp} {n}, {p})"),
            Behavior::Leaf(MatchOp::Equal, p) => write!(f, "(equal, {p})"),
            Behavior::Subset(p) => write!(f, "subset {p}"),
            Behavior::LoopFree => write!(f, "loop_free"),
            Behavior::And(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " and ")?;
                    }
                    let needs = matches!(x, Behavior::Or(_) | Behavior::And(_));
                    paren!(f, needs, write!(f, "{x}"))?;
                }
                Ok(())
            }
            Behavior::Or(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " or ")?;
                    }
                    let needs = matches!(x, Behavior::Or(_) | Behavior::And(_));
                    paren!(f, needs, write!(f, "{x}"))?;
                }
                Ok(())
            }
            Behavior::Not(x) => {
                write!(f, "not ")?;
                let needs = matches!(**x, Behavior::Or(_) | Behavior::And(_));
                paren!(f, needs, write!(f, "{x}"))
            }
        }
    }
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, [", self.packet_space)?;
        for (i, name) in self.ingress.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{name}")?;
        }
        write!(f, "], {})", self.behavior)
    }
}

// ---------------------------------------------------------------------------
// Desugaring

/// The explicit loop-free expression over `alphabet`: each device occurs at
/// most once. `no_x` is the complement of `.* X .*`.
pub fn loop_free_expr(alphabet: &[String]) -> PathExpr {
    let mut terms = Vec::new();
    for dev in alphabet {
        let contains_x = PathExpr::Concat(vec![
            PathExpr::Star(Box::new(PathExpr::Wildcard)),
            PathExpr::Dev(dev.clone()),
            PathExpr::Star(Box::new(PathExpr::Wildcard)),
        ]);
        let no_x = PathExpr::Not(Box::new(contains_x));
        let once = PathExpr::Concat(vec![no_x.clone(), PathExpr::Dev(dev.clone()), no_x.clone()]);
        terms.push(PathExpr::Alt(vec![no_x, once]));
    }
    match terms.len() {
        0 => PathExpr::Star(Box::new(PathExpr::Wildcard)),
        1 => terms.pop().unwrap(),
        _ => PathExpr::And(terms),
    }
}

fn substitute_loop_free(p: &PathExpr, lf: &PathExpr) -> PathExpr {
    match p {
        PathExpr::LoopFree => lf.clone(),
        PathExpr::Dev(_) | PathExpr::Wildcard => p.clone(),
        PathExpr::Concat(xs) => {
            PathExpr::Concat(xs.iter().map(|x| substitute_loop_free(x, lf)).collect())
        }
        PathExpr::Alt(xs) => {
            PathExpr::Alt(xs.iter().map(|x| substitute_loop_free(x, lf)).collect())
        }
        PathExpr::And(xs) => {
            PathExpr::And(xs.iter().map(|x| substitute_loop_free(x, lf)).collect())
        }
        PathExpr::Star(x) => PathExpr::Star(Box::new(substitute_loop_free(x, lf))),
        PathExpr::Not(x) => PathExpr::Not(Box::new(substitute_loop_free(x, lf))),
    }
}

fn intersect_leaves(b: Behavior, lf: &PathExpr) -> Behavior {
    match b {
        Behavior::Leaf(op, p) => {
            let already = &p == lf || matches!(&p, PathExpr::And(xs) if xs.contains(lf));
            let p = if already {
                p
            } else if let PathExpr::And(mut xs) = p {
                xs.push(lf.clone());
                PathExpr::And(xs)
            } else {
                PathExpr::And(vec![p, lf.clone()])
            };
            Behavior::Leaf(op, p)
        }
        Behavior::And(xs) => {
            Behavior::And(xs.into_iter().map(|x| intersect_leaves(x, lf)).collect())
        }
        Behavior::Or(xs) => Behavior::Or(xs.into_iter().map(|x| intersect_leaves(x, lf)).collect()),
        Behavior::Not(x) => Behavior::Not(Box::new(intersect_leaves(*x, lf))),
        other => other,
    }
}

fn desugar_behavior(b: Behavior, lf: &PathExpr) -> Result<Behavior, ReqError> {
    Ok(match b {
        Behavior::Subset(p) => {
            let p = substitute_loop_free(&p, lf);
            // subset P  ≡  (exist >= 1, P) and (exist == 0, .* and (not P)).
            let rest = PathExpr::And(vec![
                PathExpr::Star(Box::new(PathExpr::Wildcard)),
                PathExpr::Not(Box::new(p.clone())),
            ]);
            Behavior::And(vec![
                Behavior::Leaf(MatchOp::Exist(Cmp::Ge, 1), p),
                Behavior::Leaf(MatchOp::Exist(Cmp::Eq, 0), rest),
            ])
        }
        Behavior::Leaf(op, p) => Behavior::Leaf(op, substitute_loop_free(&p, lf)),
        Behavior::LoopFree => return Err(ReqError::DanglingLoopFree),
        Behavior::And(xs) => {
            let mut out = Vec::new();
            let mut saw_lf = false;
            for x in xs {
                if matches!(x, Behavior::LoopFree) {
                    saw_lf = true;
                } else {
                    out.push(desugar_behavior(x, lf)?);
                }
            }
            if out.is_empty() {
                return Err(ReqError::DanglingLoopFree);
            }
            let b = if out.len() == 1 {
                out.pop().unwrap()
            } else {
                Behavior::And(out)
            };
            if saw_lf {
                intersect_leaves(b, lf)
            } else {
                b
            }
        }
        Behavior::Or(xs) => Behavior::Or(
            xs.into_iter()
                .map(|x| desugar_behavior(x, lf))
                .collect::<Result<_, _>>()?,
        ),
        Behavior::Not(x) => Behavior::Not(Box::new(desugar_behavior(*x, lf)?)),
    })
}

/// Expand `subset` and `loop_free` sugar over the concrete device alphabet.
/// Idempotent: desugared requirements pass through unchanged.
pub fn desugar(req: &Requirement, topo: &Topology) -> Result<Requirement, ReqError> {
    let alphabet: Vec<String> = topo
        .devices()
        .filter(|d| !topo.is_virtual(*d))
        .map(|d| topo.name(d).to_string())
        .collect();
    let lf = loop_free_expr(&alphabet);
    Ok(Requirement {
        packet_space: req.packet_space.clone(),
        ingress: req.ingress.clone(),
        behavior: desugar_behavior(req.behavior.clone(), &lf)?,
    })
}

// ---------------------------------------------------------------------------
// Validation

/// External `(device, IP prefix)` announcements.
pub type PrefixMap = BTreeMap<DeviceId, Vec<Cidr>>;

/// Parse the prefix map format: `prefix <DEVICE> <CIDR>` lines, `#` comments.
pub fn parse_prefix_map(topo: &Topology, text: &str) -> Result<PrefixMap, ReqError> {
    let mut map = PrefixMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| ReqError::Line {
            line: lineno + 1,
            msg,
        };
        if toks.len() != 3 || toks[0] != "prefix" {
            return Err(err("expected `prefix <DEVICE> <CIDR>`".into()));
        }
        let dev = topo
            .device(toks[1])
            .ok_or_else(|| ReqError::UnknownDevice(toks[1].to_string()))?;
        let cidr: Cidr = toks[2]
            .parse()
            .map_err(|e: crate::predicate::CidrError| err(e.to_string()))?;
        map.entry(dev).or_default().push(cidr);
    }
    Ok(map)
}

pub fn render_prefix_map(topo: &Topology, map: &PrefixMap) -> String {
    let mut out = String::new();
    for (dev, prefixes) in map {
        for c in prefixes {
            out.push_str(&format!("prefix {} {}\n", topo.name(*dev), c));
        }
    }
    out
}

fn check_devices_exist(p: &PathExpr, topo: &Topology) -> Result<(), ReqError> {
    match p {
        PathExpr::Dev(d) => {
            if topo.device(d).is_none() {
                return Err(ReqError::UnknownDevice(d.clone()));
            }
            Ok(())
        }
        PathExpr::Wildcard | PathExpr::LoopFree => Ok(()),
        PathExpr::Concat(xs) | PathExpr::Alt(xs) | PathExpr::And(xs) => {
            xs.iter().try_for_each(|x| check_devices_exist(x, topo))
        }
        PathExpr::Star(x) | PathExpr::Not(x) => check_devices_exist(x, topo),
    }
}

fn check_equal_placement(
    b: &Behavior,
    under_not: bool,
    top_conjunct: bool,
) -> Result<(), ReqError> {
    match b {
        Behavior::Leaf(MatchOp::Equal, _) => {
            if under_not {
                Err(ReqError::NegatedEqual)
            } else if !top_conjunct {
                Err(ReqError::MisplacedEqual)
            } else {
                Ok(())
            }
        }
        Behavior::Leaf(..) | Behavior::Subset(_) | Behavior::LoopFree => Ok(()),
        Behavior::And(xs) => xs
            .iter()
            .try_for_each(|x| check_equal_placement(x, under_not, top_conjunct)),
        Behavior::Or(xs) => xs
            .iter()
            .try_for_each(|x| check_equal_placement(x, under_not, false)),
        Behavior::Not(x) => check_equal_placement(x, true, false),
    }
}

/// Validate a desugared requirement: devices exist, the ingress set is
/// non-empty, `equal` placement is sound, and for each path leaf the
/// destination devices' external prefixes cover the requirement's
/// destination space.
pub fn validate(
    req: &Requirement,
    topo: &Topology,
    prefixes: &PrefixMap,
    store: &mut Store,
) -> Result<(), ReqError> {
    if req.ingress.is_empty() {
        return Err(ReqError::EmptyIngress);
    }
    for name in &req.ingress {
        if topo.device(name).is_none() {
            return Err(ReqError::UnknownDevice(name.clone()));
        }
    }
    check_equal_placement(&req.behavior, false, true)?;
    let leaves = req.behavior.leaves();
    if leaves.is_empty() {
        return Err(ReqError::NoLeaves);
    }
    let space = req.packet_space.to_predicate(store);
    let dst_space = store.project_dst(space);
    for (_, path) in &leaves {
        check_devices_exist(path, topo)?;
        let dfa = crate::planner::dfa::compile(path, topo);
        let dests = dfa.destination_symbols();
        let mut covered = crate::predicate::FALSE;
        let mut names = Vec::new();
        for dev in &dests {
            names.push(topo.name(*dev).to_string());
            if let Some(list) = prefixes.get(dev) {
                let p = store.dst_in_prefixes(list);
                covered = store.or(covered, p);
            }
        }
        let missing = store.diff(dst_space, covered);
        if !missing.is_false() {
            return Err(ReqError::PrefixMismatch {
                devices: names,
                missing: crate::predicate::render_predicate(store, missing),
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Fabric requirement templates

/// Which deployment requirement list to render.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemplateKind {
    TorToTorShortest,
    TorToTorEcmp,
    TorToPr,
    PrToTor,
    FailureEcmp,
}

#[derive(Clone, Debug)]
pub struct TorInfo {
    pub name: String,
    pub pod: u32,
    pub prefix: Cidr,
}

#[derive(Clone, Debug)]
pub struct FabricSpec {
    pub tors: Vec<TorInfo>,
    pub prs: Vec<String>,
    /// Prefix standing for all external destinations reachable via the PRs.
    pub external: Cidr,
}

fn pattern(src: &str, dst: &str, intermediate: usize) -> PathExpr {
    let mut xs = vec![PathExpr::Dev(src.to_string())];
    xs.extend(std::iter::repeat(PathExpr::Wildcard).take(intermediate));
    xs.push(PathExpr::Dev(dst.to_string()));
    PathExpr::Concat(xs)
}

fn tor_pair_space(s: &TorInfo, d: &TorInfo) -> PacketSpaceExpr {
    PacketSpaceExpr::And(
        Box::new(PacketSpaceExpr::SrcIn(s.prefix)),
        Box::new(PacketSpaceExpr::DstIn(d.prefix)),
    )
}

/// Render the requirement list for a fabric, one of the five deployment
/// templates. ToR-to-ToR pairs use `S.D` inside a pod and `S...D` across
/// pods.
pub fn render_templates(kind: TemplateKind, fabric: &FabricSpec) -> Vec<Requirement> {
    let mut reqs = Vec::new();
    let tor_pairs = || {
        fabric
            .tors
            .iter()
            .flat_map(|s| fabric.tors.iter().map(move |d| (s, d)))
            .filter(|(s, d)| s.name != d.name)
    };
    match kind {
        TemplateKind::TorToTorShortest | TemplateKind::TorToTorEcmp => {
            for (s, d) in tor_pairs() {
                let intermediate = if s.pod == d.pod { 1 } else { 3 };
                let op = if kind == TemplateKind::TorToTorShortest {
                    MatchOp::Exist(Cmp::Ge, 1)
                } else {
                    MatchOp::Equal
                };
                reqs.push(Requirement {
                    packet_space: tor_pair_space(s, d),
                    ingress: vec![s.name.clone()],
                    behavior: Behavior::Leaf(op, pattern(&s.name, &d.name, intermediate)),
                });
            }
        }
        TemplateKind::TorToPr => {
            for s in &fabric.tors {
                let mut alts = Vec::new();
                for d in &fabric.prs {
                    alts.push(Behavior::Leaf(
                        MatchOp::Exist(Cmp::Ge, 1),
                        pattern(&s.name, d, 3),
                    ));
                }
                if alts.is_empty() {
                    continue;
                }
                let behavior = if alts.len() == 1 {
                    alts.pop().unwrap()
                } else {
                    Behavior::Or(alts)
                };
                reqs.push(Requirement {
                    packet_space: PacketSpaceExpr::And(
                        Box::new(PacketSpaceExpr::SrcIn(s.prefix)),
                        Box::new(PacketSpaceExpr::DstIn(fabric.external)),
                    ),
                    ingress: vec![s.name.clone()],
                    behavior,
                });
            }
        }
        TemplateKind::PrToTor => {
            for s in &fabric.prs {
                for d in &fabric.tors {
                    reqs.push(Requirement {
                        packet_space: PacketSpaceExpr::And(
                            Box::new(PacketSpaceExpr::SrcIn(fabric.external)),
                            Box::new(PacketSpaceExpr::DstIn(d.prefix)),
                        ),
                        ingress: vec![s.clone()],
                        behavior: Behavior::Leaf(
                            MatchOp::Exist(Cmp::Ge, 1),
                            pattern(s, &d.name, 3),
                        ),
                    });
                }
            }
        }
        TemplateKind::FailureEcmp => {
            for (s, d) in tor_pairs() {
                if s.pod == d.pod {
                    continue;
                }
                reqs.push(Requirement {
                    packet_space: tor_pair_space(s, d),
                    ingress: vec![s.name.clone()],
                    behavior: Behavior::Leaf(MatchOp::Equal, pattern(&s.name, &d.name, 1)),
                });
            }
        }
    }
    reqs
}

pub fn render_requirements(reqs: &[Requirement]) -> String {
    let mut out = String::new();
    for r in reqs {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Topology;

    fn topo6() -> Topology {
        Topology::parse(
            "node S\nnode A\nnode B\nnode C\nnode W\nnode D\n\
             link S A\nlink A B\nlink A W\nlink B W\nlink B C\nlink W C\nlink W D\nlink C D\n",
        )
        .unwrap()
    }

    #[test]
    fn parses_waypoint_requirement() {
        let text = "(dstIP in 10.0.0.0/23, [S], (exist >= 1, S (.)* W (.)* D) and loop_free)";
        let reqs = parse(text).unwrap();
        assert_eq!(reqs.len(), 1);
        let r = &reqs[0];
        assert_eq!(
            r.packet_space,
            PacketSpaceExpr::DstIn("10.0.0.0/23".parse().unwrap())
        );
        assert_eq!(r.ingress, vec!["S"]);
        match &r.behavior {
            Behavior::And(xs) => {
                assert_eq!(xs.len(), 2);
                assert!(matches!(
                    &xs[0],
                    Behavior::Leaf(MatchOp::Exist(Cmp::Ge, 1), _)
                ));
                assert!(matches!(&xs[1], Behavior::LoopFree));
            }
            other => panic!("unexpected behavior {other:?}"),
        }
    }

    #[test]
    fn parses_isolation_and_both_exist_spellings() {
        let reqs = parse("(true, [S], (exist == 0, S (.)* D))").unwrap();
        assert!(matches!(
            &reqs[0].behavior,
            Behavior::Leaf(MatchOp::Exist(Cmp::Eq, 0), _)
        ));
        let reqs2 = parse("(true, [S], (exists == 0, S (.)* D))").unwrap();
        assert_eq!(reqs[0].behavior, reqs2[0].behavior);
    }

    #[test]
    fn empty_form_is_a_syntax_error() {
        let err = parse("()").unwrap_err();
        assert!(matches!(err, ReqError::Syntax { line: 1, .. }));
    }

    #[test]
    fn print_parse_roundtrip() {
        let texts = [
            "(dstIP in 10.0.0.0/23, [S], (exist >= 1, S (.)* W (.)* D) and loop_free)",
            "(true, [S], (exist == 0, S (.)* D))",
            "(srcIP in 1.2.0.0/16 and dstIP in 10.0.0.0/24, [S,B], (exist >= 1, S . D | B (.)* D))",
            "(true, [S], ((exist >= 1, S (.)* D) and (exist == 0, S (.)* E)) or ((exist == 0, S (.)* D) and (exist == 1, S (.)* E)))",
            "(true, [S], subset S (.)* D)",
            "(true, [S], (exist == 0, (.)* and not (S (.)* D)))",
            "(not (srcIP in 9.0.0.0/8), [S], (exist < 2, S . . . D))",
        ];
        for text in texts {
            let reqs = parse(text).unwrap();
            let printed = render_requirements(&reqs);
            let reparsed = parse(&printed).unwrap();
            assert_eq!(reqs, reparsed, "round-trip failed for `{text}`");
        }
    }

    #[test]
    fn concatenated_wildcards_parse_as_hops() {
        // `S...D` written without spaces.
        let reqs = parse("(true, [S], (exists >= 1, S...D))").unwrap();
        match &reqs[0].behavior {
            Behavior::Leaf(_, PathExpr::Concat(xs)) => {
                assert_eq!(xs.len(), 5);
                assert_eq!(xs[0], PathExpr::Dev("S".into()));
                assert!(xs[1..4].iter().all(|x| *x == PathExpr::Wildcard));
                assert_eq!(xs[4], PathExpr::Dev("D".into()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn desugar_subset_expands_to_two_leaves() {
        let topo = topo6();
        let req = parse("(true, [S], subset S (.)* D)").unwrap().remove(0);
        let d = desugar(&req, &topo).unwrap();
        match &d.behavior {
            Behavior::And(xs) => {
                assert_eq!(xs.len(), 2);
                assert!(matches!(
                    &xs[0],
                    Behavior::Leaf(MatchOp::Exist(Cmp::Ge, 1), _)
                ));
                match &xs[1] {
                    Behavior::Leaf(MatchOp::Exist(Cmp::Eq, 0), PathExpr::And(parts)) => {
                        assert!(matches!(parts[0], PathExpr::Star(_)));
                        assert!(matches!(parts[1], PathExpr::Not(_)));
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn desugar_loop_free_conjunction_and_idempotence() {
        let topo = Topology::parse("node X\nnode Y\nlink X Y\n").unwrap();
        let req = parse("(true, [X], (exist >= 1, X Y) and loop_free)")
            .unwrap()
            .remove(0);
        let d1 = desugar(&req, &topo).unwrap();
        // The loop_free conjunct dissolves into the leaf's path expression as
        // one at-most-once constraint per device.
        match &d1.behavior {
            Behavior::Leaf(_, PathExpr::And(xs)) => {
                assert_eq!(xs.len(), 2); // original pattern + LF conjunction
                match &xs[1] {
                    PathExpr::And(per_dev) => assert_eq!(per_dev.len(), 2),
                    other => panic!("expected per-device conjunction, got {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
        let d2 = desugar(&d1, &topo).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn dangling_loop_free_is_rejected() {
        let topo = topo6();
        let req = parse("(true, [S], loop_free)").unwrap().remove(0);
        assert!(matches!(
            desugar(&req, &topo),
            Err(ReqError::DanglingLoopFree)
        ));
    }

    #[test]
    fn validate_coverage() {
        let topo = topo6();
        let mut store = Store::new();
        let req = parse("(dstIP in 10.0.0.0/23, [S], (exist >= 1, S (.)* W (.)* D) and loop_free)")
            .unwrap()
            .remove(0);
        let req = desugar(&req, &topo).unwrap();

        let good = parse_prefix_map(&topo, "prefix D 10.0.0.0/23\n").unwrap();
        validate(&req, &topo, &good, &mut store).unwrap();

        let narrow = parse_prefix_map(&topo, "prefix D 10.0.0.0/24\n").unwrap();
        assert!(matches!(
            validate(&req, &topo, &narrow, &mut store),
            Err(ReqError::PrefixMismatch { .. })
        ));
    }

    #[test]
    fn validate_rejects_unknown_device_and_bad_equal() {
        let topo = topo6();
        let mut store = Store::new();
        let prefixes = parse_prefix_map(&topo, "prefix D 10.0.0.0/23\n").unwrap();

        let req = parse("(dstIP in 10.0.0.0/23, [S], (exist >= 1, S (.)* Z))")
            .unwrap()
            .remove(0);
        assert!(matches!(
            validate(&req, &topo, &prefixes, &mut store),
            Err(ReqError::UnknownDevice(d)) if d == "Z"
        ));

        let req = parse("(dstIP in 10.0.0.0/23, [S], not (equal, S (.)* D))")
            .unwrap()
            .remove(0);
        assert!(matches!(
            validate(&req, &topo, &prefixes, &mut store),
            Err(ReqError::NegatedEqual)
        ));

        let req = parse("(dstIP in 10.0.0.0/23, [S], (equal, S . D) or (exist >= 1, S (.)* D))")
            .unwrap()
            .remove(0);
        assert!(matches!(
            validate(&req, &topo, &prefixes, &mut store),
            Err(ReqError::MisplacedEqual)
        ));
    }

    #[test]
    fn templates_same_pod_and_cross_pod() {
        let fabric = FabricSpec {
            tors: vec![
                TorInfo {
                    name: "t0".into(),
                    pod: 0,
                    prefix: "10.0.0.0/24".parse().unwrap(),
                },
                TorInfo {
                    name: "t1".into(),
                    pod: 0,
                    prefix: "10.0.1.0/24".parse().unwrap(),
                },
            ],
            prs: vec![],
            external: "0.0.0.0/0".parse().unwrap(),
        };
        let reqs = render_templates(TemplateKind::TorToTorShortest, &fabric);
        assert_eq!(reqs.len(), 2);
        for r in &reqs {
            match &r.behavior {
                Behavior::Leaf(MatchOp::Exist(Cmp::Ge, 1), PathExpr::Concat(xs)) => {
                    assert_eq!(xs.len(), 3); // S . D
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        let ecmp = render_templates(TemplateKind::TorToTorEcmp, &fabric);
        assert_eq!(ecmp.len(), 2);
        for (a, b) in reqs.iter().zip(&ecmp) {
            assert!(matches!(&b.behavior, Behavior::Leaf(MatchOp::Equal, _)));
            assert_eq!(a.packet_space, b.packet_space);
        }
        let empty = render_templates(
            TemplateKind::TorToTorShortest,
            &FabricSpec {
                tors: vec![],
                prs: vec![],
                external: "0.0.0.0/0".parse().unwrap(),
            },
        );
        assert!(empty.is_empty());
    }
}
