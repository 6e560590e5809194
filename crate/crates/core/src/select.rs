//! Constraint-based pruning and axis discovery.
//!
//! A [`Constraint`] maps dimensions to predicates. Selection walks the tree
//! top-down, intersecting each node's values with its dimension's predicate
//! and dropping a subtree as soon as nothing survives, so constraints on
//! dimensions near the root cut off whole branches without visiting them.
//!
//! Text form (shared with the CLI): comma-separated clauses `dim=v1/v2`
//! (value set), `dim=lo..hi` (inclusive range) or `dim=*` (any). Values
//! are typed by sniffing unless suffixed `~s`, `~i`, `~d` or `~t`; reserved
//! characters are written `%XX`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use crate::compress::merge_siblings;
use crate::error::{QubeError, Result};
use crate::node::QubeNode;
use crate::qube::Qube;
use crate::serialize::{parse_value, render_value_with};
use crate::value::{escape, unescape, CoordinateValue, DimensionName};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Predicate {
    ValueSet(BTreeSet<CoordinateValue>),
    /// Inclusive bounds of the same kind.
    Range {
        lo: CoordinateValue,
        hi: CoordinateValue,
    },
    Any,
}

impl Predicate {
    pub fn values<I: IntoIterator<Item = CoordinateValue>>(vals: I) -> Self {
        Predicate::ValueSet(vals.into_iter().collect())
    }

    pub fn range(lo: CoordinateValue, hi: CoordinateValue) -> Result<Self> {
        if lo.kind() != hi.kind() {
            return Err(QubeError::InvalidPredicate {
                dim: String::new(),
                reason: format!("range bounds {lo} and {hi} have different types"),
            });
        }
        if lo > hi {
            return Err(QubeError::InvalidPredicate {
                dim: String::new(),
                reason: format!("range lower bound {lo} exceeds upper bound {hi}"),
            });
        }
        Ok(Predicate::Range { lo, hi })
    }

    pub fn is_any(&self) -> bool {
        matches!(self, Predicate::Any)
    }

    pub fn matches(&self, v: &CoordinateValue) -> bool {
        match self {
            Predicate::ValueSet(s) => s.contains(v),
            Predicate::Range { lo, hi } => lo <= v && v <= hi,
            Predicate::Any => true,
        }
    }

    /// Values of `values` accepted by the predicate.
    fn filter(
        &self,
        dim: &DimensionName,
        values: &[CoordinateValue],
    ) -> Result<Vec<CoordinateValue>> {
        if let Predicate::Range { lo, .. } = self {
            if let Some(bad) = values.iter().find(|v| v.kind() != lo.kind()) {
                return Err(QubeError::MixedTagRange {
                    dim: dim.to_string(),
                    value: bad.to_string(),
                });
            }
        }
        Ok(values.iter().filter(|v| self.matches(v)).cloned().collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Paths that never meet a constrained dimension are kept.
    #[default]
    KeepBranch,
    /// Paths must pass through every constrained dimension.
    DropBranch,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Constraint {
    by_dim: BTreeMap<DimensionName, Predicate>,
    missing: MissingPolicy,
}

impl Constraint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, dim: DimensionName, pred: Predicate) -> Self {
        self.by_dim.insert(dim, pred);
        self
    }

    pub fn with_policy(mut self, missing: MissingPolicy) -> Self {
        self.missing = missing;
        self
    }

    pub fn policy(&self) -> MissingPolicy {
        self.missing
    }

    pub fn get(&self, dim: &DimensionName) -> Option<&Predicate> {
        self.by_dim.get(dim)
    }

    pub fn predicates(&self) -> impl Iterator<Item = (&DimensionName, &Predicate)> {
        self.by_dim.iter()
    }

    /// Conjunction of two constraints over disjoint dimensions. Where both
    /// constrain a dimension, `other` wins.
    pub fn and(&self, other: &Constraint) -> Constraint {
        let mut by_dim = self.by_dim.clone();
        by_dim.extend(other.by_dim.iter().map(|(d, p)| (d.clone(), p.clone())));
        Constraint {
            by_dim,
            missing: self.missing,
        }
    }

    /// Whether a full tuple satisfies the constraint.
    pub fn accepts(&self, tuple: &[(DimensionName, CoordinateValue)]) -> bool {
        self.by_dim
            .iter()
            .filter(|(_, p)| !p.is_any())
            .all(|(d, p)| match tuple.iter().find(|(td, _)| td == d) {
                Some((_, v)) => p.matches(v),
                None => self.missing == MissingPolicy::KeepBranch,
            })
    }

    fn constrained(&self) -> usize {
        self.by_dim.values().filter(|p| !p.is_any()).count()
    }

    /// Parses the clause syntax described in the module docs. Tokens are
    /// typed like record values.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Constraint::new();
        let mut col = 1;
        for clause in text.split(',') {
            let here = col;
            col += clause.chars().count() + 1;
            let clause = clause.trim();
            if clause.is_empty() {
                continue;
            }
            let (dim, rhs) = clause.split_once('=').ok_or_else(|| {
                QubeError::syntax(1, here, format!("expected `dim=...` in {clause:?}"))
            })?;
            let dim = DimensionName::new(
                &unescape(dim).map_err(|_| QubeError::syntax(1, here, "bad escape"))?,
            )?;
            if c.by_dim.contains_key(&dim) {
                return Err(QubeError::DuplicateDimension {
                    dim: dim.to_string(),
                    line: Some(1),
                });
            }
            let token = |s: &str| -> Result<CoordinateValue> {
                if s.is_empty() {
                    return Err(QubeError::syntax(1, here, format!("empty value for {dim}")));
                }
                parse_value(s, 1, here)
            };
            let pred = if rhs == "*" {
                Predicate::Any
            } else if let Some((lo, hi)) = rhs.split_once("..") {
                Predicate::range(token(lo)?, token(hi)?).map_err(|e| match e {
                    QubeError::InvalidPredicate { reason, .. } => QubeError::InvalidPredicate {
                        dim: dim.to_string(),
                        reason,
                    },
                    other => other,
                })?
            } else {
                Predicate::values(rhs.split('/').map(token).collect::<Result<Vec<_>>>()?)
            };
            c.by_dim.insert(dim, pred);
        }
        Ok(c)
    }
}

const CONSTRAINT_EXTRA: &[char] = &['~', ' ', '.', '*'];

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tok = |v: &CoordinateValue| render_value_with(v, CONSTRAINT_EXTRA);
        let clauses: Vec<String> = self
            .by_dim
            .iter()
            .map(|(d, p)| {
                let rhs = match p {
                    Predicate::Any => "*".to_string(),
                    Predicate::Range { lo, hi } => format!("{}..{}", tok(lo), tok(hi)),
                    Predicate::ValueSet(s) => s.iter().map(tok).collect::<Vec<_>>().join("/"),
                };
                format!("{}={rhs}", escape(d.as_str(), &[]))
            })
            .collect();
        f.write_str(&clauses.join(","))
    }
}

/// Counters gathered during one selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SelectStats {
    pub nodes_visited: u64,
}

pub fn select(q: &Qube, c: &Constraint) -> Result<Qube> {
    select_with_stats(q, c).map(|(q, _)| q)
}

/// As [`select`], also reporting how many nodes were inspected.
pub fn select_with_stats(q: &Qube, c: &Constraint) -> Result<(Qube, SelectStats)> {
    let q = q.compress();
    let mut walk = Walk {
        c,
        wanted: c.constrained(),
        stats: SelectStats::default(),
    };
    let children = walk.children(q.children(), 0)?;
    Ok((Qube::from_canonical_children(children, true), walk.stats))
}

struct Walk<'a> {
    c: &'a Constraint,
    wanted: usize,
    stats: SelectStats,
}

impl Walk<'_> {
    fn children(&mut self, nodes: &[Arc<QubeNode>], seen: usize) -> Result<Vec<Arc<QubeNode>>> {
        let mut out = Vec::with_capacity(nodes.len());
        let mut changed = false;
        for n in nodes {
            let kept = self.node(n, seen)?;
            changed |= !kept.as_ref().is_some_and(|k| Arc::ptr_eq(k, n));
            out.extend(kept);
        }
        Ok(if changed { merge_siblings(out) } else { out })
    }

    fn node(&mut self, n: &Arc<QubeNode>, seen: usize) -> Result<Option<Arc<QubeNode>>> {
        self.stats.nodes_visited += 1;
        let (values, seen) = match self.c.get(n.dim()) {
            Some(p) if !p.is_any() => (p.filter(n.dim(), n.values())?, seen + 1),
            _ => (n.values().to_vec(), seen),
        };
        if values.is_empty() {
            return Ok(None);
        }
        if n.is_leaf() {
            let complete = seen == self.wanted || self.c.missing == MissingPolicy::KeepBranch;
            return Ok(complete.then(|| n.with_values(values)));
        }
        let kids = self.children(n.children(), seen)?;
        if kids.is_empty() {
            return Ok(None);
        }
        let same = kids.len() == n.children().len()
            && kids
                .iter()
                .zip(n.children())
                .all(|(a, b)| Arc::ptr_eq(a, b));
        Ok(Some(if same {
            n.with_values(values)
        } else {
            QubeNode::from_canonical(n.dim().clone(), values, n.payload().cloned(), kids)
        }))
    }
}

/// Every dimension in the tree with the union of its values.
pub fn axes(q: &Qube) -> BTreeMap<DimensionName, BTreeSet<CoordinateValue>> {
    fn walk(n: &QubeNode, out: &mut BTreeMap<DimensionName, BTreeSet<CoordinateValue>>) {
        out.entry(n.dim().clone())
            .or_default()
            .extend(n.values().iter().cloned());
        for c in n.children() {
            walk(c, out);
        }
    }
    let mut out = BTreeMap::new();
    for c in q.children() {
        walk(c, &mut out);
    }
    out
}

impl Qube {
    pub fn select(&self, c: &Constraint) -> Result<Qube> {
        select(self, c)
    }

    pub fn axes(&self) -> BTreeMap<DimensionName, BTreeSet<CoordinateValue>> {
        axes(self)
    }
}
