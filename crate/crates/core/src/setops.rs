//! Union, intersection and difference over leaf sets.
//!
//! Both inputs are taken in compressed form. At every level the children
//! are grouped by dimension; for a dimension present on both sides the
//! value sets are partitioned with a sorted merge into only-left,
//! only-right and shared pieces, and only shared pieces recurse. Untouched
//! subtrees are reused as-is, so the work is bounded by the compressed
//! sizes of the inputs rather than their leaf counts.
//!
//! Paths are identified by their dimension order: branches that order the
//! same dimensions differently are never reconciled.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::compress::merge_siblings;
use crate::error::{QubeError, Result};
use crate::node::QubeNode;
use crate::qube::Qube;
use crate::value::{CoordinateValue, DimensionName};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Op {
    Union,
    Intersect,
    Difference,
}

pub fn union(a: &Qube, b: &Qube) -> Result<Qube> {
    apply(a, b, Op::Union)
}

pub fn intersect(a: &Qube, b: &Qube) -> Qube {
    apply(a, b, Op::Intersect).expect("intersection never fails")
}

pub fn difference(a: &Qube, b: &Qube) -> Qube {
    apply(a, b, Op::Difference).expect("difference never fails")
}

impl Qube {
    pub fn union(&self, other: &Qube) -> Result<Qube> {
        union(self, other)
    }

    pub fn intersect(&self, other: &Qube) -> Qube {
        intersect(self, other)
    }

    pub fn difference(&self, other: &Qube) -> Qube {
        difference(self, other)
    }
}

fn compressed(q: &Qube) -> Cow<'_, Qube> {
    if q.is_compressed() {
        Cow::Borrowed(q)
    } else {
        Cow::Owned(q.compress())
    }
}

fn apply(a: &Qube, b: &Qube, op: Op) -> Result<Qube> {
    let (a, b) = (compressed(a), compressed(b));
    let mut path = Vec::new();
    let children = combine(a.children(), b.children(), op, &mut path)?;
    Ok(Qube::from_canonical_children(children, true))
}

type Path = Vec<(DimensionName, CoordinateValue)>;

fn path_string(path: &Path) -> String {
    if path.is_empty() {
        return "root".into();
    }
    path.iter()
        .map(|(d, v)| format!("{d}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Contiguous runs of same-dimension children (children are sorted by dim).
fn by_dim(children: &[Arc<QubeNode>]) -> BTreeMap<&DimensionName, &[Arc<QubeNode>]> {
    let mut out = BTreeMap::new();
    let mut start = 0;
    for i in 1..=children.len() {
        if i == children.len() || children[i].dim() != children[start].dim() {
            out.insert(children[start].dim(), &children[start..i]);
            start = i;
        }
    }
    out
}

/// Sorted `(value, owning sibling)` list over a same-dimension run.
fn flatten(run: &[Arc<QubeNode>]) -> Vec<(&CoordinateValue, usize)> {
    let mut v: Vec<_> = run
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.values().iter().map(move |x| (x, i)))
        .collect();
    v.sort_unstable();
    v
}

/// Values of one dimension grouped by which sibling on each side holds
/// them. Value lists come out ascending.
fn partition(
    a: &[Arc<QubeNode>],
    b: &[Arc<QubeNode>],
) -> BTreeMap<(Option<usize>, Option<usize>), Vec<CoordinateValue>> {
    let (fa, fb) = (flatten(a), flatten(b));
    let mut pieces: BTreeMap<_, Vec<CoordinateValue>> = BTreeMap::new();
    let (mut i, mut j) = (0, 0);
    while i < fa.len() || j < fb.len() {
        let ord = match (fa.get(i), fb.get(j)) {
            (Some(x), Some(y)) => x.0.cmp(y.0),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        let (key, value) = match ord {
            std::cmp::Ordering::Less => {
                i += 1;
                ((Some(fa[i - 1].1), None), fa[i - 1].0)
            }
            std::cmp::Ordering::Greater => {
                j += 1;
                ((None, Some(fb[j - 1].1)), fb[j - 1].0)
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
                ((Some(fa[i - 1].1), Some(fb[j - 1].1)), fa[i - 1].0)
            }
        };
        pieces.entry(key).or_default().push(value.clone());
    }
    pieces
}

fn combine(
    a: &[Arc<QubeNode>],
    b: &[Arc<QubeNode>],
    op: Op,
    path: &mut Path,
) -> Result<Vec<Arc<QubeNode>>> {
    let (da, db) = (by_dim(a), by_dim(b));
    let mut out = Vec::new();
    for (dim, run_a) in &da {
        let Some(run_b) = db.get(dim) else {
            if op != Op::Intersect {
                out.extend(run_a.iter().cloned());
            }
            continue;
        };
        for ((ia, ib), values) in partition(run_a, run_b) {
            let piece = match (ia, ib) {
                (Some(i), None) => (op != Op::Intersect).then(|| run_a[i].with_values(values)),
                (None, Some(j)) => (op == Op::Union).then(|| run_b[j].with_values(values)),
                (Some(i), Some(j)) => shared(&run_a[i], &run_b[j], values, op, path)?,
                (None, None) => unreachable!("every value has an owner"),
            };
            out.extend(piece);
        }
    }
    if op == Op::Union {
        for (dim, run_b) in &db {
            if !da.contains_key(dim) {
                out.extend(run_b.iter().cloned());
            }
        }
    }
    Ok(merge_siblings(out))
}

/// Result for values held by sibling `x` on the left and `y` on the right.
fn shared(
    x: &Arc<QubeNode>,
    y: &Arc<QubeNode>,
    values: Vec<CoordinateValue>,
    op: Op,
    path: &mut Path,
) -> Result<Option<Arc<QubeNode>>> {
    let conflict = |path: &Path, reason: &str| QubeError::IncompatiblePath {
        path: path_string(path),
        reason: reason.into(),
    };
    path.push((x.dim().clone(), values[0].clone()));
    let same_shape = x.is_leaf() == y.is_leaf();
    let same_payload = x.payload() == y.payload();
    let result = match op {
        Op::Union if !same_payload => Err(conflict(path, "payloads differ")),
        Op::Union if !same_shape => Err(conflict(
            path,
            "a tuple is a strict prefix of another tuple",
        )),
        Op::Intersect if !same_payload || !same_shape => Ok(None),
        Op::Difference if !same_payload || !same_shape => Ok(Some(x.with_values(values))),
        Op::Intersect | Op::Union if x.is_leaf() => Ok(Some(x.with_values(values))),
        Op::Difference if x.is_leaf() => Ok(None),
        _ if Arc::ptr_eq(x, y) => Ok(match op {
            Op::Difference => None,
            _ => Some(x.with_values(values)),
        }),
        _ => {
            let children = combine(x.children(), y.children(), op, path)?;
            Ok((!children.is_empty()).then(|| rebuild(x, values, children)))
        }
    };
    path.pop();
    result
}

fn rebuild(
    template: &Arc<QubeNode>,
    values: Vec<CoordinateValue>,
    children: Vec<Arc<QubeNode>>,
) -> Arc<QubeNode> {
    let unchanged = children.len() == template.children().len()
        && children
            .iter()
            .zip(template.children())
            .all(|(a, b)| Arc::ptr_eq(a, b));
    if unchanged {
        return template.with_values(values);
    }
    QubeNode::from_canonical(
        template.dim().clone(),
        values,
        template.payload().cloned(),
        children,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::is_canonical;
    use crate::node::PayloadRef;
    use crate::qube::Tuple;
    use std::collections::BTreeSet;

    fn t(pairs: &[(&str, &str)]) -> Tuple {
        pairs
            .iter()
            .map(|(d, v)| (DimensionName::new(d).unwrap(), CoordinateValue::sniff(v)))
            .collect()
    }

    fn q(tuples: &[&[(&str, &str)]]) -> Qube {
        Qube::from_tuples(tuples.iter().map(|p| t(p)))
            .unwrap()
            .compress()
    }

    fn set(q: &Qube) -> BTreeSet<Tuple> {
        q.leaves().collect()
    }

    #[test]
    fn union_with_empty_is_identity() {
        let a = q(&[&[("a", "1"), ("b", "2")], &[("a", "2"), ("b", "2")]]);
        let u = union(&a, &Qube::empty()).unwrap();
        assert!(u.semantic_equals(&a));
        assert!(union(&Qube::empty(), &a).unwrap().structurally_equals(&a));
    }

    #[test]
    fn union_partitions_overlapping_values() {
        // a{1,2}->c{x}  ∪  a{2,3}->d{y}
        let a = q(&[&[("a", "1"), ("c", "x")], &[("a", "2"), ("c", "x")]]);
        let b = q(&[&[("a", "2"), ("d", "y")], &[("a", "3"), ("d", "y")]]);
        let u = union(&a, &b).unwrap();
        let kids = u.children();
        assert_eq!(kids.len(), 3);
        assert_eq!(kids[0].values(), &[1.into()]);
        assert_eq!(kids[0].children()[0].dim().as_str(), "c");
        assert_eq!(kids[1].values(), &[2.into()]);
        assert_eq!(kids[1].children().len(), 2);
        assert_eq!(kids[2].values(), &[3.into()]);
        assert_eq!(kids[2].children()[0].dim().as_str(), "d");
        assert_eq!(set(&u), set(&a).union(&set(&b)).cloned().collect());
        assert!(is_canonical(&u));
    }

    #[test]
    fn union_of_cube_halves_is_the_cube() {
        let mut left = Vec::new();
        let mut right = Vec::new();
        let mut all = Vec::new();
        for x in 0..4 {
            for y in 0..3 {
                let tup = t(&[("x", &x.to_string()), ("y", &y.to_string())]);
                if x < 2 {
                    left.push(tup.clone())
                } else {
                    right.push(tup.clone())
                }
                all.push(tup);
            }
        }
        let l = Qube::from_tuples(left).unwrap();
        let r = Qube::from_tuples(right).unwrap();
        let u = union(&l, &r).unwrap();
        let whole = Qube::from_tuples(all).unwrap().compress();
        assert!(u.structurally_equals(&whole));
        assert_eq!(u.stats().node_count, 3);
    }

    #[test]
    fn intersect_and_difference_basics() {
        let a = q(&[
            &[("a", "1"), ("b", "1")],
            &[("a", "2"), ("b", "1")],
            &[("a", "2"), ("b", "2")],
        ]);
        assert!(intersect(&a, &a).structurally_equals(&a));
        assert!(difference(&a, &a).is_empty());
        assert!(difference(&a, &Qube::empty()).structurally_equals(&a));
        let disjoint = q(&[&[("a", "9"), ("b", "1")]]);
        assert!(intersect(&a, &disjoint).is_empty());
        let b = q(&[&[("a", "2"), ("b", "2")], &[("a", "3"), ("b", "2")]]);
        assert_eq!(
            set(&intersect(&a, &b)),
            set(&a).intersection(&set(&b)).cloned().collect()
        );
        assert_eq!(
            set(&difference(&a, &b)),
            set(&a).difference(&set(&b)).cloned().collect()
        );
    }

    #[test]
    fn different_dimension_orders_coexist() {
        let ab = q(&[&[("a", "1"), ("b", "1")]]);
        let ba = q(&[&[("b", "1"), ("a", "1")]]);
        let u = union(&ab, &ba).unwrap();
        assert_eq!(u.count_leaves(), 2);
        assert!(intersect(&ab, &ba).is_empty());
    }

    #[test]
    fn payload_conflict_is_an_error() {
        let a =
            Qube::from_tuples_with_payloads(vec![(t(&[("p", "t")]), Some(PayloadRef::new(*b"1")))])
                .unwrap();
        let b =
            Qube::from_tuples_with_payloads(vec![(t(&[("p", "t")]), Some(PayloadRef::new(*b"2")))])
                .unwrap();
        assert!(matches!(
            union(&a, &b),
            Err(QubeError::IncompatiblePath { .. })
        ));
        assert!(intersect(&a, &b).is_empty());
        assert!(difference(&a, &b).structurally_equals(&a.compress()));
    }

    #[test]
    fn prefix_conflict_is_an_error() {
        let a = q(&[&[("a", "1")]]);
        let b = q(&[&[("a", "1"), ("b", "1")]]);
        assert!(matches!(
            union(&a, &b),
            Err(QubeError::IncompatiblePath { .. })
        ));
    }
}
