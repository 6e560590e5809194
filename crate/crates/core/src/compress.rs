//! Bottom-up compression to canonical form.
//!
//! Siblings that agree on dimension, payload and (structurally identical)
//! children are merged into one node holding the union of their value sets.
//! Children are compressed before their parent, so a single grouping pass
//! per node reaches the fixpoint.

use std::collections::HashMap;
use std::sync::Arc;

use xxhash_rust::xxh3::Xxh3;

use crate::node::{structurally_equal, PayloadRef, QubeNode};
use crate::qube::Qube;
use crate::value::{CoordinateValue, DimensionName};

pub fn compress(q: &Qube) -> Qube {
    if q.is_compressed() {
        return q.clone();
    }
    let children = q.children().iter().map(compress_node).collect();
    Qube::from_canonical_children(merge_siblings(children), true)
}

fn compress_node(node: &Arc<QubeNode>) -> Arc<QubeNode> {
    if node.is_leaf() {
        return Arc::clone(node);
    }
    let compressed: Vec<_> = node.children().iter().map(compress_node).collect();
    let merged = merge_siblings(compressed);
    let unchanged = merged.len() == node.children().len()
        && merged
            .iter()
            .zip(node.children())
            .all(|(a, b)| Arc::ptr_eq(a, b));
    if unchanged {
        return Arc::clone(node);
    }
    QubeNode::from_canonical(
        node.dim().clone(),
        node.values().to_vec(),
        node.payload().cloned(),
        merged,
    )
}

/// Key under which siblings may merge: everything but the value set.
fn group_hash(node: &QubeNode) -> u128 {
    let mut h = Xxh3::new();
    h.update(node.dim().as_str().as_bytes());
    h.update(&[0xff]);
    match node.payload() {
        None => h.update(&[0]),
        Some(p) => {
            h.update(&[1]);
            h.update(&(p.as_bytes().len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
    }
    for c in node.children() {
        h.update(&c.digest().0);
    }
    h.digest128()
}

fn same_group(a: &QubeNode, b: &QubeNode) -> bool {
    a.dim() == b.dim()
        && a.payload() == b.payload()
        && a.children().len() == b.children().len()
        && a.children()
            .iter()
            .zip(b.children())
            .all(|(x, y)| structurally_equal(x, y))
}

/// Merges mergeable siblings and returns them in canonical order.
///
/// Every input node must already be canonical and same-dimension inputs
/// must hold disjoint value sets.
pub(crate) fn merge_siblings(children: Vec<Arc<QubeNode>>) -> Vec<Arc<QubeNode>> {
    if children.len() < 2 {
        return children;
    }
    let mut groups: Vec<Vec<Arc<QubeNode>>> = Vec::new();
    let mut index: HashMap<u128, Vec<usize>> = HashMap::with_capacity(children.len());
    for child in children {
        let bucket = index.entry(group_hash(&child)).or_default();
        match bucket.iter().find(|&&g| same_group(&groups[g][0], &child)) {
            Some(&g) => groups[g].push(child),
            None => {
                bucket.push(groups.len());
                groups.push(vec![child]);
            }
        }
    }
    let mut out: Vec<Arc<QubeNode>> = groups
        .into_iter()
        .map(|mut group| {
            if group.len() == 1 {
                return group.pop().expect("non-empty group");
            }
            let mut values: Vec<CoordinateValue> = group
                .iter()
                .flat_map(|n| n.values().iter().cloned())
                .collect();
            values.sort_unstable();
            debug_assert!(values.windows(2).all(|w| w[0] < w[1]));
            group[0].with_values(values)
        })
        .collect();
    out.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    out
}

/// True when `q` is already its own canonical compressed form.
pub fn is_canonical(q: &Qube) -> bool {
    let c = Qube::from_canonical_children(q.children().to_vec(), false).compress();
    c.structurally_equals(q)
}

/// Mutable mirror of a tree used to apply merges one pair at a time.
#[derive(Clone, PartialEq, Eq, Debug)]
struct Draft {
    dim: DimensionName,
    values: Vec<CoordinateValue>,
    payload: Option<PayloadRef>,
    children: Vec<Draft>,
}

impl Draft {
    fn from_node(n: &QubeNode) -> Self {
        Draft {
            dim: n.dim().clone(),
            values: n.values().to_vec(),
            payload: n.payload().cloned(),
            children: n.children().iter().map(|c| Draft::from_node(c)).collect(),
        }
    }

    fn into_node(self) -> Arc<QubeNode> {
        let children = self.children.into_iter().map(Draft::into_node).collect();
        QubeNode::from_canonical(self.dim, self.values, self.payload, children)
    }

    fn mergeable(&self, other: &Draft) -> bool {
        self.dim == other.dim && self.payload == other.payload && self.children == other.children
    }

    fn sort(&mut self) {
        self.children
            .sort_by(|a, b| (&a.dim, &a.values[0]).cmp(&(&b.dim, &b.values[0])));
    }

    /// Appends every mergeable sibling pair in this subtree.
    fn candidates(&self, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, usize, usize)>) {
        for i in 0..self.children.len() {
            for j in i + 1..self.children.len() {
                if self.children[i].mergeable(&self.children[j]) {
                    out.push((path.clone(), i, j));
                }
            }
        }
        for (i, c) in self.children.iter().enumerate() {
            path.push(i);
            c.candidates(path, out);
            path.pop();
        }
    }

    fn at(&mut self, path: &[usize]) -> &mut Draft {
        path.iter().fold(self, |n, &i| &mut n.children[i])
    }
}

/// Compresses by merging one arbitrary mergeable sibling pair at a time,
/// anywhere in the tree, until none remain. `choose(n)` picks which of the
/// `n` currently available merges to apply next.
///
/// Far slower than [`compress`]; it exists to check that the canonical form
/// does not depend on merge order.
pub fn compress_in_order(q: &Qube, choose: &mut dyn FnMut(usize) -> usize) -> Qube {
    let mut root = Draft::from_node(q.root());
    loop {
        let mut cands = Vec::new();
        root.candidates(&mut Vec::new(), &mut cands);
        if cands.is_empty() {
            break;
        }
        let (path, i, j) = cands.swap_remove(choose(cands.len()) % cands.len());
        let parent = root.at(&path);
        let other = parent.children.remove(j);
        let keep = &mut parent.children[i];
        keep.values.extend(other.values);
        keep.values.sort_unstable();
        parent.sort();
    }
    let children = root.children.into_iter().map(Draft::into_node).collect();
    Qube::from_canonical_children(children, false)
}
