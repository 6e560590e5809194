//! The rooted tree itself: construction from tuples, leaf enumeration and
//! structural statistics.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock};

use crate::compress;
use crate::error::{QubeError, Result};
use crate::node::{structurally_equal, HashDigest, PayloadRef, QubeNode};
use crate::value::{CoordinateValue, DimensionName, ROOT_DIM};

/// One coordinate combination, in tree order.
pub type Tuple = Vec<(DimensionName, CoordinateValue)>;

/// Structural statistics of a qube.
///
/// `node_count` and `distinct_structural_nodes` include the root;
/// `max_depth` counts levels below it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QubeStats {
    pub leaf_count: u64,
    pub node_count: u64,
    pub distinct_structural_nodes: u64,
    pub max_depth: u64,
}

/// A compressed tree data hypercube.
///
/// The meaning of a qube is its leaf set: every root-to-leaf path with the
/// value sets along it expanded as a Cartesian product. Qubes are immutable
/// and cheap to clone.
#[derive(Clone)]
pub struct Qube {
    root: Arc<QubeNode>,
    compressed: bool,
    stats: Arc<OnceLock<QubeStats>>,
}

impl Qube {
    pub fn empty() -> Self {
        Qube::from_canonical_children(Vec::new(), true)
    }

    pub(crate) fn root_value() -> CoordinateValue {
        CoordinateValue::str(ROOT_DIM)
    }

    /// Wraps a validated node list under a fresh root.
    pub(crate) fn from_canonical_children(children: Vec<Arc<QubeNode>>, compressed: bool) -> Self {
        let root = QubeNode::from_canonical(
            DimensionName::root(),
            vec![Self::root_value()],
            None,
            children,
        );
        Qube {
            root,
            compressed,
            stats: Arc::default(),
        }
    }

    /// Builds a qube from the top-level nodes, validating every invariant.
    pub fn from_children(children: Vec<Arc<QubeNode>>) -> Result<Self> {
        let root = QubeNode::new(
            DimensionName::root(),
            vec![Self::root_value()],
            None,
            children,
        )?;
        Qube::from_root(root)
    }

    /// Adopts an existing root node after checking it is well formed.
    pub fn from_root(root: Arc<QubeNode>) -> Result<Self> {
        if root.dim().as_str() != ROOT_DIM || root.values() != [Self::root_value()] {
            return Err(QubeError::malformed(
                "root",
                "root must be `root` with the sentinel value",
            ));
        }
        if root.payload().is_some() {
            return Err(QubeError::malformed("root", "root cannot carry a payload"));
        }
        let mut path = Vec::new();
        for c in root.children() {
            check_paths(c, &mut path)?;
        }
        Ok(Qube {
            root,
            compressed: false,
            stats: Arc::default(),
        })
    }

    /// Naive construction: every tuple is inserted as its own path of
    /// single-value nodes. Duplicate tuples collapse; empty tuples are
    /// ignored. The result is not compressed.
    pub fn from_tuples<I>(tuples: I) -> Result<Self>
    where
        I: IntoIterator<Item = Tuple>,
    {
        Self::from_tuples_with_payloads(tuples.into_iter().map(|t| (t, None)))
    }

    /// As [`Qube::from_tuples`], attaching an optional payload to each
    /// tuple's leaf node.
    pub fn from_tuples_with_payloads<I>(tuples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Tuple, Option<PayloadRef>)>,
    {
        let mut root = Trie::default();
        for (tuple, payload) in tuples {
            if tuple.is_empty() {
                continue;
            }
            for (i, (d, _)) in tuple.iter().enumerate() {
                if tuple[..i].iter().any(|(e, _)| e == d) {
                    return Err(QubeError::DuplicateDimension {
                        dim: d.to_string(),
                        line: None,
                    });
                }
            }
            let mut node = &mut root;
            for (d, v) in &tuple {
                node = node.children.entry((d.clone(), v.clone())).or_default();
            }
            if node.terminal && node.payload != payload {
                return Err(QubeError::IncompatiblePath {
                    path: render_tuple(&tuple),
                    reason: "tuple inserted twice with different payloads".into(),
                });
            }
            node.terminal = true;
            node.payload = payload;
        }
        let mut path = Vec::new();
        let children = root
            .children
            .into_iter()
            .map(|(k, t)| t.freeze(k, &mut path))
            .collect::<Result<_>>()?;
        Ok(Qube::from_canonical_children(children, false))
    }

    pub fn root(&self) -> &Arc<QubeNode> {
        &self.root
    }

    pub fn children(&self) -> &[Arc<QubeNode>] {
        self.root.children()
    }

    pub fn is_empty(&self) -> bool {
        self.root.children().is_empty()
    }

    /// True when the qube is known to be in canonical compressed form.
    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    /// Canonical compressed form; see [`crate::compress`].
    pub fn compress(&self) -> Qube {
        compress::compress(self)
    }

    /// Iterates over every leaf tuple in depth-first canonical order.
    pub fn leaves(&self) -> Leaves<'_> {
        Leaves::new(&self.root)
    }

    /// Number of leaf tuples, computed from the structure without expansion.
    pub fn count_leaves(&self) -> u64 {
        self.root.children().iter().map(|c| count_node(c)).sum()
    }

    pub fn stats(&self) -> QubeStats {
        *self.stats.get_or_init(|| {
            let mut distinct = DistinctNodes::default();
            let (node_count, max_depth) = walk_stats(&self.root, &mut distinct);
            QubeStats {
                leaf_count: self.count_leaves(),
                node_count,
                distinct_structural_nodes: distinct.count,
                max_depth,
            }
        })
    }

    /// Structural identity of the trees as they stand.
    pub fn structurally_equals(&self, other: &Qube) -> bool {
        structurally_equal(&self.root, &other.root)
    }

    /// True iff both qubes compress to the same canonical tree.
    pub fn semantic_equals(&self, other: &Qube) -> bool {
        self.compress().structurally_equals(&other.compress())
    }
}

impl std::fmt::Debug for Qube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Qube")
            .field("compressed", &self.compressed)
            .field("children", &self.root.children())
            .finish()
    }
}

fn render_tuple(t: &[(DimensionName, CoordinateValue)]) -> String {
    t.iter()
        .map(|(d, v)| format!("{d}={v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn check_paths<'a>(node: &'a Arc<QubeNode>, path: &mut Vec<&'a DimensionName>) -> Result<()> {
    if path.contains(&node.dim()) {
        let p: Vec<_> = path.iter().map(|d| d.as_str()).collect();
        return Err(QubeError::DuplicateDimension {
            dim: format!("{} (path {})", node.dim(), p.join("/")),
            line: None,
        });
    }
    path.push(node.dim());
    for c in node.children() {
        check_paths(c, path)?;
    }
    path.pop();
    Ok(())
}

#[derive(Default)]
struct Trie {
    children: BTreeMap<(DimensionName, CoordinateValue), Trie>,
    terminal: bool,
    payload: Option<PayloadRef>,
}

impl Trie {
    fn freeze(
        self,
        (dim, value): (DimensionName, CoordinateValue),
        path: &mut Vec<(DimensionName, CoordinateValue)>,
    ) -> Result<Arc<QubeNode>> {
        path.push((dim.clone(), value.clone()));
        if self.terminal && !self.children.is_empty() {
            return Err(QubeError::IncompatiblePath {
                path: render_tuple(path),
                reason: "a tuple is a strict prefix of another tuple".into(),
            });
        }
        let children = self
            .children
            .into_iter()
            .map(|(k, t)| t.freeze(k, path))
            .collect::<Result<_>>()?;
        path.pop();
        Ok(QubeNode::from_canonical(
            dim,
            vec![value],
            self.payload,
            children,
        ))
    }
}

fn count_node(node: &QubeNode) -> u64 {
    let below = if node.is_leaf() {
        1
    } else {
        node.children().iter().map(|c| count_node(c)).sum()
    };
    node.values().len() as u64 * below
}

#[derive(Default)]
struct DistinctNodes {
    buckets: HashMap<HashDigest, Vec<Arc<QubeNode>>>,
    count: u64,
}

impl DistinctNodes {
    fn insert(&mut self, node: &Arc<QubeNode>) {
        let bucket = self.buckets.entry(node.digest()).or_default();
        if !bucket.iter().any(|n| structurally_equal(n, node)) {
            bucket.push(Arc::clone(node));
            self.count += 1;
        }
    }
}

fn walk_stats(node: &Arc<QubeNode>, distinct: &mut DistinctNodes) -> (u64, u64) {
    distinct.insert(node);
    let mut count = 1;
    let mut depth = 0;
    for c in node.children() {
        let (n, d) = walk_stats(c, distinct);
        count += n;
        depth = depth.max(d + 1);
    }
    (count, depth)
}

/// Depth-first leaf iterator; see [`Qube::leaves`].
pub struct Leaves<'a> {
    stack: Vec<Frame<'a>>,
    prefix: Tuple,
}

struct Frame<'a> {
    node: &'a QubeNode,
    value: usize,
    child: usize,
    emitted: bool,
}

impl<'a> Leaves<'a> {
    fn new(root: &'a QubeNode) -> Self {
        Leaves {
            stack: vec![Frame {
                node: root,
                value: 0,
                child: 0,
                emitted: false,
            }],
            prefix: Vec::new(),
        }
    }

    fn push(&mut self, node: &'a QubeNode) {
        self.prefix
            .push((node.dim().clone(), node.values()[0].clone()));
        self.stack.push(Frame {
            node,
            value: 0,
            child: 0,
            emitted: false,
        });
    }

    /// Moves the top frame to its next value, popping it when exhausted.
    fn advance(&mut self) {
        let f = self.stack.last_mut().expect("non-empty stack");
        f.value += 1;
        f.child = 0;
        f.emitted = false;
        if let Some(v) = f.node.values().get(f.value) {
            self.prefix.last_mut().expect("prefix tracks stack").1 = v.clone();
        } else {
            self.stack.pop();
            self.prefix.pop();
        }
    }
}

impl Iterator for Leaves<'_> {
    type Item = Tuple;

    fn next(&mut self) -> Option<Tuple> {
        loop {
            let depth = self.stack.len();
            let f = self.stack.last_mut()?;
            let node = f.node;
            if depth == 1 {
                // root: walk children once
                match node.children().get(f.child) {
                    Some(c) => {
                        f.child += 1;
                        self.push(c);
                    }
                    None => {
                        self.stack.clear();
                        return None;
                    }
                }
            } else if node.is_leaf() {
                if !f.emitted {
                    f.emitted = true;
                    return Some(self.prefix.clone());
                }
                self.advance();
            } else if let Some(c) = node.children().get(f.child) {
                f.child += 1;
                self.push(c);
            } else {
                self.advance();
            }
        }
    }
}
