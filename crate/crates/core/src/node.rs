//! Tree nodes, payload references and structural identity.

use std::fmt;
use std::sync::{Arc, OnceLock};

use xxhash_rust::xxh3::Xxh3;

use crate::error::{QubeError, Result};
use crate::value::{CoordinateValue, DimensionName};

/// Opaque storage key attached to a node.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PayloadRef(Arc<[u8]>);

impl PayloadRef {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        PayloadRef(key.into().into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        hex::decode(s).ok().map(PayloadRef::new)
    }
}

impl fmt::Debug for PayloadRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PayloadRef({})", self.to_hex())
    }
}

/// 128-bit structural digest of a subtree.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashDigest(pub [u8; 16]);

impl fmt::Debug for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashDigest({})", hex::encode(self.0))
    }
}

/// One level of refinement: a dimension, the admissible values on it, and
/// the sub-hypercubes below.
///
/// Nodes are immutable once built. `values` is non-empty and strictly
/// ascending, children are ordered by `(dim, first value)` and siblings on
/// the same dimension hold disjoint value sets.
pub struct QubeNode {
    dim: DimensionName,
    values: Vec<CoordinateValue>,
    payload: Option<PayloadRef>,
    children: Vec<Arc<QubeNode>>,
    digest: OnceLock<HashDigest>,
}

impl QubeNode {
    /// Builds a node, sorting values and children into canonical order.
    ///
    /// Fails on an empty value set or on same-dimension siblings whose
    /// value sets overlap. Repeated dimensions along a path are checked when
    /// the node is placed in a [`crate::Qube`].
    pub fn new(
        dim: DimensionName,
        mut values: Vec<CoordinateValue>,
        payload: Option<PayloadRef>,
        mut children: Vec<Arc<QubeNode>>,
    ) -> Result<Arc<Self>> {
        if values.is_empty() {
            return Err(QubeError::malformed(dim.as_str(), "node has no values"));
        }
        values.sort_unstable();
        values.dedup();
        children.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        check_disjoint_siblings(&children, dim.as_str())?;
        Ok(Self::from_canonical(dim, values, payload, children))
    }

    /// Assembles a node from parts already in canonical order.
    pub(crate) fn from_canonical(
        dim: DimensionName,
        values: Vec<CoordinateValue>,
        payload: Option<PayloadRef>,
        children: Vec<Arc<QubeNode>>,
    ) -> Arc<Self> {
        debug_assert!(!values.is_empty());
        debug_assert!(values.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(children
            .windows(2)
            .all(|w| w[0].sort_key() < w[1].sort_key()));
        Arc::new(QubeNode {
            dim,
            values,
            payload,
            children,
            digest: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> &DimensionName {
        &self.dim
    }

    pub fn values(&self) -> &[CoordinateValue] {
        &self.values
    }

    pub fn payload(&self) -> Option<&PayloadRef> {
        self.payload.as_ref()
    }

    pub fn children(&self) -> &[Arc<QubeNode>] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub(crate) fn sort_key(&self) -> (&DimensionName, &CoordinateValue) {
        (&self.dim, &self.values[0])
    }

    /// Same node with a different (canonical) value set.
    pub(crate) fn with_values(self: &Arc<Self>, values: Vec<CoordinateValue>) -> Arc<Self> {
        if values == self.values {
            return Arc::clone(self);
        }
        Self::from_canonical(
            self.dim.clone(),
            values,
            self.payload.clone(),
            self.children.clone(),
        )
    }

    /// Bottom-up digest over `(dim, values, payload, child digests)`,
    /// computed once and cached.
    pub fn digest(&self) -> HashDigest {
        *self.digest.get_or_init(|| {
            let mut h = Xxh3::new();
            write_bytes(&mut h, self.dim.as_str().as_bytes());
            h.update(&(self.values.len() as u64).to_le_bytes());
            for v in &self.values {
                write_value(&mut h, v);
            }
            match &self.payload {
                None => h.update(&[0]),
                Some(p) => {
                    h.update(&[1]);
                    write_bytes(&mut h, p.as_bytes());
                }
            }
            h.update(&(self.children.len() as u64).to_le_bytes());
            for c in &self.children {
                h.update(&c.digest().0);
            }
            HashDigest(h.digest128().to_le_bytes())
        })
    }

    /// Tree node count of this subtree, shared subtrees counted once per
    /// occurrence.
    pub fn node_count(&self) -> u64 {
        1 + self.children.iter().map(|c| c.node_count()).sum::<u64>()
    }

    #[cfg(test)]
    pub(crate) fn force_digest(&self, d: HashDigest) {
        let _ = self.digest.set(d);
    }
}

fn write_bytes(h: &mut Xxh3, b: &[u8]) {
    h.update(&(b.len() as u64).to_le_bytes());
    h.update(b);
}

fn write_value(h: &mut Xxh3, v: &CoordinateValue) {
    h.update(&[v.kind() as u8]);
    match v {
        CoordinateValue::Int(i) => h.update(&i.to_le_bytes()),
        other => write_bytes(h, other.token().as_bytes()),
    }
}

fn check_disjoint_siblings(children: &[Arc<QubeNode>], parent: &str) -> Result<()> {
    let mut seen: Vec<(&DimensionName, &CoordinateValue)> = children
        .iter()
        .flat_map(|c| c.values.iter().map(move |v| (&c.dim, v)))
        .collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(QubeError::malformed(
            parent,
            format!("siblings on {:?} share value {}", w[0].0, w[0].1),
        ));
    }
    Ok(())
}

/// Full structural comparison. The digest only short-circuits inequality;
/// equal digests are always confirmed field by field.
pub fn structurally_equal(a: &QubeNode, b: &QubeNode) -> bool {
    if std::ptr::eq(a, b) {
        return true;
    }
    if a.digest() != b.digest() {
        return false;
    }
    a.dim == b.dim
        && a.values == b.values
        && a.payload == b.payload
        && a.children.len() == b.children.len()
        && a.children
            .iter()
            .zip(&b.children)
            .all(|(x, y)| structurally_equal(x, y))
}

/// Digest of a subtree.
pub fn structural_hash(node: &QubeNode) -> HashDigest {
    node.digest()
}

impl fmt::Debug for QubeNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("QubeNode");
        s.field("dim", &self.dim).field("values", &self.values);
        if let Some(p) = &self.payload {
            s.field("payload", p);
        }
        if !self.children.is_empty() {
            s.field("children", &self.children);
        }
        s.finish()
    }
}
