//! Compressed tree data hypercubes.
//!
//! A [`Qube`] describes a sparse, possibly heterogeneous multidimensional
//! data space as a tree: every node carries a dimension and a set of
//! coordinate values, and every root-to-leaf path (with value sets expanded)
//! is one coordinate combination that exists. Trees are kept in a canonical
//! compressed form in which sibling subtrees that only differ in their
//! values on one dimension are folded into a single node.
//!
//! On top of the tree this crate provides set algebra ([`setops`]),
//! constraint-based pruning ([`select`]), bulk construction from flat
//! metadata listings ([`ingest`]), byte-range planning against a field store
//! ([`extract`]), text and JSON formats ([`serialize`]) and scaling
//! benchmarks ([`bench`]).

pub mod bench;
pub mod compress;
pub mod error;
pub mod extract;
pub mod ingest;
pub mod node;
pub mod par;
pub mod qube;
pub mod select;
pub mod serialize;
pub mod setops;
pub mod value;

pub use compress::{compress, compress_in_order, is_canonical};
pub use error::{QubeError, Result};
pub use extract::{
    coalesce, execute, feature_to_indices, plan, AccessPlan, ByteRange, Extraction, Feature,
    FieldStoreManifest, GridSpec,
};
pub use ingest::{build, parse_records, BuildConfig, MergeStrategy, MetadataRecord};
pub use node::{structural_hash, structurally_equal, HashDigest, PayloadRef, QubeNode};
pub use qube::{Leaves, Qube, QubeStats, Tuple};
pub use select::{axes, select, Constraint, MissingPolicy, Predicate};
pub use serialize::{from_interchange, from_text, parse_any, to_interchange, to_text};
pub use setops::{difference, intersect, union};
pub use value::{CoordinateValue, DimensionName, ValueKind};
