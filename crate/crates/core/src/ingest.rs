//! Flat metadata listings and bulk construction.
//!
//! One record per line, `dim1=v1/v2,dim2=v3`. Blank lines and lines starting
//! with `#` are skipped. A record stands for the Cartesian product of its
//! value lists. Reserved characters inside names and values are written as
//! `%XX`.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{QubeError, Result};
use crate::node::QubeNode;
use crate::par::{self, Execution};
use crate::qube::{Qube, Tuple};
use crate::value::{escape, unescape, CoordinateValue, DimensionName, ValueKind};

/// One flat archive entry: ordered `(dimension, values)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetadataRecord {
    pub pairs: Vec<(DimensionName, Vec<CoordinateValue>)>,
}

impl MetadataRecord {
    pub fn new(pairs: Vec<(DimensionName, Vec<CoordinateValue>)>) -> Result<Self> {
        for (i, (d, vals)) in pairs.iter().enumerate() {
            if pairs[..i].iter().any(|(e, _)| e == d) {
                return Err(QubeError::DuplicateDimension {
                    dim: d.to_string(),
                    line: None,
                });
            }
            if vals.is_empty() {
                return Err(QubeError::malformed(
                    d.as_str(),
                    "record dimension without values",
                ));
            }
        }
        Ok(MetadataRecord { pairs })
    }

    /// A record holding one value per dimension.
    pub fn from_tuple(tuple: Tuple) -> Self {
        MetadataRecord {
            pairs: tuple.into_iter().map(|(d, v)| (d, vec![v])).collect(),
        }
    }

    /// Number of tuples the record expands to.
    pub fn cartesian_size(&self) -> u64 {
        if self.pairs.is_empty() {
            return 0;
        }
        self.pairs.iter().map(|(_, v)| v.len() as u64).product()
    }

    pub fn tuples(&self) -> impl Iterator<Item = Tuple> + '_ {
        let n = self.cartesian_size();
        (0..n).map(move |mut i| {
            let mut t = Vec::with_capacity(self.pairs.len());
            let mut stride = n;
            for (d, vals) in &self.pairs {
                stride /= vals.len() as u64;
                t.push((d.clone(), vals[(i / stride) as usize].clone()));
                i %= stride;
            }
            t
        })
    }

    /// The record as a compressed chain qube.
    pub fn to_qube(&self) -> Qube {
        let mut child: Vec<Arc<QubeNode>> = Vec::new();
        for (d, vals) in self.pairs.iter().rev() {
            let mut vals = vals.clone();
            vals.sort_unstable();
            vals.dedup();
            child = vec![QubeNode::from_canonical(d.clone(), vals, None, child)];
        }
        Qube::from_canonical_children(child, true)
    }

    pub fn render(&self) -> String {
        self.pairs
            .iter()
            .map(|(d, vals)| {
                let vals: Vec<_> = vals.iter().map(|v| escape(&v.token(), &[])).collect();
                format!("{}={}", escape(d.as_str(), &[]), vals.join("/"))
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// One line per record.
pub fn render_records(records: &[MetadataRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.render());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    /// Fixed value kind per dimension, bypassing sniffing.
    pub overrides: HashMap<DimensionName, ValueKind>,
}

pub fn parse_records(text: &str) -> Result<Vec<MetadataRecord>> {
    parse_records_with(text, &ParseOptions::default())
}

pub fn parse_records_with(text: &str, opts: &ParseOptions) -> Result<Vec<MetadataRecord>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let lead = raw.len() - raw.trim_start().len();
        out.push(parse_line(trimmed, line, lead, opts)?);
    }
    Ok(out)
}

fn parse_line(text: &str, line: usize, lead: usize, opts: &ParseOptions) -> Result<MetadataRecord> {
    let mut pairs: Vec<(DimensionName, Vec<CoordinateValue>)> = Vec::new();
    let mut offset = lead;
    for clause in text.split(',') {
        let col = offset + 1;
        offset += clause.len() + 1;
        let (name, rhs) = clause.split_once('=').ok_or_else(|| {
            QubeError::syntax(
                line,
                col,
                format!("expected `dim=values`, found {clause:?}"),
            )
        })?;
        let name =
            unescape(name).map_err(|at| QubeError::syntax(line, col + at, "bad %-escape"))?;
        let dim =
            DimensionName::new(&name).map_err(|e| QubeError::syntax(line, col, e.to_string()))?;
        if pairs.iter().any(|(d, _)| *d == dim) {
            return Err(QubeError::DuplicateDimension {
                dim: dim.to_string(),
                line: Some(line),
            });
        }
        let mut vcol = col + clause.find('=').expect("split above") + 1;
        let mut values = Vec::new();
        for token in rhs.split('/') {
            if token.is_empty() {
                return Err(QubeError::syntax(
                    line,
                    vcol,
                    format!("empty value for {dim}"),
                ));
            }
            let raw =
                unescape(token).map_err(|at| QubeError::syntax(line, vcol + at, "bad %-escape"))?;
            let value = match opts.overrides.get(&dim) {
                Some(kind) => kind.parse(&raw).ok_or_else(|| {
                    QubeError::syntax(
                        line,
                        vcol,
                        format!("{raw:?} is not a valid {}", kind.name()),
                    )
                })?,
                None => CoordinateValue::sniff(&raw),
            };
            values.push(value);
            vcol += token.len() + 1;
        }
        pairs.push((dim, values));
    }
    Ok(MetadataRecord { pairs })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MergeStrategy {
    /// Fold batches left to right.
    #[default]
    Sequential,
    /// Balanced binary reduction over batches.
    PairwiseTree,
}

#[derive(Clone, Copy, Debug)]
pub struct BuildConfig {
    pub batch_size: usize,
    pub compress_each_batch: bool,
    pub strategy: MergeStrategy,
    pub execution: Execution,
    /// Reorders batch qubes before merging. No heuristic ships with the
    /// crate.
    pub order_batches: Option<fn(&mut [Qube])>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            batch_size: 64,
            compress_each_batch: true,
            strategy: MergeStrategy::Sequential,
            execution: Execution::default(),
            order_batches: None,
        }
    }
}

/// Bookkeeping from one [`build`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub batches: usize,
    /// Largest node count of any batch or intermediate merge result.
    pub peak_node_count: u64,
}

pub fn build(records: &[MetadataRecord], cfg: &BuildConfig) -> Result<Qube> {
    build_with_report(records, cfg).map(|(q, _)| q)
}

pub fn build_with_report(
    records: &[MetadataRecord],
    cfg: &BuildConfig,
) -> Result<(Qube, BuildReport)> {
    if cfg.batch_size == 0 {
        return Err(QubeError::InvalidConfig(
            "batch size must be at least 1".into(),
        ));
    }
    if records.is_empty() {
        return Ok((Qube::empty(), BuildReport::default()));
    }
    let chunks: Vec<&[MetadataRecord]> = records.chunks(cfg.batch_size).collect();
    let early = cfg.compress_each_batch;
    let built = par::map(cfg.execution, chunks, |chunk| -> Result<(Qube, u64)> {
        let raw = Qube::from_tuples(chunk.iter().flat_map(MetadataRecord::tuples))?;
        let peak = raw.stats().node_count;
        Ok((if early { raw.compress() } else { raw }, peak))
    });
    let mut batches = Vec::with_capacity(built.len());
    let mut peak = 0;
    for b in built {
        let (q, n) = b?;
        peak = peak.max(n);
        batches.push(q);
    }
    if let Some(order) = cfg.order_batches {
        order(&mut batches);
    }
    let report_batches = batches.len();
    let merge = |a: &Qube, b: &Qube| if early { a.union(b) } else { merge_raw(a, b) };
    let (merged, merge_peak) = match cfg.strategy {
        MergeStrategy::Sequential => {
            let mut it = batches.into_iter();
            let mut acc = it.next().expect("at least one batch");
            let mut peak = 0;
            for b in it {
                acc = merge(&acc, &b)?;
                peak = peak.max(acc.stats().node_count);
            }
            (acc, peak)
        }
        MergeStrategy::PairwiseTree => reduce(&batches, cfg.execution, &merge)?,
    };
    peak = peak.max(merge_peak);
    Ok((
        merged.compress(),
        BuildReport {
            batches: report_batches,
            peak_node_count: peak,
        },
    ))
}

fn reduce<F>(qubes: &[Qube], exec: Execution, merge: &F) -> Result<(Qube, u64)>
where
    F: Fn(&Qube, &Qube) -> Result<Qube> + Sync,
{
    if qubes.len() == 1 {
        return Ok((qubes[0].clone(), 0));
    }
    let (left, right) = qubes.split_at(qubes.len() / 2);
    let (l, r) = par::join(
        exec,
        || reduce(left, exec, merge),
        || reduce(right, exec, merge),
    );
    let ((l, lp), (r, rp)) = (l?, r?);
    let q = merge(&l, &r)?;
    let peak = lp.max(rp).max(q.stats().node_count);
    Ok((q, peak))
}

/// Trie merge of two uncompressed qubes (single-value nodes keyed by
/// `(dim, value)`), without compressing.
fn merge_raw(a: &Qube, b: &Qube) -> Result<Qube> {
    fn merge(a: &[Arc<QubeNode>], b: &[Arc<QubeNode>]) -> Result<Vec<Arc<QubeNode>>> {
        let mut out = Vec::with_capacity(a.len().max(b.len()));
        let (mut i, mut j) = (0, 0);
        while i < a.len() || j < b.len() {
            let ord = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) => x.sort_key().cmp(&y.sort_key()),
                (Some(_), None) => std::cmp::Ordering::Less,
                _ => std::cmp::Ordering::Greater,
            };
            match ord {
                std::cmp::Ordering::Less => {
                    out.push(Arc::clone(&a[i]));
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(Arc::clone(&b[j]));
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    let (x, y) = (&a[i], &b[j]);
                    if x.values() != y.values()
                        || x.payload() != y.payload()
                        || x.is_leaf() != y.is_leaf()
                    {
                        return Err(QubeError::IncompatiblePath {
                            path: format!("{}={}", x.dim(), x.values()[0]),
                            reason: "uncompressed inputs disagree at a shared node".into(),
                        });
                    }
                    out.push(if x.is_leaf() {
                        Arc::clone(x)
                    } else {
                        QubeNode::from_canonical(
                            x.dim().clone(),
                            x.values().to_vec(),
                            x.payload().cloned(),
                            merge(x.children(), y.children())?,
                        )
                    });
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(out)
    }
    let children = merge(a.children(), b.children())?;
    Ok(Qube::from_canonical_children(children, false))
}
