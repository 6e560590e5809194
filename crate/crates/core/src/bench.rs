//! Synthetic shapes and scaling measurements.
//!
//! Generators are deterministic and their node counts have closed forms, so
//! structure can be checked exactly before any timing is trusted. Timings are
//! medians over repetitions on the calling thread, with one warm-up run
//! discarded, followed by a least-squares fit of time against size.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QubeError, Result};
use crate::ingest::MetadataRecord;
use crate::qube::{Qube, Tuple};
use crate::value::{CoordinateValue, DimensionName};

/// Default ceiling on generated leaves.
pub const LEAF_CAP: u64 = 1_000_000;

/// Seed taken from `QUBE_SEED`, or a fixed default.
pub fn seed_from_env() -> u64 {
    std::env::var("QUBE_SEED")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0x5eed)
}

fn dim(i: usize) -> DimensionName {
    DimensionName::new(&format!("d{i}")).expect("generated names are valid")
}

fn check_cap(leaves: u64) -> Result<()> {
    if leaves > LEAF_CAP {
        return Err(QubeError::CapExceeded {
            requested: leaves,
            cap: LEAF_CAP,
        });
    }
    Ok(())
}

fn positive(name: &str, x: usize) -> Result<()> {
    if x == 0 {
        return Err(QubeError::InvalidConfig(format!("{name} must be positive")));
    }
    Ok(())
}

/// `n` leaves directly under the root on a single dimension.
pub fn gen_flat(n: usize) -> Result<Vec<MetadataRecord>> {
    check_cap(n as u64)?;
    let d = DimensionName::new("step").expect("valid");
    Ok((0..n as i64)
        .map(|i| MetadataRecord::from_tuple(vec![(d.clone(), CoordinateValue::Int(i))]))
        .collect())
}

/// Uncompressed node count of [`gen_flat`], root included.
pub fn flat_nodes(n: usize) -> u64 {
    n as u64 + 1
}

/// A chain of `total_depth` levels that splits `width` ways at level `depth`
/// (1-based); each branch continues as its own chain to the bottom.
pub fn gen_branch_at_depth(
    depth: usize,
    total_depth: usize,
    width: usize,
) -> Result<Vec<MetadataRecord>> {
    positive("depth", depth)?;
    positive("width", width)?;
    if depth > total_depth {
        return Err(QubeError::InvalidConfig(format!(
            "branch depth {depth} exceeds total depth {total_depth}"
        )));
    }
    check_cap(width as u64)?;
    Ok((0..width as i64)
        .map(|w| {
            let t: Tuple = (1..=total_depth)
                .map(|level| {
                    let v = if level == depth { w } else { 0 };
                    (dim(level), CoordinateValue::Int(v))
                })
                .collect();
            MetadataRecord::from_tuple(t)
        })
        .collect())
}

/// Uncompressed node count of [`gen_branch_at_depth`], root included.
pub fn branch_at_depth_nodes(depth: usize, total_depth: usize, width: usize) -> u64 {
    1 + (depth as u64 - 1) + width as u64 * (total_depth - depth + 1) as u64
}

/// Balanced tree of `depth` levels with `branching` values per node.
pub fn gen_wide(depth: usize, branching: usize) -> Result<Vec<MetadataRecord>> {
    positive("depth", depth)?;
    positive("branching factor", branching)?;
    let leaves = (branching as u64)
        .checked_pow(depth as u32)
        .unwrap_or(u64::MAX);
    check_cap(leaves)?;
    let b = branching as u64;
    Ok((0..leaves)
        .map(|mut i| {
            let mut t: Tuple = Vec::with_capacity(depth);
            for level in (1..=depth).rev() {
                t.push((dim(level), CoordinateValue::Int((i % b) as i64)));
                i /= b;
            }
            t.reverse();
            MetadataRecord::from_tuple(t)
        })
        .collect())
}

/// Uncompressed node count of [`gen_wide`]: Σ_{i=0..depth} b^i.
pub fn wide_nodes(depth: usize, branching: usize) -> u64 {
    (0..=depth as u32).map(|i| (branching as u64).pow(i)).sum()
}

/// Leaf tuples of a set of records, in record order.
pub fn expand(records: &[MetadataRecord]) -> Vec<Tuple> {
    records.iter().flat_map(|r| r.tuples()).collect()
}

/// Random tree with `n` leaves that compresses poorly: each of `n` dates
/// carries one parameter and one step drawn at random.
pub fn gen_sparse(n: usize, date_offset: i64, rng: &mut impl Rng) -> Vec<Tuple> {
    let (date, param, step) = (
        DimensionName::new("date").expect("valid"),
        DimensionName::new("param").expect("valid"),
        DimensionName::new("step").expect("valid"),
    );
    (0..n as i64)
        .map(|i| {
            vec![
                (date.clone(), CoordinateValue::Int(date_offset + i)),
                (param.clone(), CoordinateValue::Int(rng.random_range(0..8))),
                (
                    step.clone(),
                    CoordinateValue::Int(rng.random_range(0..1_000_000_000)),
                ),
            ]
        })
        .collect()
}

/// One dense block: a single date over 8 params and enough steps for
/// about `leaves` leaves (rounded up to a multiple of 8).
pub fn gen_dense_part(date: i64, leaves: usize) -> MetadataRecord {
    let steps = leaves.div_ceil(8).max(1) as i64;
    MetadataRecord::new(vec![
        (
            DimensionName::new("date").expect("valid"),
            vec![CoordinateValue::Int(date)],
        ),
        (
            DimensionName::new("param").expect("valid"),
            (0..8).map(CoordinateValue::Int).collect(),
        ),
        (
            DimensionName::new("step").expect("valid"),
            (0..steps).map(CoordinateValue::Int).collect(),
        ),
    ])
    .expect("distinct dimensions")
}

/// A random space of prefix-free tuples.
///
/// Which dimension comes next, and whether a path ends, depends only on the
/// values chosen so far, so no tuple drawn from one space is a strict prefix
/// of another. Each dimension has a fixed value kind.
#[derive(Clone, Debug)]
pub struct RandomSpace {
    salt: u64,
    dims: Vec<DimensionName>,
    domains: Vec<Vec<CoordinateValue>>,
}

impl RandomSpace {
    /// At most `max_dims` dimensions with at most `max_values` values each.
    pub fn new(rng: &mut impl Rng, max_dims: usize, max_values: usize) -> Self {
        let n = rng.random_range(1..=max_dims.max(1));
        let day0 = chrono::NaiveDate::from_ymd_opt(2024, 2, 27).expect("valid date");
        let dims = (0..n).map(dim).collect();
        let domains = (0..n)
            .map(|d| {
                let k = rng.random_range(1..=max_values.max(1));
                (0..k as i64)
                    .map(|v| match d % 4 {
                        0 => CoordinateValue::Int(v * 3 - 5),
                        1 => CoordinateValue::Str(
                            ["a", "b c", "x,y", "0012", "~", "n=1/2"][v as usize % 6].into(),
                        ),
                        2 => CoordinateValue::Date(day0 + chrono::Days::new(v as u64)),
                        _ => CoordinateValue::Timestamp(
                            day0.and_hms_opt(0, 0, 0).expect("valid time")
                                + chrono::Duration::hours(v * 6),
                        ),
                    })
                    .collect()
            })
            .collect();
        RandomSpace {
            salt: rng.random(),
            dims,
            domains,
        }
    }

    pub fn dims(&self) -> &[DimensionName] {
        &self.dims
    }

    pub fn domain(&self, d: usize) -> &[CoordinateValue] {
        &self.domains[d]
    }

    pub fn random_tuple(&self, rng: &mut impl Rng) -> Tuple {
        use std::hash::{Hash, Hasher};
        let mut used = vec![false; self.dims.len()];
        let mut picks: Vec<(usize, usize)> = Vec::new();
        loop {
            let mut h = std::hash::DefaultHasher::new();
            (self.salt, &picks).hash(&mut h);
            let h = h.finish();
            let free: Vec<usize> = (0..self.dims.len()).filter(|&d| !used[d]).collect();
            if free.is_empty() || (!picks.is_empty() && h.is_multiple_of(3)) {
                break;
            }
            let d = free[(h / 3) as usize % free.len()];
            used[d] = true;
            picks.push((d, rng.random_range(0..self.domains[d].len())));
        }
        picks
            .into_iter()
            .map(|(d, v)| (self.dims[d].clone(), self.domains[d][v].clone()))
            .collect()
    }

    pub fn random_tuples(&self, n: usize, rng: &mut impl Rng) -> Vec<Tuple> {
        (0..n).map(|_| self.random_tuple(rng)).collect()
    }
}

/// Shapes swept by [`bench_construction`] and [`bench_compression`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    /// Sizes are leaf counts.
    Flat,
    /// Sizes are branching depths.
    BranchAtDepth { total_depth: usize, width: usize },
    /// Sizes are tree depths; results are reported against total nodes.
    Wide { branching: usize },
}

impl Shape {
    pub fn label(&self) -> String {
        match self {
            Shape::Flat => "flat".into(),
            Shape::BranchAtDepth { total_depth, width } => {
                format!("branch-depth-k{total_depth}-w{width}")
            }
            Shape::Wide { branching } => format!("wide-b{branching}"),
        }
    }

    /// Records for one sweep point and the size reported for it.
    pub fn generate(&self, size: usize) -> Result<(Vec<MetadataRecord>, u64)> {
        match *self {
            Shape::Flat => Ok((gen_flat(size)?, size as u64)),
            Shape::BranchAtDepth { total_depth, width } => {
                Ok((gen_branch_at_depth(size, total_depth, width)?, size as u64))
            }
            Shape::Wide { branching } => {
                Ok((gen_wide(size, branching)?, wide_nodes(size, branching)))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `ys` on `xs`; `None` with fewer than two
/// distinct x values.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<Fit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs[..n].iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs[..n]
        .iter()
        .zip(&ys[..n])
        .map(|(x, y)| (x - mx) * (y - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys[..n].iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs[..n]
        .iter()
        .zip(&ys[..n])
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(Fit {
        slope,
        intercept,
        r2,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub label: String,
    pub sizes: Vec<u64>,
    pub times_ns: Vec<u64>,
    /// Fit over the non-zero sizes.
    pub fit: Option<Fit>,
}

impl BenchResult {
    pub fn new(label: impl Into<String>, points: Vec<(u64, u64)>) -> Self {
        let mut points = points;
        points.sort_unstable();
        points.dedup_by_key(|p| p.0);
        let (sizes, times_ns): (Vec<u64>, Vec<u64>) = points.into_iter().unzip();
        let (xs, ys): (Vec<f64>, Vec<f64>) = sizes
            .iter()
            .zip(&times_ns)
            .filter(|(s, _)| **s > 0)
            .map(|(&s, &t)| (s as f64, t as f64))
            .unzip();
        BenchResult {
            label: label.into(),
            fit: linear_fit(&xs, &ys),
            sizes,
            times_ns,
        }
    }

    pub fn time_at(&self, size: u64) -> Option<u64> {
        self.sizes
            .iter()
            .position(|&s| s == size)
            .map(|i| self.times_ns[i])
    }
}

/// Wall time of one call of `f`; `setup` runs first and is not timed, and
/// the result is dropped after the clock stops.
pub fn time_once<T, R>(setup: impl FnOnce() -> T, f: impl FnOnce(T) -> R) -> u64 {
    let input = setup();
    let start = Instant::now();
    let out = f(input);
    let t = start.elapsed().as_nanos() as u64;
    drop(out);
    t
}

/// One timed run per call.
pub type Trial<'a> = Box<dyn FnMut() -> u64 + 'a>;

/// Median of `reps` runs per trial after one discarded warm-up round.
/// Trials are run round-robin so a slow phase of the machine lands on
/// every trial rather than on one sweep point.
pub fn interleaved_medians(trials: &mut [Trial<'_>], reps: usize) -> Vec<u64> {
    let reps = reps.max(1);
    let mut times = vec![Vec::with_capacity(reps); trials.len()];
    for round in 0..=reps {
        for (t, trial) in times.iter_mut().zip(trials.iter_mut()) {
            let ns = trial();
            if round > 0 {
                t.push(ns);
            }
        }
    }
    times.iter_mut().map(|t| median(t)).collect()
}

/// Median wall time of `f` over `reps` runs after one discarded warm-up.
pub fn median_ns<S, T, F, R>(reps: usize, mut setup: S, mut f: F) -> u64
where
    S: FnMut() -> T,
    F: FnMut(T) -> R,
{
    interleaved_medians(&mut [Box::new(|| time_once(&mut setup, &mut f))], reps)[0]
}

fn median(v: &mut [u64]) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Times [`Qube::from_tuples`] on each generated shape.
pub fn bench_construction(
    shapes: &[Shape],
    sizes: &[usize],
    reps: usize,
) -> Result<Vec<BenchResult>> {
    shapes
        .iter()
        .map(|shape| {
            let inputs = sizes
                .iter()
                .map(|&size| {
                    shape
                        .generate(size)
                        .map(|(records, x)| (x, expand(&records)))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut trials: Vec<Trial<'_>> = inputs
                .iter()
                .map(|(_, tuples)| -> Trial<'_> {
                    Box::new(move || {
                        time_once(
                            || tuples.clone(),
                            |ts| Qube::from_tuples(ts).expect("generated tuples are valid"),
                        )
                    })
                })
                .collect();
            let times = interleaved_medians(&mut trials, reps);
            let points = inputs.iter().map(|(x, _)| *x).zip(times).collect();
            Ok(BenchResult::new(
                format!("construction/{}", shape.label()),
                points,
            ))
        })
        .collect()
}

/// Times [`Qube::compress`] on pre-built uncompressed qubes.
pub fn bench_compression(
    shapes: &[Shape],
    sizes: &[usize],
    reps: usize,
) -> Result<Vec<BenchResult>> {
    shapes
        .iter()
        .map(|shape| {
            let mut inputs = Vec::new();
            for &size in sizes {
                let (records, x) = shape.generate(size)?;
                let tuples = expand(&records);
                Qube::from_tuples(tuples.clone())?;
                inputs.push((x, tuples));
            }
            let mut trials: Vec<Trial<'_>> = inputs
                .iter()
                .map(|(_, tuples)| -> Trial<'_> {
                    Box::new(move || {
                        time_once(
                            || Qube::from_tuples(tuples.clone()).expect("validated above"),
                            |q| q.compress(),
                        )
                    })
                })
                .collect();
            let times = interleaved_medians(&mut trials, reps);
            let points = inputs.iter().map(|(x, _)| *x).zip(times).collect();
            Ok(BenchResult::new(
                format!("compression/{}", shape.label()),
                points,
            ))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnionMode {
    /// Sizes are leaves per operand; operands overlap by half.
    Pairwise,
    /// Sizes are counts of dense qubes, one date each, folded together.
    Progressive { leaves_each: usize },
}

/// Two compressed qubes of `n` leaves each sharing half of their leaves.
pub fn pairwise_operands(n: usize, seed: u64) -> Result<(Qube, Qube)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = gen_sparse(n + n / 2, 0, &mut rng);
    let b = Qube::from_tuples(all.split_off(n / 2))?.compress();
    all.extend(b.leaves().take(n - n / 2));
    let a = Qube::from_tuples(all)?.compress();
    Ok((a, b))
}

/// Times union, either of two equal-size qubes or as a cumulative fold.
pub fn bench_union(
    mode: UnionMode,
    sizes: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchResult>> {
    match mode {
        UnionMode::Pairwise => {
            let mut operands = Vec::new();
            for &n in sizes {
                check_cap(n as u64 * 2)?;
                let (a, b) = pairwise_operands(n, seed ^ n as u64)?;
                operands.push((n as u64, a, b));
            }
            let mut trials: Vec<Trial<'_>> = operands
                .iter()
                .map(|(_, a, b)| -> Trial<'_> {
                    Box::new(move || {
                        time_once(|| (), |()| a.union(b).expect("prefix-free operands"))
                    })
                })
                .collect();
            let times = interleaved_medians(&mut trials, reps);
            let points: Vec<(u64, u64)> = operands.iter().map(|(n, _, _)| *n).zip(times).collect();
            Ok(vec![BenchResult::new("union/pairwise", points)])
        }
        UnionMode::Progressive { leaves_each } => {
            let k_max = sizes.iter().copied().max().unwrap_or(0);
            check_cap(k_max as u64 * leaves_each as u64)?;
            let parts: Vec<Qube> = (0..k_max)
                .map(|j| gen_dense_part(j as i64, leaves_each).to_qube())
                .collect();
            let reps = reps.max(1);
            let mut per_k: Vec<Vec<u64>> = vec![Vec::new(); sizes.len()];
            for rep in 0..=reps {
                let mut acc = Qube::empty();
                let mut elapsed = 0u64;
                for (j, part) in parts.iter().enumerate() {
                    let start = Instant::now();
                    acc = acc.union(part)?;
                    elapsed += start.elapsed().as_nanos() as u64;
                    if rep > 0 {
                        for (slot, &k) in sizes.iter().enumerate() {
                            if k == j + 1 {
                                per_k[slot].push(elapsed);
                            }
                        }
                    }
                }
            }
            let points = sizes
                .iter()
                .zip(per_k.iter_mut())
                .filter(|(&k, _)| k > 0)
                .map(|(&k, ts)| (k as u64, median(ts)))
                .collect();
            Ok(vec![BenchResult::new(
                format!("union/progressive-{leaves_each}"),
                points,
            )])
        }
    }
}

pub const CSV_HEADER: &str = "label,size,median_ns,slope,intercept,r2";

/// One row per (label, size); fit columns are empty when the fit is undefined.
pub fn write_csv(results: &[BenchResult], mut w: impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in results {
        let fit = match r.fit {
            Some(f) => format!("{},{},{}", f.slope, f.intercept, f.r2),
            None => ",,".into(),
        };
        for (s, t) in r.sizes.iter().zip(&r.times_ns) {
            writeln!(w, "{},{s},{t},{fit}", r.label)?;
        }
    }
    Ok(())
}

pub fn emit_csv(results: &[BenchResult], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(results, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
