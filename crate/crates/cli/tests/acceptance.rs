//! End-to-end acceptance checks, one PASS/FAIL line per criterion.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use qube::bench::{self, branch_at_depth_nodes, expand, linear_fit, RandomSpace, Shape, UnionMode};
use qube::extract::{self, Feature, FieldStoreManifest, GridSpec};
use qube::ingest::build_with_report;
use qube::{
    compress_in_order, from_interchange, from_text, is_canonical, to_interchange, to_text,
    BuildConfig, Constraint, CoordinateValue, DimensionName, MergeStrategy, MetadataRecord,
    MissingPolicy, PayloadRef, Predicate, Qube, Tuple,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Set = BTreeSet<Tuple>;
type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn set(q: &Qube) -> Set {
    q.leaves().collect()
}

fn dim(s: &str) -> DimensionName {
    DimensionName::new(s).unwrap()
}

struct Instance {
    space: RandomSpace,
    a: Vec<Tuple>,
    b: Vec<Tuple>,
    rng: ChaCha8Rng,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = RandomSpace::new(&mut rng, 5, 6);
    let (na, nb) = (rng.random_range(0..80), rng.random_range(0..80));
    let a = space.random_tuples(na, &mut rng);
    let b = space.random_tuples(nb, &mut rng);
    Instance { space, a, b, rng }
}

fn random_constraint(space: &RandomSpace, rng: &mut impl Rng) -> Constraint {
    let mut c = Constraint::new();
    for _ in 0..rng.random_range(1..=2) {
        let d = rng.random_range(0..space.dims().len());
        let dom = space.domain(d);
        let pred = match rng.random_range(0..3) {
            0 => Predicate::values(dom.iter().filter(|_| rng.random_bool(0.5)).cloned()),
            1 => {
                let (x, y) = (
                    &dom[rng.random_range(0..dom.len())],
                    &dom[rng.random_range(0..dom.len())],
                );
                Predicate::range(x.min(y).clone(), x.max(y).clone()).unwrap()
            }
            _ => Predicate::Any,
        };
        c = c.with(space.dims()[d].clone(), pred);
    }
    if rng.random_bool(0.5) {
        c = c.with_policy(MissingPolicy::DropBranch);
    }
    c
}

fn keeps(c: &Constraint, t: &Tuple) -> bool {
    c.predicates().all(|(d, p)| {
        let found = t.iter().find(|(td, _)| td == d).map(|(_, v)| v);
        match (p, found) {
            (Predicate::Any, _) => true,
            (_, None) => c.policy() == MissingPolicy::KeepBranch,
            (Predicate::ValueSet(vs), Some(v)) => vs.contains(v),
            (Predicate::Range { lo, hi }, Some(v)) => lo <= v && v <= hi,
        }
    })
}

fn base_seed() -> u64 {
    bench::seed_from_env()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let n = 500;
    let mut checked_ops = 0;
    for i in 0..n {
        let seed = base_seed().wrapping_add(i);
        let mut inst = instance(seed);
        let a = Qube::from_tuples(inst.a.clone()).map_err(|e| format!("seed {seed}: {e}"))?;
        let b = Qube::from_tuples(inst.b.clone()).map_err(|e| format!("seed {seed}: {e}"))?;
        let sa: Set = inst.a.iter().filter(|t| !t.is_empty()).cloned().collect();
        let sb: Set = inst.b.iter().filter(|t| !t.is_empty()).cloned().collect();
        let expanded: usize = sa.len() + sb.len();
        ensure(expanded <= 4096, || {
            format!("seed {seed}: instance too large")
        })?;
        let c = random_constraint(&inst.space, &mut inst.rng);
        let results = [
            ("compress", set(&a.compress()), sa.clone()),
            (
                "union",
                set(&a.union(&b).map_err(|e| e.to_string())?),
                sa.union(&sb).cloned().collect(),
            ),
            (
                "intersect",
                set(&a.intersect(&b)),
                sa.intersection(&sb).cloned().collect(),
            ),
            (
                "difference",
                set(&a.difference(&b)),
                sa.difference(&sb).cloned().collect(),
            ),
            (
                "select",
                set(&a.select(&c).map_err(|e| e.to_string())?),
                sa.iter().filter(|t| keeps(&c, t)).cloned().collect(),
            ),
        ];
        for (op, got, want) in results {
            ensure(got == want, || {
                format!("seed {seed}: {op} differs from oracle")
            })?;
            checked_ops += 1;
        }
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(300), || format!("took {t:?}"))?;
    Ok(format!(
        "{n} instances, {checked_ops} operation results equal the oracle in {t:.2?}"
    ))
}

fn canonical_form() -> Outcome {
    let mut idempotent = 0;
    let mut setop_outputs = 0;
    for i in 0..500 {
        let inst = instance(base_seed().wrapping_add(i));
        let a = Qube::from_tuples(inst.a).unwrap();
        let b = Qube::from_tuples(inst.b).unwrap();
        let c = a.compress();
        ensure(
            is_canonical(&c) && c.compress().structurally_equals(&c),
            || format!("instance {i} not idempotent"),
        )?;
        let rebuilt = Qube::from_root(c.root().clone()).unwrap().compress();
        ensure(rebuilt.structurally_equals(&c), || {
            format!("instance {i}: recompressing changed the tree")
        })?;
        idempotent += 1;
        for out in [a.union(&b).unwrap(), a.intersect(&b), a.difference(&b)] {
            ensure(is_canonical(&out), || {
                format!("instance {i}: set-op output not at fixpoint")
            })?;
            setop_outputs += 1;
        }
    }
    let mut confluent = 0;
    let mut i = 0u64;
    while confluent < 20 {
        let inst = instance(base_seed().wrapping_add(10_000 + i));
        i += 1;
        let q = Qube::from_tuples(inst.a).unwrap();
        if q.stats().node_count == q.compress().stats().node_count {
            continue;
        }
        let canonical = q.compress();
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        for order in 0..100 {
            let c = compress_in_order(&q, &mut |n| rng.random_range(0..n));
            ensure(c.structurally_equals(&canonical), || {
                format!("instance {i} order {order} diverged")
            })?;
        }
        confluent += 1;
    }
    Ok(format!(
        "{idempotent} idempotent, {confluent} instances x 100 merge orders confluent, {setop_outputs} set-op outputs at fixpoint"
    ))
}

fn dense_cube() -> Outcome {
    let dims: Vec<DimensionName> = (0..4).map(|i| dim(&format!("k{i}"))).collect();
    let mut tuples = Vec::new();
    for n in 0..8i64.pow(4) {
        tuples.push(
            (0..4)
                .map(|i| (dims[i].clone(), CoordinateValue::Int((n >> (3 * i)) & 7)))
                .collect::<Tuple>(),
        );
    }
    let q = Qube::from_tuples(tuples).unwrap().compress();
    let nodes = q.stats().node_count;
    let leaves = q.count_leaves();
    ensure(nodes == 5 && leaves == 4096, || {
        format!("nodes={nodes} leaves={leaves}")
    })?;
    Ok(format!("nodes={nodes} leaves={leaves}"))
}

fn check_sweep(
    label: &str,
    sizes: &[u64],
    times: &[u64],
    fit_sizes: &[u64],
    doubling: (u64, u64),
) -> Result<String, String> {
    let at = |s: u64| times[sizes.iter().position(|&x| x == s).unwrap()] as f64;
    let xs: Vec<f64> = fit_sizes.iter().map(|&s| s as f64).collect();
    let ys: Vec<f64> = fit_sizes.iter().map(|&s| at(s)).collect();
    let fit = linear_fit(&xs, &ys).ok_or_else(|| format!("{label}: fit undefined"))?;
    let ratio = at(doubling.1) / at(doubling.0);
    ensure(fit.r2 >= 0.95, || format!("{label}: r2={:.4}", fit.r2))?;
    ensure((1.4..=2.8).contains(&ratio), || {
        format!("{label}: doubling ratio {ratio:.3}")
    })?;
    Ok(format!("{label} r2={:.4} doubling={ratio:.2}", fit.r2))
}

fn scaling_shapes() -> Outcome {
    let start = Instant::now();
    let reps = 9;
    let sweep = [1_000, 10_000, 50_000, 100_000];
    let fit_sizes = [1_000, 10_000, 100_000];
    let mut notes = Vec::new();

    let r = &bench::bench_construction(&[Shape::Flat], &sweep, reps).map_err(|e| e.to_string())?[0];
    notes.push(check_sweep(
        "construction",
        &r.sizes,
        &r.times_ns,
        &fit_sizes,
        (50_000, 100_000),
    )?);
    let r = &bench::bench_compression(&[Shape::Flat], &sweep, reps).map_err(|e| e.to_string())?[0];
    notes.push(check_sweep(
        "compression",
        &r.sizes,
        &r.times_ns,
        &fit_sizes,
        (50_000, 100_000),
    )?);
    let r = &bench::bench_union(UnionMode::Pairwise, &sweep, reps, base_seed())
        .map_err(|e| e.to_string())?[0];
    notes.push(check_sweep(
        "union",
        &r.sizes,
        &r.times_ns,
        &fit_sizes,
        (50_000, 100_000),
    )?);

    let r = &bench::bench_union(
        UnionMode::Progressive {
            leaves_each: 10_000,
        },
        &[8, 16, 32, 64],
        reps,
        base_seed(),
    )
    .map_err(|e| e.to_string())?[0];
    let fit = r.fit.ok_or("progressive: fit undefined")?;
    ensure(fit.r2 >= 0.95, || format!("progressive r2={:.4}", fit.r2))?;
    notes.push(format!("progressive r2={:.4}", fit.r2));

    let (k, w) = (8, 4_000);
    let depths: Vec<usize> = (1..=k).collect();
    let mut counts = Vec::new();
    for &d in &depths {
        let q = Qube::from_tuples(expand(&bench::gen_branch_at_depth(d, k, w).unwrap())).unwrap();
        let n = q.stats().node_count;
        ensure(n == branch_at_depth_nodes(d, k, w), || {
            format!("depth {d}: {n} nodes")
        })?;
        counts.push(n);
    }
    ensure(counts.windows(2).all(|p| p[0] > p[1]), || {
        format!("node counts {counts:?}")
    })?;
    let shape = Shape::BranchAtDepth {
        total_depth: k,
        width: w,
    };
    let r = &bench::bench_construction(&[shape], &depths, reps).map_err(|e| e.to_string())?[0];
    for (d, p) in r.times_ns.windows(2).enumerate() {
        ensure(p[1] as f64 <= p[0] as f64 * 1.2, || {
            format!(
                "branch depth {} -> {}: {}ns -> {}ns",
                d + 1,
                d + 2,
                p[0],
                p[1]
            )
        })?;
    }
    notes.push(format!(
        "branch-depth nodes {counts:?} times non-increasing"
    ));

    let t = start.elapsed();
    ensure(t < Duration::from_secs(600), || {
        format!("bench run took {t:?}")
    })?;
    Ok(format!("{} in {t:.1?}", notes.join("; ")))
}

/// 2 dates x 4 params x 24 steps = 192 fields; one date selects 96.
fn fixture_records() -> String {
    "class=od,date=20240101/20240102,param=2t/msl/10u/10v,step=0/1/2/3/4/5/6/7/8/9/10/11/12/13/14/15/16/17/18/19/20/21/22/23\n"
        .to_string()
}

fn nearest_cell(grid: &GridSpec, lat: f64, lon: f64) -> u64 {
    let lats: Vec<f64> = (0..grid.nlat)
        .map(|i| 90.0 - 180.0 * i as f64 / (grid.nlat - 1) as f64)
        .collect();
    let lons: Vec<f64> = (0..grid.nlon)
        .map(|j| 360.0 * j as f64 / grid.nlon as f64)
        .collect();
    let argmin = |xs: &[f64], x: f64| {
        (0..xs.len())
            .min_by(|&a, &b| (xs[a] - x).abs().partial_cmp(&(xs[b] - x).abs()).unwrap())
            .unwrap() as u64
    };
    argmin(&lats, lat) * grid.nlon as u64 + argmin(&lons, lon)
}

fn box_cells(grid: &GridSpec, lat: (f64, f64), lon: (f64, f64)) -> u64 {
    let mut n = 0;
    for i in 0..grid.nlat {
        for j in 0..grid.nlon {
            let (y, x) = (
                90.0 - 180.0 * i as f64 / (grid.nlat - 1) as f64,
                360.0 * j as f64 / grid.nlon as f64,
            );
            if lat.0 <= y && y <= lat.1 && lon.0 <= x && x <= lon.1 {
                n += 1;
            }
        }
    }
    n
}

const POINT: (f64, f64) = (10.0, 20.0);
const BOX: ((f64, f64), (f64, f64)) = ((-10.0, 10.0), (0.0, 30.0));

fn extraction_minimality() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let recs = qube::parse_records(&fixture_records()).unwrap();
    let q = qube::build(&recs, &BuildConfig::default()).unwrap();
    let grid = GridSpec::global(32, 32);
    let m = FieldStoreManifest::for_qube(&q, grid, "fields.bin");
    let store = dir.path().join("fields.bin");
    extract::write_mock_store(&m, &store).unwrap();
    let c = Constraint::parse("date=20240101").unwrap();
    let selected: Vec<u32> = q
        .select(&c)
        .unwrap()
        .leaves()
        .map(|t| m.fields[&extract::field_key(&t)])
        .collect();
    ensure(selected.len() == 96, || {
        format!("{} fields selected", selected.len())
    })?;

    let p = extract::plan(
        &q,
        &c,
        &Feature::Point {
            lat: POINT.0,
            lon: POINT.1,
        },
        &m,
    )
    .unwrap();
    let x = extract::execute(&p, &store).unwrap();
    ensure(p.ranges.len() == 96 && x.payload_bytes == 768, || {
        format!("point: ranges={} read={}", p.ranges.len(), x.payload_bytes)
    })?;
    let ci = nearest_cell(&grid, POINT.0, POINT.1);
    let expected: BTreeSet<(u32, u64)> = selected.iter().map(|&fi| (fi, ci)).collect();
    ensure(
        x.values.keys().copied().collect::<BTreeSet<_>>() == expected,
        || "point: wrong cells".into(),
    )?;
    for (&(fi, ci), &v) in &x.values {
        ensure(v == fi as f64 * 1e6 + ci as f64, || {
            format!("value({fi},{ci}) = {v}")
        })?;
    }

    let (lat, lon) = BOX;
    let f = Feature::Box {
        lat_min: lat.0,
        lat_max: lat.1,
        lon_min: lon.0,
        lon_max: lon.1,
    };
    let p = extract::plan(&q, &c, &f, &m).unwrap();
    let xb = extract::execute(&p, &store).unwrap();
    let cells = box_cells(&grid, lat, lon);
    ensure(
        cells > 0 && xb.payload_bytes == 8 * cells * 96 && p.total_bytes == xb.payload_bytes,
        || format!("box: {cells} cells, read={}", xb.payload_bytes),
    )?;
    for (&(fi, ci), &v) in &xb.values {
        ensure(v == fi as f64 * 1e6 + ci as f64, || {
            format!("value({fi},{ci}) = {v}")
        })?;
    }

    let full = extract::plan(&q, &c, &Feature::AllCells, &m).unwrap();
    let xf = extract::execute(&full, &store).unwrap();
    Ok(format!(
        "point ranges=96 read=768; box {cells} cells read={}; full-field baseline read={} (point reduction {:.0}x)",
        xb.payload_bytes,
        xf.payload_bytes,
        xf.payload_bytes as f64 / x.payload_bytes as f64
    ))
}

fn ingestion_independence() -> Outcome {
    let recs: Vec<MetadataRecord> = (0..100)
        .map(|d| {
            MetadataRecord::new(vec![
                (dim("class"), vec!["od".into()]),
                (dim("date"), vec![CoordinateValue::Int(20240101 + d)]),
                (dim("param"), (0..10).map(CoordinateValue::Int).collect()),
                (
                    dim("step"),
                    (0..10).map(|s| CoordinateValue::Int(s * 6)).collect(),
                ),
            ])
            .unwrap()
        })
        .collect();
    let total: u64 = recs.iter().map(|r| r.cartesian_size()).sum();
    ensure(total == 10_000, || format!("{total} tuples"))?;
    let mut results = Vec::new();
    for strategy in [MergeStrategy::Sequential, MergeStrategy::PairwiseTree] {
        for early in [true, false] {
            let cfg = BuildConfig {
                batch_size: 10,
                compress_each_batch: early,
                strategy,
                ..BuildConfig::default()
            };
            let (q, report) = build_with_report(&recs, &cfg).map_err(|e| e.to_string())?;
            results.push((strategy, early, q, report.peak_node_count));
        }
    }
    let first = &results[0].2;
    for (s, e, q, _) in &results {
        ensure(q.semantic_equals(first), || {
            format!("{s:?} early={e} differs")
        })?;
        ensure(q.count_leaves() == 10_000, || {
            format!("{s:?} early={e}: {} leaves", q.count_leaves())
        })?;
    }
    for s in [MergeStrategy::Sequential, MergeStrategy::PairwiseTree] {
        let peak = |early| results.iter().find(|r| r.0 == s && r.1 == early).unwrap().3;
        ensure(peak(true) <= peak(false), || {
            format!("{s:?}: peak {} > {}", peak(true), peak(false))
        })?;
    }
    let peaks: Vec<String> = results
        .iter()
        .map(|r| format!("{:?}/early={}:{}", r.0, r.1, r.3))
        .collect();
    Ok(format!("4 builds equal; peaks {}", peaks.join(" ")))
}

fn serialization_round_trips() -> Outcome {
    for i in 0..200 {
        let mut inst = instance(base_seed().wrapping_add(20_000 + i));
        let mut seen = BTreeSet::new();
        let tuples: Vec<(Tuple, Option<PayloadRef>)> = inst
            .a
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .map(|t| {
                let p = inst
                    .rng
                    .random_bool(0.3)
                    .then(|| PayloadRef::new(inst.rng.random::<[u8; 4]>().to_vec()));
                (t, p)
            })
            .collect();
        let raw = Qube::from_tuples_with_payloads(tuples).map_err(|e| e.to_string())?;
        for q in [raw.clone(), raw.compress()] {
            let text = to_text(&q);
            ensure(
                from_text(&text)
                    .map_err(|e| e.to_string())?
                    .structurally_equals(&q),
                || format!("qube {i}: text"),
            )?;
            let doc = to_interchange(&q);
            ensure(
                from_interchange(&doc)
                    .map_err(|e| e.to_string())?
                    .structurally_equals(&q),
                || format!("qube {i}: interchange"),
            )?;
            let again = Qube::from_root(q.root().clone()).unwrap();
            ensure(to_text(&again) == text, || {
                format!("qube {i}: text not reproducible")
            })?;
        }
    }
    Ok("200 qubes round-trip through text and interchange; text byte-identical across runs".into())
}

fn qube_cli(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_qube"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "qube {}: {:?} {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn field(line: &str, key: &str) -> Option<u64> {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

fn cli_pipeline() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    std::fs::write(d.join("records.txt"), fixture_records()).map_err(|e| e.to_string())?;
    qube_cli(
        &[
            "build",
            "--records",
            "records.txt",
            "--strategy",
            "pairwise",
            "-o",
            "all.json",
        ],
        d,
    )?;
    qube_cli(
        &[
            "select",
            "all.json",
            "--constraint",
            "date=20240101",
            "-o",
            "day.json",
        ],
        d,
    )?;
    ensure(qube_cli(&["count", "day.json"], d)?.trim() == "96", || {
        "selected count".into()
    })?;
    qube_cli(
        &[
            "mockstore",
            "--from",
            "all.json",
            "--grid",
            "32x32",
            "-o",
            "store",
        ],
        d,
    )?;
    let point = format!("point:{},{}", POINT.0, POINT.1);
    let line = qube_cli(
        &[
            "plan",
            "day.json",
            "--constraint",
            "date=20240101",
            "--feature",
            &point,
            "--store",
            "store",
            "--execute",
        ],
        d,
    )?;
    ensure(
        field(&line, "ranges") == Some(96)
            && field(&line, "bytes") == Some(768)
            && field(&line, "read") == Some(768),
        || format!("point plan: {line}"),
    )?;
    let ((a, b), (c, e)) = BOX;
    let boxf = format!("box:{a},{b},{c},{e}");
    let line_box = qube_cli(
        &[
            "plan",
            "day.json",
            "--constraint",
            "date=20240101",
            "--feature",
            &boxf,
            "--store",
            "store",
            "--execute",
        ],
        d,
    )?;
    let want = 8 * box_cells(&GridSpec::global(32, 32), BOX.0, BOX.1) * 96;
    ensure(field(&line_box, "read") == Some(want), || {
        format!("box plan: {line_box}")
    })?;
    Ok(format!("{}; {}", line.trim(), line_box.trim()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 oracle equivalence", oracle_equivalence),
        ("2 canonical form", canonical_form),
        ("3 dense cube compression", dense_cube),
        ("4 scaling shapes", scaling_shapes),
        ("5 extraction minimality", extraction_minimality),
        ("6 ingestion strategy independence", ingestion_independence),
        ("7 serialization round-trips", serialization_round_trips),
        ("8 cli pipeline", cli_pipeline),
    ];
    let only: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
