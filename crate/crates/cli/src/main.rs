use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qube::bench::{self, Shape, UnionMode};
use qube::extract::{self, Feature, FieldStoreManifest, GridSpec};
use qube::serialize::{parse_any, render_value, to_json_string, to_text};
use qube::{BuildConfig, Constraint, MergeStrategy, MissingPolicy, Qube, QubeError};

const MANIFEST: &str = "manifest.json";
const DATA_FILE: &str = "fields.bin";

#[derive(Parser)]
#[command(
    name = "qube",
    version,
    about = "Build, combine and query compressed qube indices"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Out {
    /// Output file.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a qube from a metadata listing.
    Build {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
        batch: u64,
        #[arg(long, value_enum, default_value_t = StrategyArg::Seq)]
        strategy: StrategyArg,
        #[command(flatten)]
        out: Out,
    },
    /// Rewrite a qube in canonical compressed form.
    Compress {
        input: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    Union {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    Intersect {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    Diff {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Keep the part of a qube matching a constraint.
    Select {
        input: PathBuf,
        #[arg(long, value_parser = parse_constraint)]
        constraint: Constraint,
        /// Drop branches lacking a constrained dimension.
        #[arg(long)]
        drop_missing: bool,
        #[command(flatten)]
        out: Out,
    },
    /// Print the number of leaf tuples.
    Count { input: PathBuf },
    /// Print size statistics.
    Stats { input: PathBuf },
    /// Print every dimension with its values.
    Axes { input: PathBuf },
    /// Print the canonical text form.
    Ls { input: PathBuf },
    /// Write a synthetic field store with one field per leaf.
    Mockstore {
        #[arg(long = "from")]
        from: PathBuf,
        #[arg(long, value_parser = parse_grid)]
        grid: GridSpec,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
    },
    /// Resolve a request into byte ranges, optionally reading them.
    Plan {
        input: PathBuf,
        #[arg(long, value_parser = parse_constraint)]
        constraint: Constraint,
        #[arg(long, value_parser = parse_feature)]
        feature: Feature,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        drop_missing: bool,
        #[arg(long)]
        execute: bool,
    },
    /// Run a scaling benchmark and write CSV.
    Bench {
        #[arg(value_enum)]
        kind: BenchKind,
        /// Comma-separated sweep sizes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Union mode: fold this many-leaf qubes progressively instead of pairwise.
        #[arg(long)]
        progressive: Option<usize>,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Seq,
    Pairwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchKind {
    Construction,
    Compression,
    Union,
}

fn parse_constraint(s: &str) -> Result<Constraint, String> {
    Constraint::parse(s).map_err(|e| e.to_string())
}

fn parse_feature(s: &str) -> Result<Feature, String> {
    Feature::parse(s).map_err(|e| e.to_string())
}

fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected NLATxNLON, got {s:?}"))?;
    let n = |t: &str| t.trim().parse::<u32>().ok().filter(|&v| v > 0);
    match (n(a), n(b)) {
        (Some(nlat), Some(nlon)) => Ok(GridSpec::global(nlat, nlon)),
        _ => Err(format!("expected two positive integers in {s:?}")),
    }
}

fn read_qube(path: &Path) -> Result<Qube, QubeError> {
    let text = fs::read_to_string(path).map_err(|e| with_path(e, path))?;
    parse_any(&text)
}

fn write_qube(q: &Qube, path: &Path) -> Result<(), QubeError> {
    fs::write(path, to_json_string(q)).map_err(|e| with_path(e, path))
}

fn with_path(e: std::io::Error, path: &Path) -> QubeError {
    QubeError::Io(std::io::Error::new(
        e.kind(),
        format!("{}: {e}", path.display()),
    ))
}

fn policy(drop_missing: bool) -> MissingPolicy {
    if drop_missing {
        MissingPolicy::DropBranch
    } else {
        MissingPolicy::KeepBranch
    }
}

fn run(cmd: Cmd) -> Result<(), QubeError> {
    match cmd {
        Cmd::Build {
            records,
            batch,
            strategy,
            out,
        } => {
            let text = fs::read_to_string(&records).map_err(|e| with_path(e, &records))?;
            let recs = qube::parse_records(&text)?;
            let cfg = BuildConfig {
                batch_size: batch as usize,
                strategy: match strategy {
                    StrategyArg::Seq => MergeStrategy::Sequential,
                    StrategyArg::Pairwise => MergeStrategy::PairwiseTree,
                },
                ..BuildConfig::default()
            };
            write_qube(&qube::build(&recs, &cfg)?, &out.out)
        }
        Cmd::Compress { input, out } => write_qube(&read_qube(&input)?.compress(), &out.out),
        Cmd::Union { a, b, out } => write_qube(&read_qube(&a)?.union(&read_qube(&b)?)?, &out.out),
        Cmd::Intersect { a, b, out } => {
            write_qube(&read_qube(&a)?.intersect(&read_qube(&b)?), &out.out)
        }
        Cmd::Diff { a, b, out } => {
            write_qube(&read_qube(&a)?.difference(&read_qube(&b)?), &out.out)
        }
        Cmd::Select {
            input,
            constraint,
            drop_missing,
            out,
        } => {
            let c = constraint.with_policy(policy(drop_missing));
            write_qube(&read_qube(&input)?.select(&c)?, &out.out)
        }
        Cmd::Count { input } => {
            println!("{}", read_qube(&input)?.count_leaves());
            Ok(())
        }
        Cmd::Stats { input } => {
            let q = read_qube(&input)?;
            let s = q.stats();
            let c = q.compress().stats();
            println!(
                "leaves={} nodes={} distinct={} depth={} compressed_nodes={}",
                s.leaf_count, s.node_count, s.distinct_structural_nodes, s.max_depth, c.node_count
            );
            Ok(())
        }
        Cmd::Axes { input } => {
            for (d, vals) in read_qube(&input)?.axes() {
                let vals: Vec<String> = vals.iter().map(render_value).collect();
                println!("{d}={}", vals.join("/"));
            }
            Ok(())
        }
        Cmd::Ls { input } => {
            print!("{}", to_text(&read_qube(&input)?));
            Ok(())
        }
        Cmd::Mockstore { from, grid, out } => {
            let q = read_qube(&from)?;
            fs::create_dir_all(&out).map_err(|e| with_path(e, &out))?;
            let m = FieldStoreManifest::for_qube(&q, grid, DATA_FILE);
            extract::write_mock_store(&m, &out.join(DATA_FILE))?;
            m.write(&out.join(MANIFEST))?;
            println!("fields={} cells={}", m.field_count(), grid.cell_count());
            Ok(())
        }
        Cmd::Plan {
            input,
            constraint,
            feature,
            store,
            drop_missing,
            execute,
        } => {
            let q = read_qube(&input)?;
            let m = FieldStoreManifest::read(&store.join(MANIFEST))?;
            let c = constraint.with_policy(policy(drop_missing));
            let p = extract::plan(&q, &c, &feature, &m)?;
            let mut line = format!(
                "ranges={} bytes={} fields={}",
                p.ranges.len(),
                p.total_bytes,
                p.fields_touched
            );
            if execute {
                let x = extract::execute(&p, &m.resolve_data_path(&store))?;
                line.push_str(&format!(
                    " read={} header_read={} values={}",
                    x.payload_bytes,
                    x.header_bytes,
                    x.values.len()
                ));
            }
            println!("{line}");
            Ok(())
        }
        Cmd::Bench {
            kind,
            sizes,
            reps,
            progressive,
            out,
        } => {
            let results = match (kind, progressive) {
                (BenchKind::Union, Some(leaves_each)) => {
                    let sizes = sizes.unwrap_or_else(|| vec![8, 16, 32, 64]);
                    bench::bench_union(
                        UnionMode::Progressive { leaves_each },
                        &sizes,
                        reps,
                        bench::seed_from_env(),
                    )?
                }
                (BenchKind::Union, None) => {
                    let sizes = sizes.unwrap_or_else(|| vec![1_000, 10_000, 100_000]);
                    bench::bench_union(UnionMode::Pairwise, &sizes, reps, bench::seed_from_env())?
                }
                (_, Some(_)) => {
                    return Err(QubeError::InvalidConfig(
                        "--progressive applies to union only".into(),
                    ));
                }
                (BenchKind::Construction, None) => {
                    let sizes = sizes.unwrap_or_else(|| vec![1_000, 10_000, 100_000]);
                    bench::bench_construction(&[Shape::Flat], &sizes, reps)?
                }
                (BenchKind::Compression, None) => {
                    let sizes = sizes.unwrap_or_else(|| vec![1_000, 10_000, 100_000]);
                    bench::bench_compression(&[Shape::Flat], &sizes, reps)?
                }
            };
            bench::emit_csv(&results, &out.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
