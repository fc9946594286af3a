//! `crasim`: run scenarios, explore them exhaustively, check traces and
//! print summaries.
//!
//! Exit codes: 0 success, 1 a property was violated or an expectation was
//! not met, 2 malformed input, 3 the exploration exceeds the cap.

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use crasim::explorer::{explore_random, ExploreError, Explorer, Strategy};
use crasim::model::Trace;
use crasim::report::{ReportSummary, Timings};
use crasim::scenario::Scenario;
use crasim::simnet;
use crasim::tracecheck::{check, verdict_csv_row, GroupSpec, PropertyId, Verdict, CSV_HEADER};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser, Debug)]
#[command(name = "crasim", version, about = "Collective remote attestation simulator and trace checker")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario once with benign network and software choices; scripted
    /// adversary actions still happen.
    Run {
        scenario: PathBuf,
        /// Trace output file (JSON lines); stdout when omitted.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Variant to run when the file defines several.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, env = "CRASIM_SEED")]
        seed: Option<u64>,
    },
    /// Enumerate every schedule within the scenario bounds, check all traces
    /// and write a summary plus one minimized witness per violated property.
    Explore {
        scenario: PathBuf,
        /// Output directory.
        #[arg(short, long, default_value = "crasim-out")]
        out: PathBuf,
        /// Comma-separated properties; defaults to the scenario's list.
        #[arg(long, value_delimiter = ',')]
        properties: Option<Vec<String>>,
        /// Sample this many random schedules instead of enumerating.
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, env = "CRASIM_SEED")]
        seed: Option<u64>,
        #[arg(long, env = "CRASIM_WORKERS")]
        workers: Option<usize>,
        /// Largest estimated number of schedules to attempt.
        #[arg(long, env = "CRASIM_CAP", default_value_t = crasim::explorer::DEFAULT_CAP)]
        cap: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Check a trace file and print one verdict per property.
    Check {
        trace: PathBuf,
        #[arg(long, value_delimiter = ',')]
        properties: Option<Vec<String>>,
        /// Group threshold; defaults to the trace header's.
        #[arg(long)]
        threshold: Option<u32>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Print summaries written by `explore`.
    Report {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Debug)]
enum Failure {
    /// Violation or unmet expectation; already reported.
    Violation,
    Input(anyhow::Error),
    TooLarge(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Failure {
        Failure::Input(e)
    }
}

impl From<ExploreError> for Failure {
    fn from(e: ExploreError) -> Failure {
        match e {
            ExploreError::ExplorationTooLarge { .. } => Failure::TooLarge(e.into()),
            e => Failure::Input(e.into()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn parse_properties(list: Option<Vec<String>>, default: &[PropertyId]) -> anyhow::Result<Vec<PropertyId>> {
    let Some(list) = list else {
        return Ok(default.to_vec());
    };
    let props = list
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<PropertyId>().map_err(|e| anyhow!(e)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if props.is_empty() {
        bail!("property list is empty");
    }
    Ok(props)
}

fn load(path: &Path, seed: Option<u64>) -> anyhow::Result<Vec<Scenario>> {
    let all = Scenario::load_all(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match seed {
        Some(s) => all.into_iter().map(|sc| sc.with_seed(s)).collect(),
        None => all,
    })
}

fn cmd_run(path: &Path, out: Option<&Path>, variant: Option<&str>, seed: Option<u64>) -> Outcome {
    let mut all = load(path, seed)?;
    let scenario = match variant {
        Some(v) => {
            let i = all
                .iter()
                .position(|s| s.name() == v)
                .ok_or_else(|| anyhow!("no variant named `{v}`"))?;
            all.swap_remove(i)
        }
        None if all.len() == 1 => all.remove(0),
        None => {
            let names: Vec<&str> = all.iter().map(|s| s.name()).collect();
            return Err(anyhow!("file defines several variants, pick one with --variant: {}", names.join(", ")).into());
        }
    };
    let trace = simnet::run(&scenario, scenario.horizon).context("running scenario")?;
    match out {
        Some(p) => fs::write(p, trace.to_jsonl()).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", trace.to_jsonl()),
    }
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

struct ExploreArgs {
    properties: Option<Vec<String>>,
    random: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    cap: u64,
    format: Format,
}

fn cmd_explore(path: &Path, out: &Path, args: ExploreArgs) -> Outcome {
    let scenarios = load(path, args.seed)?;
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let strategy = if workers <= 1 {
        Strategy::Sequential
    } else {
        Strategy::Parallel { workers }
    };
    let witness_dir = out.join("witnesses");
    fs::create_dir_all(&witness_dir).with_context(|| format!("creating {}", witness_dir.display()))?;

    let mut summary = ReportSummary::default();
    let mut timings = Timings::default();
    let total = Instant::now();
    for s in &scenarios {
        let properties = parse_properties(args.properties.clone(), &s.properties)?;
        let start = Instant::now();
        let explorer = Explorer::new(s, *s.bounds())?.with_cap(args.cap);
        let mut ex = match args.random {
            Some(n) => explore_random(s, &properties, n, s.seed())?,
            None => explorer.explore(&properties, strategy)?,
        };
        ex.witnesses.retain(|p, _| properties.contains(p));
        match args.random {
            Some(_) => {
                for (p, t) in ex.witnesses.iter_mut() {
                    *t = s.minimize(t, *p)?;
                }
            }
            None => explorer.minimize_witnesses(&mut ex)?,
        }
        let mut paths = BTreeMap::new();
        for p in &properties {
            if let Some(w) = ex.witnesses.get(p) {
                let rel = format!("witnesses/{}.{p}.jsonl", file_stem(s.name()));
                let file = out.join(&rel);
                fs::write(&file, w.to_jsonl()).with_context(|| format!("writing {}", file.display()))?;
                paths.insert(*p, rel);
            }
        }
        summary.add(s.name(), &ex, &properties, &s.expect, &paths);
        timings.millis.insert(s.name().to_string(), start.elapsed().as_millis());
    }
    timings.millis.insert("total".into(), total.elapsed().as_millis());

    let (name, text) = match args.format {
        Format::Json => ("summary.json", summary.to_json() + "\n"),
        Format::Csv => ("summary.csv", summary.to_csv()),
    };
    let file = out.join(name);
    fs::write(&file, &text).with_context(|| format!("writing {}", file.display()))?;
    if args.format == Format::Csv {
        // the JSON form is what `report` reads back
        fs::write(out.join("summary.json"), summary.to_json() + "\n").context("writing summary.json")?;
    }
    let timings_json = serde_json::to_string_pretty(&timings).context("serializing timings")?;
    fs::write(out.join("timings.json"), timings_json + "\n").context("writing timings.json")?;
    print!("{text}");
    if !summary.is_consistent() {
        return Err(anyhow!("summary counts do not add up").into());
    }
    report_mismatches(&summary)
}

fn report_mismatches(summary: &ReportSummary) -> Outcome {
    let bad = summary.mismatches();
    for r in &bad {
        eprintln!(
            "expectation not met: {} {} is {}, expected {}",
            r.scenario,
            r.property,
            r.outcome,
            r.expected.map(|e| e.to_string()).unwrap_or_default()
        );
    }
    let ordering: u64 = summary.ordering_violations.values().sum();
    if ordering > 0 {
        eprintln!("{ordering} traces break the strength ordering");
    }
    if bad.is_empty() && ordering == 0 {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

fn cmd_check(path: &Path, properties: Option<Vec<String>>, threshold: Option<u32>, format: Format) -> Outcome {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace = Trace::read_jsonl(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))?;
    let properties = parse_properties(properties, &PropertyId::ALL)?;
    let spec = GroupSpec::with_threshold(threshold.unwrap_or(trace.header.group_threshold));
    let verdicts: Vec<Verdict> = properties
        .iter()
        .map(|p| check(&trace, *p, &spec))
        .collect::<Result<_, _>>()
        .context("checking trace")?;
    let mut stdout = std::io::stdout().lock();
    let name = path.display().to_string();
    let write = |out: &mut dyn Write| -> std::io::Result<()> {
        if format == Format::Csv {
            writeln!(out, "{CSV_HEADER}")?;
        }
        for v in &verdicts {
            match format {
                Format::Json => writeln!(out, "{}", v.to_json())?,
                Format::Csv => writeln!(out, "{}", verdict_csv_row(&name, v))?,
            }
        }
        Ok(())
    };
    write(&mut stdout).context("writing verdicts")?;
    if verdicts.iter().any(Verdict::is_violated) {
        Err(Failure::Violation)
    } else {
        Ok(())
    }
}

fn cmd_report(paths: &[PathBuf], format: Format) -> Outcome {
    let mut merged = ReportSummary::default();
    for p in paths {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let s: ReportSummary =
            serde_json::from_str(&text).with_context(|| format!("parsing summary {}", p.display()))?;
        merged.rows.extend(s.rows);
        merged.ordering_violations.extend(s.ordering_violations);
    }
    match format {
        Format::Json => println!("{}", merged.to_json()),
        Format::Csv => print!("{}", merged.to_csv()),
    }
    if !merged.is_consistent() {
        return Err(anyhow!("summary counts do not add up").into());
    }
    report_mismatches(&merged)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            variant,
            seed,
        } => cmd_run(&scenario, out.as_deref(), variant.as_deref(), seed),
        Command::Explore {
            scenario,
            out,
            properties,
            random,
            seed,
            workers,
            cap,
            format,
        } => cmd_explore(
            &scenario,
            &out,
            ExploreArgs {
                properties,
                random,
                seed,
                workers,
                cap,
                format,
            },
        ),
        Command::Check {
            trace,
            properties,
            threshold,
            format,
        } => cmd_check(&trace, properties, threshold, format),
        Command::Report { summaries, format } => cmd_report(&summaries, format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::TooLarge(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
