// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs::{self, File};
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pagemon::bench::{export_csv, run_ladder, BenchConfig, BenchReport, LadderLevel, Workload};
use pagemon::engine::{ConfigDocument, Engine, EngineConfig, Section};
use pagemon::externram::{BackendConfig, InstrumentedStore};
use pagemon::guest::{parse_trace, run_replay, SimulatedGuest, ZeroFillPolicy};

#[derive(Parser)]
#[command(name = "pagemon", version, about = "User-space paging engine benchmarks and trace replay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run microbenchmark workloads at one ladder level or the whole ladder.
    Bench(BenchArgs),
    /// Replay an access trace file through the engine.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// Engine config file (`key = value` lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// local, mock[:BASE_US[:MARGINAL_US]] or memcached:HOST:PORT.
    #[arg(long, value_parser = BackendConfig::parse)]
    backend: Option<BackendConfig>,
    /// Resident page bound.
    #[arg(long)]
    capacity: Option<usize>,
    /// Eviction batch threshold.
    #[arg(long)]
    batch: Option<usize>,
    /// Page cache capacity in pages.
    #[arg(long)]
    cache_pages: Option<usize>,
    /// Serve every write fault with a zero page.
    #[arg(long)]
    paper_write_mode: bool,
}

impl EngineArgs {
    fn document(&self) -> Result<ConfigDocument> {
        let mut doc = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ConfigDocument::parse(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ConfigDocument::default(),
        };
        if let Some(b) = &self.backend {
            doc.backend = Some(b.clone());
        }
        let e = &mut doc.engine;
        if let Some(c) = self.capacity {
            e.capacity = c;
        }
        if let Some(b) = self.batch {
            e.evict_batch_threshold = b;
        }
        if let Some(p) = self.cache_pages {
            e.page_cache_capacity = p;
        }
        e.paper_write_fault_mode |= self.paper_write_mode;
        Ok(doc)
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Workloads to run: seq, rand, zero (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "seq")]
    workload: Vec<String>,
    #[arg(long, default_value_t = 4096)]
    pages: usize,
    #[arg(long, default_value_t = 2)]
    iters: usize,
    /// Ladder level 0-7.
    #[arg(long, conflicts_with = "ladder", value_parser = clap::value_parser!(u8).range(0..=7))]
    level: Option<u8>,
    /// Run all eight ladder levels.
    #[arg(long)]
    ladder: bool,
    /// Seed for the random workload.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Directory for ladder.csv and sections.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Ladder level selecting the optimizations; defaults to the config file's flags.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=7))]
    level: Option<u8>,
    #[command(flatten)]
    engine: EngineArgs,
}

fn bench(args: BenchArgs) -> Result<bool> {
    let doc = args.engine.document()?;
    let workloads = args
        .workload
        .iter()
        .map(|w| {
            w.parse::<Workload>().map(|w| match w {
                Workload::Random { .. } => Workload::Random { seed: args.seed },
                other => other,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(anyhow::Error::msg)?;
    let levels: Vec<LadderLevel> = if args.ladder {
        LadderLevel::all().collect()
    } else {
        vec![LadderLevel::new(args.level.unwrap_or(0)).expect("range checked")]
    };
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        pages: args.pages,
        iterations: args.iters,
        capacity: doc.engine.capacity,
        page_cache_capacity: doc.engine.page_cache_capacity,
        batch: doc.engine.evict_batch_threshold,
        trials: args.trials,
        backend: doc.backend.unwrap_or(defaults.backend),
        paper_write_fault_mode: doc.engine.paper_write_fault_mode,
        affinity_map: doc.engine.affinity_map,
    };
    if cfg.pages == 0 || cfg.iterations == 0 || cfg.trials == 0 {
        bail!("--pages, --iters and --trials must be at least 1");
    }

    let report = run_ladder(&workloads, &levels, &cfg);
    print_report(&report);
    if let Some(dir) = &args.out {
        export_csv(&report, dir).with_context(|| format!("writing CSV to {}", dir.display()))?;
        println!("wrote {}/ladder.csv and sections.csv", dir.display());
    }
    if let Some(why) = &report.invalid {
        eprintln!("invalid report: {why}");
    }
    Ok(report.is_valid())
}

fn print_report(report: &BenchReport) {
    println!(
        "{:<5} {:>5} {:<16} {:>10} {:>10} {:>10} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "load", "level", "optimization", "mean_us", "min_us", "max_us", "faults", "hits", "reads", "writes", "mwrites"
    );
    for c in &report.cells {
        println!(
            "{:<5} {:>5} {:<16} {:>10.3} {:>10.3} {:>10.3} {:>8} {:>8} {:>8} {:>8} {:>8}",
            c.workload,
            c.level,
            LadderLevel::new(c.level).map_or("?", |l| l.name()),
            c.mean_us,
            c.min_us,
            c.max_us,
            c.faults(),
            c.hits(),
            c.store_reads(),
            c.store_writes(),
            c.multi_writes()
        );
    }
}

fn replay(args: ReplayArgs) -> Result<bool> {
    let doc = args.engine.document()?;
    let mut config: EngineConfig = doc.engine;
    if let Some(level) = args.level {
        config.opts = LadderLevel::new(level).expect("range checked").optimizations();
    }
    let file = File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let trace = parse_trace(BufReader::new(file)).with_context(|| format!("parsing {}", args.trace.display()))?;

    let backend = doc.backend.unwrap_or(BackendConfig::Local).build()?;
    let store = Arc::new(InstrumentedStore::new(backend));
    let engine = Engine::new(config, store.clone())?;
    let mut guest = SimulatedGuest::for_trace(&engine, &trace, ZeroFillPolicy::default())?;

    let (report, ok) = match run_replay(&mut guest, &engine, &trace) {
        Ok(r) => (r, true),
        Err(abort) => {
            eprintln!("{abort}");
            (abort.partial, false)
        }
    };
    let stats = engine.stats_snapshot();
    let counters = engine.counters();
    let store_counters = store.counters();

    println!("accesses     {}", report.accesses);
    println!("faults       {} ({} zero, {} copy)", report.faults, report.zero_fills, report.copies);
    println!("hits         {}", report.hits);
    if let Some(mean) = report.mean_fault_us() {
        println!("mean fault   {mean:.3} us");
    }
    println!(
        "engine       evictions {} zero-marked {} cache hits {} prefetches {}",
        counters.evictions, counters.zero_marked, counters.cache_hits, counters.prefetch_issued
    );
    println!(
        "store        reads {} writes {} multi-writes {} ({} pages) removes {}",
        store_counters.pages_read(),
        store_counters.writes,
        store_counters.multi_writes,
        store_counters.multi_write_items,
        store_counters.removes
    );
    for section in Section::ALL {
        if let Some(h) = stats.histogram(section) {
            println!(
                "  {:<28} n={:<7} median {:>9.3} us  p99 {:>9.3} us",
                section.label(),
                h.count(),
                h.median_us().unwrap_or(0.0),
                h.percentile_us(0.99).unwrap_or(0.0)
            );
        }
    }
    engine.shutdown()?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bench(args) => bench(args),
        Command::Replay(args) => replay(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
