// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

use std::fs;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use pagemon::bench::export::{ladder_rows, render_ladder_csv, render_sections_csv, section_samples};
use pagemon::bench::{
    export_csv, gen_random, parse_ladder_csv, parse_sections_csv, run_ladder, BenchConfig, BenchReport, LadderLevel,
    Workload,
};
use pagemon::engine::Section;
use pagemon::externram::BackendConfig;
use pagemon::page::{FaultKind, PAGE_SIZE};

fn small_report() -> BenchReport {
    let cfg = BenchConfig {
        pages: 48,
        capacity: 16,
        page_cache_capacity: 16,
        trials: 2,
        backend: BackendConfig::Local,
        ..BenchConfig::default()
    };
    let workloads = [Workload::Sequential, Workload::Random { seed: 5 }, Workload::ZeroSequential];
    let levels: Vec<_> = LadderLevel::all().collect();
    let report = run_ladder(&workloads, &levels, &cfg);
    assert!(report.is_valid(), "{:?}", report.invalid);
    report
}

#[test]
fn csv_export_round_trips() {
    let report = small_report();
    let dir = tempfile::tempdir().unwrap();
    export_csv(&report, dir.path()).unwrap();
    let ladder = fs::read(dir.path().join("ladder.csv")).unwrap();
    let sections = fs::read(dir.path().join("sections.csv")).unwrap();

    let rows = parse_ladder_csv(&ladder).unwrap();
    let want = ladder_rows(&report);
    assert_eq!(rows.len(), 24);
    for (got, want) in rows.iter().zip(&want) {
        assert!((got.mean_us - want.mean_us).abs() <= 0.0005);
        assert_eq!((&got.workload, got.level, got.faults, got.hits), (&want.workload, want.level, want.faults, want.hits));
        assert_eq!(
            (got.store_reads, got.store_writes, got.multi_writes),
            (want.store_reads, want.store_writes, want.multi_writes)
        );
    }
    assert_eq!(parse_sections_csv(&sections).unwrap(), section_samples(&report));

    // Exporting the same report again yields the same bytes.
    let again = tempfile::tempdir().unwrap();
    export_csv(&report, again.path()).unwrap();
    assert_eq!(fs::read(again.path().join("ladder.csv")).unwrap(), ladder);
    assert_eq!(fs::read(again.path().join("sections.csv")).unwrap(), sections);
    assert_eq!(render_ladder_csv(&report).unwrap(), ladder);
    assert_eq!(render_sections_csv(&report).unwrap(), sections);
}

#[test]
fn ladder_mean_is_recomputable_from_sections() {
    let report = small_report();
    let samples = section_samples(&report);
    for cell in &report.cells {
        let mut faults = 0u64;
        let mut total_ns = 0u64;
        for s in &samples {
            if s.workload == cell.workload
                && s.level == cell.level
                && matches!(s.section, Section::HandleUserfaultZero | Section::HandleUserfaultCopyEvict)
            {
                faults += 1;
                total_ns += s.sample_ns;
            }
        }
        // Every trial faults the same pages.
        assert_eq!(faults, cell.faults() * cell.trials.len() as u64);
        // Equal fault counts per trial make the mean of means the pooled mean.
        let pooled_us = total_ns as f64 / faults as f64 / 1000.0;
        assert!((pooled_us - cell.mean_us).abs() < 1e-6 * pooled_us.max(1.0), "{pooled_us} vs {}", cell.mean_us);
        let rows = samples.iter().filter(|s| s.workload == cell.workload && s.level == cell.level).count();
        assert!(rows as u64 >= cell.faults());
    }
}

#[test]
fn ladder_counts_follow_levels() {
    let report = small_report();
    for cell in &report.cells {
        assert_eq!(cell.faults(), cell.predicted_faults);
        assert_eq!(cell.faults() + cell.hits(), 2 * 48 * 2);
        let opts = LadderLevel::new(cell.level).unwrap().optimizations();
        let store = &cell.last().store;
        if opts.async_evict {
            assert_eq!(store.writes, 0, "{} {}", cell.workload, cell.level);
        } else {
            assert_eq!(store.multi_writes, 0);
        }
        if cell.workload == "zero" && opts.zero_page {
            assert_eq!(store.writes + store.multi_write_items, 0);
            assert_eq!(store.pages_read(), 0);
        }
        if !opts.page_cache {
            assert_eq!(cell.last().engine.cache_hits, 0);
        }
    }
}

#[test]
fn random_pages_are_uniform() {
    let pages = 1000;
    let trace = gen_random(pages, 1000, 42);
    let mut counts = vec![0u64; pages];
    for a in trace.accesses.iter().filter(|a| a.kind == FaultKind::Read) {
        counts[(a.addr / PAGE_SIZE as u64) as usize] += 1;
    }
    let draws: u64 = counts.iter().sum();
    assert_eq!(draws, 1_000_000);
    let expected = draws as f64 / pages as f64;
    let stat: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((pages - 1) as f64).unwrap();
    let p = 1.0 - dist.cdf(stat);
    assert!(p >= 0.01, "chi-square {stat:.1}, p = {p:.4}");
}

#[test]
fn random_workload_is_deterministic_per_seed() {
    assert_eq!(gen_random(64, 2, 9).accesses, gen_random(64, 2, 9).accesses);
    assert_ne!(gen_random(64, 2, 9).accesses, gen_random(64, 2, 10).accesses);
}
