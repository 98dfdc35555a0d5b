// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! The optimization ladder: each level enables one more optimization on
//! top of the previous ones, and every (workload, level) cell is measured
//! on fresh engines.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use super::workloads::{predict_faults, Workload, TRACE_REGION};
use crate::engine::{Engine, EngineConfig, EngineCounters, Histogram, Optimizations, Section, WorkerRole};
use crate::externram::{BackendConfig, InstrumentedStore, StoreCounters};
use crate::guest::{run_replay, SimulatedGuest, ZeroFillPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LadderLevel(u8);

impl LadderLevel {
    pub const MAX: u8 = 7;

    pub fn new(level: u8) -> Option<Self> {
        (level <= Self::MAX).then_some(Self(level))
    }

    pub fn all() -> impl Iterator<Item = LadderLevel> {
        (0..=Self::MAX).map(LadderLevel)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        [
            "Default",
            "+Page cache",
            "+Zero page",
            "+Prefetch",
            "+Async evict",
            "+Async prefetch",
            "+CPU affinity",
            "+Async reinit",
        ][self.0 as usize]
    }

    pub fn optimizations(self) -> Optimizations {
        let n = self.0;
        Optimizations {
            page_cache: n >= 1,
            zero_page: n >= 2,
            prefetch: n >= 3,
            async_evict: n >= 4,
            async_prefetch: n >= 5,
            cpu_affinity: n >= 6,
            async_reinit: n >= 7,
        }
    }
}

impl fmt::Display for LadderLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub pages: usize,
    pub iterations: usize,
    pub capacity: usize,
    pub page_cache_capacity: usize,
    pub batch: usize,
    pub trials: usize,
    pub backend: BackendConfig,
    pub paper_write_fault_mode: bool,
    pub affinity_map: Option<BTreeMap<WorkerRole, usize>>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            pages: 4096,
            iterations: 2,
            capacity: 1024,
            page_cache_capacity: 1024,
            batch: 8,
            trials: 3,
            backend: BackendConfig::Mock(Default::default()),
            paper_write_fault_mode: false,
            affinity_map: None,
        }
    }
}

impl BenchConfig {
    pub fn engine_config(&self, level: LadderLevel) -> EngineConfig {
        EngineConfig {
            capacity: self.capacity,
            page_cache_capacity: self.page_cache_capacity,
            evict_batch_threshold: self.batch,
            opts: level.optimizations(),
            affinity_map: self.affinity_map.clone(),
            paper_write_fault_mode: self.paper_write_fault_mode,
            ..EngineConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    /// Mean whole-fault latency recorded by the engine.
    pub mean_us: f64,
    pub faults: u64,
    pub hits: u64,
    pub store: StoreCounters,
    pub engine: EngineCounters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellReport {
    pub workload: String,
    pub level: u8,
    pub trials: Vec<TrialResult>,
    /// Mean of the per-trial means.
    pub mean_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    pub predicted_faults: u64,
    /// Section samples pooled over all trials.
    pub sections: BTreeMap<Section, Histogram>,
}

impl CellReport {
    /// Counters of the last trial. Traces are deterministic, so fault and
    /// hit counts agree across trials.
    pub fn last(&self) -> &TrialResult {
        self.trials.last().expect("cell has at least one trial")
    }

    pub fn faults(&self) -> u64 {
        self.last().faults
    }

    pub fn hits(&self) -> u64 {
        self.last().hits
    }

    /// Pages read from the store, single and batched.
    pub fn store_reads(&self) -> u64 {
        self.last().store.pages_read()
    }

    /// Single-page write calls.
    pub fn store_writes(&self) -> u64 {
        self.last().store.writes
    }

    pub fn multi_writes(&self) -> u64 {
        self.last().store.multi_writes
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub cells: Vec<CellReport>,
    /// Why the report cannot be trusted, if it cannot.
    pub invalid: Option<String>,
}

impl BenchReport {
    pub fn is_valid(&self) -> bool {
        self.invalid.is_none()
    }

    pub fn cell(&self, workload: &str, level: u8) -> Option<&CellReport> {
        self.cells
            .iter()
            .find(|c| c.workload == workload && c.level == level)
    }
}

fn run_trial(workload: Workload, level: LadderLevel, cfg: &BenchConfig) -> Result<(TrialResult, Vec<(Section, Histogram)>), String> {
    let trace = workload.trace(cfg.pages, cfg.iterations);
    let backend = cfg.backend.build().map_err(|e| format!("backend: {e}"))?;
    let store = Arc::new(InstrumentedStore::new(backend));
    let engine = Engine::new(cfg.engine_config(level), store.clone()).map_err(|e| e.to_string())?;
    let mut guest = SimulatedGuest::for_trace(&engine, &trace, ZeroFillPolicy::default()).map_err(|e| e.to_string())?;
    let replay = run_replay(&mut guest, &engine, &trace).map_err(|e| e.to_string())?;
    engine.quiesce().map_err(|e| e.to_string())?;

    let stats = engine.stats_snapshot();
    let store_counters = store.counters();
    let engine_counters = engine.counters();
    let region = guest.engine_region(TRACE_REGION).expect("trace region registered");
    engine.deregister_region(region).map_err(|e| e.to_string())?;
    engine.shutdown().map_err(|e| e.to_string())?;

    let mut whole = Histogram::default();
    for section in [Section::HandleUserfaultZero, Section::HandleUserfaultCopyEvict] {
        if let Some(h) = stats.histogram(section) {
            whole.merge(h);
        }
    }
    let sections = stats.iter().map(|(s, h)| (s, h.clone())).collect();
    Ok((
        TrialResult {
            mean_us: whole.mean_us().unwrap_or(0.0),
            faults: replay.faults,
            hits: replay.hits,
            store: store_counters,
            engine: engine_counters,
        },
        sections,
    ))
}

/// Measures one (workload, level) cell over `cfg.trials` fresh engines.
pub fn run_cell(workload: Workload, level: LadderLevel, cfg: &BenchConfig) -> Result<CellReport, String> {
    if cfg.trials == 0 {
        return Err("at least one trial is required".into());
    }
    let predicted_faults = predict_faults(&workload.trace(cfg.pages, cfg.iterations), cfg.capacity);
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut sections: BTreeMap<Section, Histogram> = BTreeMap::new();
    for _ in 0..cfg.trials {
        let (trial, samples) = run_trial(workload, level, cfg)?;
        if trial.faults != predicted_faults {
            return Err(format!(
                "{workload} level {level}: {} faults, presence model predicts {predicted_faults}",
                trial.faults
            ));
        }
        for (section, h) in samples {
            sections.entry(section).or_default().merge(&h);
        }
        trials.push(trial);
    }
    let means: Vec<f64> = trials.iter().map(|t| t.mean_us).collect();
    Ok(CellReport {
        workload: workload.label().to_string(),
        level: level.value(),
        mean_us: means.iter().sum::<f64>() / means.len() as f64,
        min_us: means.iter().copied().fold(f64::INFINITY, f64::min),
        max_us: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        trials,
        predicted_faults,
        sections,
    })
}

/// Runs every (workload, level) cell in order. The first failing cell
/// stops the run and marks the report invalid.
pub fn run_ladder(workloads: &[Workload], levels: &[LadderLevel], cfg: &BenchConfig) -> BenchReport {
    let mut report = BenchReport::default();
    for workload in workloads {
        for level in levels {
            match run_cell(*workload, *level, cfg) {
                Ok(cell) => report.cells.push(cell),
                Err(e) => {
                    report.invalid = Some(e);
                    return report;
                }
            }
        }
    }
    report
}
