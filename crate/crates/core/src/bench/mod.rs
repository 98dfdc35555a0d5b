// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Microbenchmark harness: workload generators, the optimization ladder and
//! CSV export.

pub mod export;
pub mod ladder;
pub mod workloads;

pub use export::{export_csv, parse_ladder_csv, parse_sections_csv, LadderRow, SectionSample};
pub use ladder::{run_cell, run_ladder, BenchConfig, BenchReport, CellReport, LadderLevel, TrialResult};
pub use workloads::{gen_random, gen_sequential, gen_zero_sequential, predict_faults, Workload, TRACE_REGION};
