// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Fault sources: trace replay against a simulated address space, and an
//! optional kernel-backed source.

pub mod kernel;
pub mod sim;
pub mod trace;

pub use sim::{apply_access, run_replay, AccessOutcome, GuestError, ReplayAbort, ReplayReport, SimulatedGuest, ZeroFillPolicy};
pub use trace::{parse_trace, parse_trace_str, write_fill, Access, AccessTrace, TraceError};
