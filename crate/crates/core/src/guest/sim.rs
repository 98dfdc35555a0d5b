// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! A simulated address space driven by access traces.
//!
//! The guest keeps the full contents of every region plus a set of present
//! pages. Accesses to present pages never reach the engine; an access to an
//! absent page becomes a fault. When the engine moves a victim out it
//! captures the bytes through [`PageHost::capture`] and the page becomes
//! absent.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::trace::{write_fill, Access, AccessTrace};
use crate::engine::{Engine, EngineError, Histogram, PageHost};
use crate::page::{FaultEvent, FaultKind, PageBuffer, PageKey, Resolution, PAGE_SIZE};

/// What a zero-fill resolution does to a page that already holds bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZeroFillPolicy {
    /// Zeros are installed only on pages never written or installed before.
    #[default]
    KeepMaterialized,
    /// Zeros always replace the page contents.
    Overwrite,
}

#[derive(Debug, Error)]
pub enum GuestError {
    #[error("trace region {0} is not attached")]
    UnknownRegion(u64),
    #[error("address {addr:#x} is outside trace region {region}")]
    OutOfRange { region: u64, addr: u64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, PartialEq, Eq)]
pub enum AccessOutcome {
    Hit,
    Faulted(Resolution),
}

struct GuestRegion {
    engine_id: u64,
    memory: Vec<u8>,
    present: Vec<bool>,
    materialized: Vec<bool>,
}

impl GuestRegion {
    fn page(&self, index: usize) -> &[u8] {
        &self.memory[index * PAGE_SIZE..(index + 1) * PAGE_SIZE]
    }

    fn page_mut(&mut self, index: usize) -> &mut [u8] {
        &mut self.memory[index * PAGE_SIZE..(index + 1) * PAGE_SIZE]
    }
}

#[derive(Default)]
pub struct SimulatedGuest {
    // Keyed by engine region id.
    regions: HashMap<u64, GuestRegion>,
    // Trace region id to engine region id.
    aliases: BTreeMap<u64, u64>,
    next_seq: u64,
    policy: ZeroFillPolicy,
}

impl SimulatedGuest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_policy(policy: ZeroFillPolicy) -> Self {
        Self {
            policy,
            ..Self::default()
        }
    }

    /// Registers one engine region per region named in `trace`, sized to
    /// cover its highest address.
    pub fn for_trace(engine: &Engine, trace: &AccessTrace, policy: ZeroFillPolicy) -> Result<Self, EngineError> {
        let mut guest = Self::with_policy(policy);
        for region in trace.regions() {
            let size = trace.region_extent(region).expect("region appears in trace");
            guest.register(engine, region, size)?;
        }
        Ok(guest)
    }

    /// Registers a region with the engine and attaches it as `trace_region`.
    pub fn register(&mut self, engine: &Engine, trace_region: u64, size: u64) -> Result<u64, EngineError> {
        let engine_id = engine.register_region(size)?;
        self.attach(trace_region, engine_id, size);
        Ok(engine_id)
    }

    /// Attaches an already registered engine region, all pages absent.
    pub fn attach(&mut self, trace_region: u64, engine_region: u64, size: u64) {
        let pages = (size as usize).div_ceil(PAGE_SIZE);
        self.aliases.insert(trace_region, engine_region);
        self.regions.insert(
            engine_region,
            GuestRegion {
                engine_id: engine_region,
                memory: vec![0; pages * PAGE_SIZE],
                present: vec![false; pages],
                materialized: vec![false; pages],
            },
        );
    }

    /// Detaches a region, returning its engine region id.
    pub fn detach(&mut self, trace_region: u64) -> Option<u64> {
        let engine_id = self.aliases.remove(&trace_region)?;
        self.regions.remove(&engine_id);
        Some(engine_id)
    }

    pub fn engine_region(&self, trace_region: u64) -> Option<u64> {
        self.aliases.get(&trace_region).copied()
    }

    /// Full contents of a region, present or not.
    pub fn region_bytes(&self, trace_region: u64) -> Option<&[u8]> {
        let region = self.regions.get(self.aliases.get(&trace_region)?)?;
        Some(&region.memory)
    }

    pub fn is_present(&self, trace_region: u64, addr: u64) -> bool {
        self.lookup(trace_region, addr)
            .map(|(r, i)| r.present[i])
            .unwrap_or(false)
    }

    /// Present pages of a region as engine keys, sorted.
    pub fn present_keys(&self, trace_region: u64) -> Vec<PageKey> {
        let Some(region) = self.aliases.get(&trace_region).and_then(|id| self.regions.get(id)) else {
            return Vec::new();
        };
        region
            .present
            .iter()
            .enumerate()
            .filter(|(_, p)| **p)
            .map(|(i, _)| PageKey::new(region.engine_id, (i * PAGE_SIZE) as u64))
            .collect()
    }

    /// Applies one access, faulting through `engine` if the page is absent.
    pub fn apply(&mut self, engine: &Engine, access: &Access) -> Result<AccessOutcome, GuestError> {
        self.apply_timed(engine, access).map(|(outcome, _)| outcome)
    }

    fn apply_timed(&mut self, engine: &Engine, access: &Access) -> Result<(AccessOutcome, Option<Duration>), GuestError> {
        let engine_id = *self
            .aliases
            .get(&access.region_id)
            .ok_or(GuestError::UnknownRegion(access.region_id))?;
        let (index, present) = {
            let region = &self.regions[&engine_id];
            let index = (access.addr / PAGE_SIZE as u64) as usize;
            if index >= region.present.len() {
                return Err(GuestError::OutOfRange {
                    region: access.region_id,
                    addr: access.addr,
                });
            }
            (index, region.present[index])
        };

        let mut outcome = (AccessOutcome::Hit, None);
        if !present {
            self.next_seq += 1;
            let event = FaultEvent {
                key: PageKey::new(engine_id, access.addr),
                kind: access.kind,
                seq: self.next_seq,
            };
            let started = Instant::now();
            let resolution = engine.handle_fault(event, self)?;
            outcome = (AccessOutcome::Faulted(resolution), Some(started.elapsed()));
        }

        if access.kind == FaultKind::Write {
            let region = self.regions.get_mut(&engine_id).expect("attached");
            write_fill(access.write_seed, (index * PAGE_SIZE) as u64, region.page_mut(index));
            region.materialized[index] = true;
        }
        Ok(outcome)
    }

    fn lookup(&self, trace_region: u64, addr: u64) -> Option<(&GuestRegion, usize)> {
        let region = self.regions.get(self.aliases.get(&trace_region)?)?;
        let index = (addr / PAGE_SIZE as u64) as usize;
        (index < region.present.len()).then_some((region, index))
    }

    fn host_slot(&mut self, key: PageKey) -> io::Result<(&mut GuestRegion, usize)> {
        let region = self
            .regions
            .get_mut(&key.region_id)
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("no region for {key}")))?;
        let index = key.page_index() as usize;
        if index >= region.present.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{key} out of range")));
        }
        Ok((region, index))
    }
}

impl PageHost for SimulatedGuest {
    fn capture(&mut self, key: PageKey, buf: &mut PageBuffer) -> io::Result<()> {
        let (region, index) = self.host_slot(key)?;
        if !region.present[index] {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{key} is not present")));
        }
        buf.as_bytes_mut().copy_from_slice(region.page(index));
        region.present[index] = false;
        Ok(())
    }

    fn install_zero(&mut self, key: PageKey) -> io::Result<()> {
        let policy = self.policy;
        let (region, index) = self.host_slot(key)?;
        if policy == ZeroFillPolicy::Overwrite || !region.materialized[index] {
            region.page_mut(index).fill(0);
        }
        region.present[index] = true;
        region.materialized[index] = true;
        Ok(())
    }

    fn install_copy(&mut self, key: PageKey, buf: &PageBuffer) -> io::Result<()> {
        let (region, index) = self.host_slot(key)?;
        region.page_mut(index).copy_from_slice(buf.as_bytes());
        region.present[index] = true;
        region.materialized[index] = true;
        Ok(())
    }
}

/// Applies one access to `guest`, faulting through `engine` when needed.
pub fn apply_access(guest: &mut SimulatedGuest, engine: &Engine, access: &Access) -> Result<AccessOutcome, GuestError> {
    guest.apply(engine, access)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayReport {
    pub accesses: u64,
    pub faults: u64,
    pub hits: u64,
    pub zero_fills: u64,
    pub copies: u64,
    /// Time spent in the engine for each fault.
    pub fault_latency: Histogram,
    /// Pages written by the final queue flush.
    pub final_flush: usize,
}

impl ReplayReport {
    pub fn mean_fault_us(&self) -> Option<f64> {
        self.fault_latency.mean_us()
    }
}

#[derive(Debug, Error)]
#[error("replay stopped at access {index}{}: {error}", .line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct ReplayAbort {
    pub index: usize,
    pub line: Option<usize>,
    #[source]
    pub error: GuestError,
    /// Counts up to the failing access.
    pub partial: ReplayReport,
}

/// Replays `trace` in order and finishes with a flush of the eviction queue.
pub fn run_replay(guest: &mut SimulatedGuest, engine: &Engine, trace: &AccessTrace) -> Result<ReplayReport, Box<ReplayAbort>> {
    let mut report = ReplayReport::default();
    for (index, access) in trace.accesses.iter().enumerate() {
        match guest.apply_timed(engine, access) {
            Ok((outcome, latency)) => {
                report.accesses += 1;
                match outcome {
                    AccessOutcome::Hit => report.hits += 1,
                    AccessOutcome::Faulted(resolution) => {
                        report.faults += 1;
                        if resolution.is_zero_fill() {
                            report.zero_fills += 1;
                        } else {
                            report.copies += 1;
                        }
                    }
                }
                if let Some(latency) = latency {
                    report.fault_latency.record(latency);
                }
            }
            Err(error) => {
                return Err(Box::new(ReplayAbort {
                    index,
                    line: trace.line_of(index),
                    error,
                    partial: report,
                }))
            }
        }
    }
    match engine.flush_evict_queue() {
        Ok(n) => report.final_flush = n,
        Err(e) => {
            return Err(Box::new(ReplayAbort {
                index: trace.len(),
                line: None,
                error: e.into(),
                partial: report,
            }))
        }
    }
    Ok(report)
}
