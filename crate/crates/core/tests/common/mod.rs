// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Reference models shared by the integration tests. Each one is a direct,
//! slow restatement of the behavior it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pagemon::engine::{Engine, EngineConfig, Optimizations, PrefetchRecord};
use pagemon::externram::StoreBackend;
use pagemon::guest::{write_fill, Access, AccessOutcome, AccessTrace, SimulatedGuest, ZeroFillPolicy};
use pagemon::lru::{IndexError, ResidencyIndex};
use pagemon::page::{FaultKind, PageKey, PAGE_SIZE};

/// Applies accesses to plain memory with no paging at all.
#[derive(Default)]
pub struct FlatModel {
    pages: HashMap<(u64, u64), Vec<u8>>,
}

impl FlatModel {
    pub fn apply(&mut self, a: &Access) {
        if a.kind == FaultKind::Write {
            let page = a.addr / PAGE_SIZE as u64;
            let buf = self
                .pages
                .entry((a.region_id, page))
                .or_insert_with(|| vec![0; PAGE_SIZE]);
            write_fill(a.write_seed, page * PAGE_SIZE as u64, buf);
        }
    }

    pub fn run(trace: &AccessTrace) -> Self {
        let mut m = Self::default();
        for a in &trace.accesses {
            m.apply(a);
        }
        m
    }

    /// Contents of `region`, `len` bytes long.
    pub fn region(&self, region: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0; len];
        for ((r, page), bytes) in &self.pages {
            if *r == region {
                let at = *page as usize * PAGE_SIZE;
                out[at..at + PAGE_SIZE].copy_from_slice(bytes);
            }
        }
        out
    }
}

/// Strict LRU kept as a plain list, least recent first.
#[derive(Debug)]
pub struct ListLru {
    pub capacity: usize,
    pub order: Vec<PageKey>,
    pub known: BTreeMap<PageKey, bool>,
}

impl ListLru {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            order: Vec::new(),
            known: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, key: PageKey) -> Result<Option<PageKey>, ()> {
        if self.order.contains(&key) {
            return Err(());
        }
        self.order.push(key);
        self.known.insert(key, true);
        if self.order.len() > self.capacity {
            let victim = self.order.remove(0);
            self.known.insert(victim, false);
            return Ok(Some(victim));
        }
        Ok(None)
    }

    pub fn touch(&mut self, key: PageKey) -> Result<(), ()> {
        let pos = self.order.iter().position(|k| *k == key).ok_or(())?;
        let k = self.order.remove(pos);
        self.order.push(k);
        Ok(())
    }

    pub fn resize(&mut self, capacity: usize) -> Vec<PageKey> {
        self.capacity = capacity;
        let mut victims = Vec::new();
        while self.order.len() > capacity {
            let v = self.order.remove(0);
            self.known.insert(v, false);
            victims.push(v);
        }
        victims
    }
}

#[derive(Clone, Copy, Debug)]
pub enum LruOp {
    Record(u64),
    Touch(u64),
    Resize(usize),
}

pub fn random_lru_ops(rng: &mut ChaCha8Rng, n: usize, keys: u64) -> Vec<LruOp> {
    (0..n)
        .map(|_| match rng.random_range(0..20) {
            0 => LruOp::Resize(rng.random_range(1..=24)),
            1..=8 => LruOp::Touch(rng.random_range(0..keys)),
            _ => LruOp::Record(rng.random_range(0..keys)),
        })
        .collect()
}

/// Runs `ops` against the index and the list model; returns the first
/// disagreement.
pub fn compare_lru(initial: usize, ops: &[LruOp]) -> Result<(), String> {
    let mut index = ResidencyIndex::new(initial).unwrap();
    let mut model = ListLru::new(initial);
    let key = |i: u64| PageKey::new(1, i * PAGE_SIZE as u64);
    for (step, op) in ops.iter().enumerate() {
        match *op {
            LruOp::Record(i) => {
                let got = index.record_resident(key(i));
                let want = model.record(key(i));
                match (got, want) {
                    (Ok(a), Ok(b)) if a == b => {}
                    (Err(IndexError::AlreadyResident(_)), Err(())) => {}
                    (a, b) => return Err(format!("step {step} record {i}: index {a:?}, model {b:?}")),
                }
            }
            LruOp::Touch(i) => {
                let got = index.touch(&key(i)).is_ok();
                let want = model.touch(key(i)).is_ok();
                if got != want {
                    return Err(format!("step {step} touch {i}: index {got}, model {want}"));
                }
            }
            LruOp::Resize(n) => {
                let got = index.resize(n).unwrap();
                let want = model.resize(n);
                if got != want {
                    return Err(format!("step {step} resize {n}: index {got:?}, model {want:?}"));
                }
            }
        }
        if index.lru_order() != model.order {
            return Err(format!("step {step}: order diverged"));
        }
    }
    index.validate()
}

/// Counts faults by brute force: scans for the page whose last fault is
/// oldest whenever room is needed.
pub fn simulate_presence(trace: &AccessTrace, capacity: usize) -> u64 {
    let mut present: Vec<((u64, u64), usize)> = Vec::new();
    let mut faults = 0;
    for (t, a) in trace.accesses.iter().enumerate() {
        let page = (a.region_id, a.addr / PAGE_SIZE as u64);
        if present.iter().any(|(p, _)| *p == page) {
            continue;
        }
        faults += 1;
        if present.len() == capacity {
            let oldest = (0..present.len()).min_by_key(|i| present[*i].1).unwrap();
            present.swap_remove(oldest);
        }
        present.push((page, t));
    }
    faults
}

/// Checks every logged prefetch against the fault sequence: the trigger
/// fault and the previous fault in the same region must be adjacent and
/// ascending, and the prefetched page must follow the trigger.
pub fn check_prefetch_log(faults: &[(u64, PageKey)], log: &[PrefetchRecord]) -> Result<(), String> {
    for rec in log {
        let pos = faults
            .iter()
            .position(|(seq, _)| *seq == rec.after_seq)
            .ok_or_else(|| format!("prefetch after unknown fault {}", rec.after_seq))?;
        let trigger = faults[pos].1;
        if trigger != rec.trigger {
            return Err(format!("fault {} was {trigger}, log says {}", rec.after_seq, rec.trigger));
        }
        let prev = faults[..pos]
            .iter()
            .rev()
            .find(|(_, k)| k.region_id == trigger.region_id)
            .map(|(_, k)| *k)
            .ok_or_else(|| format!("prefetch after first fault in region: {rec:?}"))?;
        if prev.page_addr() + PAGE_SIZE as u64 != trigger.page_addr() {
            return Err(format!("prefetch after non-adjacent faults {prev} then {trigger}"));
        }
        if rec.key.region_id != trigger.region_id || rec.key.page_addr() != trigger.page_addr() + PAGE_SIZE as u64 {
            return Err(format!("prefetched {} after {trigger}", rec.key));
        }
    }
    Ok(())
}

/// Every combination of the seven optimization flags that forms a valid
/// configuration, indexed by a 7-bit mask.
pub fn opts_from_mask(mask: u8) -> Optimizations {
    let bit = |i: u8| mask & (1 << i) != 0;
    let mut o = Optimizations {
        page_cache: bit(0),
        zero_page: bit(1),
        prefetch: bit(2),
        async_evict: bit(3),
        async_prefetch: bit(4),
        cpu_affinity: bit(5),
        async_reinit: bit(6),
    };
    if o.prefetch {
        o.page_cache = true;
    }
    o
}

/// Trace shapes mixing sequential runs, random jumps and zero writes.
pub fn random_trace(rng: &mut ChaCha8Rng, regions: &[(u64, usize)], len: usize) -> AccessTrace {
    let mut out = Vec::with_capacity(len);
    let mut cursor: HashMap<u64, usize> = HashMap::new();
    while out.len() < len {
        let (region, pages) = regions[rng.random_range(0..regions.len())];
        let run = rng.random_range(1..=16usize).min(len - out.len());
        let sequential = rng.random_bool(0.5);
        for _ in 0..run {
            let page = if sequential {
                let c = cursor.entry(region).or_insert(rng.random_range(0..pages));
                *c = (*c + 1) % pages;
                *c
            } else {
                rng.random_range(0..pages)
            };
            let addr = (page * PAGE_SIZE + rng.random_range(0..PAGE_SIZE)) as u64;
            out.push(match rng.random_range(0..10) {
                0..=4 => Access::read(region, addr),
                5 => Access::write(region, addr, None),
                _ => Access::write(region, addr, Some(rng.random())),
            });
        }
    }
    AccessTrace::new(out)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct FidelityRun {
    pub faults: Vec<(u64, PageKey)>,
    pub write_fault_resolutions: Vec<bool>,
    /// Prefetches checked against the fault log.
    pub prefetches: usize,
}

/// Engine config for a flag mask, with a page cache as large as the
/// resident bound.
pub fn masked_config(mask: u8, capacity: usize, threshold: usize) -> EngineConfig {
    EngineConfig {
        capacity,
        page_cache_capacity: capacity,
        evict_batch_threshold: threshold,
        opts: opts_from_mask(mask),
        ..EngineConfig::default()
    }
}

/// Replays `trace` on a fresh engine, reads every page back, and compares
/// the guest's contents with the flat model. Returns the fault log.
/// Contents are not compared in paper write-fault mode, which drops data.
pub fn fidelity_check(config: EngineConfig, store: Arc<dyn StoreBackend>, trace: &AccessTrace) -> Result<FidelityRun, String> {
    let engine = Engine::new(config.clone(), store).map_err(|e| e.to_string())?;
    let mut guest = SimulatedGuest::for_trace(&engine, trace, ZeroFillPolicy::Overwrite).map_err(|e| e.to_string())?;
    let mut faults = Vec::new();
    let mut write_fault_resolutions = Vec::new();
    let mut seq = 0;
    let mut apply = |guest: &mut SimulatedGuest, a: &Access, faults: &mut Vec<(u64, PageKey)>| -> Result<(), String> {
        match guest.apply(&engine, a).map_err(|e| e.to_string())? {
            AccessOutcome::Hit => {}
            AccessOutcome::Faulted(res) => {
                seq += 1;
                let engine_region = guest.engine_region(a.region_id).unwrap();
                faults.push((seq, PageKey::new(engine_region, a.addr)));
                if a.kind == FaultKind::Write {
                    write_fault_resolutions.push(res.is_zero_fill());
                }
            }
        }
        let resident = engine.resident_count();
        if resident > config.capacity {
            return Err(format!("{resident} resident pages over capacity {}", config.capacity));
        }
        Ok(())
    };
    for a in &trace.accesses {
        apply(&mut guest, a, &mut faults)?;
    }
    engine.flush_evict_queue().map_err(|e| e.to_string())?;
    engine.quiesce().map_err(|e| e.to_string())?;
    for region in trace.regions() {
        if guest.present_keys(region) != engine.resident_keys(guest.engine_region(region).unwrap()) {
            return Err(format!("presence and residency disagree in region {region}"));
        }
    }
    engine.validate()?;
    let log = engine.prefetch_log();
    check_prefetch_log(&faults, &log)?;

    let model = FlatModel::run(trace);
    for region in trace.regions() {
        let len = trace.region_extent(region).unwrap() as usize;
        for page in 0..len / PAGE_SIZE {
            apply(&mut guest, &Access::read(region, (page * PAGE_SIZE) as u64), &mut faults)?;
        }
        if config.paper_write_fault_mode {
            continue;
        }
        let want = model.region(region, len);
        let got = guest.region_bytes(region).unwrap();
        if got != want.as_slice() {
            let page = got
                .chunks(PAGE_SIZE)
                .zip(want.chunks(PAGE_SIZE))
                .position(|(a, b)| a != b)
                .unwrap();
            return Err(format!("region {region} page {page} differs from flat model"));
        }
    }
    engine.validate()?;
    engine.shutdown().map_err(|e| e.to_string())?;
    Ok(FidelityRun {
        faults,
        write_fault_resolutions,
        prefetches: log.len(),
    })
}
