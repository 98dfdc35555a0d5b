// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! The fault-resolving monitor.
//!
//! An [`Engine`] answers faults on registered regions. A fault on a page
//! never seen before (or evicted while all zeros) is answered with a zero
//! page; anything else is copied back from wherever its bytes currently
//! live: the eviction queue, the page cache, or the backing store. When the
//! resident set is full the least recently faulted page is pulled out of
//! the address space through the [`PageHost`] and written out.
//!
//! Fault handling is serialized by a gate lock; the residency state sits
//! behind a separate lock that background workers take only briefly and
//! never across store I/O.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use thiserror::Error;

use crate::affinity;
use crate::externram::{StoreBackend, StoreError};
use crate::lru::{IndexError, ResidencyIndex, ResidencyState};
use crate::page::{FaultEvent, FaultKind, PageBuffer, PageKey, Resolution, PAGE_SIZE};

pub mod cache;
pub mod config;
mod pool;
pub mod stats;

pub use cache::PageCache;
pub use config::{ConfigDocument, ConfigError, EngineConfig, Optimizations, WorkerRole};
pub use stats::{FaultSpans, Histogram, Section, SectionStats};

use pool::BufferPool;
use stats::FaultTimer;

/// The address space whose faults the engine resolves.
///
/// `capture` is the move-out primitive: it copies the page's bytes into
/// `buf` and removes the page, so the next access faults again.
pub trait PageHost {
    fn capture(&mut self, key: PageKey, buf: &mut PageBuffer) -> io::Result<()>;
    fn install_zero(&mut self, key: PageKey) -> io::Result<()>;
    fn install_copy(&mut self, key: PageKey, buf: &PageBuffer) -> io::Result<()>;
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("region size {0} is not a positive multiple of {PAGE_SIZE}")]
    RegionSize(u64),
    #[error("unknown region {0}")]
    UnknownRegion(u64),
    #[error("page {0} lies outside its region")]
    OutOfRange(PageKey),
    #[error("fault on page {0}, which is already resident")]
    AlreadyResident(PageKey),
    #[error("fault sequence number {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("page {0} is recorded as stored but the store has no copy")]
    MissingPage(PageKey),
    #[error("flushed {flushed} pages before the store failed: {source}")]
    Flush {
        flushed: usize,
        #[source]
        source: StoreError,
    },
    #[error("address space operation failed: {0}")]
    Host(#[source] io::Error),
    #[error("background worker is gone")]
    WorkerGone,
}

/// Running totals kept by the engine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EngineCounters {
    pub faults: u64,
    pub read_faults: u64,
    pub write_faults: u64,
    pub zero_fills: u64,
    pub copies: u64,
    /// Copies served by reading the store on the fault path.
    pub store_read_faults: u64,
    pub cache_hits: u64,
    /// Copies served from pages still waiting to be written out.
    pub pending_hits: u64,
    pub evictions: u64,
    pub zero_marked: u64,
    pub sync_writes: u64,
    pub flush_batches: u64,
    pub flushed_pages: u64,
    pub prefetch_issued: u64,
    pub prefetch_filled: u64,
    pub prefetch_dropped: u64,
    pub store_errors: u64,
}

/// A prefetch issued after the fault with sequence number `after_seq`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PrefetchRecord {
    pub after_seq: u64,
    pub trigger: PageKey,
    pub key: PageKey,
}

#[derive(Debug, Default, Clone, Copy)]
struct PrefetchTrack {
    last_addr: Option<u64>,
    streak: bool,
}

struct State {
    index: ResidencyIndex,
    regions: HashMap<u64, u64>,
    next_region: u64,
    cache: PageCache,
    queue: VecDeque<(PageKey, PageBuffer)>,
    // Batches handed to the writer but not yet confirmed, by ticket.
    inflight: HashMap<PageKey, (u64, PageBuffer)>,
    next_ticket: u64,
    // Keys the store may hold bytes for, including writes still in flight.
    stored: HashSet<PageKey>,
    tracks: HashMap<u64, PrefetchTrack>,
    prefetch_pending: HashSet<PageKey>,
    prefetch_log: Vec<PrefetchRecord>,
    counters: EngineCounters,
}

impl State {
    fn check_key(&self, key: &PageKey) -> Result<(), EngineError> {
        let size = *self
            .regions
            .get(&key.region_id)
            .ok_or(EngineError::UnknownRegion(key.region_id))?;
        if key.page_addr() >= size {
            return Err(EngineError::OutOfRange(*key));
        }
        Ok(())
    }

    fn take_pending(&mut self, key: &PageKey) -> Option<PageBuffer> {
        if let Some(pos) = self.queue.iter().position(|(k, _)| k == key) {
            return self.queue.remove(pos).map(|(_, b)| b);
        }
        self.inflight.remove(key).map(|(_, b)| b)
    }
}

enum Source {
    Zero {
        prior: Option<ResidencyState>,
        // Bytes set aside when a write fault discards them; restored on rollback.
        discarded: Option<PageBuffer>,
    },
    Pending(PageBuffer),
    Cache(PageBuffer),
    Store,
}

enum EvictJob {
    Batch {
        ticket: u64,
        entries: Vec<(PageKey, PageBuffer)>,
    },
    Remove(PageKey),
    Barrier(mpsc::SyncSender<()>),
}

enum PrefetchJob {
    Fetch(Vec<PageKey>),
    Barrier(mpsc::SyncSender<()>),
}

struct Shared {
    config: EngineConfig,
    store: Arc<dyn StoreBackend>,
    state: Mutex<State>,
    prefetch_done: Condvar,
    stats: Mutex<SectionStats>,
    pool: BufferPool,
}

struct Gate {
    last_seq: Option<u64>,
}

pub struct Engine {
    shared: Arc<Shared>,
    gate: Mutex<Gate>,
    evict_tx: Option<Sender<EvictJob>>,
    prefetch_tx: Option<Sender<PrefetchJob>>,
    workers: Vec<JoinHandle<()>>,
}

impl Engine {
    pub fn new(config: EngineConfig, store: Arc<dyn StoreBackend>) -> Result<Self, EngineError> {
        config.validate()?;
        let state = State {
            index: ResidencyIndex::new(config.capacity)?,
            regions: HashMap::new(),
            next_region: 1,
            cache: PageCache::new(if config.opts.page_cache {
                config.page_cache_capacity
            } else {
                0
            }),
            queue: VecDeque::new(),
            inflight: HashMap::new(),
            next_ticket: 0,
            stored: HashSet::new(),
            tracks: HashMap::new(),
            prefetch_pending: HashSet::new(),
            prefetch_log: Vec::new(),
            counters: EngineCounters::default(),
        };
        let shared = Arc::new(Shared {
            pool: BufferPool::new(config.scratch_buffers, config.opts.async_reinit),
            config,
            store,
            state: Mutex::new(state),
            prefetch_done: Condvar::new(),
            stats: Mutex::new(SectionStats::default()),
        });

        let cores = affinity::available_cores();
        let opts = shared.config.opts;
        let mut engine = Engine {
            shared: Arc::clone(&shared),
            gate: Mutex::new(Gate { last_seq: None }),
            evict_tx: None,
            prefetch_tx: None,
            workers: Vec::new(),
        };
        if opts.async_evict {
            let (tx, rx) = mpsc::channel();
            let sh = Arc::clone(&shared);
            let core = sh.config.core_for(WorkerRole::Evict, cores);
            engine.workers.push(spawn_worker("pagemon-evict", core, move || evict_worker(&sh, rx)));
            engine.evict_tx = Some(tx);
        }
        if opts.prefetch && opts.async_prefetch {
            let (tx, rx) = mpsc::channel();
            let sh = Arc::clone(&shared);
            let core = sh.config.core_for(WorkerRole::Prefetch, cores);
            engine.workers.push(spawn_worker("pagemon-prefetch", core, move || prefetch_worker(&sh, rx)));
            engine.prefetch_tx = Some(tx);
        }
        if opts.async_reinit {
            let sh = Arc::clone(&shared);
            let core = sh.config.core_for(WorkerRole::Reinit, cores);
            engine.workers.push(spawn_worker("pagemon-reinit", core, move || sh.pool.refill_loop()));
        }
        Ok(engine)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.shared.config
    }

    pub fn store(&self) -> &Arc<dyn StoreBackend> {
        &self.shared.store
    }

    /// Registers a new region of `size_bytes`; every page starts out unknown.
    pub fn register_region(&self, size_bytes: u64) -> Result<u64, EngineError> {
        if size_bytes == 0 || !size_bytes.is_multiple_of(PAGE_SIZE as u64) {
            return Err(EngineError::RegionSize(size_bytes));
        }
        let mut st = self.lock();
        let id = st.next_region;
        st.next_region += 1;
        st.regions.insert(id, size_bytes);
        Ok(id)
    }

    pub fn region_size(&self, region_id: u64) -> Option<u64> {
        self.lock().regions.get(&region_id).copied()
    }

    /// Forgets a region: residency, cached and queued pages are dropped
    /// without being written, and every page the store may hold for the
    /// region is removed from it.
    pub fn deregister_region(&self, region_id: u64) -> Result<(), EngineError> {
        let _gate = self.gate.lock().unwrap();
        {
            let mut st = self.lock();
            if st.regions.remove(&region_id).is_none() {
                return Err(EngineError::UnknownRegion(region_id));
            }
            st.queue.retain(|(k, _)| k.region_id != region_id);
            st.inflight.retain(|k, _| k.region_id != region_id);
        }
        // Writes already handed to the writer must land before the removes.
        self.barrier()?;
        let doomed: Vec<PageKey> = {
            let mut st = self.lock();
            st.index.forget_region(region_id);
            st.cache.remove_region(region_id);
            st.tracks.remove(&region_id);
            let mut doomed: Vec<_> = st
                .stored
                .iter()
                .filter(|k| k.region_id == region_id)
                .copied()
                .collect();
            doomed.sort_unstable();
            for k in &doomed {
                st.stored.remove(k);
            }
            doomed
        };
        let mut first_err = None;
        for key in doomed {
            if let Err(e) = self.shared.store.remove(key) {
                self.lock().counters.store_errors += 1;
                first_err.get_or_insert(e);
            }
        }
        match first_err {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }

    /// Resolves a fault on a non-resident page and installs the result
    /// through `host`. May first move the least recently faulted page out.
    pub fn handle_fault(&self, event: FaultEvent, host: &mut dyn PageHost) -> Result<Resolution, EngineError> {
        let mut gate = self.gate.lock().unwrap();
        let started = Instant::now();
        let key = event.key;
        let sh = &*self.shared;
        let mut timer = FaultTimer::new(event.seq);

        let (source, victim) = {
            let mut st = self.lock();
            if let Some(last) = gate.last_seq {
                if event.seq <= last {
                    return Err(EngineError::OutOfOrder { last, got: event.seq });
                }
            }
            st.check_key(&key)?;
            if st.index.is_resident(&key) {
                return Err(EngineError::AlreadyResident(key));
            }
            gate.last_seq = Some(event.seq);
            while st.prefetch_pending.contains(&key) {
                st = sh.prefetch_done.wait(st).unwrap();
            }
            let source = self.classify(&mut st, &key, event.kind);
            let victim = st.index.record_resident(key)?;
            st.counters.faults += 1;
            match event.kind {
                FaultKind::Read => st.counters.read_faults += 1,
                FaultKind::Write => st.counters.write_faults += 1,
            }
            (source, victim)
        };
        let copy_path = !matches!(source, Source::Zero { .. });

        let read_started = Instant::now();
        if let Some(victim) = victim {
            // Store errors leave the victim queued for the next flush; the
            // fault itself can still be served.
            if let Err(e @ EngineError::Host(_)) = self.evict_victim(victim, host, &mut timer) {
                let mut st = self.lock();
                Self::rollback(&mut st, key, source);
                let _ = st.index.set_state(&victim, ResidencyState::Resident);
                return Err(e);
            }
        }

        let bytes = match source {
            Source::Zero { .. } => None,
            Source::Pending(buf) | Source::Cache(buf) => {
                timer.record(Section::ReadViaPageCache, Instant::now());
                Some(buf)
            }
            Source::Store => {
                let via_cache = Instant::now();
                let read = Instant::now();
                let result = sh.store.read(key);
                timer.record(Section::ReadPage, read);
                timer.record(Section::ReadViaPageCache, via_cache);
                match result {
                    Ok(Some(buf)) => Some(buf),
                    Ok(None) | Err(_) => {
                        let mut st = self.lock();
                        Self::rollback(&mut st, key, Source::Store);
                        return Err(match result {
                            Err(e) => {
                                st.counters.store_errors += 1;
                                EngineError::Store(e)
                            }
                            _ => EngineError::MissingPage(key),
                        });
                    }
                }
            }
        };
        if copy_path {
            timer.record(Section::ReadFromExternram, read_started);
        }

        let installed = match &bytes {
            None => {
                let t = Instant::now();
                let r = host.install_zero(key);
                timer.record(Section::UffdZeropage, t);
                r
            }
            Some(buf) => {
                let t = Instant::now();
                let r = host.install_copy(key, buf);
                timer.record(Section::UffdCopy, t);
                r
            }
        };
        if let Err(e) = installed {
            let mut st = self.lock();
            let source = match bytes {
                // The store copy is intact; only residency needs undoing.
                Some(_) if matches!(st.index.state(&key), Some(ResidencyState::Resident)) && st.stored.contains(&key) => {
                    Source::Store
                }
                Some(buf) => Source::Pending(buf),
                None => Source::Zero {
                    prior: None,
                    discarded: None,
                },
            };
            Self::rollback(&mut st, key, source);
            return Err(EngineError::Host(e));
        }

        let prefetch = {
            let mut st = self.lock();
            match &bytes {
                None => st.counters.zero_fills += 1,
                Some(_) => st.counters.copies += 1,
            }
            self.track_and_pick_prefetch(&mut st, key, event.seq)
        };
        if let Some(next) = prefetch {
            self.issue_prefetch(next);
        }

        timer.record(
            if copy_path {
                Section::HandleUserfaultCopyEvict
            } else {
                Section::HandleUserfaultZero
            },
            started,
        );
        sh.stats.lock().unwrap().commit_fault(timer.finish());
        drop(gate);

        Ok(match bytes {
            None => Resolution::ZeroFill,
            Some(buf) => Resolution::Copy(buf),
        })
    }

    /// Writes out a page already marked `PendingEvict`, whose current bytes
    /// are `buf`.
    pub fn evict_page(&self, key: PageKey, buf: PageBuffer) -> Result<(), EngineError> {
        let _gate = self.gate.lock().unwrap();
        {
            let st = self.lock();
            let state = st.index.state(&key).ok_or(IndexError::Unknown(key))?;
            let held = st.inflight.contains_key(&key) || st.queue.iter().any(|(k, _)| *k == key);
            if state != ResidencyState::PendingEvict || held {
                return Err(IndexError::IllegalTransition {
                    key,
                    from: state,
                    to: ResidencyState::PendingEvict,
                }
                .into());
            }
        }
        self.evict_captured(key, buf, None)
    }

    /// Changes the resident-set bound, moving out excess pages through `host`.
    pub fn resize(&self, new_capacity: usize, host: &mut dyn PageHost) -> Result<Vec<PageKey>, EngineError> {
        let _gate = self.gate.lock().unwrap();
        let victims = self.lock().index.resize(new_capacity)?;
        for victim in &victims {
            let mut timer = FaultTimer::new(0);
            match self.evict_victim(*victim, host, &mut timer) {
                Ok(()) | Err(EngineError::Store(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(victims)
    }

    /// Writes every queued eviction with one batched write and waits for
    /// batches already handed to the writer. Returns the number of pages
    /// written by this call.
    pub fn flush_evict_queue(&self) -> Result<usize, EngineError> {
        let _gate = self.gate.lock().unwrap();
        self.flush_locked()
    }

    /// Runs the prefetch policy for a fault on `key` as if it had just been
    /// resolved, issuing the prefetch if one is due.
    pub fn maybe_prefetch(&self, key: PageKey) -> Option<PageKey> {
        let _gate = self.gate.lock().unwrap();
        let next = {
            let mut st = self.lock();
            self.track_and_pick_prefetch(&mut st, key, 0)
        };
        if let Some(next) = next {
            self.issue_prefetch(next);
        }
        next
    }

    /// Waits until every background job issued so far has finished.
    pub fn quiesce(&self) -> Result<(), EngineError> {
        let _gate = self.gate.lock().unwrap();
        self.barrier()
    }

    pub fn stats_snapshot(&self) -> SectionStats {
        self.shared.stats.lock().unwrap().clone()
    }

    pub fn reset_stats(&self) {
        self.shared.stats.lock().unwrap().clear();
    }

    pub fn counters(&self) -> EngineCounters {
        self.lock().counters
    }

    pub fn prefetch_log(&self) -> Vec<PrefetchRecord> {
        self.lock().prefetch_log.clone()
    }

    pub fn residency_state(&self, key: &PageKey) -> Option<ResidencyState> {
        self.lock().index.state(key)
    }

    pub fn resident_count(&self) -> usize {
        self.lock().index.resident_count()
    }

    /// Resident pages of one region, sorted.
    pub fn resident_keys(&self, region_id: u64) -> Vec<PageKey> {
        let st = self.lock();
        let mut keys: Vec<_> = st
            .index
            .iter()
            .filter(|(k, s)| k.region_id == region_id && *s == ResidencyState::Resident)
            .map(|(k, _)| *k)
            .collect();
        keys.sort_unstable();
        keys
    }

    /// Evictions waiting for a batched write (not yet handed to the writer).
    pub fn queued_evictions(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn cached_pages(&self) -> usize {
        self.lock().cache.len()
    }

    /// Checks internal invariants; intended for tests.
    pub fn validate(&self) -> Result<(), String> {
        let st = self.lock();
        st.index.validate()?;
        let mut seen = HashSet::new();
        for (k, _) in &st.queue {
            if !seen.insert(*k) {
                return Err(format!("{k} queued twice"));
            }
            if st.inflight.contains_key(k) {
                return Err(format!("{k} both queued and in flight"));
            }
        }
        for k in seen.iter().chain(st.inflight.keys()) {
            if st.index.state(k) != Some(ResidencyState::PendingEvict) {
                return Err(format!("{k} held for writing but in state {:?}", st.index.state(k)));
            }
        }
        for (k, state) in st.index.iter() {
            if state == ResidencyState::ZeroMarked && st.stored.contains(k) {
                return Err(format!("zero-marked {k} may still have store bytes"));
            }
        }
        if st.cache.len() > st.cache.capacity() {
            return Err("page cache over capacity".into());
        }
        Ok(())
    }

    /// Flushes queued evictions and stops the background workers.
    pub fn shutdown(mut self) -> Result<usize, EngineError> {
        let flushed = self.flush_evict_queue();
        self.stop_workers();
        flushed
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.shared.state.lock().unwrap()
    }

    fn classify(&self, st: &mut State, key: &PageKey, kind: FaultKind) -> Source {
        let prior = st.index.state(key);
        if self.shared.config.paper_write_fault_mode && kind == FaultKind::Write {
            let discarded = match prior {
                Some(ResidencyState::PendingEvict) => st.take_pending(key),
                _ => None,
            };
            st.cache.remove(key);
            return Source::Zero { prior, discarded };
        }
        match prior {
            None | Some(ResidencyState::ZeroMarked) => Source::Zero {
                prior,
                discarded: None,
            },
            Some(ResidencyState::PendingEvict) => {
                let buf = st
                    .take_pending(key)
                    .expect("pending-evict page without held bytes");
                st.counters.pending_hits += 1;
                Source::Pending(buf)
            }
            Some(ResidencyState::InStore) => match st.cache.take(key) {
                Some(buf) => {
                    st.counters.cache_hits += 1;
                    Source::Cache(buf)
                }
                None => {
                    st.counters.store_read_faults += 1;
                    Source::Store
                }
            },
            Some(ResidencyState::Resident) => unreachable!("checked by caller"),
        }
    }

    /// Puts `key` back the way it was before a failed fault.
    fn rollback(st: &mut State, key: PageKey, source: Source) {
        st.index.forget(&key);
        match source {
            Source::Zero { prior: None, .. } => {}
            Source::Zero {
                prior: Some(state),
                discarded,
            } => {
                st.index.insert_untracked(key, state);
                if let Some(buf) = discarded {
                    st.queue.push_back((key, buf));
                }
            }
            Source::Pending(buf) => {
                st.index.insert_untracked(key, ResidencyState::PendingEvict);
                st.queue.push_back((key, buf));
            }
            Source::Cache(buf) => {
                st.index.insert_untracked(key, ResidencyState::InStore);
                st.cache.insert(key, buf);
            }
            Source::Store => st.index.insert_untracked(key, ResidencyState::InStore),
        }
    }

    fn evict_victim(&self, victim: PageKey, host: &mut dyn PageHost, timer: &mut FaultTimer) -> Result<(), EngineError> {
        let started = Instant::now();
        let mut buf = self.shared.pool.acquire();
        let t = Instant::now();
        let captured = host.capture(victim, &mut buf);
        timer.record(Section::UffdRemap, t);
        if let Err(e) = captured {
            self.shared.pool.recycle(buf);
            return Err(EngineError::Host(e));
        }
        let result = self.evict_captured(victim, buf, Some(&mut *timer));
        timer.record(Section::EvictToExternram, started);
        result
    }

    fn evict_captured(&self, key: PageKey, buf: PageBuffer, mut timer: Option<&mut FaultTimer>) -> Result<(), EngineError> {
        let sh = &*self.shared;
        let opts = sh.config.opts;
        if opts.zero_page {
            let t = Instant::now();
            let zero = buf.is_zero();
            if let Some(timer) = timer.as_deref_mut() {
                timer.record(Section::ZeroCheck, t);
            }
            if zero {
                let had_store_copy = {
                    let mut st = self.lock();
                    st.index.set_state(&key, ResidencyState::ZeroMarked)?;
                    st.cache.remove(&key);
                    st.counters.evictions += 1;
                    st.counters.zero_marked += 1;
                    st.stored.remove(&key)
                };
                sh.pool.recycle(buf);
                if had_store_copy {
                    return self.remove_stale(key);
                }
                return Ok(());
            }
        }

        let mut st = self.lock();
        st.cache.remove(&key);
        st.counters.evictions += 1;
        st.stored.insert(key);
        if opts.async_evict {
            st.queue.push_back((key, buf));
            if st.queue.len() >= sh.config.evict_batch_threshold {
                self.dispatch_batch(&mut st)?;
            }
            return Ok(());
        }
        drop(st);

        let t = Instant::now();
        let written = sh.store.write(key, &buf);
        if let Some(timer) = timer {
            timer.record(Section::WritePage, t);
        }
        let mut st = self.lock();
        match written {
            Ok(()) => {
                st.index.set_state(&key, ResidencyState::InStore)?;
                st.counters.sync_writes += 1;
                drop(st);
                sh.pool.recycle(buf);
                Ok(())
            }
            Err(e) => {
                st.queue.push_back((key, buf));
                st.counters.store_errors += 1;
                Err(e.into())
            }
        }
    }

    fn remove_stale(&self, key: PageKey) -> Result<(), EngineError> {
        if let Some(tx) = &self.evict_tx {
            // Ordered after any batch still carrying the old bytes.
            return tx.send(EvictJob::Remove(key)).map_err(|_| EngineError::WorkerGone);
        }
        self.shared.store.remove(key).map_err(|e| {
            let mut st = self.lock();
            st.stored.insert(key);
            st.counters.store_errors += 1;
            e.into()
        })
    }

    fn dispatch_batch(&self, st: &mut State) -> Result<(), EngineError> {
        let Some(tx) = &self.evict_tx else {
            return Ok(());
        };
        let entries: Vec<_> = st.queue.drain(..).collect();
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        for (k, b) in &entries {
            st.inflight.insert(*k, (ticket, b.clone()));
        }
        tx.send(EvictJob::Batch { ticket, entries })
            .map_err(|_| EngineError::WorkerGone)
    }

    fn flush_locked(&self) -> Result<usize, EngineError> {
        self.barrier()?;
        let entries: Vec<_> = {
            let mut st = self.lock();
            if st.queue.is_empty() {
                return Ok(0);
            }
            st.queue.drain(..).collect()
        };
        let t = Instant::now();
        let result = self.shared.store.multi_write(&entries);
        self.shared.stats.lock().unwrap().record(Section::WritePage, t.elapsed());
        let applied = match &result {
            Ok(()) => entries.len(),
            Err(e) => e.applied(),
        };
        let mut st = self.lock();
        st.counters.flush_batches += 1;
        st.counters.flushed_pages += applied as u64;
        let mut recycled = Vec::new();
        for (i, (key, buf)) in entries.into_iter().enumerate() {
            if i < applied {
                st.index.set_state(&key, ResidencyState::InStore)?;
                recycled.push(buf);
            } else {
                st.queue.push_back((key, buf));
            }
        }
        drop(st);
        for buf in recycled {
            self.shared.pool.recycle(buf);
        }
        match result {
            Ok(()) => Ok(applied),
            Err(source) => {
                self.lock().counters.store_errors += 1;
                Err(EngineError::Flush {
                    flushed: applied,
                    source,
                })
            }
        }
    }

    fn track_and_pick_prefetch(&self, st: &mut State, key: PageKey, seq: u64) -> Option<PageKey> {
        let track = st.tracks.entry(key.region_id).or_default();
        let adjacent = track.last_addr.is_some() && track.last_addr == key.prev().map(|p| p.page_addr());
        track.last_addr = Some(key.page_addr());
        track.streak = adjacent;
        if !(self.shared.config.opts.prefetch && adjacent) {
            return None;
        }
        let next = key.next()?;
        let size = *st.regions.get(&key.region_id)?;
        if next.page_addr() >= size
            || st.index.state(&next) != Some(ResidencyState::InStore)
            || st.cache.contains(&next)
            || st.prefetch_pending.contains(&next)
        {
            return None;
        }
        st.prefetch_pending.insert(next);
        st.counters.prefetch_issued += 1;
        st.prefetch_log.push(PrefetchRecord {
            after_seq: seq,
            trigger: key,
            key: next,
        });
        Some(next)
    }

    fn issue_prefetch(&self, key: PageKey) {
        if let Some(tx) = &self.prefetch_tx {
            if tx.send(PrefetchJob::Fetch(vec![key])).is_ok() {
                return;
            }
        }
        let result = self.shared.store.read(key);
        complete_prefetch(&self.shared, key, result);
    }

    fn barrier(&self) -> Result<(), EngineError> {
        if let Some(tx) = &self.evict_tx {
            let (done_tx, done_rx) = mpsc::sync_channel(1);
            tx.send(EvictJob::Barrier(done_tx)).map_err(|_| EngineError::WorkerGone)?;
            done_rx.recv().map_err(|_| EngineError::WorkerGone)?;
        }
        if let Some(tx) = &self.prefetch_tx {
            let (done_tx, done_rx) = mpsc::sync_channel(1);
            tx.send(PrefetchJob::Barrier(done_tx)).map_err(|_| EngineError::WorkerGone)?;
            done_rx.recv().map_err(|_| EngineError::WorkerGone)?;
        }
        Ok(())
    }

    fn stop_workers(&mut self) {
        self.evict_tx = None;
        self.prefetch_tx = None;
        self.shared.pool.stop();
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if !self.workers.is_empty() {
            let _ = self.flush_evict_queue();
            self.stop_workers();
        }
    }
}

fn spawn_worker(name: &str, core: Option<usize>, body: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    thread::Builder::new()
        .name(name.to_string())
        .spawn(move || {
            if let Some(core) = core {
                affinity::pin_current_thread(core);
            }
            body()
        })
        .expect("spawning engine worker")
}

fn evict_worker(sh: &Shared, rx: Receiver<EvictJob>) {
    for job in rx {
        match job {
            EvictJob::Batch { ticket, entries } => {
                let t = Instant::now();
                let result = sh.store.multi_write(&entries);
                sh.stats.lock().unwrap().record(Section::WritePage, t.elapsed());
                let applied = match &result {
                    Ok(()) => entries.len(),
                    Err(e) => e.applied(),
                };
                let mut recycled = Vec::with_capacity(entries.len() * 2);
                let mut st = sh.state.lock().unwrap();
                st.counters.flush_batches += 1;
                st.counters.flushed_pages += applied as u64;
                if result.is_err() {
                    st.counters.store_errors += 1;
                }
                for (i, (key, buf)) in entries.into_iter().enumerate() {
                    recycled.push(buf);
                    let current = matches!(st.inflight.get(&key), Some((t, _)) if *t == ticket);
                    if !current {
                        // Re-faulted or dropped while the batch was in flight.
                        continue;
                    }
                    let (_, held) = st.inflight.remove(&key).expect("checked");
                    if i < applied {
                        let _ = st.index.set_state(&key, ResidencyState::InStore);
                        recycled.push(held);
                    } else {
                        st.queue.push_back((key, held));
                    }
                }
                drop(st);
                for buf in recycled {
                    sh.pool.recycle(buf);
                }
            }
            EvictJob::Remove(key) => {
                if sh.store.remove(key).is_err() {
                    let mut st = sh.state.lock().unwrap();
                    st.counters.store_errors += 1;
                    // Keep it so region teardown retries the remove.
                    st.stored.insert(key);
                }
            }
            EvictJob::Barrier(done) => {
                let _ = done.send(());
            }
        }
    }
}

fn prefetch_worker(sh: &Shared, rx: Receiver<PrefetchJob>) {
    for job in rx {
        match job {
            PrefetchJob::Fetch(keys) => match sh.store.multi_read(&keys) {
                Ok(pages) => {
                    for (key, page) in keys.into_iter().zip(pages) {
                        complete_prefetch(sh, key, Ok(page));
                    }
                }
                Err(e) => {
                    let msg = e.to_string();
                    for key in keys {
                        complete_prefetch(sh, key, Err(StoreError::Protocol(msg.clone())));
                    }
                }
            },
            PrefetchJob::Barrier(done) => {
                let _ = done.send(());
            }
        }
    }
}

fn complete_prefetch(sh: &Shared, key: PageKey, result: Result<Option<PageBuffer>, StoreError>) {
    let mut st = sh.state.lock().unwrap();
    st.prefetch_pending.remove(&key);
    match result {
        Ok(Some(buf)) if st.index.state(&key) == Some(ResidencyState::InStore) => {
            st.cache.insert(key, buf);
            st.counters.prefetch_filled += 1;
        }
        Err(_) => {
            st.counters.prefetch_dropped += 1;
            st.counters.store_errors += 1;
        }
        _ => st.counters.prefetch_dropped += 1,
    }
    drop(st);
    sh.prefetch_done.notify_all();
}
