// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

use std::sync::atomic::{AtomicU64, Ordering};

use super::{StoreBackend, StoreError, StoreResult};
use crate::page::{PageBuffer, PageKey};

/// Call counts observed by an [`InstrumentedStore`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StoreCounters {
    pub reads: u64,
    pub writes: u64,
    pub removes: u64,
    pub multi_reads: u64,
    pub multi_read_items: u64,
    pub multi_writes: u64,
    pub multi_write_items: u64,
}

impl StoreCounters {
    /// Pages read, single or batched.
    pub fn pages_read(&self) -> u64 {
        self.reads + self.multi_read_items
    }

    /// Pages written, single or batched.
    pub fn pages_written(&self) -> u64 {
        self.writes + self.multi_write_items
    }
}

#[derive(Default)]
struct Counters {
    reads: AtomicU64,
    writes: AtomicU64,
    removes: AtomicU64,
    multi_reads: AtomicU64,
    multi_read_items: AtomicU64,
    multi_writes: AtomicU64,
    multi_write_items: AtomicU64,
}

/// Wraps a backend, counting calls and optionally failing the next N
/// operations with a retryable error.
pub struct InstrumentedStore<B> {
    inner: B,
    counters: Counters,
    fail_next: AtomicU64,
}

impl<B: StoreBackend> InstrumentedStore<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            counters: Counters::default(),
            fail_next: AtomicU64::new(0),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn counters(&self) -> StoreCounters {
        let c = &self.counters;
        StoreCounters {
            reads: c.reads.load(Ordering::Relaxed),
            writes: c.writes.load(Ordering::Relaxed),
            removes: c.removes.load(Ordering::Relaxed),
            multi_reads: c.multi_reads.load(Ordering::Relaxed),
            multi_read_items: c.multi_read_items.load(Ordering::Relaxed),
            multi_writes: c.multi_writes.load(Ordering::Relaxed),
            multi_write_items: c.multi_write_items.load(Ordering::Relaxed),
        }
    }

    /// Makes the next `n` operations fail without touching the inner store.
    pub fn fail_next(&self, n: u64) {
        self.fail_next.store(n, Ordering::SeqCst);
    }

    fn injected(&self) -> StoreResult<()> {
        let took = self
            .fail_next
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1));
        match took {
            Ok(_) => Err(StoreError::Injected),
            Err(_) => Ok(()),
        }
    }
}

impl<B: StoreBackend> StoreBackend for InstrumentedStore<B> {
    fn read(&self, key: PageKey) -> StoreResult<Option<PageBuffer>> {
        self.injected()?;
        self.counters.reads.fetch_add(1, Ordering::Relaxed);
        self.inner.read(key)
    }

    fn write(&self, key: PageKey, buf: &PageBuffer) -> StoreResult<()> {
        self.injected()?;
        self.counters.writes.fetch_add(1, Ordering::Relaxed);
        self.inner.write(key, buf)
    }

    fn remove(&self, key: PageKey) -> StoreResult<()> {
        self.injected()?;
        self.counters.removes.fetch_add(1, Ordering::Relaxed);
        self.inner.remove(key)
    }

    fn multi_read(&self, keys: &[PageKey]) -> StoreResult<Vec<Option<PageBuffer>>> {
        self.injected()?;
        self.counters.multi_reads.fetch_add(1, Ordering::Relaxed);
        self.counters
            .multi_read_items
            .fetch_add(keys.len() as u64, Ordering::Relaxed);
        self.inner.multi_read(keys)
    }

    fn multi_write(&self, batch: &[(PageKey, PageBuffer)]) -> StoreResult<()> {
        self.injected()?;
        self.counters.multi_writes.fetch_add(1, Ordering::Relaxed);
        self.counters
            .multi_write_items
            .fetch_add(batch.len() as u64, Ordering::Relaxed);
        self.inner.multi_write(batch)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}
