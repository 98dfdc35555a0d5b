// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! A store with injected, configurable latency standing in for a remote
//! in-memory key-value cluster.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use super::{LocalStore, StoreBackend, StoreError, StoreResult};
use crate::page::{PageBuffer, PageKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MockLatencyConfig {
    /// Cost of any single operation, and of the first item of a batch.
    pub base: Duration,
    /// Cost of every additional batch item.
    pub marginal: Duration,
}

impl Default for MockLatencyConfig {
    fn default() -> Self {
        Self::from_micros(30, 2)
    }
}

impl MockLatencyConfig {
    pub const fn from_micros(base_us: u64, marginal_us: u64) -> Self {
        Self {
            base: Duration::from_micros(base_us),
            marginal: Duration::from_micros(marginal_us),
        }
    }

    pub(crate) fn default_marginal_for(base_us: u64) -> u64 {
        2.min(base_us.saturating_sub(1))
    }

    /// Simulated cost of a batch of `n` items (`n >= 1`).
    pub fn batch_cost(&self, n: usize) -> Duration {
        self.base + self.marginal * n.saturating_sub(1) as u32
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.marginal >= self.base && !self.base.is_zero() {
            return Err(format!(
                "marginal batch delay {:?} must be below the base delay {:?}",
                self.marginal, self.base
            ));
        }
        Ok(())
    }
}

/// [`LocalStore`] behind a latency injector.
#[derive(Debug)]
pub struct MockStore {
    inner: LocalStore,
    cfg: MockLatencyConfig,
    charged_ns: AtomicU64,
}

impl MockStore {
    pub fn new(cfg: MockLatencyConfig) -> Self {
        Self {
            inner: LocalStore::new(),
            cfg,
            charged_ns: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> MockLatencyConfig {
        self.cfg
    }

    /// Total simulated delay charged so far.
    pub fn charged(&self) -> Duration {
        Duration::from_nanos(self.charged_ns.load(Ordering::Relaxed))
    }

    pub fn inner(&self) -> &LocalStore {
        &self.inner
    }

    fn delay(&self, items: usize) {
        let cost = self.cfg.batch_cost(items);
        self.charged_ns
            .fetch_add(cost.as_nanos() as u64, Ordering::Relaxed);
        simulate_delay(cost);
    }
}

impl StoreBackend for MockStore {
    fn read(&self, key: PageKey) -> StoreResult<Option<PageBuffer>> {
        self.delay(1);
        self.inner.read(key)
    }

    fn write(&self, key: PageKey, buf: &PageBuffer) -> StoreResult<()> {
        self.delay(1);
        self.inner.write(key, buf)
    }

    fn remove(&self, key: PageKey) -> StoreResult<()> {
        self.delay(1);
        self.inner.remove(key)
    }

    fn multi_read(&self, keys: &[PageKey]) -> StoreResult<Vec<Option<PageBuffer>>> {
        if keys.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        self.delay(keys.len());
        self.inner.multi_read(keys)
    }

    fn multi_write(&self, batch: &[(PageKey, PageBuffer)]) -> StoreResult<()> {
        if batch.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        self.delay(batch.len());
        self.inner.multi_write(batch)
    }

    fn name(&self) -> &str {
        "mock"
    }
}

/// Blocks the calling thread for `d` without occupying a core.
///
/// The default Linux timer slack (50µs) would swamp microsecond-scale
/// delays, so each thread that reaches here lowers its own slack once.
fn simulate_delay(d: Duration) {
    if d.is_zero() {
        return;
    }
    thread_local! {
        static SLACK_SET: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
    }
    SLACK_SET.with(|set| {
        if !set.get() {
            crate::affinity::set_fine_timer_slack();
            set.set(true);
        }
    });
    std::thread::sleep(d);
}
