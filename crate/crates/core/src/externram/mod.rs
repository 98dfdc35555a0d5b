// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Backing page stores.
//!
//! Every backend speaks the same small vocabulary: single-page `read`,
//! `write` and `remove`, plus `multi_read` / `multi_write` batches that must
//! behave exactly like the equivalent run of single operations in batch
//! order.

use std::io;
use std::sync::Arc;

use thiserror::Error;

use crate::page::{PageBuffer, PageKey};

mod counting;
mod local;
pub mod memcached;
mod mock;
pub mod testserver;

pub use counting::{InstrumentedStore, StoreCounters};
pub use local::LocalStore;
pub use memcached::MemcachedStore;
pub use mock::{MockLatencyConfig, MockStore};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store transport error: {0}")]
    Transport(#[from] io::Error),
    #[error("store protocol error: {0}")]
    Protocol(String),
    #[error("batch of {total} stopped after {applied} writes: {source}")]
    PartialBatch {
        applied: usize,
        total: usize,
        #[source]
        source: Box<StoreError>,
    },
    #[error("batch operations need at least one item")]
    EmptyBatch,
    #[error("injected failure")]
    Injected,
}

impl StoreError {
    /// Whether retrying the operation on a fresh connection may succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            StoreError::Transport(_) | StoreError::Injected => true,
            StoreError::PartialBatch { source, .. } => source.is_retryable(),
            _ => false,
        }
    }

    /// Number of leading batch entries known to be applied.
    pub fn applied(&self) -> usize {
        match self {
            StoreError::PartialBatch { applied, .. } => *applied,
            _ => 0,
        }
    }
}

pub type StoreResult<T> = Result<T, StoreError>;

/// A key-value store holding pages that are not resident.
///
/// Implementations must tolerate concurrent calls from the fault path and
/// the background workers.
pub trait StoreBackend: Send + Sync {
    fn read(&self, key: PageKey) -> StoreResult<Option<PageBuffer>>;

    fn write(&self, key: PageKey, buf: &PageBuffer) -> StoreResult<()>;

    /// Removing an absent key is not an error.
    fn remove(&self, key: PageKey) -> StoreResult<()>;

    /// Position `i` of the result holds what `read(keys[i])` would return.
    fn multi_read(&self, keys: &[PageKey]) -> StoreResult<Vec<Option<PageBuffer>>>;

    /// Applies the batch as if each entry were written in order; a later
    /// duplicate key wins.
    fn multi_write(&self, batch: &[(PageKey, PageBuffer)]) -> StoreResult<()>;

    fn name(&self) -> &str;
}

impl<T: StoreBackend + ?Sized> StoreBackend for Arc<T> {
    fn read(&self, key: PageKey) -> StoreResult<Option<PageBuffer>> {
        (**self).read(key)
    }
    fn write(&self, key: PageKey, buf: &PageBuffer) -> StoreResult<()> {
        (**self).write(key, buf)
    }
    fn remove(&self, key: PageKey) -> StoreResult<()> {
        (**self).remove(key)
    }
    fn multi_read(&self, keys: &[PageKey]) -> StoreResult<Vec<Option<PageBuffer>>> {
        (**self).multi_read(keys)
    }
    fn multi_write(&self, batch: &[(PageKey, PageBuffer)]) -> StoreResult<()> {
        (**self).multi_write(batch)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Which backend to build, as named on the command line or in a config file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendConfig {
    Local,
    Mock(MockLatencyConfig),
    Memcached { addr: String, retries: u32 },
}

impl BackendConfig {
    /// Parses `local`, `mock:BASE_US[:MARGINAL_US]` or `memcached:HOST:PORT`.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let (kind, rest) = match spec.split_once(':') {
            Some((k, r)) => (k, Some(r)),
            None => (spec, None),
        };
        match (kind, rest) {
            ("local", None) => Ok(BackendConfig::Local),
            ("mock", None) => Ok(BackendConfig::Mock(MockLatencyConfig::default())),
            ("mock", Some(r)) => {
                let mut parts = r.split(':');
                let base = parse_us(parts.next())?;
                let marginal = match parts.next() {
                    Some(m) => parse_us(Some(m))?,
                    None => MockLatencyConfig::default_marginal_for(base),
                };
                if parts.next().is_some() {
                    return Err(format!("too many fields in backend `{spec}`"));
                }
                Ok(BackendConfig::Mock(MockLatencyConfig::from_micros(base, marginal)))
            }
            ("memcached", Some(addr)) if addr.contains(':') => Ok(BackendConfig::Memcached {
                addr: addr.to_string(),
                retries: memcached::DEFAULT_RETRIES,
            }),
            _ => Err(format!(
                "unknown backend `{spec}` (expected local, mock:BASE_US[:MARGINAL_US] or memcached:HOST:PORT)"
            )),
        }
    }

    pub fn build(&self) -> StoreResult<Arc<dyn StoreBackend>> {
        Ok(match self {
            BackendConfig::Local => Arc::new(LocalStore::new()),
            BackendConfig::Mock(cfg) => Arc::new(MockStore::new(*cfg)),
            BackendConfig::Memcached { addr, retries } => {
                Arc::new(MemcachedStore::connect(addr.clone(), *retries)?)
            }
        })
    }
}

fn parse_us(field: Option<&str>) -> Result<u64, String> {
    let field = field.ok_or("missing microsecond value")?;
    field
        .parse()
        .map_err(|_| format!("`{field}` is not an integer microsecond count"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_specs() {
        assert_eq!(BackendConfig::parse("local").unwrap(), BackendConfig::Local);
        assert_eq!(
            BackendConfig::parse("mock:30:2").unwrap(),
            BackendConfig::Mock(MockLatencyConfig::from_micros(30, 2))
        );
        assert!(matches!(
            BackendConfig::parse("memcached:127.0.0.1:11211").unwrap(),
            BackendConfig::Memcached { .. }
        ));
        assert!(BackendConfig::parse("memcached:nohost").is_err());
        assert!(BackendConfig::parse("mock:x").is_err());
        assert!(BackendConfig::parse("redis").is_err());
    }
}
