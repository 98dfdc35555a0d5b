// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::sync::Mutex;

use super::{StoreBackend, StoreError, StoreResult};
use crate::page::{PageBuffer, PageKey};

/// In-process hash map store.
#[derive(Debug, Default)]
pub struct LocalStore {
    pages: Mutex<HashMap<PageKey, PageBuffer>>,
}

impl LocalStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pages.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All stored keys, sorted.
    pub fn keys(&self) -> Vec<PageKey> {
        let mut keys: Vec<_> = self.pages.lock().unwrap().keys().copied().collect();
        keys.sort_unstable();
        keys
    }

    pub fn contains(&self, key: &PageKey) -> bool {
        self.pages.lock().unwrap().contains_key(key)
    }
}

impl StoreBackend for LocalStore {
    fn read(&self, key: PageKey) -> StoreResult<Option<PageBuffer>> {
        Ok(self.pages.lock().unwrap().get(&key).cloned())
    }

    fn write(&self, key: PageKey, buf: &PageBuffer) -> StoreResult<()> {
        self.pages.lock().unwrap().insert(key, buf.clone());
        Ok(())
    }

    fn remove(&self, key: PageKey) -> StoreResult<()> {
        self.pages.lock().unwrap().remove(&key);
        Ok(())
    }

    fn multi_read(&self, keys: &[PageKey]) -> StoreResult<Vec<Option<PageBuffer>>> {
        if keys.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        let pages = self.pages.lock().unwrap();
        Ok(keys.iter().map(|k| pages.get(k).cloned()).collect())
    }

    fn multi_write(&self, batch: &[(PageKey, PageBuffer)]) -> StoreResult<()> {
        if batch.is_empty() {
            return Err(StoreError::EmptyBatch);
        }
        let mut pages = self.pages.lock().unwrap();
        for (key, buf) in batch {
            pages.insert(*key, buf.clone());
        }
        Ok(())
    }

    fn name(&self) -> &str {
        "local"
    }
}
