// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use crate::page::{PageBuffer, PageKey};

/// Bounded LRU map of page contents fetched ahead of demand.
#[derive(Debug)]
pub struct PageCache {
    capacity: usize,
    tick: u64,
    entries: HashMap<PageKey, (PageBuffer, u64)>,
    order: BTreeMap<u64, PageKey>,
}

impl PageCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            tick: 0,
            entries: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &PageKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Inserts or replaces `key`, returning the entry displaced to stay
    /// within capacity, if any.
    pub fn insert(&mut self, key: PageKey, buf: PageBuffer) -> Option<PageKey> {
        if self.capacity == 0 {
            return None;
        }
        self.tick += 1;
        if let Some((_, old)) = self.entries.insert(key, (buf, self.tick)) {
            self.order.remove(&old);
        }
        self.order.insert(self.tick, key);
        if self.entries.len() > self.capacity {
            let (_, oldest) = self.order.pop_first().expect("non-empty");
            self.entries.remove(&oldest);
            return Some(oldest);
        }
        None
    }

    /// Looks up `key` and marks it most recently used.
    pub fn get(&mut self, key: &PageKey) -> Option<&PageBuffer> {
        self.tick += 1;
        let tick = self.tick;
        let (buf, stamp) = self.entries.get_mut(key)?;
        self.order.remove(stamp);
        *stamp = tick;
        self.order.insert(tick, *key);
        Some(buf)
    }

    /// Removes and returns `key`.
    pub fn take(&mut self, key: &PageKey) -> Option<PageBuffer> {
        let (buf, stamp) = self.entries.remove(key)?;
        self.order.remove(&stamp);
        Some(buf)
    }

    pub fn remove(&mut self, key: &PageKey) -> bool {
        self.take(key).is_some()
    }

    pub fn remove_region(&mut self, region_id: u64) -> usize {
        let keys: Vec<_> = self
            .entries
            .keys()
            .filter(|k| k.region_id == region_id)
            .copied()
            .collect();
        keys.iter().filter(|k| self.remove(k)).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(i: u64) -> PageKey {
        PageKey::new(0, i * 4096)
    }

    #[test]
    fn lru_replacement() {
        let mut cache = PageCache::new(2);
        assert_eq!(cache.insert(k(0), PageBuffer::zeroed()), None);
        assert_eq!(cache.insert(k(1), PageBuffer::zeroed()), None);
        cache.get(&k(0));
        assert_eq!(cache.insert(k(2), PageBuffer::zeroed()), Some(k(1)));
        assert!(cache.contains(&k(0)));
        assert_eq!(cache.len(), 2);
        assert!(cache.take(&k(0)).is_some());
        assert!(cache.take(&k(0)).is_none());
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn replace_keeps_single_entry() {
        let mut cache = PageCache::new(2);
        cache.insert(k(0), PageBuffer::zeroed());
        cache.insert(k(0), PageBuffer::from([1; 4096]));
        assert_eq!(cache.len(), 1);
        assert_eq!(cache.get(&k(0)).unwrap().as_bytes()[0], 1);
        assert_eq!(cache.remove_region(0), 1);
        assert!(cache.is_empty());
    }
}
