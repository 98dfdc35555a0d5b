// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Residency tracking for faulted-in pages.
//!
//! [`ResidencyIndex`] keeps every known page in a hash map and threads the
//! resident ones through an intrusive doubly linked recency list stored in a
//! slab, so lookup, touch and victim selection are all O(1).

use std::collections::HashMap;

use thiserror::Error;

use crate::page::PageKey;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ResidencyState {
    /// Bytes live in the guest address space.
    Resident,
    /// Bytes live only in the backing store.
    InStore,
    /// Page was all zeros when evicted; nothing is stored for it.
    ZeroMarked,
    /// Chosen as a victim; bytes are held by the engine until written out.
    PendingEvict,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("page {0} is already resident")]
    AlreadyResident(PageKey),
    #[error("page {0} is not resident")]
    NotResident(PageKey),
    #[error("page {0} is not tracked")]
    Unknown(PageKey),
    #[error("illegal transition {from:?} -> {to:?} for page {key}")]
    IllegalTransition {
        key: PageKey,
        from: ResidencyState,
        to: ResidencyState,
    },
    #[error("capacity must be at least one page")]
    ZeroCapacity,
}

const NIL: usize = usize::MAX;

#[derive(Debug)]
struct Node {
    key: PageKey,
    prev: usize,
    next: usize,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    state: ResidencyState,
    node: usize,
}

#[derive(Debug)]
pub struct ResidencyIndex {
    capacity: usize,
    slots: HashMap<PageKey, Slot>,
    nodes: Vec<Node>,
    free: Vec<usize>,
    // head is most recently used, tail is the next victim
    head: usize,
    tail: usize,
    resident: usize,
}

impl ResidencyIndex {
    pub fn new(capacity: usize) -> Result<Self, IndexError> {
        if capacity == 0 {
            return Err(IndexError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            slots: HashMap::new(),
            nodes: Vec::new(),
            free: Vec::new(),
            head: NIL,
            tail: NIL,
            resident: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn resident_count(&self) -> usize {
        self.resident
    }

    /// Number of tracked pages in any state.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn state(&self, key: &PageKey) -> Option<ResidencyState> {
        self.slots.get(key).map(|s| s.state)
    }

    pub fn is_resident(&self, key: &PageKey) -> bool {
        self.state(key) == Some(ResidencyState::Resident)
    }

    /// Marks `key` resident and most recently used. If that pushes the
    /// resident count over capacity, the least recently used page becomes
    /// `PendingEvict` and is returned.
    pub fn record_resident(&mut self, key: PageKey) -> Result<Option<PageKey>, IndexError> {
        if let Some(slot) = self.slots.get(&key) {
            if slot.state == ResidencyState::Resident {
                return Err(IndexError::AlreadyResident(key));
            }
        }
        let node = self.push_front(key);
        self.slots.insert(
            key,
            Slot {
                state: ResidencyState::Resident,
                node,
            },
        );
        self.resident += 1;
        self.check_slot(&key);

        if self.resident > self.capacity {
            Ok(Some(self.evict_tail()))
        } else {
            Ok(None)
        }
    }

    /// Moves a resident page to the most recently used position.
    pub fn touch(&mut self, key: &PageKey) -> Result<(), IndexError> {
        let node = match self.slots.get(key) {
            Some(slot) if slot.state == ResidencyState::Resident => slot.node,
            Some(_) => return Err(IndexError::NotResident(*key)),
            None => return Err(IndexError::Unknown(*key)),
        };
        if self.head != node {
            self.unlink(node);
            self.link_front(node);
        }
        self.check_slot(key);
        Ok(())
    }

    /// Applies one of the bookkeeping transitions between residency states.
    pub fn set_state(&mut self, key: &PageKey, to: ResidencyState) -> Result<(), IndexError> {
        use ResidencyState::*;
        let from = self.state(key).ok_or(IndexError::Unknown(*key))?;
        let legal = matches!(
            (from, to),
            (Resident, PendingEvict)
                | (PendingEvict, InStore)
                | (PendingEvict, ZeroMarked)
                | (PendingEvict, Resident)
                | (InStore, Resident)
                | (ZeroMarked, Resident)
        );
        if !legal {
            return Err(IndexError::IllegalTransition { key: *key, from, to });
        }
        match (from, to) {
            (Resident, _) => {
                let slot = self.slots.get_mut(key).expect("checked above");
                let node = slot.node;
                slot.state = to;
                slot.node = NIL;
                self.release(node);
                self.resident -= 1;
            }
            (_, Resident) => {
                // Re-entering residency goes through the same capacity check
                // as a fresh record, so no victim can be silently dropped.
                if self.resident >= self.capacity {
                    return Err(IndexError::IllegalTransition { key: *key, from, to });
                }
                let node = self.push_front(*key);
                let slot = self.slots.get_mut(key).expect("checked above");
                slot.state = Resident;
                slot.node = node;
                self.resident += 1;
            }
            _ => {
                self.slots.get_mut(key).expect("checked above").state = to;
            }
        }
        self.check_slot(key);
        Ok(())
    }

    /// Changes capacity. Shrinking below the resident count evicts the
    /// excess, least recently used first.
    pub fn resize(&mut self, new_capacity: usize) -> Result<Vec<PageKey>, IndexError> {
        if new_capacity == 0 {
            return Err(IndexError::ZeroCapacity);
        }
        self.capacity = new_capacity;
        let mut victims = Vec::new();
        while self.resident > self.capacity {
            victims.push(self.evict_tail());
        }
        Ok(victims)
    }

    /// Drops all knowledge of `key`, whatever its state.
    pub fn forget(&mut self, key: &PageKey) -> Option<ResidencyState> {
        let slot = self.slots.remove(key)?;
        if slot.state == ResidencyState::Resident {
            self.release(slot.node);
            self.resident -= 1;
        }
        Some(slot.state)
    }

    /// Tracks an untracked `key` in a non-resident state, bypassing the
    /// transition rules. Used to undo a failed fault.
    pub(crate) fn insert_untracked(&mut self, key: PageKey, state: ResidencyState) {
        debug_assert!(state != ResidencyState::Resident);
        debug_assert!(!self.slots.contains_key(&key));
        self.slots.insert(key, Slot { state, node: NIL });
        self.check_slot(&key);
    }

    /// Drops every page belonging to `region_id`, returning the keys and the
    /// state each was in.
    pub fn forget_region(&mut self, region_id: u64) -> Vec<(PageKey, ResidencyState)> {
        let keys: Vec<PageKey> = self
            .slots
            .keys()
            .filter(|k| k.region_id == region_id)
            .copied()
            .collect();
        let mut out: Vec<_> = keys
            .into_iter()
            .filter_map(|k| self.forget(&k).map(|s| (k, s)))
            .collect();
        out.sort_unstable_by_key(|(k, _)| *k);
        out
    }

    /// Resident keys from least to most recently used.
    pub fn lru_order(&self) -> Vec<PageKey> {
        let mut out = Vec::with_capacity(self.resident);
        let mut cur = self.tail;
        while cur != NIL {
            out.push(self.nodes[cur].key);
            cur = self.nodes[cur].prev;
        }
        out
    }

    /// The page that would be evicted next.
    pub fn peek_victim(&self) -> Option<PageKey> {
        (self.tail != NIL).then(|| self.nodes[self.tail].key)
    }

    /// Iterates all tracked keys with their state, in no particular order.
    pub fn iter(&self) -> impl Iterator<Item = (&PageKey, ResidencyState)> {
        self.slots.iter().map(|(k, s)| (k, s.state))
    }

    /// Full consistency check of the hash view against the recency list.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = 0usize;
        let mut prev = NIL;
        let mut cur = self.head;
        while cur != NIL {
            let node = &self.nodes[cur];
            if node.prev != prev {
                return Err(format!("broken back link at {}", node.key));
            }
            match self.slots.get(&node.key) {
                Some(slot) if slot.state == ResidencyState::Resident && slot.node == cur => {}
                other => return Err(format!("list node {} maps to {other:?}", node.key)),
            }
            seen += 1;
            if seen > self.nodes.len() {
                return Err("cycle in recency list".into());
            }
            prev = cur;
            cur = node.next;
        }
        if prev != self.tail {
            return Err("tail does not terminate the list".into());
        }
        let resident_slots = self
            .slots
            .values()
            .filter(|s| s.state == ResidencyState::Resident)
            .count();
        if seen != resident_slots || seen != self.resident {
            return Err(format!(
                "list has {seen} nodes, map has {resident_slots} resident, counter {}",
                self.resident
            ));
        }
        if self.resident > self.capacity {
            return Err(format!("{} resident over capacity {}", self.resident, self.capacity));
        }
        Ok(())
    }

    fn evict_tail(&mut self) -> PageKey {
        let node = self.tail;
        debug_assert_ne!(node, NIL);
        let key = self.nodes[node].key;
        self.release(node);
        let slot = self.slots.get_mut(&key).expect("list node without slot");
        slot.state = ResidencyState::PendingEvict;
        slot.node = NIL;
        self.resident -= 1;
        key
    }

    fn push_front(&mut self, key: PageKey) -> usize {
        let node = Node {
            key,
            prev: NIL,
            next: NIL,
        };
        let idx = match self.free.pop() {
            Some(idx) => {
                self.nodes[idx] = node;
                idx
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        };
        self.link_front(idx);
        idx
    }

    fn link_front(&mut self, idx: usize) {
        self.nodes[idx].prev = NIL;
        self.nodes[idx].next = self.head;
        if self.head != NIL {
            self.nodes[self.head].prev = idx;
        }
        self.head = idx;
        if self.tail == NIL {
            self.tail = idx;
        }
    }

    fn unlink(&mut self, idx: usize) {
        let (prev, next) = (self.nodes[idx].prev, self.nodes[idx].next);
        if prev != NIL {
            self.nodes[prev].next = next;
        } else {
            self.head = next;
        }
        if next != NIL {
            self.nodes[next].prev = prev;
        } else {
            self.tail = prev;
        }
        self.nodes[idx].prev = NIL;
        self.nodes[idx].next = NIL;
    }

    fn release(&mut self, idx: usize) {
        self.unlink(idx);
        self.free.push(idx);
    }

    /// O(1) coherence check of one key, run after every mutation in debug builds.
    #[inline]
    fn check_slot(&self, key: &PageKey) {
        if cfg!(debug_assertions) {
            let slot = self.slots.get(key).expect("mutated key must be tracked");
            if slot.state == ResidencyState::Resident {
                let node = &self.nodes[slot.node];
                assert_eq!(node.key, *key, "hash and recency views disagree");
                if node.prev != NIL {
                    assert_eq!(self.nodes[node.prev].next, slot.node);
                } else {
                    assert_eq!(self.head, slot.node);
                }
                if node.next != NIL {
                    assert_eq!(self.nodes[node.next].prev, slot.node);
                } else {
                    assert_eq!(self.tail, slot.node);
                }
            } else {
                assert_eq!(slot.node, NIL);
            }
            assert!(self.resident <= self.capacity + 1);
        }
    }
}
