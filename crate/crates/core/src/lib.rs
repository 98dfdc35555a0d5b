// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! A user-space paging engine that moves cold pages of a process out to a
//! remote key-value store and brings them back on fault.

pub mod affinity;
pub mod bench;
pub mod engine;
pub mod externram;
pub mod guest;
pub mod lru;
pub mod page;

pub use engine::{Engine, EngineConfig, EngineError, Optimizations, PageHost};
pub use externram::{BackendConfig, StoreBackend, StoreError};
pub use page::{FaultEvent, FaultKind, PageBuffer, PageKey, Resolution, PAGE_SIZE};
