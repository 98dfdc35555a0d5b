// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Page identity, page contents, fault events and their resolutions.

use std::fmt;

/// Size in bytes of every page handled by the engine.
pub const PAGE_SIZE: usize = 4096;

const PAGE_MASK: u64 = !(PAGE_SIZE as u64 - 1);

/// Identity of one page: the region handle plus the page-aligned byte offset
/// inside that region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageKey {
    pub region_id: u64,
    page_addr: u64,
}

impl PageKey {
    /// Builds the key of the page containing `addr`.
    #[inline]
    pub const fn new(region_id: u64, addr: u64) -> Self {
        Self {
            region_id,
            page_addr: addr & PAGE_MASK,
        }
    }

    #[inline]
    pub const fn page_addr(&self) -> u64 {
        self.page_addr
    }

    #[inline]
    pub const fn page_index(&self) -> u64 {
        self.page_addr / PAGE_SIZE as u64
    }

    /// The page immediately after this one, if the offset does not overflow.
    pub fn next(&self) -> Option<Self> {
        self.page_addr
            .checked_add(PAGE_SIZE as u64)
            .map(|a| Self::new(self.region_id, a))
    }

    /// The page immediately before this one.
    pub fn prev(&self) -> Option<Self> {
        self.page_addr
            .checked_sub(PAGE_SIZE as u64)
            .map(|a| Self::new(self.region_id, a))
    }
}

impl fmt::Display for PageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:x}:{:x}", self.region_id, self.page_addr)
    }
}

/// Rounds `addr` down to its page and pairs it with `region_id`.
#[inline]
pub const fn make_key(region_id: u64, addr: u64) -> PageKey {
    PageKey::new(region_id, addr)
}

/// The raw contents of one page. Always exactly [`PAGE_SIZE`] bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct PageBuffer(Box<[u8; PAGE_SIZE]>);

impl PageBuffer {
    pub fn zeroed() -> Self {
        Self(Box::new([0u8; PAGE_SIZE]))
    }

    /// Copies `bytes` into a new buffer; `None` unless the length is exactly one page.
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let arr: &[u8; PAGE_SIZE] = bytes.try_into().ok()?;
        Some(Self(Box::new(*arr)))
    }

    pub fn as_bytes(&self) -> &[u8; PAGE_SIZE] {
        &self.0
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8; PAGE_SIZE] {
        &mut self.0
    }

    pub fn fill(&mut self, byte: u8) {
        self.0.fill(byte);
    }

    pub fn is_zero(&self) -> bool {
        is_zero_page(self)
    }
}

impl Default for PageBuffer {
    fn default() -> Self {
        Self::zeroed()
    }
}

impl From<[u8; PAGE_SIZE]> for PageBuffer {
    fn from(bytes: [u8; PAGE_SIZE]) -> Self {
        Self(Box::new(bytes))
    }
}

impl AsRef<[u8]> for PageBuffer {
    fn as_ref(&self) -> &[u8] {
        &self.0[..]
    }
}

impl fmt::Debug for PageBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let nonzero = self.0.iter().filter(|b| **b != 0).count();
        write!(f, "PageBuffer({nonzero} nonzero bytes, head {:02x?})", &self.0[..8])
    }
}

/// True iff every byte of `buf` is zero.
pub fn is_zero_page(buf: &PageBuffer) -> bool {
    // Word-at-a-time scan; the compiler vectorizes this loop.
    let (prefix, words, suffix) = unsafe { buf.0.align_to::<u64>() };
    prefix.iter().all(|b| *b == 0) && words.iter().all(|w| *w == 0) && suffix.iter().all(|b| *b == 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FaultKind {
    Read,
    Write,
}

/// A fault on a non-resident page, as delivered to the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaultEvent {
    pub key: PageKey,
    pub kind: FaultKind,
    pub seq: u64,
}

/// How the engine answered a fault.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Resolution {
    ZeroFill,
    Copy(PageBuffer),
}

impl Resolution {
    pub fn is_zero_fill(&self) -> bool {
        matches!(self, Resolution::ZeroFill)
    }
}
