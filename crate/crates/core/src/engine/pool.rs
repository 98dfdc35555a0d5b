// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Scratch page buffers for the eviction path.
//!
//! Without background re-initialization the fault path zeroes a buffer each
//! time it takes one. With it, a worker keeps a stock of pre-zeroed buffers
//! and cleans returned ones off the fault path.

use std::sync::{Condvar, Mutex};

use crate::page::PageBuffer;

#[derive(Default)]
struct Inner {
    ready: Vec<PageBuffer>,
    dirty: Vec<PageBuffer>,
    stop: bool,
}

pub(crate) struct BufferPool {
    inner: Mutex<Inner>,
    cv: Condvar,
    target: usize,
    background: bool,
}

impl BufferPool {
    pub fn new(target: usize, background: bool) -> Self {
        let ready = if background {
            (0..target).map(|_| PageBuffer::zeroed()).collect()
        } else {
            Vec::new()
        };
        Self {
            inner: Mutex::new(Inner {
                ready,
                ..Inner::default()
            }),
            cv: Condvar::new(),
            target,
            background,
        }
    }

    /// A zero-filled buffer.
    pub fn acquire(&self) -> PageBuffer {
        let mut inner = self.inner.lock().unwrap();
        if self.background {
            let buf = inner.ready.pop();
            if inner.ready.len() < self.target / 2 {
                self.cv.notify_one();
            }
            drop(inner);
            buf.unwrap_or_else(PageBuffer::zeroed)
        } else {
            let buf = inner.dirty.pop();
            drop(inner);
            match buf {
                Some(mut buf) => {
                    buf.fill(0);
                    buf
                }
                None => PageBuffer::zeroed(),
            }
        }
    }

    pub fn recycle(&self, buf: PageBuffer) {
        let mut inner = self.inner.lock().unwrap();
        if inner.dirty.len() + inner.ready.len() < self.target * 2 {
            inner.dirty.push(buf);
            if self.background {
                self.cv.notify_one();
            }
        }
    }

    /// Body of the re-initialization worker. Returns once `stop` is called.
    pub fn refill_loop(&self) {
        let mut inner = self.inner.lock().unwrap();
        loop {
            while !inner.stop && inner.dirty.is_empty() && inner.ready.len() >= self.target {
                inner = self.cv.wait(inner).unwrap();
            }
            if inner.stop {
                return;
            }
            let mut dirty = std::mem::take(&mut inner.dirty);
            let missing = self.target.saturating_sub(inner.ready.len() + dirty.len());
            drop(inner);
            for buf in &mut dirty {
                buf.fill(0);
            }
            dirty.extend((0..missing).map(|_| PageBuffer::zeroed()));
            inner = self.inner.lock().unwrap();
            inner.ready.append(&mut dirty);
        }
    }

    pub fn stop(&self) {
        self.inner.lock().unwrap().stop = true;
        self.cv.notify_all();
    }

    #[cfg(test)]
    fn ready_len(&self) -> usize {
        self.inner.lock().unwrap().ready.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use std::time::{Duration, Instant};

    #[test]
    fn inline_pool_returns_zeroed_buffers() {
        let pool = BufferPool::new(4, false);
        let mut buf = pool.acquire();
        buf.fill(7);
        pool.recycle(buf);
        assert!(pool.acquire().is_zero());
    }

    #[test]
    fn background_pool_refills() {
        let pool = Arc::new(BufferPool::new(4, true));
        let worker = {
            let pool = Arc::clone(&pool);
            std::thread::spawn(move || pool.refill_loop())
        };
        let taken: Vec<_> = (0..4).map(|_| pool.acquire()).collect();
        for mut buf in taken {
            buf.fill(9);
            pool.recycle(buf);
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        while pool.ready_len() < 4 && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(1));
        }
        for _ in 0..4 {
            assert!(pool.acquire().is_zero());
        }
        pool.stop();
        worker.join().unwrap();
    }
}
