// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Kernel-backed fault source built on Linux userfaultfd.
//!
//! An anonymous mapping is registered for missing-page faults and a
//! handler thread feeds every fault to the engine. Zero fills and copies
//! use `UFFDIO_ZEROPAGE` and `UFFDIO_COPY`. Eviction moves the page into a
//! private scratch page with `UFFDIO_MOVE`, leaving a hole so the next
//! access faults again; kernels without it fall back to copy then
//! `MADV_DONTNEED`.
//!
//! Only available with the `uffd` feature on Linux.

use std::time::Duration;

use thiserror::Error;

use crate::engine::EngineError;

#[derive(Debug, Error)]
pub enum KernelSourceError {
    #[error("kernel fault source unavailable: {0}")]
    Unavailable(String),
    #[error("kernel fault source setup failed: {0}")]
    Setup(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Accessor program: `accessors` threads split the pages round robin and
/// each sweep writes every page with the fill for seed `sweep + 1`; a final
/// pass reads everything back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WriterProgram {
    pub pages: usize,
    pub sweeps: usize,
    pub accessors: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KernelRunReport {
    pub faults: u64,
    /// Pages whose final bytes differ from the flat model.
    pub mismatched_pages: usize,
    pub checksum: u64,
    pub expected_checksum: u64,
    /// Whether eviction used the atomic move primitive.
    pub atomic_move: bool,
    pub elapsed: Duration,
}

impl KernelRunReport {
    pub fn verified(&self) -> bool {
        self.mismatched_pages == 0 && self.checksum == self.expected_checksum
    }
}

/// FNV-1a over page contents, used for end-of-run verification.
pub fn checksum(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

#[cfg(all(feature = "uffd", target_os = "linux"))]
pub use imp::{kernel_source_run, probe};

#[cfg(not(all(feature = "uffd", target_os = "linux")))]
pub fn probe() -> Result<(), KernelSourceError> {
    Err(KernelSourceError::Unavailable(
        "built without the `uffd` feature or not on Linux".into(),
    ))
}

#[cfg(not(all(feature = "uffd", target_os = "linux")))]
pub fn kernel_source_run(
    _engine: &crate::engine::Engine,
    _program: &WriterProgram,
) -> Result<KernelRunReport, KernelSourceError> {
    probe().map(|_| unreachable!())
}

#[cfg(all(feature = "uffd", target_os = "linux"))]
mod imp {
    use std::io;
    use std::os::fd::AsRawFd;
    use std::ptr;
    use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
    use std::time::Instant;

    use userfaultfd::{Event, FeatureFlags, ReadWrite, RegisterMode, Uffd, UffdBuilder};

    use super::*;
    use crate::engine::{Engine, PageHost};
    use crate::guest::trace::write_fill;
    use crate::page::{FaultEvent, FaultKind, PageBuffer, PageKey, PAGE_SIZE};

    const UFFD_FEATURE_MOVE: u64 = 1 << 16;
    // _IOWR(0xAA, 0x05, struct uffdio_move)
    const UFFDIO_MOVE: libc::c_ulong = 0xC028_AA05;
    const POLL_MS: libc::c_int = 20;

    #[repr(C)]
    struct UffdioMove {
        dst: u64,
        src: u64,
        len: u64,
        mode: u64,
        moved: i64,
    }

    struct Mapping {
        addr: usize,
        len: usize,
    }

    impl Mapping {
        fn anonymous(len: usize) -> Result<Self, KernelSourceError> {
            // SAFETY: fresh private anonymous mapping, no aliasing.
            let addr = unsafe {
                libc::mmap(
                    ptr::null_mut(),
                    len,
                    libc::PROT_READ | libc::PROT_WRITE,
                    libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
                    -1,
                    0,
                )
            };
            if addr == libc::MAP_FAILED {
                return Err(KernelSourceError::Setup(format!("mmap: {}", io::Error::last_os_error())));
            }
            // SAFETY: range was just mapped.
            unsafe { libc::madvise(addr, len, libc::MADV_NOHUGEPAGE) };
            Ok(Self {
                addr: addr as usize,
                len,
            })
        }

        fn ptr(&self) -> *mut libc::c_void {
            self.addr as *mut libc::c_void
        }
    }

    impl Drop for Mapping {
        fn drop(&mut self) {
            // SAFETY: unmaps exactly what `anonymous` mapped.
            unsafe { libc::munmap(self.ptr(), self.len) };
        }
    }

    fn create_uffd() -> Result<(Uffd, bool), KernelSourceError> {
        let build = |features: u64| {
            UffdBuilder::new()
                .close_on_exec(true)
                .non_blocking(true)
                .user_mode_only(true)
                .require_features(FeatureFlags::from_bits_retain(features))
                .create()
        };
        match build(UFFD_FEATURE_MOVE) {
            Ok(uffd) => Ok((uffd, true)),
            Err(_) => build(0)
                .map(|uffd| (uffd, false))
                .map_err(|e| KernelSourceError::Unavailable(format!("userfaultfd: {e}"))),
        }
    }

    /// Checks that a userfaultfd can be created by this process.
    pub fn probe() -> Result<(), KernelSourceError> {
        create_uffd().map(|_| ())
    }

    struct KernelHost<'a> {
        uffd: &'a Uffd,
        base: usize,
        scratch: usize,
        atomic_move: bool,
    }

    impl KernelHost<'_> {
        fn page_ptr(&self, key: PageKey) -> *mut libc::c_void {
            (self.base + key.page_addr() as usize) as *mut libc::c_void
        }
    }

    impl PageHost for KernelHost<'_> {
        fn capture(&mut self, key: PageKey, buf: &mut PageBuffer) -> io::Result<()> {
            let src = self.page_ptr(key);
            if self.atomic_move {
                let mut mv = UffdioMove {
                    dst: self.scratch as u64,
                    src: src as u64,
                    len: PAGE_SIZE as u64,
                    mode: 0,
                    moved: 0,
                };
                // SAFETY: both ranges are private anonymous pages registered
                // with this descriptor; the scratch page is empty.
                let rc = unsafe { libc::ioctl(self.uffd.as_raw_fd(), UFFDIO_MOVE, &mut mv) };
                if rc != 0 {
                    return Err(io::Error::last_os_error());
                }
                // SAFETY: the scratch page now holds the moved page.
                unsafe {
                    ptr::copy_nonoverlapping(self.scratch as *const u8, buf.as_bytes_mut().as_mut_ptr(), PAGE_SIZE);
                    libc::madvise(self.scratch as *mut libc::c_void, PAGE_SIZE, libc::MADV_DONTNEED);
                }
                return Ok(());
            }
            // SAFETY: the page is resident and inside the mapping.
            unsafe {
                ptr::copy_nonoverlapping(src as *const u8, buf.as_bytes_mut().as_mut_ptr(), PAGE_SIZE);
                if libc::madvise(src, PAGE_SIZE, libc::MADV_DONTNEED) != 0 {
                    return Err(io::Error::last_os_error());
                }
            }
            Ok(())
        }

        fn install_zero(&mut self, key: PageKey) -> io::Result<()> {
            // SAFETY: target lies in the registered range.
            match unsafe { self.uffd.zeropage(self.page_ptr(key), PAGE_SIZE, true) } {
                Ok(_) => Ok(()),
                Err(userfaultfd::Error::ZeropageFailed(e)) if e as i32 == libc::EEXIST => Ok(()),
                Err(e) => Err(io::Error::other(e)),
            }
        }

        fn install_copy(&mut self, key: PageKey, buf: &PageBuffer) -> io::Result<()> {
            let src = buf.as_bytes().as_ptr() as *const libc::c_void;
            // SAFETY: source is a full page, target lies in the registered range.
            match unsafe { self.uffd.copy(src, self.page_ptr(key), PAGE_SIZE, true) } {
                Ok(_) => Ok(()),
                Err(userfaultfd::Error::CopyFailed(e)) if e as i32 == libc::EEXIST => Ok(()),
                Err(e) => Err(io::Error::other(e)),
            }
        }
    }

    fn wait_readable(fd: i32) -> bool {
        let mut pfd = libc::pollfd {
            fd,
            events: libc::POLLIN,
            revents: 0,
        };
        // SAFETY: one valid pollfd.
        unsafe { libc::poll(&mut pfd, 1, POLL_MS) > 0 }
    }

    fn handler_loop(
        engine: &Engine,
        host: &mut KernelHost<'_>,
        region: u64,
        len: usize,
        stop: &AtomicBool,
        faults: &AtomicU64,
    ) -> Result<(), KernelSourceError> {
        let mut seq = 0u64;
        loop {
            if !wait_readable(host.uffd.as_raw_fd()) {
                if stop.load(Ordering::Acquire) {
                    return Ok(());
                }
                continue;
            }
            let event = host
                .uffd
                .read_event()
                .map_err(|e| KernelSourceError::Setup(format!("read_event: {e}")))?;
            let Some(Event::Pagefault { rw, addr, .. }) = event else {
                continue;
            };
            let offset = (addr as usize).wrapping_sub(host.base);
            if offset >= len {
                continue;
            }
            let key = PageKey::new(region, offset as u64);
            seq += 1;
            let kind = match rw {
                ReadWrite::Read => FaultKind::Read,
                ReadWrite::Write => FaultKind::Write,
            };
            match engine.handle_fault(FaultEvent { key, kind, seq }, host) {
                Ok(_) => {
                    faults.fetch_add(1, Ordering::Relaxed);
                }
                // A second thread faulted on the page before it was installed.
                Err(EngineError::AlreadyResident(_)) => {
                    let _ = host.uffd.wake(host.page_ptr(key), PAGE_SIZE);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Runs `program` against a fresh mapping whose faults are served by
    /// `engine`, then checks the final contents against the flat model.
    pub fn kernel_source_run(engine: &Engine, program: &WriterProgram) -> Result<KernelRunReport, KernelSourceError> {
        if program.pages == 0 || program.sweeps == 0 || program.accessors == 0 {
            return Err(KernelSourceError::Setup("program needs pages, sweeps and accessors".into()));
        }
        let (uffd, atomic_move) = create_uffd()?;
        let len = program.pages * PAGE_SIZE;
        let mapping = Mapping::anonymous(len)?;
        let scratch = Mapping::anonymous(PAGE_SIZE)?;
        let register = |m: &Mapping| {
            uffd.register_with_mode(m.ptr(), m.len, RegisterMode::MISSING)
                .map_err(|e| KernelSourceError::Setup(format!("register: {e}")))
        };
        register(&mapping)?;
        if atomic_move {
            register(&scratch)?;
        }
        let region = engine.register_region(len as u64)?;

        let stop = AtomicBool::new(false);
        let faults = AtomicU64::new(0);
        let base = mapping.addr;
        let started = Instant::now();
        let mut actual = Vec::with_capacity(len);

        let handled = std::thread::scope(|s| {
            let handler = s.spawn(|| {
                let mut host = KernelHost {
                    uffd: &uffd,
                    base,
                    scratch: scratch.addr,
                    atomic_move,
                };
                let r = handler_loop(engine, &mut host, region, len, &stop, &faults);
                if r.is_err() {
                    // Unblock accessors parked on unresolved faults.
                    let _ = uffd.unregister(mapping.ptr(), len);
                }
                r
            });
            let accessors: Vec<_> = (0..program.accessors)
                .map(|t| {
                    s.spawn(move || {
                        let mut page = vec![0u8; PAGE_SIZE];
                        for sweep in 0..program.sweeps {
                            for p in (t..program.pages).step_by(program.accessors) {
                                let addr = (p * PAGE_SIZE) as u64;
                                write_fill(Some(sweep as u64 + 1), addr, &mut page);
                                // SAFETY: page p lies inside the mapping and
                                // is written only by this accessor.
                                unsafe {
                                    ptr::copy_nonoverlapping(page.as_ptr(), (base + p * PAGE_SIZE) as *mut u8, PAGE_SIZE)
                                };
                            }
                        }
                    })
                })
                .collect();
            for a in accessors {
                let _ = a.join();
            }
            if !handler.is_finished() {
                // SAFETY: reads stay inside the mapping; faults are served
                // by the handler thread.
                actual.extend_from_slice(unsafe { std::slice::from_raw_parts(base as *const u8, len) });
            }
            stop.store(true, Ordering::Release);
            handler.join().expect("fault handler panicked")
        });
        let elapsed = started.elapsed();
        let _ = uffd.unregister(mapping.ptr(), len);
        let deregistered = engine.deregister_region(region);
        handled?;
        deregistered?;

        let mut expected = vec![0u8; len];
        for (p, page) in expected.chunks_mut(PAGE_SIZE).enumerate() {
            write_fill(Some(program.sweeps as u64), (p * PAGE_SIZE) as u64, page);
        }
        let mismatched_pages = expected
            .chunks(PAGE_SIZE)
            .zip(actual.chunks(PAGE_SIZE))
            .filter(|(e, a)| e != a)
            .count();
        Ok(KernelRunReport {
            faults: faults.load(Ordering::Relaxed),
            mismatched_pages,
            checksum: checksum(&actual),
            expected_checksum: checksum(&expected),
            atomic_move,
            elapsed,
        })
    }
}
