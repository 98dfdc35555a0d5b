// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Thread placement helpers. Everything here is best effort and silently
//! does nothing on platforms without the underlying calls.

/// Number of cores this process may run on.
pub fn available_cores() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Pins the calling thread to `core`. Returns whether the pin took effect.
#[cfg(target_os = "linux")]
pub fn pin_current_thread(core: usize) -> bool {
    if core >= libc::CPU_SETSIZE as usize {
        return false;
    }
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(core, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set) == 0
    }
}

#[cfg(not(target_os = "linux"))]
pub fn pin_current_thread(_core: usize) -> bool {
    false
}

/// Requests 1ns timer slack for the calling thread so short sleeps wake on time.
#[cfg(target_os = "linux")]
pub fn set_fine_timer_slack() {
    unsafe {
        libc::prctl(libc::PR_SET_TIMERSLACK, 1 as libc::c_ulong, 0, 0, 0);
    }
}

#[cfg(not(target_os = "linux"))]
pub fn set_fine_timer_slack() {}
