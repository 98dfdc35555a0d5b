// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Microbenchmark access patterns over a single region.
//!
//! Every visit to an entry is a read followed by a write of the same page,
//! the read-modify-write of a counter array.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::guest::{Access, AccessTrace};
use crate::page::PAGE_SIZE;

/// Region id used by generated traces.
pub const TRACE_REGION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Workload {
    Sequential,
    Random { seed: u64 },
    /// Sequential sweeps whose writes store all-zero pages.
    ZeroSequential,
}

impl Workload {
    pub fn label(&self) -> &'static str {
        match self {
            Workload::Sequential => "seq",
            Workload::Random { .. } => "rand",
            Workload::ZeroSequential => "zero",
        }
    }

    pub fn trace(&self, n_pages: usize, iterations: usize) -> AccessTrace {
        match *self {
            Workload::Sequential => gen_sequential(n_pages, iterations),
            Workload::Random { seed } => gen_random(n_pages, iterations, seed),
            Workload::ZeroSequential => gen_zero_sequential(n_pages, iterations),
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Workload {
    type Err = String;

    /// `rand` parses with seed 0; set the seed afterwards if needed.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seq" => Ok(Workload::Sequential),
            "rand" => Ok(Workload::Random { seed: 0 }),
            "zero" => Ok(Workload::ZeroSequential),
            other => Err(format!("unknown workload `{other}` (expected seq, rand or zero)")),
        }
    }
}

fn visit(out: &mut Vec<Access>, page: usize, seed: Option<u64>) {
    let addr = (page * PAGE_SIZE) as u64;
    out.push(Access::read(TRACE_REGION, addr));
    out.push(Access::write(TRACE_REGION, addr, seed));
}

/// Sweeps pages `0..n_pages` in order, `iterations` times. Writes in
/// sweep `i` use seed `i + 1`.
pub fn gen_sequential(n_pages: usize, iterations: usize) -> AccessTrace {
    let mut out = Vec::with_capacity(2 * n_pages * iterations);
    for sweep in 0..iterations {
        for page in 0..n_pages {
            visit(&mut out, page, Some(sweep as u64 + 1));
        }
    }
    AccessTrace::new(out)
}

/// Same shape as [`gen_sequential`] but every write stores zeros.
pub fn gen_zero_sequential(n_pages: usize, iterations: usize) -> AccessTrace {
    let mut out = Vec::with_capacity(2 * n_pages * iterations);
    for _ in 0..iterations {
        for page in 0..n_pages {
            visit(&mut out, page, None);
        }
    }
    AccessTrace::new(out)
}

/// `n_pages * iterations` visits to pages drawn uniformly by ChaCha8
/// seeded with `seed`. The write of draw `d` uses seed `d + 1`.
pub fn gen_random(n_pages: usize, iterations: usize, seed: u64) -> AccessTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = n_pages * iterations;
    let mut out = Vec::with_capacity(2 * draws);
    for d in 0..draws {
        let page = rng.random_range(0..n_pages);
        visit(&mut out, page, Some(d as u64 + 1));
    }
    AccessTrace::new(out)
}

/// Number of faults a trace produces against an engine of `capacity`
/// resident pages. Recency is only refreshed on faults, so the victim is
/// always the page that faulted longest ago.
pub fn predict_faults(trace: &AccessTrace, capacity: usize) -> u64 {
    let mut present = HashSet::new();
    let mut order = VecDeque::new();
    let mut faults = 0;
    for a in &trace.accesses {
        let page = (a.region_id, a.addr / PAGE_SIZE as u64);
        if present.contains(&page) {
            continue;
        }
        faults += 1;
        if present.len() == capacity {
            let victim = order.pop_front().expect("non-empty at capacity");
            present.remove(&victim);
        }
        present.insert(page);
        order.push_back(page);
    }
    faults
}
