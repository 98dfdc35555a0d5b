// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Access traces and their text form.
//!
//! One access per line: `<R|W> <region decimal> <0xaddr> [seed decimal]`.
//! `#` starts a comment; blank lines are ignored. Only writes take a seed;
//! a write without one stores zeros.

use std::fmt;
use std::io::BufRead;

use thiserror::Error;

use crate::page::{FaultKind, PAGE_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Access {
    pub kind: FaultKind,
    pub region_id: u64,
    pub addr: u64,
    pub write_seed: Option<u64>,
}

impl Access {
    pub fn read(region_id: u64, addr: u64) -> Self {
        Self {
            kind: FaultKind::Read,
            region_id,
            addr,
            write_seed: None,
        }
    }

    pub fn write(region_id: u64, addr: u64, seed: Option<u64>) -> Self {
        Self {
            kind: FaultKind::Write,
            region_id,
            addr,
            write_seed: seed,
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            FaultKind::Read => 'R',
            FaultKind::Write => 'W',
        };
        write!(f, "{kind} {} {:#x}", self.region_id, self.addr)?;
        if let Some(seed) = self.write_seed {
            write!(f, " {seed}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccessTrace {
    pub accesses: Vec<Access>,
    // Source line of each access, empty for generated traces.
    lines: Vec<usize>,
}

impl AccessTrace {
    pub fn new(accesses: Vec<Access>) -> Self {
        Self {
            accesses,
            lines: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.accesses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accesses.is_empty()
    }

    /// Source line of the access at `index`, when parsed from text.
    pub fn line_of(&self, index: usize) -> Option<usize> {
        self.lines.get(index).copied()
    }

    /// Smallest page-multiple size covering every access to `region_id`.
    pub fn region_extent(&self, region_id: u64) -> Option<u64> {
        self.accesses
            .iter()
            .filter(|a| a.region_id == region_id)
            .map(|a| (a.addr / PAGE_SIZE as u64 + 1) * PAGE_SIZE as u64)
            .max()
    }

    /// Distinct region ids in ascending order.
    pub fn regions(&self) -> Vec<u64> {
        let mut ids: Vec<_> = self.accesses.iter().map(|a| a.region_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

impl fmt::Display for AccessTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in &self.accesses {
            writeln!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn parse_trace(input: impl BufRead) -> Result<AccessTrace, TraceError> {
    let mut trace = AccessTrace::default();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let access = parse_line(body).map_err(|msg| TraceError::Syntax { line: line_no, msg })?;
        trace.accesses.push(access);
        trace.lines.push(line_no);
    }
    Ok(trace)
}

pub fn parse_trace_str(text: &str) -> Result<AccessTrace, TraceError> {
    parse_trace(text.as_bytes())
}

fn parse_line(body: &str) -> Result<Access, String> {
    let fields: Vec<&str> = body.split_whitespace().collect();
    let (kind, region, addr, seed) = match fields.as_slice() {
        [k, r, a] => (*k, *r, *a, None),
        [k, r, a, s] => (*k, *r, *a, Some(*s)),
        _ => return Err(format!("expected 3 or 4 fields, found {}", fields.len())),
    };
    let kind = match kind {
        "R" => FaultKind::Read,
        "W" => FaultKind::Write,
        other => return Err(format!("unknown access kind `{other}`")),
    };
    let region_id = region
        .parse::<u64>()
        .map_err(|_| format!("bad region id `{region}`"))?;
    let hex = addr
        .strip_prefix("0x")
        .or_else(|| addr.strip_prefix("0X"))
        .ok_or_else(|| format!("address `{addr}` must start with 0x"))?;
    let addr = u64::from_str_radix(hex, 16).map_err(|_| format!("bad address `{addr}`"))?;
    let write_seed = match seed {
        None => None,
        Some(_) if kind == FaultKind::Read => return Err("reads take no seed".into()),
        Some(s) => Some(s.parse::<u64>().map_err(|_| format!("bad seed `{s}`"))?),
    };
    Ok(Access {
        kind,
        region_id,
        addr,
        write_seed,
    })
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fills `page` with the contents a write with `seed` leaves at
/// `page_addr`. Byte `j` is byte `j % 8` of a 64-bit hash of
/// `(seed, page_addr, j / 8)`. No seed means zeros.
pub fn write_fill(seed: Option<u64>, page_addr: u64, page: &mut [u8]) {
    let Some(seed) = seed else {
        page.fill(0);
        return;
    };
    let base = mix(seed ^ mix(page_addr));
    for (w, chunk) in page.chunks_mut(8).enumerate() {
        let word = mix(base ^ w as u64).to_le_bytes();
        chunk.copy_from_slice(&word[..chunk.len()]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reads_and_writes() {
        let t = parse_trace_str("R 1 0x1000\nW 1 0x2000 42\n").unwrap();
        assert_eq!(t.accesses, vec![Access::read(1, 0x1000), Access::write(1, 0x2000, Some(42))]);
        assert_eq!(t.line_of(1), Some(2));
    }

    #[test]
    fn comments_and_blank_lines() {
        let t = parse_trace_str("# header\n\n  R 2 0x0   # first\nW 2 0x10\n").unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.line_of(0), Some(3));
        assert_eq!(t.accesses[1].write_seed, None);
    }

    #[test]
    fn bad_kind_names_line() {
        let err = parse_trace_str("X 1 0x0").unwrap_err();
        assert_eq!(err.to_string(), "line 1: unknown access kind `X`");
    }

    #[test]
    fn malformed_lines() {
        for (text, line) in [
            ("R 1 0x0\nR 1 1000", 2),
            ("R one 0x0", 1),
            ("R 1 0x0 5", 1),
            ("W 1 0x0 -3", 1),
            ("\n\nR 1", 3),
        ] {
            match parse_trace_str(text) {
                Err(TraceError::Syntax { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn display_parses_back() {
        let t = AccessTrace::new(vec![
            Access::read(3, 0x5000),
            Access::write(3, 0x5008, Some(7)),
            Access::write(1, 0, None),
        ]);
        assert_eq!(parse_trace_str(&t.to_string()).unwrap().accesses, t.accesses);
    }

    #[test]
    fn extent_covers_highest_page() {
        let t = parse_trace_str("R 1 0x1fff\nR 1 0x0\nR 2 0x5000").unwrap();
        assert_eq!(t.region_extent(1), Some(0x2000));
        assert_eq!(t.region_extent(2), Some(0x6000));
        assert_eq!(t.region_extent(9), None);
        assert_eq!(t.regions(), vec![1, 2]);
    }

    #[test]
    fn fill_depends_on_seed_and_address() {
        let mut a = [0u8; PAGE_SIZE];
        let mut b = [0u8; PAGE_SIZE];
        write_fill(Some(1), 0x1000, &mut a);
        write_fill(Some(1), 0x1000, &mut b);
        assert_eq!(a, b);
        write_fill(Some(2), 0x1000, &mut b);
        assert_ne!(a, b);
        write_fill(Some(1), 0x2000, &mut b);
        assert_ne!(a, b);
        write_fill(None, 0x1000, &mut b);
        assert!(b.iter().all(|x| *x == 0));
    }
}
