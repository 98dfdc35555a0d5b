// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! Per-section latency recording for the fault path.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

/// Labeled code sections of the fault path. Outer sections enclose the
/// inner ones listed after them:
///
/// ```text
/// HANDLE_USERFAULT_ZERO        EVICT_TO_EXTERNRAM, UFFD_ZEROPAGE
/// HANDLE_USERFAULT_COPY_EVICT  READ_FROM_EXTERNRAM, UFFD_COPY
/// READ_FROM_EXTERNRAM          EVICT_TO_EXTERNRAM, READ_VIA_PAGE_CACHE
/// EVICT_TO_EXTERNRAM           UFFD_REMAP, ZERO_CHECK, WRITE_PAGE
/// READ_VIA_PAGE_CACHE          READ_PAGE
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Section {
    ZeroCheck,
    HandleUserfaultZero,
    HandleUserfaultCopyEvict,
    ReadFromExternram,
    ReadViaPageCache,
    EvictToExternram,
    WritePage,
    ReadPage,
    UffdZeropage,
    UffdCopy,
    UffdRemap,
}

impl Section {
    pub const ALL: [Section; 11] = [
        Section::ZeroCheck,
        Section::HandleUserfaultZero,
        Section::HandleUserfaultCopyEvict,
        Section::ReadFromExternram,
        Section::ReadViaPageCache,
        Section::EvictToExternram,
        Section::WritePage,
        Section::ReadPage,
        Section::UffdZeropage,
        Section::UffdCopy,
        Section::UffdRemap,
    ];

    pub const fn label(self) -> &'static str {
        match self {
            Section::ZeroCheck => "ZERO_CHECK",
            Section::HandleUserfaultZero => "HANDLE_USERFAULT_ZERO",
            Section::HandleUserfaultCopyEvict => "HANDLE_USERFAULT_COPY_EVICT",
            Section::ReadFromExternram => "READ_FROM_EXTERNRAM",
            Section::ReadViaPageCache => "READ_VIA_PAGE_CACHE",
            Section::EvictToExternram => "EVICT_TO_EXTERNRAM",
            Section::WritePage => "WRITE_PAGE",
            Section::ReadPage => "READ_PAGE",
            Section::UffdZeropage => "UFFD_ZEROPAGE",
            Section::UffdCopy => "UFFD_COPY",
            Section::UffdRemap => "UFFD_REMAP",
        }
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Section {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Section::ALL
            .into_iter()
            .find(|sec| sec.label() == s)
            .ok_or_else(|| format!("unknown section label `{s}`"))
    }
}

/// Raw latency samples for one section, kept at nanosecond precision and
/// reported in microseconds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Histogram {
    samples_ns: Vec<u64>,
}

impl Histogram {
    pub fn record(&mut self, d: Duration) {
        self.samples_ns.push(d.as_nanos().min(u64::MAX as u128) as u64);
    }

    pub fn count(&self) -> usize {
        self.samples_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples_ns.is_empty()
    }

    pub fn samples_ns(&self) -> &[u64] {
        &self.samples_ns
    }

    pub fn samples_us(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples_ns.iter().map(|ns| *ns as f64 / 1000.0)
    }

    pub fn mean_us(&self) -> Option<f64> {
        if self.samples_ns.is_empty() {
            return None;
        }
        let sum: u128 = self.samples_ns.iter().map(|v| *v as u128).sum();
        Some(sum as f64 / self.samples_ns.len() as f64 / 1000.0)
    }

    /// Nearest-rank percentile, `q` in `[0, 1]`.
    pub fn percentile_us(&self, q: f64) -> Option<f64> {
        if self.samples_ns.is_empty() {
            return None;
        }
        let mut sorted = self.samples_ns.clone();
        sorted.sort_unstable();
        let rank = ((q.clamp(0.0, 1.0) * sorted.len() as f64).ceil() as usize).max(1);
        Some(sorted[rank - 1] as f64 / 1000.0)
    }

    pub fn median_us(&self) -> Option<f64> {
        self.percentile_us(0.5)
    }

    pub fn max_us(&self) -> Option<f64> {
        self.samples_ns.iter().max().map(|v| *v as f64 / 1000.0)
    }

    pub fn merge(&mut self, other: &Histogram) {
        self.samples_ns.extend_from_slice(&other.samples_ns);
    }
}

/// Sections timed during one fault.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultSpans {
    pub seq: u64,
    spans: Vec<(Section, u64)>,
}

impl FaultSpans {
    pub fn get(&self, section: Section) -> Option<Duration> {
        self.spans
            .iter()
            .find(|(s, _)| *s == section)
            .map(|(_, ns)| Duration::from_nanos(*ns))
    }

    pub fn is_copy_path(&self) -> bool {
        self.get(Section::HandleUserfaultCopyEvict).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Section, Duration)> + '_ {
        self.spans.iter().map(|(s, ns)| (*s, Duration::from_nanos(*ns)))
    }
}

/// Latency histograms keyed by section, plus the per-fault breakdown
/// needed to check that outer sections enclose inner ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SectionStats {
    histograms: BTreeMap<Section, Histogram>,
    faults: Vec<FaultSpans>,
}

impl SectionStats {
    pub fn histogram(&self, section: Section) -> Option<&Histogram> {
        self.histograms.get(&section)
    }

    pub fn count(&self, section: Section) -> usize {
        self.histograms.get(&section).map_or(0, Histogram::count)
    }

    pub fn median_us(&self, section: Section) -> Option<f64> {
        self.histograms.get(&section).and_then(Histogram::median_us)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Section, &Histogram)> {
        self.histograms.iter().map(|(s, h)| (*s, h))
    }

    pub fn faults(&self) -> &[FaultSpans] {
        &self.faults
    }

    pub fn record(&mut self, section: Section, d: Duration) {
        self.histograms.entry(section).or_default().record(d);
    }

    pub(crate) fn commit_fault(&mut self, fault: FaultSpans) {
        for (section, ns) in &fault.spans {
            self.histograms
                .entry(*section)
                .or_default()
                .record(Duration::from_nanos(*ns));
        }
        self.faults.push(fault);
    }

    pub fn clear(&mut self) {
        self.histograms.clear();
        self.faults.clear();
    }

    /// Checks, for every recorded fault, that each enclosing section lasted
    /// at least as long as each section it encloses, allowing `slack` for
    /// timer resolution.
    pub fn check_nesting(&self, slack: Duration) -> Result<(), String> {
        use Section::*;
        const EDGES: &[(Section, Section)] = &[
            (HandleUserfaultZero, EvictToExternram),
            (HandleUserfaultZero, UffdZeropage),
            (HandleUserfaultCopyEvict, ReadFromExternram),
            (HandleUserfaultCopyEvict, UffdCopy),
            (ReadFromExternram, EvictToExternram),
            (ReadFromExternram, ReadViaPageCache),
            (EvictToExternram, UffdRemap),
            (EvictToExternram, ZeroCheck),
            (EvictToExternram, WritePage),
            (ReadViaPageCache, ReadPage),
        ];
        for fault in &self.faults {
            for (outer, inner) in EDGES {
                if let (Some(o), Some(i)) = (fault.get(*outer), fault.get(*inner)) {
                    if o + slack < i {
                        return Err(format!(
                            "fault {}: {outer} {o:?} shorter than enclosed {inner} {i:?}",
                            fault.seq
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Collects section timings for one fault before they are committed.
#[derive(Debug)]
pub(crate) struct FaultTimer {
    spans: FaultSpans,
}

impl FaultTimer {
    pub fn new(seq: u64) -> Self {
        Self {
            spans: FaultSpans {
                seq,
                spans: Vec::with_capacity(8),
            },
        }
    }

    pub fn record(&mut self, section: Section, started: Instant) {
        let ns = started.elapsed().as_nanos() as u64;
        self.spans.spans.push((section, ns));
    }

    pub fn finish(self) -> FaultSpans {
        self.spans
    }
}
