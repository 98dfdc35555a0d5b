// Copyright 2026 The pagemon Authors
// SPDX-License-Identifier: Apache-2.0

//! CSV export of a bench report.
//!
//! `ladder.csv` has one row per cell; `sections.csv` has one row per
//! section sample. Sample times carry three decimals of microseconds, so
//! they round-trip to the nanosecond.

use std::fs;
use std::io;
use std::path::Path;

use super::ladder::BenchReport;
use crate::engine::Section;

pub const LADDER_HEADER: [&str; 8] = [
    "workload",
    "level",
    "mean_us",
    "faults",
    "hits",
    "store_reads",
    "store_writes",
    "multi_writes",
];

pub const SECTIONS_HEADER: [&str; 4] = ["workload", "level", "section_label", "sample_us"];

#[derive(Clone, Debug, PartialEq)]
pub struct LadderRow {
    pub workload: String,
    pub level: u8,
    pub mean_us: f64,
    pub faults: u64,
    pub hits: u64,
    pub store_reads: u64,
    pub store_writes: u64,
    pub multi_writes: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SectionSample {
    pub workload: String,
    pub level: u8,
    pub section: Section,
    pub sample_ns: u64,
}

pub fn ladder_rows(report: &BenchReport) -> Vec<LadderRow> {
    report
        .cells
        .iter()
        .map(|c| LadderRow {
            workload: c.workload.clone(),
            level: c.level,
            mean_us: c.mean_us,
            faults: c.faults(),
            hits: c.hits(),
            store_reads: c.store_reads(),
            store_writes: c.store_writes(),
            multi_writes: c.multi_writes(),
        })
        .collect()
}

pub fn section_samples(report: &BenchReport) -> Vec<SectionSample> {
    let mut out = Vec::new();
    for cell in &report.cells {
        for (section, hist) in &cell.sections {
            out.extend(hist.samples_ns().iter().map(|ns| SectionSample {
                workload: cell.workload.clone(),
                level: cell.level,
                section: *section,
                sample_ns: *ns,
            }));
        }
    }
    out
}

fn fmt_ns_as_us(ns: u64) -> String {
    format!("{}.{:03}", ns / 1000, ns % 1000)
}

pub fn render_ladder_csv(report: &BenchReport) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LADDER_HEADER)?;
    for r in ladder_rows(report) {
        w.write_record([
            r.workload,
            r.level.to_string(),
            format!("{:.3}", r.mean_us),
            r.faults.to_string(),
            r.hits.to_string(),
            r.store_reads.to_string(),
            r.store_writes.to_string(),
            r.multi_writes.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn render_sections_csv(report: &BenchReport) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SECTIONS_HEADER)?;
    for s in section_samples(report) {
        w.write_record([
            s.workload,
            s.level.to_string(),
            s.section.label().to_string(),
            fmt_ns_as_us(s.sample_ns),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

/// Writes `ladder.csv` and `sections.csv` into `dir`, creating it if needed.
pub fn export_csv(report: &BenchReport, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("ladder.csv"), render_ladder_csv(report)?)?;
    fs::write(dir.join("sections.csv"), render_sections_csv(report)?)?;
    Ok(())
}

fn records(text: &[u8], header: &[&str]) -> Result<Vec<csv::StringRecord>, String> {
    let mut r = csv::Reader::from_reader(text);
    let found = r.headers().map_err(|e| e.to_string())?;
    if found.iter().ne(header.iter().copied()) {
        return Err(format!("unexpected header {found:?}"));
    }
    r.records().map(|rec| rec.map_err(|e| e.to_string())).collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing column {i}"))?;
    raw.parse().map_err(|_| format!("bad value `{raw}` in column {i}"))
}

pub fn parse_ladder_csv(text: &[u8]) -> Result<Vec<LadderRow>, String> {
    records(text, &LADDER_HEADER)?
        .iter()
        .map(|rec| {
            Ok(LadderRow {
                workload: field(rec, 0)?,
                level: field(rec, 1)?,
                mean_us: field(rec, 2)?,
                faults: field(rec, 3)?,
                hits: field(rec, 4)?,
                store_reads: field(rec, 5)?,
                store_writes: field(rec, 6)?,
                multi_writes: field(rec, 7)?,
            })
        })
        .collect()
}

pub fn parse_sections_csv(text: &[u8]) -> Result<Vec<SectionSample>, String> {
    records(text, &SECTIONS_HEADER)?
        .iter()
        .map(|rec| {
            let us: String = field(rec, 3)?;
            let (whole, frac) = us.split_once('.').ok_or_else(|| format!("bad sample `{us}`"))?;
            let whole: u64 = whole.parse().map_err(|_| format!("bad sample `{us}`"))?;
            let frac: u64 = frac.parse().map_err(|_| format!("bad sample `{us}`"))?;
            if frac >= 1000 {
                return Err(format!("bad sample `{us}`"));
            }
            Ok(SectionSample {
                workload: field(rec, 0)?,
                level: field(rec, 1)?,
                section: field(rec, 2)?,
                sample_ns: whole * 1000 + frac,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_has_headers_only() {
        let report = BenchReport::default();
        let ladder = String::from_utf8(render_ladder_csv(&report).unwrap()).unwrap();
        assert_eq!(ladder, "workload,level,mean_us,faults,hits,store_reads,store_writes,multi_writes\n");
        let sections = String::from_utf8(render_sections_csv(&report).unwrap()).unwrap();
        assert_eq!(sections, "workload,level,section_label,sample_us\n");
    }

    #[test]
    fn sample_formatting() {
        assert_eq!(fmt_ns_as_us(0), "0.000");
        assert_eq!(fmt_ns_as_us(1_234_567), "1234.567");
        assert_eq!(fmt_ns_as_us(5_007), "5.007");
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(parse_ladder_csv(b"a,b\n1,2\n").is_err());
        assert!(parse_sections_csv(b"workload,level,section_label,sample_us\nseq,0,NOPE,1.000\n").is_err());
    }
}
