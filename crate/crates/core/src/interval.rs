//! Inclusive integer intervals and the `start end` per-line file format shared
//! by `ground_truth.txt` and `detections.txt`.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// `[start, end]`, both inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start > end {
            return Err(Error::usage(format!("interval start {start} > end {end}")));
        }
        Ok(Interval { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    pub fn intersection_len(&self, other: &Interval) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.intersection_len(other) > 0
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.start, self.end)
    }
}

/// Sort and merge overlapping intervals.
pub fn normalize(mut intervals: Vec<Interval>) -> Vec<Interval> {
    intervals.sort();
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

pub fn parse_intervals(text: &str, origin: &Path) -> Result<Vec<Interval>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::format(origin, format!("line {}: expected `start end`, got {line:?}", n + 1));
        if fields.len() != 2 {
            return Err(bad());
        }
        let start: usize = fields[0].parse().map_err(|_| bad())?;
        let end: usize = fields[1].parse().map_err(|_| bad())?;
        if start > end {
            return Err(Error::format(origin, format!("line {}: start {start} > end {end}", n + 1)));
        }
        out.push(Interval { start, end });
    }
    Ok(out)
}

pub fn read_intervals(path: &Path) -> Result<Vec<Interval>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_intervals(&text, path)
}

pub fn render_intervals(intervals: &[Interval]) -> String {
    intervals.iter().map(|iv| format!("{iv}\n")).collect()
}

pub fn write_intervals(path: &Path, intervals: &[Interval]) -> Result<()> {
    fs::write(path, render_intervals(intervals)).map_err(|e| Error::io(path, e))
}
