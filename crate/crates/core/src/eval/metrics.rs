use std::fmt;

use crate::error::{Error, Result};
use crate::interval::Interval;

/// Detection counts for one clip or summed over several.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectionReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// `(proposal, ground truth)` index pairs that met the overlap rule.
    pub matches: Vec<(usize, usize)>,
}

impl DetectionReport {
    /// `TP / (TP + FP)`, or 1 when nothing was proposed.
    pub fn precision(&self) -> f64 {
        let d = self.true_positives + self.false_positives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    /// `TP / (TP + FN)`, or 1 when there is nothing to find.
    pub fn recall(&self) -> f64 {
        let d = self.true_positives + self.false_negatives;
        if d == 0 {
            1.0
        } else {
            self.true_positives as f64 / d as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Add counts from another clip; match indices are not carried over.
    pub fn accumulate(&mut self, other: &DetectionReport) {
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

impl fmt::Display for DetectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "true_positives = {}", self.true_positives)?;
        writeln!(f, "false_positives = {}", self.false_positives)?;
        writeln!(f, "false_negatives = {}", self.false_negatives)?;
        writeln!(f, "precision = {:.4}", self.precision())?;
        write!(f, "recall = {:.4}", self.recall())
    }
}

/// Score proposals against ground truth.
///
/// A proposal matches a ground-truth interval when at least `overlap` of the
/// proposal lies inside it. Each matched interval is one true positive however
/// many proposals hit it; a proposal matching nothing is a false positive.
pub fn evaluate(proposals: &[Interval], ground_truth: &[Interval], overlap: f64) -> Result<DetectionReport> {
    if !(overlap > 0.0 && overlap <= 1.0) {
        return Err(Error::usage(format!("overlap must be in (0, 1], got {overlap}")));
    }
    let mut hit = vec![false; ground_truth.len()];
    let mut report = DetectionReport::default();
    for (pi, p) in proposals.iter().enumerate() {
        let mut matched = false;
        for (gi, g) in ground_truth.iter().enumerate() {
            if p.intersection_len(g) as f64 >= overlap * p.len() as f64 {
                report.matches.push((pi, gi));
                hit[gi] = true;
                matched = true;
            }
        }
        if !matched {
            report.false_positives += 1;
        }
    }
    report.true_positives = hit.iter().filter(|&&h| h).count();
    report.false_negatives = hit.len() - report.true_positives;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(s: usize, e: usize) -> Interval {
        Interval { start: s, end: e }
    }

    #[test]
    fn exact_match() {
        let gt = [iv(10, 20), iv(50, 90)];
        let r = evaluate(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.precision(), r.recall()), (1.0, 1.0));
    }

    #[test]
    fn multiple_detections_are_one_true_positive() {
        let r = evaluate(&[iv(10, 30), iv(25, 45)], &[iv(0, 40)], 0.5).unwrap();
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (1, 0, 0));
        assert_eq!(r.matches, vec![(0, 0), (1, 0)]);
    }

    #[test]
    fn overlap_is_relative_to_the_proposal() {
        let r = evaluate(&[iv(0, 99)], &[iv(80, 99)], 0.5).unwrap();
        assert_eq!((r.true_positives, r.false_positives, r.false_negatives), (0, 1, 1));
        // the reverse is a full match
        let r = evaluate(&[iv(80, 99)], &[iv(0, 99)], 0.5).unwrap();
        assert_eq!(r.true_positives, 1);
    }

    #[test]
    fn empty_cases_and_bad_overlap() {
        let r = evaluate(&[], &[], 0.5).unwrap();
        assert_eq!((r.precision(), r.recall()), (1.0, 1.0));
        let r = evaluate(&[], &[iv(0, 3)], 0.5).unwrap();
        assert_eq!((r.precision(), r.recall(), r.f1()), (1.0, 0.0, 0.0));
        assert!(evaluate(&[], &[], 0.0).is_err());
        assert!(evaluate(&[], &[], 1.5).is_err());
        assert!(evaluate(&[], &[], 1.0).is_ok());
    }
}
