use crate::interval::Interval;

/// A proposed anomalous segment in window-start indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnomalyRegion {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    /// Minima that produced the region, ascending.
    pub minima: Vec<usize>,
}

impl AnomalyRegion {
    pub fn interval(&self) -> Interval {
        Interval {
            start: self.start,
            end: self.end,
        }
    }
}

/// Turn retained minima (and maxima) of a regularity series into regions.
///
/// 1. Minima no more than `merge_distance` apart form one event.
/// 2. An event spans `[first - window, last + window]`, clamped to the series.
/// 3. The nearest retained maximum to the right of the event's last minimum
///    (and before the next event starts) pulls the right border in to the
///    midpoint `floor((m + t) / 2)`; likewise on the left. Maxima between two
///    minima of the same event never trim.
/// 4. Overlapping regions are merged.
///
/// `minima` and `maxima` need not be sorted; indices past the series are ignored.
pub fn propose_regions(
    minima: &[usize],
    maxima: &[usize],
    series_length: usize,
    window: usize,
    merge_distance: usize,
) -> Vec<AnomalyRegion> {
    if series_length == 0 {
        return Vec::new();
    }
    let last = series_length - 1;
    let mut mins: Vec<usize> = minima.iter().copied().filter(|&t| t <= last).collect();
    mins.sort_unstable();
    mins.dedup();
    let mut maxs: Vec<usize> = maxima.iter().copied().filter(|&m| m <= last).collect();
    maxs.sort_unstable();

    let mut events: Vec<Vec<usize>> = Vec::new();
    for t in mins {
        match events.last_mut() {
            Some(ev) if t - ev[ev.len() - 1] <= merge_distance => ev.push(t),
            _ => events.push(vec![t]),
        }
    }

    let mut regions: Vec<AnomalyRegion> = Vec::with_capacity(events.len());
    for (k, ev) in events.iter().enumerate() {
        let (first, lastmin) = (ev[0], ev[ev.len() - 1]);
        let mut start = first.saturating_sub(window);
        let mut end = (lastmin + window).min(last);
        let prev_bound = k.checked_sub(1).map(|p| events[p][events[p].len() - 1]);
        let next_bound = events.get(k + 1).map(|e| e[0]);
        let right = maxs
            .iter()
            .find(|&&m| m > lastmin && next_bound.is_none_or(|b| m < b));
        if let Some(&m) = right {
            end = end.min((m + lastmin) / 2);
        }
        let left = maxs
            .iter()
            .rev()
            .find(|&&m| m < first && prev_bound.is_none_or(|b| m > b));
        if let Some(&m) = left {
            start = start.max((m + first) / 2);
        }
        regions.push(AnomalyRegion {
            start,
            end,
            minima: ev.clone(),
        });
    }
    merge_regions(regions)
}

/// Sort by start and merge overlapping regions.
pub fn merge_regions(mut regions: Vec<AnomalyRegion>) -> Vec<AnomalyRegion> {
    regions.sort_by_key(|r| (r.start, r.end));
    let mut out: Vec<AnomalyRegion> = Vec::with_capacity(regions.len());
    for r in regions {
        match out.last_mut() {
            Some(prev) if r.start <= prev.end => {
                prev.end = prev.end.max(r.end);
                prev.minima.extend(r.minima);
                prev.minima.sort_unstable();
                prev.minima.dedup();
            }
            _ => out.push(r),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans(r: &[AnomalyRegion]) -> Vec<(usize, usize)> {
        r.iter().map(|r| (r.start, r.end)).collect()
    }

    #[test]
    fn single_minimum() {
        assert_eq!(spans(&propose_regions(&[100], &[], 300, 50, 50)), vec![(50, 150)]);
        assert_eq!(spans(&propose_regions(&[10], &[], 30, 50, 50)), vec![(0, 29)]);
    }

    #[test]
    fn close_minima_merge_and_inner_maximum_does_not_trim() {
        let r = propose_regions(&[100, 130], &[115], 300, 50, 50);
        assert_eq!(spans(&r), vec![(50, 180)]);
        assert_eq!(r[0].minima, vec![100, 130]);
    }

    #[test]
    fn maximum_trims_to_midpoint() {
        assert_eq!(spans(&propose_regions(&[100], &[180], 300, 50, 50)), vec![(50, 140)]);
        assert_eq!(spans(&propose_regions(&[100], &[61], 300, 50, 50)), vec![(80, 150)]);
        // a far maximum leaves the border alone
        assert_eq!(spans(&propose_regions(&[100], &[290], 300, 50, 50)), vec![(50, 150)]);
    }

    #[test]
    fn separate_events_trimmed_by_the_maximum_between_them() {
        let r = propose_regions(&[100, 200], &[150], 400, 80, 50);
        assert_eq!(spans(&r), vec![(20, 125), (175, 280)]);
    }

    #[test]
    fn overlapping_events_merge() {
        let r = propose_regions(&[100, 160], &[], 400, 50, 50);
        assert_eq!(spans(&r), vec![(50, 210)]);
        assert_eq!(r[0].minima, vec![100, 160]);
    }

    #[test]
    fn remerging_is_idempotent() {
        let r = propose_regions(&[5, 40, 120, 300, 310], &[20, 90, 200], 400, 30, 20);
        assert_eq!(merge_regions(r.clone()), r);
    }
}
