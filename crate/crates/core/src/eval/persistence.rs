//! Persistence of local minima in a 1-D series.
//!
//! Sublevel-set persistence: indices are activated in ascending order of
//! `(value, index)`, so equal values are broken by lower index first. Each new
//! local minimum starts a component. When an index joins two components, the
//! one whose minimum comes later in that order dies and its minimum is paired
//! with the joining index. The surviving global minimum is paired with the
//! global maximum (the last index activated).

use std::cmp::Ordering;

/// A local minimum and the maximum that bounds its basin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtremaPair {
    pub min_index: usize,
    pub min_value: f64,
    pub max_index: usize,
    pub max_value: f64,
}

impl ExtremaPair {
    pub fn persistence(&self) -> f64 {
        self.max_value - self.min_value
    }
}

/// Total order used everywhere in this module: value, then index.
pub(crate) fn order(series: &[f64], a: usize, b: usize) -> Ordering {
    series[a].total_cmp(&series[b]).then(a.cmp(&b))
}

struct UnionFind {
    parent: Vec<usize>,
    /// Birth (minimum) index of each root's component.
    birth: Vec<usize>,
}

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
}

/// One pair per local minimum, sorted by minimum index. Empty input gives no pairs.
pub fn persistence1d(series: &[f64]) -> Vec<ExtremaPair> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| order(series, a, b));

    let mut uf = UnionFind {
        parent: (0..n).collect(),
        birth: (0..n).collect(),
    };
    let mut active = vec![false; n];
    let mut pairs = Vec::new();
    let pair = |min: usize, max: usize| ExtremaPair {
        min_index: min,
        min_value: series[min],
        max_index: max,
        max_value: series[max],
    };

    for &i in &idx {
        active[i] = true;
        let neighbours = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)];
        for j in neighbours.into_iter().flatten().filter(|&j| active[j]) {
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri == rj {
                continue;
            }
            // i alone has birth i, which is later than any active component's
            let (bi, bj) = (uf.birth[ri], uf.birth[rj]);
            let (survivor, dying) = if order(series, bi, bj) == Ordering::Less {
                (ri, rj)
            } else {
                (rj, ri)
            };
            if uf.birth[dying] != i {
                pairs.push(pair(uf.birth[dying], i));
            }
            uf.parent[dying] = survivor;
        }
    }
    let global_min = idx[0];
    let global_max = idx[n - 1];
    pairs.push(pair(global_min, global_max));
    pairs.sort_by_key(|p| p.min_index);
    pairs
}

/// Minima and maxima of the pairs with persistence `>= threshold`, each
/// sorted ascending. The global-minimum pair is always kept.
pub fn filter_extrema(pairs: &[ExtremaPair], threshold: f64) -> (Vec<usize>, Vec<usize>) {
    let global = pairs
        .iter()
        .min_by(|a, b| a.min_value.total_cmp(&b.min_value).then(a.min_index.cmp(&b.min_index)));
    let mut minima = Vec::new();
    let mut maxima = Vec::new();
    for p in pairs {
        let is_global = global.is_some_and(|g| std::ptr::eq(g, p));
        if is_global || p.persistence() >= threshold {
            minima.push(p.min_index);
            maxima.push(p.max_index);
        }
    }
    minima.sort_unstable();
    maxima.sort_unstable();
    maxima.dedup();
    (minima, maxima)
}
