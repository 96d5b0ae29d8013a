//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::cmp::Ordering;

use convlstm_anomaly::net::{CellParams, CellState};
use convlstm_anomaly::Tensor;

/// `(value, index)` order.
fn lt(s: &[f64], a: usize, b: usize) -> bool {
    s[a].total_cmp(&s[b]).then(a.cmp(&b)) == Ordering::Less
}

/// O(n^2) persistence by paths: a local minimum `m` is paired with the lower
/// of the two path maxima reached when walking left/right from `m` until a
/// strictly lower point. The global minimum pairs with the global maximum.
/// Returns `(min_index, max_index)` sorted by minimum.
pub fn path_persistence(s: &[f64]) -> Vec<(usize, usize)> {
    let n = s.len();
    let mut out = Vec::new();
    for m in 0..n {
        let left_higher = m == 0 || lt(s, m, m - 1);
        let right_higher = m + 1 == n || lt(s, m, m + 1);
        if !(left_higher && right_higher) {
            continue;
        }
        let walk = |dir: isize| -> Option<usize> {
            let mut best = m;
            let mut j = m as isize + dir;
            while j >= 0 && (j as usize) < n {
                let ju = j as usize;
                if lt(s, ju, m) {
                    return Some(best);
                }
                if lt(s, best, ju) {
                    best = ju;
                }
                j += dir;
            }
            None
        };
        let pair = match (walk(-1), walk(1)) {
            (Some(a), Some(b)) => Some(if lt(s, a, b) { a } else { b }),
            (a, b) => a.or(b),
        };
        let max = pair.unwrap_or_else(|| (0..n).fold(0, |g, i| if lt(s, g, i) { i } else { g }));
        out.push((m, max));
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Zero-padded same-size cross-correlation at one output position.
fn conv_at(w: &Tensor, x: &Tensor, o: usize, r: usize, c: usize) -> f64 {
    let (cin, k) = (w.shape()[1], w.shape()[2]);
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let p = (k / 2) as isize;
    let mut acc = 0.0;
    for i in 0..cin {
        for dr in 0..k {
            for dc in 0..k {
                let rr = r as isize + dr as isize - p;
                let cc = c as isize + dc as isize - p;
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= wd as isize {
                    continue;
                }
                let wv = w.data()[((o * cin + i) * k + dr) * k + dc];
                let xv = x.data()[(i * h + rr as usize) * wd + cc as usize];
                acc += wv * xv;
            }
        }
    }
    acc
}

/// One peephole Conv-LSTM step, element by element.
pub fn scalar_cell_step(p: &CellParams, x: &Tensor, prev: &CellState) -> CellState {
    let hid = p.b_i.shape()[0];
    let (h, w) = (x.shape()[1], x.shape()[2]);
    let mut hn = vec![0.0; hid * h * w];
    let mut cn = vec![0.0; hid * h * w];
    for o in 0..hid {
        for r in 0..h {
            for c in 0..w {
                let at = (o * h + r) * w + c;
                let cp = prev.c.data()[at];
                let pre = |wx: &Tensor, wh: &Tensor, b: &Tensor| {
                    conv_at(wx, x, o, r, c) + conv_at(wh, &prev.h, o, r, c) + b.data()[o]
                };
                let i = sigmoid(pre(&p.w_xi, &p.w_hi, &p.b_i) + p.w_ci.data()[at] * cp);
                let f = sigmoid(pre(&p.w_xf, &p.w_hf, &p.b_f) + p.w_cf.data()[at] * cp);
                let cnew = f * cp + i * pre(&p.w_xc, &p.w_hc, &p.b_c).tanh();
                let og = sigmoid(pre(&p.w_xo, &p.w_ho, &p.b_o) + p.w_co.data()[at] * cnew);
                cn[at] = cnew;
                hn[at] = og * cnew.tanh();
            }
        }
    }
    CellState {
        h: Tensor::new([hid, h, w], hn).unwrap(),
        c: Tensor::new([hid, h, w], cn).unwrap(),
    }
}
