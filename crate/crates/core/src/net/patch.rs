use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Space-to-depth: a `[1, S, S]` frame becomes `[k*k, S/k, S/k]`, with the
/// patch at grid position `(r, c)` stored in channel `r*k + c`.
pub fn patchify(frame: &Tensor, k: usize) -> Result<Tensor> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != 1 || s[1] != s[2] {
        return Err(Error::config(format!("patchify expects a [1, S, S] frame, got {s:?}")));
    }
    let side = s[1];
    if k == 0 || side % k != 0 {
        return Err(Error::config(format!("frame side {side} not divisible by patch factor {k}")));
    }
    let p = side / k;
    let src = frame.data();
    let mut out = vec![0.0; side * side];
    for r in 0..k {
        for c in 0..k {
            let ch = r * k + c;
            for y in 0..p {
                let dst = (ch * p + y) * p;
                let from = (r * p + y) * side + c * p;
                out[dst..dst + p].copy_from_slice(&src[from..from + p]);
            }
        }
    }
    Tensor::new([k * k, p, p], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, k: usize) -> Result<Tensor> {
    let s = patches.shape();
    if s.len() != 3 || s[0] != k * k || s[1] != s[2] {
        return Err(Error::config(format!(
            "unpatchify with factor {k} expects [{}, P, P], got {s:?}",
            k * k
        )));
    }
    let p = s[1];
    let side = p * k;
    let src = patches.data();
    let mut out = vec![0.0; side * side];
    for r in 0..k {
        for c in 0..k {
            let ch = r * k + c;
            for y in 0..p {
                let from = (ch * p + y) * p;
                let dst = (r * p + y) * side + c * p;
                out[dst..dst + p].copy_from_slice(&src[from..from + p]);
            }
        }
    }
    Tensor::new([1, side, side], out)
}
