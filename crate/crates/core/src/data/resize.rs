use crate::tensor::Tensor;

/// Bilinear resize of a `[1, H, W]` greyscale frame to `[1, side, side]`.
///
/// Pixel centres are aligned (half-pixel convention) and samples outside the
/// source are clamped to the border. Output is clamped to `[0, 1]`.
pub fn resize_grayscale(frame: &Tensor, side: usize) -> Tensor {
    let s = frame.shape();
    assert!(s.len() == 3 && s[0] == 1, "resize expects [1, H, W], got {s:?}");
    assert!(side >= 1);
    let (h, w) = (s[1], s[2]);
    let src = frame.data();
    let coord = |o: usize, n_in: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * n_in as f64 / side as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(n_in - 1);
        (x0, x1, x - x0 as f64)
    };
    let mut out = Tensor::zeros([1, side, side]);
    for oy in 0..side {
        let (y0, y1, fy) = coord(oy, h);
        for ox in 0..side {
            let (x0, x1, fx) = coord(ox, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.data_mut()[oy * side + ox] = (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0);
        }
    }
    out
}
