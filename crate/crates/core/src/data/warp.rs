//! Planar image warping: rotation about the image center followed by an
//! integer translation, bilinear interpolation, zero fill outside the canvas.

use super::PlanarTransform;

/// Warps a square `side`x`side` image. The forward map takes content pixel
/// `p` to `R(theta)*(p - c) + c + (tx, ty)` where `c` is the canvas center
/// `((side-1)/2, (side-1)/2)`; positive `tx` moves content right, positive
/// `ty` moves it down, positive `theta` rotates from the +x axis toward the
/// +y (downward) axis. Output values are clamped to [0,1].
pub fn warp(src: &[f32], side: usize, t: &PlanarTransform) -> Vec<f32> {
    assert_eq!(src.len(), side * side, "image is not {side}x{side}");
    let c = (side as f64 - 1.0) / 2.0;
    let rad = t.theta_deg.to_radians();
    let (sin, cos) = (rad.sin(), rad.cos());
    let mut out = vec![0.0f32; side * side];
    for y in 0..side {
        let dy = y as f64 - c - t.ty as f64;
        for x in 0..side {
            let dx = x as f64 - c - t.tx as f64;
            // inverse rotation
            let sx = cos * dx + sin * dy + c;
            let sy = -sin * dx + cos * dy + c;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let sample = |xi: f64, yi: f64| -> f64 {
                if xi < 0.0 || yi < 0.0 || xi >= side as f64 || yi >= side as f64 {
                    0.0
                } else {
                    src[yi as usize * side + xi as usize] as f64
                }
            };
            let v = (1.0 - fx) * (1.0 - fy) * sample(x0, y0)
                + fx * (1.0 - fy) * sample(x0 + 1.0, y0)
                + (1.0 - fx) * fy * sample(x0, y0 + 1.0)
                + fx * fy * sample(x0 + 1.0, y0 + 1.0);
            out[y * side + x] = v.clamp(0.0, 1.0) as f32;
        }
    }
    out
}
