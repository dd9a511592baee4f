//! Color-wheel rendering of motion fields as binary PPM (P6).
//!
//! Hue follows the displacement angle `atan2(dy, dx)`, saturation and value
//! both scale with magnitude up to `max_magnitude`. Image row `i` is grid
//! row `i` (increasing X), column `j` is grid column `j` (increasing Y).
//! Invalid cells are black.

use bevmotion::{MotionStack, Scalar};

/// HSV with `h` in degrees to 8-bit RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m).clamp(0.0, 1.0) * 255.0).round() as u8;
    [q(r), q(g), q(b)]
}

pub fn motion_color(d: [f64; 2], max_magnitude: f64) -> [u8; 3] {
    let mag = d[0].hypot(d[1]);
    let level = if max_magnitude > 0.0 { (mag / max_magnitude).min(1.0) } else { 0.0 };
    hsv_to_rgb(d[1].atan2(d[0]).to_degrees(), level, level)
}

/// PPM bytes of step `k`.
pub fn render_step<T: Scalar>(stack: &MotionStack<T>, k: usize, max_magnitude: f64) -> Vec<u8> {
    let g = stack.grid();
    let (h, w) = (g.rows(), g.cols());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let mut pixels = vec![0u8; h * w * 3];
    for (s, &c) in stack.cells().iter().enumerate() {
        let v = stack.step(k)[s];
        let rgb = motion_color([v[0].as_f64(), v[1].as_f64()], max_magnitude);
        pixels[c * 3..c * 3 + 3].copy_from_slice(&rgb);
    }
    out.extend_from_slice(&pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wheel_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(-120.0, 1.0, 1.0), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(77.0, 0.0, 0.0), [0, 0, 0]);
    }

    #[test]
    fn clamp_saturates() {
        assert_eq!(motion_color([2.0, 0.0], 2.0), [255, 0, 0]);
        assert_eq!(motion_color([5.0, 0.0], 2.0), [255, 0, 0]);
        assert_eq!(motion_color([0.0, 0.0], 2.0), [0, 0, 0]);
        // +Y is 90 degrees
        assert_eq!(motion_color([0.0, 2.0], 2.0), [128, 255, 0]);
    }
}
