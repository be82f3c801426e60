//! Flow visualization: direction maps to hue, magnitude to saturation.
//!
//! Zero motion renders white; vectors at or above the normalization magnitude
//! are fully saturated. The wheel is plain HSV with hue = atan2(v, u), which
//! keeps opposite directions in complementary colors.

use image::{Rgb, RgbImage};

use crate::flow::FlowField;

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    // h in [0, 1), s and v in [0, 1].
    let h6 = h * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8]
}

/// Renders a flow field. `max_magnitude` fixes the saturation scale so that a
/// sequence of frames shares one normalization; `None` uses the field's own
/// maximum (an all-zero field renders all white).
pub fn colorize(flow: &FlowField, max_magnitude: Option<f32>) -> RgbImage {
    let norm = match max_magnitude {
        Some(m) if m > 0.0 => m as f64,
        _ => flow.max_magnitude().max(1e-6) as f64,
    };
    let mut img = RgbImage::new(flow.width() as u32, flow.height() as u32);
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            let (u, v) = flow.get(x, y);
            let mag = (u as f64).hypot(v as f64);
            let ang = (v as f64).atan2(u as f64); // [-pi, pi]
            let hue = (ang / std::f64::consts::TAU + 1.0).fract();
            let sat = (mag / norm).min(1.0);
            img.put_pixel(x as u32, y as u32, Rgb(hsv_to_rgb(hue, sat, 1.0)));
        }
    }
    img
}
