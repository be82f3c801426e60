//! Image and flow resampling (plain interpolation, off the autodiff tape).
//!
//! Sampling is center-aligned: output pixel `d` reads source position
//! `(d + 0.5) * S / D - 0.5` with edge-clamped taps. Flow resampling also
//! rescales the vector components so displacements stay in output-pixel
//! units: `u` by `W_out / W_in`, `v` by `H_out / H_in`.

use anyflow_tensor::TensorData;

use crate::flow::FlowField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    /// Catmull-Rom cubic (a = -0.5).
    Bicubic,
}

impl Interp {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bilinear" => Some(Interp::Bilinear),
            "bicubic" => Some(Interp::Bicubic),
            _ => None,
        }
    }
}

impl std::fmt::Display for Interp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Interp::Bilinear => "bilinear",
            Interp::Bicubic => "bicubic",
        })
    }
}

#[inline]
fn clamp_idx(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

fn sample_bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let at = |xx: i64, yy: i64| plane[clamp_idx(yy, h) * w + clamp_idx(xx, w)] as f64;
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
        + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1))
}

#[inline]
fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

fn sample_bicubic(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let x0 = x.floor() as i64;
    let y0 = y.floor() as i64;
    let mut acc = 0.0;
    for dy in -1..=2i64 {
        let wy = catmull_rom(y - (y0 + dy) as f64);
        if wy == 0.0 {
            continue;
        }
        let row = clamp_idx(y0 + dy, h) * w;
        for dx in -1..=2i64 {
            let wx = catmull_rom(x - (x0 + dx) as f64);
            acc += wy * wx * plane[row + clamp_idx(x0 + dx, w)] as f64;
        }
    }
    acc
}

fn resize_plane(plane: &[f32], h: usize, w: usize, oh: usize, ow: usize, interp: Interp) -> Vec<f32> {
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = vec![0.0f32; oh * ow];
    for y in 0..oh {
        let srcy = (y as f64 + 0.5) * sy - 0.5;
        for x in 0..ow {
            let srcx = (x as f64 + 0.5) * sx - 0.5;
            out[y * ow + x] = match interp {
                Interp::Bilinear => sample_bilinear(plane, h, w, srcx, srcy),
                Interp::Bicubic => sample_bicubic(plane, h, w, srcx, srcy),
            } as f32;
        }
    }
    out
}

/// Bilinearly resizes the trailing two axes of a rank-3 or rank-4 tensor.
pub fn resize_image(img: &TensorData<f32>, oh: usize, ow: usize) -> TensorData<f32> {
    let s = img.shape();
    assert!(s.len() == 3 || s.len() == 4, "resize_image expects [C,H,W] or [N,C,H,W], got {s:?}");
    assert!(oh > 0 && ow > 0);
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = img.numel() / (h * w);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        out.extend(resize_plane(&img.as_slice()[p * h * w..(p + 1) * h * w], h, w, oh, ow, Interp::Bilinear));
    }
    let mut shape = s.to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    TensorData::new(shape, out).expect("resized buffer matches shape")
}

/// Resamples a flow field onto a new grid and rescales the vectors into the
/// new pixel units (per-axis: horizontal and vertical ratios may differ).
pub fn resize_flow_interp(flow: &FlowField, oh: usize, ow: usize, interp: Interp) -> FlowField {
    assert!(oh > 0 && ow > 0);
    let (h, w) = (flow.height(), flow.width());
    let su = ow as f32 / w as f32;
    let sv = oh as f32 / h as f32;
    let mut data = resize_plane(flow.u(), h, w, oh, ow, interp);
    data.extend(resize_plane(flow.v(), h, w, oh, ow, interp));
    let hw = oh * ow;
    for x in data[..hw].iter_mut() {
        *x *= su;
    }
    for x in data[hw..].iter_mut() {
        *x *= sv;
    }
    FlowField::from_planar(oh, ow, data).expect("sized above")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_stay_constant_at_any_size() {
        let img = TensorData::full(vec![2, 3, 5], 0.7f32);
        for &(oh, ow) in &[(1, 1), (3, 5), (7, 11)] {
            let r = resize_image(&img, oh, ow);
            assert_eq!(r.shape(), &[2, oh, ow]);
            assert!(r.iter().all(|&v| (v - 0.7).abs() < 1e-6));
        }
    }

    #[test]
    fn bilinear_halving_averages_pixel_pairs() {
        // One row [0, 2, 4, 6] halved center-aligned reads midpoints.
        let img = TensorData::new(vec![1, 1, 4], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        let r = resize_image(&img, 1, 2);
        assert_eq!(r.as_slice(), &[1.0, 5.0]);
    }

    #[test]
    fn flow_resize_scales_vectors_per_axis() {
        let f = FlowField::from_fn(4, 4, |_, _| (2.0, -1.0));
        let r = resize_flow_interp(&f, 8, 2, Interp::Bilinear);
        // Width halves, height doubles: u scales by 0.5, v by 2.
        for (u, v) in r.iter_uv() {
            assert!((u - 1.0).abs() < 1e-6 && (v + 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn bicubic_reproduces_linear_ramps_exactly_in_the_interior() {
        // Catmull-Rom has linear precision; away from clamped borders an
        // upscaled ramp must stay a ramp.
        let img = TensorData::new(vec![1, 1, 8], (0..8).map(|i| i as f32).collect()).unwrap();
        let f = FlowField::from_planar(1, 8, {
            let mut d = img.to_vec();
            d.extend(vec![0.0; 8]);
            d
        })
        .unwrap();
        let r = resize_flow_interp(&f, 1, 16, Interp::Bicubic);
        let su = 2.0;
        for x in 4..12 {
            let srcx = (x as f64 + 0.5) * 0.5 - 0.5;
            let want = srcx as f32 * su;
            assert!((r.u()[x] - want).abs() < 1e-5, "x={x}: {} vs {want}", r.u()[x]);
        }
    }
}
