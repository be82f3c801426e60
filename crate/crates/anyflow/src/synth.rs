//! Seeded synthetic frame pairs with analytic ground-truth flow.
//!
//! Frames sample a continuous band-limited pattern (Gaussian blobs plus
//! low-frequency sinusoids), so the second frame is generated by inverse
//! warping the pattern itself: brightness constancy holds analytically and
//! the true flow is exact at every pixel center, at any output resolution.

use anyflow_tensor::TensorData;
use rand::Rng;

use crate::flow::FlowField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    Translate,
    Rotate,
    Zoom,
    /// A foreground disk translating over an independently moving background;
    /// produces sharp motion boundaries and genuine occlusion.
    TwoLayer,
}

impl MotionKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "translate" => Some(MotionKind::Translate),
            "rotate" => Some(MotionKind::Rotate),
            "zoom" => Some(MotionKind::Zoom),
            "two_layer" => Some(MotionKind::TwoLayer),
            _ => None,
        }
    }

    pub fn all() -> [MotionKind; 4] {
        [MotionKind::Translate, MotionKind::Rotate, MotionKind::Zoom, MotionKind::TwoLayer]
    }
}

impl std::fmt::Display for MotionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MotionKind::Translate => "translate",
            MotionKind::Rotate => "rotate",
            MotionKind::Zoom => "zoom",
            MotionKind::TwoLayer => "two_layer",
        })
    }
}

/// Similarity motion `x -> c + s R (x - c) + t`; closed under inversion.
#[derive(Debug, Clone, Copy)]
pub struct Rigid {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub cos: f64,
    pub sin: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Rigid {
    pub fn translation(tx: f64, ty: f64) -> Self {
        Rigid { cx: 0.0, cy: 0.0, scale: 1.0, cos: 1.0, sin: 0.0, tx, ty }
    }

    pub fn rotation(cx: f64, cy: f64, theta: f64) -> Self {
        Rigid { cx, cy, scale: 1.0, cos: theta.cos(), sin: theta.sin(), tx: 0.0, ty: 0.0 }
    }

    pub fn zoom(cx: f64, cy: f64, scale: f64) -> Self {
        Rigid { cx, cy, scale, cos: 1.0, sin: 0.0, tx: 0.0, ty: 0.0 }
    }

    /// Where the point lands in frame 2.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        (
            self.cx + self.scale * (self.cos * dx - self.sin * dy) + self.tx,
            self.cy + self.scale * (self.sin * dx + self.cos * dy) + self.ty,
        )
    }

    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        let (nx, ny) = self.apply(x, y);
        (nx - x, ny - y)
    }

    /// The frame-1 point that lands on `(x, y)`.
    pub fn inverse_point(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.tx - self.cx, y - self.ty - self.cy);
        let inv = 1.0 / self.scale;
        (
            self.cx + inv * (self.cos * dx + self.sin * dy),
            self.cy + inv * (-self.sin * dx + self.cos * dy),
        )
    }
}

/// The full analytic motion of a sample, queryable at continuous positions.
#[derive(Debug, Clone)]
pub enum MotionField {
    Smooth(Rigid),
    TwoLayer { cx: f64, cy: f64, radius: f64, fg: Rigid, bg: Rigid },
}

impl MotionField {
    fn in_disk(&self, x: f64, y: f64) -> bool {
        match self {
            MotionField::Smooth(_) => false,
            MotionField::TwoLayer { cx, cy, radius, .. } => {
                (x - cx).hypot(y - cy) <= *radius
            }
        }
    }

    pub fn displacement(&self, x: f64, y: f64) -> (f64, f64) {
        match self {
            MotionField::Smooth(m) => m.displacement(x, y),
            MotionField::TwoLayer { fg, bg, .. } => {
                if self.in_disk(x, y) {
                    fg.displacement(x, y)
                } else {
                    bg.displacement(x, y)
                }
            }
        }
    }

    /// A frame-1 point is invalid when its match leaves the frame or is
    /// covered by the foreground layer in frame 2.
    pub fn is_valid(&self, x: f64, y: f64, height: usize, width: usize) -> bool {
        let (u, v) = self.displacement(x, y);
        let (nx, ny) = (x + u, y + v);
        let in_frame =
            nx >= 0.0 && ny >= 0.0 && nx <= width as f64 - 1.0 && ny <= height as f64 - 1.0;
        let occluded = match self {
            MotionField::Smooth(_) => false,
            MotionField::TwoLayer { fg, .. } => {
                if self.in_disk(x, y) {
                    false
                } else {
                    let (sx, sy) = fg.inverse_point(nx, ny);
                    self.in_disk(sx, sy)
                }
            }
        };
        in_frame && !occluded
    }

    /// Ground truth and validity on a grid of `oh x ow` pixels covering the
    /// same scene, in output-pixel units. `(h, w)` is the native resolution
    /// the motion was drawn at.
    pub fn ground_truth(
        &self,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    ) -> (FlowField, Vec<bool>) {
        let sx = w as f64 / ow as f64;
        let sy = h as f64 / oh as f64;
        let mut valid = vec![false; oh * ow];
        let flow = FlowField::from_fn(oh, ow, |x, y| {
            let xl = (x + 0.5) * sx - 0.5;
            let yl = (y + 0.5) * sy - 0.5;
            let (u, v) = self.displacement(xl, yl);
            valid[y as usize * ow + x as usize] = self.is_valid(xl, yl, h, w);
            (u / sx, v / sy)
        });
        (flow, valid)
    }
}

/// Continuous band-limited RGB pattern. Blob widths of at least 3 px and
/// wavelengths of at least 16 px keep bilinear resampling residuals small.
#[derive(Debug, Clone)]
struct Pattern {
    blobs: Vec<([f64; 2], f64, [f64; 3])>,
    waves: Vec<([f64; 2], f64, [f64; 3])>,
}

impl Pattern {
    fn random(rng: &mut impl Rng, h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let blobs = (0..8)
            .map(|_| {
                let c = [rng.gen_range(-0.2..1.2) * wf, rng.gen_range(-0.2..1.2) * hf];
                let sigma: f64 = rng.gen_range(3.0..9.0);
                let amp = [(); 3].map(|_| rng.gen_range(-1.2..1.2));
                (c, 0.5 / (sigma * sigma), amp)
            })
            .collect();
        let waves = (0..4)
            .map(|_| {
                let lambda: f64 = rng.gen_range(16.0..64.0);
                let dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / lambda;
                let kv = [k * dir.cos(), k * dir.sin()];
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let amp = [(); 3].map(|_| rng.gen_range(-0.6..0.6));
                (kv, phase, amp)
            })
            .collect();
        Pattern { blobs, waves }
    }

    fn eval(&self, x: f64, y: f64) -> [f64; 3] {
        let mut acc = [0.0f64; 3];
        for (c, inv2s2, amp) in &self.blobs {
            let d2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]);
            let g = (-d2 * inv2s2).exp();
            for ch in 0..3 {
                acc[ch] += amp[ch] * g;
            }
        }
        for (k, phase, amp) in &self.waves {
            let s = (k[0] * x + k[1] * y + phase).sin();
            for ch in 0..3 {
                acc[ch] += amp[ch] * s;
            }
        }
        acc.map(|v| 0.5 + 0.45 * v.tanh())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    /// RGB frames, `[3, H, W]`, values in (0, 1).
    pub img1: TensorData<f32>,
    pub img2: TensorData<f32>,
    /// Flow at native resolution, frame 1 to frame 2.
    pub gt: FlowField,
    /// Per pixel (row-major): in-frame and unoccluded.
    pub valid: Vec<bool>,
    pub motion: MotionField,
    pub kind: MotionKind,
    pub height: usize,
    pub width: usize,
}

fn render<F: Fn(f64, f64) -> [f64; 3]>(h: usize, w: usize, f: F) -> TensorData<f32> {
    let hw = h * w;
    let mut data = vec![0.0f32; 3 * hw];
    for y in 0..h {
        for x in 0..w {
            let rgb = f(x as f64, y as f64);
            for ch in 0..3 {
                data[ch * hw + y * w + x] = rgb[ch] as f32;
            }
        }
    }
    TensorData::new(vec![3, h, w], data).expect("sized above")
}

/// Draws a random motion of the given kind with peak displacement in
/// `[0.25, 1.0] * max_disp`, renders a fresh pattern pair, and returns exact
/// ground truth.
pub fn synth_pair(
    rng: &mut impl Rng,
    kind: MotionKind,
    h: usize,
    w: usize,
    max_disp: f64,
) -> SyntheticSample {
    let (hf, wf) = (h as f64, w as f64);
    let center = (wf / 2.0 + rng.gen_range(-0.1..0.1) * wf, hf / 2.0 + rng.gen_range(-0.1..0.1) * hf);
    // Farthest corner distance bounds rotation/zoom displacement.
    let corner = [(0.0, 0.0), (wf - 1.0, 0.0), (0.0, hf - 1.0), (wf - 1.0, hf - 1.0)]
        .iter()
        .map(|&(x, y)| (x - center.0).hypot(y - center.1))
        .fold(0.0f64, f64::max);
    let disp = rng.gen_range(0.25..1.0) * max_disp;

    let motion = match kind {
        MotionKind::Translate => {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            MotionField::Smooth(Rigid::translation(disp * ang.cos(), disp * ang.sin()))
        }
        MotionKind::Rotate => {
            // |(R - I) p| = 2 sin(theta/2) |p| <= disp at the farthest corner.
            let theta_max = 2.0 * (disp / (2.0 * corner)).min(1.0).asin();
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            MotionField::Smooth(Rigid::rotation(center.0, center.1, sign * theta_max))
        }
        MotionKind::Zoom => {
            let ds = disp / corner;
            let s = if rng.gen_bool(0.5) { 1.0 + ds } else { 1.0 / (1.0 + ds) };
            MotionField::Smooth(Rigid::zoom(center.0, center.1, s))
        }
        MotionKind::TwoLayer => {
            let radius = rng.gen_range(0.18..0.32) * hf.min(wf);
            let cx = rng.gen_range(0.3..0.7) * wf;
            let cy = rng.gen_range(0.3..0.7) * hf;
            let fa = rng.gen_range(0.0..std::f64::consts::TAU);
            let ba = rng.gen_range(0.0..std::f64::consts::TAU);
            let bg_disp = rng.gen_range(0.0..0.5) * max_disp;
            MotionField::TwoLayer {
                cx,
                cy,
                radius,
                fg: Rigid::translation(disp * fa.cos(), disp * fa.sin()),
                bg: Rigid::translation(bg_disp * ba.cos(), bg_disp * ba.sin()),
            }
        }
    };

    let (img1, img2) = match &motion {
        MotionField::Smooth(m) => {
            let p = Pattern::random(rng, h, w);
            let img1 = render(h, w, |x, y| p.eval(x, y));
            let img2 = render(h, w, |x, y| {
                let (sx, sy) = m.inverse_point(x, y);
                p.eval(sx, sy)
            });
            (img1, img2)
        }
        MotionField::TwoLayer { fg, bg, .. } => {
            let pf = Pattern::random(rng, h, w);
            let pb = Pattern::random(rng, h, w);
            let mf = motion.clone();
            let img1 = render(h, w, |x, y| {
                if mf.in_disk(x, y) {
                    pf.eval(x, y)
                } else {
                    pb.eval(x, y)
                }
            });
            let mf = motion.clone();
            let img2 = render(h, w, |x, y| {
                let (sx, sy) = fg.inverse_point(x, y);
                if mf.in_disk(sx, sy) {
                    pf.eval(sx, sy)
                } else {
                    let (bx, by) = bg.inverse_point(x, y);
                    pb.eval(bx, by)
                }
            });
            (img1, img2)
        }
    };

    let (gt, valid) = motion.ground_truth(h, w, h, w);
    SyntheticSample { img1, img2, gt, valid, motion, kind, height: h, width: w }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bilinear_at(img: &TensorData<f32>, ch: usize, x: f64, y: f64) -> f64 {
        let s = img.shape();
        let (h, w) = (s[1], s[2]);
        let plane = &img.as_slice()[ch * h * w..(ch + 1) * h * w];
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let cl = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let at = |xx: f64, yy: f64| plane[cl(yy, h) * w + cl(xx, w)] as f64;
        (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1.0, y0))
            + fy * ((1.0 - fx) * at(x0, y0 + 1.0) + fx * at(x0 + 1.0, y0 + 1.0))
    }

    #[test]
    fn brightness_constancy_holds_through_bilinear_resampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [MotionKind::Translate, MotionKind::Rotate, MotionKind::Zoom] {
            let s = synth_pair(&mut rng, kind, 48, 64, 8.0);
            let mut residual = 0.0f64;
            let mut count = 0usize;
            for y in 0..48 {
                for x in 0..64 {
                    if !s.valid[y * 64 + x] {
                        continue;
                    }
                    let (u, v) = s.gt.get(x, y);
                    for ch in 0..3 {
                        let i2 = bilinear_at(&s.img2, ch, x as f64 + u as f64, y as f64 + v as f64);
                        let i1 = s.img1.as_slice()[ch * 48 * 64 + y * 64 + x] as f64;
                        residual += (i2 - i1).abs();
                        count += 1;
                    }
                }
            }
            let mean = residual / count as f64;
            assert!(mean < 1e-2, "{kind}: mean resampling residual {mean}");
        }
    }

    #[test]
    fn displacements_respect_the_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in MotionKind::all() {
            for _ in 0..4 {
                let s = synth_pair(&mut rng, kind, 48, 64, 8.0);
                let m = s.gt.max_magnitude();
                assert!(m <= 8.0 + 1e-4, "{kind}: max displacement {m}");
                assert!(m > 0.5, "{kind}: motion should not be degenerate, got {m}");
            }
        }
    }

    #[test]
    fn two_layer_marks_covered_background_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = (0..20)
            .map(|_| synth_pair(&mut rng, MotionKind::TwoLayer, 48, 64, 8.0))
            .find(|s| {
                let MotionField::TwoLayer { fg, bg, .. } = &s.motion else { return false };
                let rel = (fg.tx - bg.tx).hypot(fg.ty - bg.ty);
                rel > 2.0
            })
            .expect("some sample has distinct layer motions");
        let occluded = s
            .valid
            .iter()
            .enumerate()
            .filter(|&(i, &v)| {
                let (x, y) = ((i % 64) as f64, (i / 64) as f64);
                // In-frame matches that are still invalid must be occlusions.
                let (u, vv) = s.gt.get(i % 64, i / 64);
                let (nx, ny) = (x + u as f64, y + vv as f64);
                !v && nx >= 0.0 && ny >= 0.0 && nx <= 63.0 && ny <= 47.0
            })
            .count();
        assert!(occluded > 0, "a moving layer should occlude some background");
    }

    #[test]
    fn ground_truth_rescales_per_axis_at_double_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = synth_pair(&mut rng, MotionKind::Translate, 32, 48, 6.0);
        let (hi, _) = s.motion.ground_truth(32, 48, 64, 96);
        let (u0, v0) = s.gt.get(10, 10);
        let (u1, v1) = hi.get(21, 21); // same scene point, one output unit = half a native px
        assert!((u1 - 2.0 * u0).abs() < 1e-5);
        assert!((v1 - 2.0 * v0).abs() < 1e-5);
    }

    #[test]
    fn same_seed_reproduces_the_sample() {
        let a = synth_pair(&mut ChaCha8Rng::seed_from_u64(42), MotionKind::Rotate, 32, 32, 5.0);
        let b = synth_pair(&mut ChaCha8Rng::seed_from_u64(42), MotionKind::Rotate, 32, 32, 5.0);
        assert_eq!(a.img1.as_slice(), b.img1.as_slice());
        assert_eq!(a.img2.as_slice(), b.img2.as_slice());
        assert_eq!(a.gt.u(), b.gt.u());
    }
}
