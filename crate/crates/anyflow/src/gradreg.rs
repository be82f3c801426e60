//! Registry of finite-difference fixtures, one per differentiable op, plus a
//! whole-model check on a small two-iteration configuration.
//!
//! Each fixture runs in f64 with inputs deliberately placed away from the
//! op's non-smooth points (relu kinks, bilinear lattice lines, clamp edges,
//! L1 ties), since central differences are meaningless exactly on a kink.
//! Losses contract through a fixed weight pattern rather than a plain sum so
//! that axis permutation bugs cannot cancel out.

use anyflow_tensor::gradcheck::{grad_check, GradCheckReport};
use anyflow_tensor::{MaskPlan, Result as TResult, Tape, TensorData, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::model::update::forward;
use crate::model::{Binding, Ctx, Model};
use crate::synth::{synth_pair, MotionKind};

/// Tolerance for single-op checks (f64, well-conditioned shapes).
pub const OP_TOL: f64 = 1e-4;
/// Tolerance for the end-to-end model check; error compounds over two
/// refinement iterations and a deep graph.
pub const PIPELINE_TOL: f64 = 1e-3;
pub const DEFAULT_EPS: f64 = 1e-5;

/// One gradient-check case: deterministic inputs plus a scalar-valued graph.
pub struct OpFixture {
    pub name: &'static str,
    pub eps: f64,
    inputs: fn() -> Vec<TensorData<f64>>,
    graph: fn(&Tape<f64>, &[Var]) -> TResult<Var>,
}

impl OpFixture {
    pub fn run(&self) -> TResult<GradCheckReport> {
        self.run_with_eps(self.eps)
    }

    pub fn run_with_eps(&self, eps: f64) -> TResult<GradCheckReport> {
        grad_check(self.graph, &(self.inputs)(), eps, None)
    }
}

/// Deterministic pseudo-random fill in `bias + amp * (-1, 1)`.
fn noise(shape: Vec<usize>, seed: u64, amp: f64, bias: f64) -> TensorData<f64> {
    TensorData::from_fn(shape, |i| {
        let mut z = (i as u64 + 1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(seed.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        z = (z ^ (z >> 31)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 29;
        bias + amp * ((z >> 11) as f64 / (1u64 << 52) as f64 - 1.0)
    })
}

/// Contracts `y` against a fixed non-uniform pattern to get a scalar loss.
fn spice(t: &Tape<f64>, y: Var) -> TResult<Var> {
    let c = TensorData::from_fn(t.shape(y), |i| (i as f64 * 0.7311).sin() + 0.05);
    Ok(t.sum_all(t.mul(y, t.constant(c))?))
}

/// Interior coordinates with fractional parts well away from the lattice.
fn off_lattice_coords(q: usize, max_x: f64, max_y: f64, seed: u64) -> TensorData<f64> {
    TensorData::from_fn(vec![q, 2], move |i| {
        let lim = if i % 2 == 0 { max_x } else { max_y };
        let u = ((i as f64 + seed as f64 * 0.913) * 0.6180339887).fract();
        // keep fractional part in [0.2, 0.8]
        let base = 0.3 + u * (lim - 0.6);
        let cell = base.floor();
        cell + 0.2 + (base - cell) * 0.6
    })
}

pub fn op_fixtures() -> Vec<OpFixture> {
    vec![
        OpFixture {
            name: "add",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![2, 3, 4], 1, 1.0, 0.0), noise(vec![2, 3, 4], 2, 1.0, 0.0)],
            graph: |t, v| spice(t, t.add(v[0], v[1])?),
        },
        OpFixture {
            name: "sub",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![2, 3, 4], 3, 1.0, 0.0), noise(vec![2, 3, 4], 4, 1.0, 0.0)],
            graph: |t, v| spice(t, t.sub(v[0], v[1])?),
        },
        OpFixture {
            name: "mul",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![3, 5], 5, 1.0, 0.3), noise(vec![3, 5], 6, 1.0, -0.2)],
            graph: |t, v| spice(t, t.mul(v[0], v[1])?),
        },
        OpFixture {
            name: "scale",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![4, 4], 7, 1.0, 0.0)],
            graph: |t, v| spice(t, t.scale(v[0], -0.73)),
        },
        OpFixture {
            name: "add_scalar",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![4, 4], 8, 1.0, 0.0)],
            graph: |t, v| spice(t, t.add_scalar(v[0], 0.37)),
        },
        OpFixture {
            name: "one_minus",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![4, 4], 9, 1.0, 0.0)],
            graph: |t, v| spice(t, t.one_minus(v[0])),
        },
        OpFixture {
            name: "relu",
            eps: DEFAULT_EPS,
            // magnitudes at least 0.2: no probe sits near the kink
            inputs: || {
                vec![TensorData::from_fn(vec![4, 5], |i| {
                    let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                    s * (0.2 + 0.1 * ((i as f64 * 1.7).sin().abs()))
                })]
            },
            graph: |t, v| spice(t, t.relu(v[0])),
        },
        OpFixture {
            name: "sigmoid",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![3, 6], 10, 2.0, 0.0)],
            graph: |t, v| spice(t, t.sigmoid(v[0])),
        },
        OpFixture {
            name: "tanh",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![3, 6], 11, 2.0, 0.0)],
            graph: |t, v| spice(t, t.tanh(v[0])),
        },
        OpFixture {
            name: "clamp",
            eps: DEFAULT_EPS,
            // half the entries deep in the flat region, half inside the band
            inputs: || {
                vec![TensorData::from_fn(vec![4, 4], |i| match i % 4 {
                    0 => -1.3,
                    1 => -0.31,
                    2 => 0.29,
                    _ => 1.21,
                })]
            },
            graph: |t, v| spice(t, t.clamp(v[0], -0.75, 0.75)),
        },
        OpFixture {
            name: "sum_all",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![2, 3, 2], 12, 1.0, 0.0)],
            graph: |t, v| Ok(t.sum_all(v[0])),
        },
        OpFixture {
            name: "mean_all",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![2, 3, 2], 13, 1.0, 0.0)],
            graph: |t, v| Ok(t.mean_all(v[0])),
        },
        OpFixture {
            name: "l1_loss",
            eps: DEFAULT_EPS,
            // |a - b| bounded away from zero so no probe crosses the tie
            inputs: || {
                let a = noise(vec![3, 4], 14, 1.0, 0.0);
                let b = TensorData::from_fn(vec![3, 4], {
                    let av = a.to_vec();
                    move |i| av[i] + 0.5 + 0.2 * ((i as f64).cos())
                });
                vec![a, b]
            },
            graph: |t, v| t.l1_loss(v[0], v[1]),
        },
        OpFixture {
            name: "weighted_l1_loss",
            eps: DEFAULT_EPS,
            inputs: || {
                let a = noise(vec![2, 2, 3], 15, 1.0, 0.0);
                let b = TensorData::from_fn(vec![2, 2, 3], {
                    let av = a.to_vec();
                    move |i| av[i] - 0.4 - 0.1 * ((i as f64).sin())
                });
                vec![a, b]
            },
            graph: |t, v| {
                let w = TensorData::from_fn(vec![2, 2, 3], |i| 0.05 + (i % 5) as f64 * 0.1);
                t.weighted_l1_loss(v[0], v[1], &w)
            },
        },
        OpFixture {
            name: "linear",
            eps: DEFAULT_EPS,
            inputs: || {
                vec![noise(vec![3, 4], 16, 1.0, 0.0), noise(vec![5, 4], 17, 0.8, 0.0), noise(vec![5], 18, 0.5, 0.0)]
            },
            graph: |t, v| spice(t, t.linear(v[0], v[1], Some(v[2]))?),
        },
        OpFixture {
            name: "matmul",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![3, 4], 19, 1.0, 0.0), noise(vec![4, 2], 20, 1.0, 0.0)],
            graph: |t, v| spice(t, t.matmul(v[0], v[1])?),
        },
        OpFixture {
            name: "transpose_last2",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![2, 3, 4], 21, 1.0, 0.0)],
            graph: |t, v| spice(t, t.transpose_last2(v[0])?),
        },
        OpFixture {
            name: "allpairs_correlation",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![1, 3, 2, 3], 22, 1.0, 0.0), noise(vec![1, 3, 2, 3], 23, 1.0, 0.0)],
            graph: |t, v| spice(t, t.allpairs_correlation(v[0], v[1])?),
        },
        OpFixture {
            name: "conv2d",
            eps: DEFAULT_EPS,
            // 3x3 stride-1 padded, then 1x1 stride-2: both code paths
            inputs: || {
                vec![
                    noise(vec![1, 3, 5, 6], 24, 1.0, 0.0),
                    noise(vec![4, 3, 3, 3], 25, 0.5, 0.0),
                    noise(vec![4], 26, 0.3, 0.0),
                    noise(vec![2, 4, 1, 1], 27, 0.5, 0.0),
                ]
            },
            graph: |t, v| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
                spice(t, t.conv2d(y, v[3], None, 2, 0)?)
            },
        },
        OpFixture {
            name: "avg_pool2d",
            eps: DEFAULT_EPS,
            // odd extents exercise the shrunken edge windows
            inputs: || vec![noise(vec![1, 3, 5, 6], 28, 1.0, 0.0)],
            graph: |t, v| {
                let y = t.avg_pool2d(v[0])?;
                spice(t, t.avg_pool2d(y)?)
            },
        },
        OpFixture {
            name: "reshape",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![2, 3, 4], 29, 1.0, 0.0)],
            graph: |t, v| spice(t, t.reshape(v[0], vec![4, 6])?),
        },
        OpFixture {
            name: "concat",
            eps: DEFAULT_EPS,
            inputs: || {
                vec![noise(vec![2, 2, 3], 30, 1.0, 0.0), noise(vec![2, 3, 3], 31, 1.0, 0.0), noise(vec![2, 1, 3], 32, 1.0, 0.0)]
            },
            graph: |t, v| spice(t, t.concat(&[v[0], v[1], v[2]], 1)?),
        },
        OpFixture {
            name: "crop_spatial",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![1, 2, 5, 6], 33, 1.0, 0.0)],
            graph: |t, v| spice(t, t.crop_spatial(v[0], 3, 4)?),
        },
        OpFixture {
            name: "pixel_unshuffle",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![1, 2, 4, 6], 34, 1.0, 0.0)],
            graph: |t, v| spice(t, t.pixel_unshuffle(v[0], 2)?),
        },
        OpFixture {
            name: "pixel_shuffle",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![1, 8, 2, 3], 35, 1.0, 0.0)],
            graph: |t, v| spice(t, t.pixel_shuffle(v[0], 2)?),
        },
        OpFixture {
            name: "softmax",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![5, 9], 36, 1.5, 0.0)],
            graph: |t, v| spice(t, t.softmax(v[0], 1)?),
        },
        OpFixture {
            name: "grid_sample_bilinear",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![3, 4, 5], 37, 1.0, 0.0), off_lattice_coords(6, 4.0, 3.0, 38)],
            graph: |t, v| spice(t, t.grid_sample_bilinear(v[0], v[1])?),
        },
        OpFixture {
            name: "grid_sample_planes",
            eps: DEFAULT_EPS,
            inputs: || {
                let coords = TensorData::from_fn(vec![4, 3, 2], |i| {
                    let lim = if i % 2 == 0 { 4.0 } else { 2.0 };
                    let u = ((i as f64 * 0.6180339887) + 0.21).fract();
                    (0.3 + u * (lim - 0.6)).floor() + 0.25 + u * 0.5
                });
                vec![noise(vec![4, 3, 5], 39, 1.0, 0.0), coords]
            },
            graph: |t, v| spice(t, t.grid_sample_planes(v[0], v[1])?),
        },
        OpFixture {
            name: "warp",
            eps: DEFAULT_EPS,
            // displacements in (0.3, 0.7): every sample point is off-lattice
            inputs: || vec![noise(vec![1, 2, 4, 5], 40, 1.0, 0.0), noise(vec![1, 2, 4, 5], 41, 0.2, 0.5)],
            graph: |t, v| spice(t, t.warp(v[0], v[1])?),
        },
        OpFixture {
            name: "lookup_grid",
            eps: DEFAULT_EPS,
            // gradients flow through both the flow field and the radius
            inputs: || vec![noise(vec![1, 2, 3, 4], 42, 0.2, 0.5), noise(vec![1, 1, 3, 4], 43, 0.1, 1.3)],
            graph: |t, v| {
                let offs = [[-1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.5, -1.0]];
                let coords = t.lookup_grid(v[0], Some(v[1]), &offs, 0.5, 2.0)?;
                let planes = t.constant(noise(vec![12, 4, 5], 44, 1.0, 0.0));
                spice(t, t.grid_sample_planes(planes, coords)?)
            },
        },
        OpFixture {
            name: "gather_cells",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![2, 3, 2, 3], 45, 1.0, 0.0)],
            graph: |t, v| spice(t, t.gather_cells(v[0], &[0, 4, 5, 2])?),
        },
        OpFixture {
            name: "repeat_rows",
            eps: DEFAULT_EPS,
            inputs: || vec![noise(vec![3, 4], 46, 1.0, 0.0)],
            graph: |t, v| spice(t, t.repeat_rows(v[0], 2)?),
        },
        OpFixture {
            name: "mask_combine",
            eps: DEFAULT_EPS,
            // raw (non-convex) masks: the op itself is bilinear in its inputs
            inputs: || vec![noise(vec![1, 2, 2, 3], 47, 1.0, 0.0), noise(vec![24, 9], 48, 0.5, 0.1)],
            graph: |t, v| {
                let plan = MaskPlan {
                    cells: vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)],
                    n: 2,
                    coarse: (2, 3),
                    target: (4, 6),
                    scale: (2.0, 2.0),
                };
                spice(t, t.mask_combine(v[0], v[1], &plan)?)
            },
        },
    ]
}

pub fn fixture_by_name(name: &str) -> Option<OpFixture> {
    op_fixtures().into_iter().find(|f| f.name == name)
}

/// A backward pass that is wrong on purpose: `sum(x * detach(x))` reports
/// d/dx = x while the true derivative is 2x. The harness must flag it; if
/// this ever "passes", the checker itself is broken.
pub fn harness_canary() -> TResult<GradCheckReport> {
    grad_check(
        |t, v| Ok(t.sum_all(t.mul(v[0], t.detach(v[0]))?)),
        &[noise(vec![3, 3], 77, 1.0, 0.75)],
        DEFAULT_EPS,
        None,
    )
}

/// Finite-difference check of the whole model: small config, 16x24 frames,
/// two iterations, every prediction supervised through the sequence loss.
/// Probes a deterministic subsample of `probe_cap` parameters.
pub fn pipeline_grad_check(eps: f64, probe_cap: usize) -> TResult<GradCheckReport> {
    let mut model = Model::init(ModelConfig::tiny(), 11);
    // The delta heads initialize to zero, which parks every lookup on integer
    // coordinates where bilinear sampling kinks. Nudge them to a generic
    // point; the check probes differentiability, not the training start.
    for (k, p) in [model.ids.flow2, model.ids.rad2].into_iter().enumerate() {
        for (j, id) in [p.w, p.b].into_iter().enumerate() {
            let shape = model.store.get(id).shape().to_vec();
            let noisy = noise(shape, 0xF1 + (2 * k + j) as u64, 0.05, 0.0).cast::<f32>();
            model.store.set(id, noisy).expect("same shape");
        }
    }
    let cfg = model.cfg.clone();
    let ids = model.ids.clone();
    let store = model.store.cast::<f64>();
    let inputs: Vec<TensorData<f64>> = store.ids().map(|id| store.get(id).clone()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let s = synth_pair(&mut rng, MotionKind::Rotate, 16, 24, 3.0);
    let batch1 = |t: &TensorData<f32>| {
        TensorData::new(vec![1, 3, 16, 24], t.cast::<f64>().to_vec()).expect("same element count")
    };
    let img1 = batch1(&s.img1);
    let img2 = batch1(&s.img2);
    let gt = s.gt.to_tensor().cast::<f64>();
    let total = 2 * s.valid.iter().filter(|&&v| v).count();
    let hw = 16 * 24;
    let wts = TensorData::from_fn(vec![1, 2, 16, 24], |i| {
        if s.valid[i % hw] {
            1.0 / total as f64
        } else {
            0.0
        }
    });

    grad_check(
        move |t, vars| {
            let bind = Binding::from_vars(vars.to_vec());
            let ctx = Ctx { cfg: &cfg, ids: &ids, tape: t, bind: &bind };
            let out = forward(&ctx, t.constant(img1.clone()), t.constant(img2.clone()), 2, (16, 24), true)
                .map_err(|e| anyflow_tensor::TensorError::InvalidArg {
                    op: "pipeline_grad_check",
                    detail: e.to_string(),
                })?;
            let gtv = t.constant(gt.clone());
            let mut loss: Option<Var> = None;
            let n = out.preds.len();
            for (i, p) in out.preds.iter().enumerate() {
                let w = 0.8f64.powi((n - 1 - i) as i32);
                let term = t.scale(t.weighted_l1_loss(*p, gtv, &wts)?, w);
                loss = Some(match loss {
                    None => term,
                    Some(acc) => t.add(acc, term)?,
                });
            }
            Ok(loss.expect("two iterations"))
        },
        &inputs,
        eps,
        Some(probe_cap),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_has_a_unique_name() {
        let fixtures = op_fixtures();
        let mut names: Vec<_> = fixtures.iter().map(|f| f.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), fixtures.len());
        assert!(fixture_by_name("warp").is_some());
        assert!(fixture_by_name("no_such_op").is_none());
    }

    #[test]
    fn canary_with_a_wrong_backward_is_flagged() {
        let report = harness_canary().unwrap();
        assert!(
            !report.passes(OP_TOL),
            "harness failed to catch a deliberately wrong gradient (max rel {})",
            report.max_rel_error
        );
        // x vs 2x disagree by half
        assert!(report.max_rel_error > 0.3);
    }

    #[test]
    fn a_few_sample_fixtures_pass_quickly() {
        for name in ["mul", "softmax", "warp", "mask_combine"] {
            let f = fixture_by_name(name).unwrap();
            let report = f.run().unwrap();
            assert!(report.passes(OP_TOL), "{name}: max rel {} at {:?}", report.max_rel_error, report.worst);
        }
    }
}
