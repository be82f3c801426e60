//! Central finite-difference verification of backward passes.
//!
//! Runs in f64 only; f32 roundoff would drown the signal.

use crate::data::TensorData;
use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};

/// An element whose analytic/numeric comparison produced a NaN or infinity.
#[derive(Debug, Clone, Copy)]
pub struct NonFiniteProbe {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (input index, element index, analytic, numeric) at the maximum.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub probes: usize,
    pub non_finite: Vec<NonFiniteProbe>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_error < tol
    }
}

/// Relative error with an absolute floor so near-zero gradients are judged
/// on absolute terms.
fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Compares analytic gradients of `f` (a scalar-valued graph builder) against
/// central differences at step `eps`. Every element is probed up to
/// `probe_cap`; beyond that a deterministic subsample of `probe_cap` elements
/// is drawn. `probe_cap = None` uses the default cap of 10⁴.
pub fn grad_check<F>(
    f: F,
    inputs: &[TensorData<f64>],
    eps: f64,
    probe_cap: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(TensorError::arg("grad_check", format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    if inputs.is_empty() {
        return Err(TensorError::arg("grad_check", "no inputs".to_string()));
    }
    let cap = probe_cap.unwrap_or(10_000).max(1);

    // analytic pass
    let tape: Tape<f64> = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|d| tape.leaf(d.clone(), true)).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<TensorData<f64>> = vars
        .iter()
        .map(|&v| tape.leaf_grad(v).expect("backward populates every leaf"))
        .collect();

    // probe plan: (input, element) pairs, subsampled deterministically
    let mut plan: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.numel()).map(move |e| (i, e)))
        .collect();
    if plan.len() > cap {
        let mut state = 0x5EED_0F10_u64 ^ (plan.len() as u64);
        for i in 0..cap {
            let j = i + (splitmix64(&mut state) as usize) % (plan.len() - i);
            plan.swap(i, j);
        }
        plan.truncate(cap);
    }

    let eval = |probe_input: usize, elem: usize, delta: f64| -> Result<f64> {
        let t: Tape<f64> = Tape::no_grad();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(i, d)| {
                if i == probe_input {
                    let mut v = d.to_vec();
                    v[elem] += delta;
                    t.leaf(TensorData::new(d.shape().to_vec(), v).expect("same shape"), false)
                } else {
                    t.leaf(d.clone(), false)
                }
            })
            .collect();
        let out = f(&t, &vars)?;
        if t.numel(out) != 1 {
            return Err(TensorError::NonScalarLoss { numel: t.numel(out) });
        }
        Ok(t.value(out).as_slice()[0])
    };

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, probes: plan.len(), non_finite: Vec::new() };
    for (input, elem) in plan {
        let numeric = (eval(input, elem, eps)? - eval(input, elem, -eps)?) / (2.0 * eps);
        let a = analytic[input].as_slice()[elem];
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite.push(NonFiniteProbe { input, element: elem, analytic: a, numeric });
            continue;
        }
        let rel = rel_error(a, numeric);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((input, elem, a, numeric));
        }
    }
    Ok(report)
}
