//! Flow accuracy metrics.

use crate::flow::FlowField;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("flow fields disagree in shape: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("validity mask has {got} entries for {want} pixels")]
    MaskLength { got: usize, want: usize },
    #[error("no valid pixels; a metric over an empty mask is undefined")]
    EmptyMask,
}

fn check(
    pred: &FlowField,
    gt: &FlowField,
    valid: &[bool],
) -> Result<(), MetricsError> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(MetricsError::ShapeMismatch(pred.height(), pred.width(), gt.height(), gt.width()));
    }
    let want = gt.height() * gt.width();
    if valid.len() != want {
        return Err(MetricsError::MaskLength { got: valid.len(), want });
    }
    if !valid.iter().any(|&v| v) {
        return Err(MetricsError::EmptyMask);
    }
    Ok(())
}

/// Mean end-point error: Euclidean distance between predicted and true flow
/// vectors, averaged over valid pixels.
pub fn epe(pred: &FlowField, gt: &FlowField, valid: &[bool]) -> Result<f64, MetricsError> {
    check(pred, gt, valid)?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (i, ((pu, pv), (gu, gv))) in pred.iter_uv().zip(gt.iter_uv()).enumerate() {
        if valid[i] {
            sum += ((pu - gu) as f64).hypot((pv - gv) as f64);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Outlier fraction: valid pixels whose end-point error exceeds both 3 px and
/// 5% of the ground-truth magnitude.
pub fn f1_all(pred: &FlowField, gt: &FlowField, valid: &[bool]) -> Result<f64, MetricsError> {
    check(pred, gt, valid)?;
    let mut outliers = 0usize;
    let mut count = 0usize;
    for (i, ((pu, pv), (gu, gv))) in pred.iter_uv().zip(gt.iter_uv()).enumerate() {
        if valid[i] {
            let err = ((pu - gu) as f64).hypot((pv - gv) as f64);
            let mag = (gu as f64).hypot(gv as f64);
            if err > 3.0 && err > 0.05 * mag {
                outliers += 1;
            }
            count += 1;
        }
    }
    Ok(outliers as f64 / count as f64)
}
