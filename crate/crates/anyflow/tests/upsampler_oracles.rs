//! Oracles for the implicit upsampler: mask convexity, convex-hull locality
//! of every output pixel, and exact agreement with a plain fixed convex
//! upsampling at the native x8 scale.

mod common;

use anyflow::model::Model;
use anyflow::ModelConfig;
use common::{convex_mask_rows, hull_check, native_scale_vs_fixed_oracle};

#[test]
fn masks_are_convex_for_every_query() {
    let model = Model::init(ModelConfig::desk(), 23);
    // Integer, fractional and padded scales; together well over 10^4 rows.
    let rows = convex_mask_rows(&model, &[(48, 64), (24, 36), (21, 37), (96, 128)], 60);
    assert!(rows >= 10_000, "only {rows} mask rows exercised");
}

#[test]
fn outputs_stay_in_the_hull_of_their_coarse_neighborhood() {
    let model = Model::init(ModelConfig::desk(), 23);
    hull_check(&model, (44, 60), 70); // fractional scale, patch-divisible
    hull_check(&model, (21, 37), 71); // padded canvas with a center crop
    hull_check(&model, (48, 64), 72); // exact x8
}

#[test]
fn native_scale_matches_fixed_convex_upsampling() {
    let model = Model::init(ModelConfig::desk(), 23);
    let worst = native_scale_vs_fixed_oracle(&model, 80);
    assert!(worst < 1e-6, "x8 decode vs fixed convex upsampling: max abs diff {worst:.3e}");
}
