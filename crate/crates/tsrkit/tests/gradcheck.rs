//! Finite-difference validation of the analytic loss gradients.
//!
//! Each loss is evaluated at random predictions in general position (away
//! from every kink), and its reported gradients are compared entry-by-entry
//! against central differences of the scalar loss.

use tsrkit::config::LossConfig;
use tsrkit::reference::{
    check_boundary_gradients, check_keypoint_gradients, check_span_gradients,
    check_spatial_gradients, smooth_random_prediction, GradCheck,
};
use tsrkit::synth::{gen_table, Rng64, SynthConfig};
use tsrkit::targets::assemble_target_bundle;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn table_cfg(seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        image_height: 256,
        image_width: 256,
        min_rows: 2,
        max_rows: 4,
        min_cols: 2,
        max_cols: 4,
        merge_probability: 0.3,
        ..Default::default()
    }
}

fn assert_all_close(checks: &[GradCheck], context: &str) {
    assert!(!checks.is_empty(), "{context}: no probes ran");
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_err().partial_cmp(&b.rel_err()).unwrap())
        .unwrap();
    assert!(
        worst.rel_err() < TOLERANCE,
        "{context}: {} grad at ({}, {}, {}) disagrees: analytic {} vs numeric {} (rel {})",
        worst.head,
        worst.y,
        worst.x,
        worst.c,
        worst.analytic,
        worst.numeric,
        worst.rel_err(),
    );
}

fn run(
    check: impl Fn(&tsrkit::decoder::RawNetworkOutput, &tsrkit::targets::TargetBundle, &mut Rng64) -> Vec<GradCheck>,
    name: &str,
) {
    let cfg = LossConfig::default();
    for seed in 0..5u64 {
        let ann = gen_table(&table_cfg(seed)).unwrap();
        let target = assemble_target_bundle(&ann, &cfg);
        let mut rng = Rng64::new(0x9e3779b9 ^ seed);
        let pred = smooth_random_prediction(&target, &mut rng);
        let checks = check(&pred, &target, &mut rng);
        assert_all_close(&checks, &format!("{name}, table seed {seed}"));
    }
}

#[test]
fn spatial_gradients_match_finite_differences() {
    let cfg = LossConfig::default();
    run(
        |pred, target, rng| check_spatial_gradients(pred, target, &cfg, 25, STEP, rng),
        "spatial",
    );
}

#[test]
fn boundary_gradients_match_finite_differences() {
    run(
        |pred, target, rng| check_boundary_gradients(pred, target, 25, STEP, rng),
        "boundary",
    );
}

#[test]
fn span_gradients_match_finite_differences() {
    let cfg = LossConfig::default();
    run(
        |pred, target, rng| check_span_gradients(pred, target, &cfg, 25, STEP, rng),
        "span",
    );
}

#[test]
fn keypoint_gradients_match_finite_differences() {
    let cfg = LossConfig::default();
    run(
        |pred, target, rng| check_keypoint_gradients(pred, target, &cfg, 25, STEP, rng),
        "keypoint",
    );
}

/// The stitched-together overall gradients must equal the per-loss sums at
/// the same point (boundary and span both write into the map gradients).
#[test]
fn overall_gradients_are_the_sum_of_parts() {
    let cfg = LossConfig::default();
    let ann = gen_table(&table_cfg(11)).unwrap();
    let target = assemble_target_bundle(&ann, &cfg);
    let mut rng = Rng64::new(77);
    let pred = smooth_random_prediction(&target, &mut rng);

    let eval = tsrkit::losses::overall_loss(&pred, &target, &cfg).unwrap();
    let boundary = tsrkit::losses::boundary_loss(
        &pred.row_map,
        &pred.col_map,
        &target.row_map,
        &target.col_map,
        &target.mask,
    );
    let span = tsrkit::losses::span_loss(&pred.spans, &pred.row_map, &pred.col_map, &target, &cfg);

    for y in 0..eval.gradients.row_map.height() {
        for x in 0..eval.gradients.row_map.width() {
            let want = boundary.row_map_grad.get(y, x, 0) + span.row_map_grad.get(y, x, 0);
            assert!((eval.gradients.row_map.get(y, x, 0) - want).abs() < 1e-15);
            let want = boundary.col_map_grad.get(y, x, 0) + span.col_map_grad.get(y, x, 0);
            assert!((eval.gradients.col_map.get(y, x, 0) - want).abs() < 1e-15);
        }
    }
}
