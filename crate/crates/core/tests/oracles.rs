mod common;

use common::*;

#[test]
fn truncated_density_integrates_to_one() {
    let e = tmvn_integral_error();
    assert!(e < 1e-2, "integral error {e}");
}

#[test]
fn truncated_sampler_matches_grid_cdf() {
    let ks = tmvn_ks();
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn conditional_matches_bivariate_formula() {
    let e = conditional_error();
    assert!(e < 1e-12, "conditional error {e}");
}

#[test]
fn regression_draws_match_closed_form() {
    let (zm, zv) = regression_z_scores();
    assert!(zm < 3.0 && zv < 3.0, "z mean {zm}, z var {zv}");
}

#[test]
fn variance_draws_match_closed_form() {
    let z = variance_z_score();
    assert!(z < 3.0, "z {z}");
}

#[test]
fn logistic_chain_matches_grid_posterior() {
    let g = logistic_grid_gap();
    assert!(g < 0.05, "gap {g}");
}

#[test]
fn kernel_mean_chain_matches_grid_posterior() {
    let g = mixture_mean_gap();
    assert!(g < 0.05, "gap {g}");
}

#[test]
fn kernel_variance_chain_matches_grid_posterior() {
    let g = mixture_cov_gap();
    assert!(g < 0.05, "gap {g}");
}

#[test]
fn concentration_chain_matches_grid_posterior() {
    let g = concentration_gap();
    assert!(g < 0.05, "gap {g}");
}

#[test]
fn imputation_matches_grid_posterior() {
    let ks = augmentation_ks();
    assert!(ks < 0.02, "KS {ks}");
}

#[test]
fn pce_matches_hand_formula() {
    let e = pce_hand_error();
    assert!(e < 1e-12, "error {e}");
}

#[test]
fn single_gaussian_data_occupy_few_components() {
    let modal = degenerate_modal_occupancy();
    assert!(modal <= 3, "modal occupied {modal}");
}
