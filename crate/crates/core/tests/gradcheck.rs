//! Central-difference gradient checks for every layer and for the full
//! loss of each model. The check bodies live in `svs_core::gradcheck` so
//! the acceptance suite can run them with a time budget.

use svs_core::gradcheck as gc;

fn assert_ok(r: Result<f64, String>) {
    match r {
        Ok(worst) => assert!(worst.is_finite()),
        Err(msg) => panic!("{msg}"),
    }
}

#[test]
fn linear_tanh_mean() {
    assert_ok(gc::check_linear_tanh());
}

#[test]
fn gru_both_directions() {
    assert_ok(gc::check_gru_both_directions());
}

#[test]
fn bigru_stack() {
    assert_ok(gc::check_bigru_stack());
}

#[test]
fn embedding_with_repeated_indices() {
    assert_ok(gc::check_embedding());
}

#[test]
fn causal_conv1d() {
    assert_ok(gc::check_causal_conv1d());
}

#[test]
fn batch_norm_train_mode() {
    assert_ok(gc::check_batch_norm_train());
}

#[test]
fn multi_head_attention_masked() {
    assert_ok(gc::check_multi_head_attention());
}

#[test]
fn f0_model_full_loss() {
    assert_ok(gc::check_f0_model_loss());
}

#[test]
fn spectral_model_full_loss_with_prenet() {
    assert_ok(gc::check_spectral_model_loss());
}

#[test]
fn baseline_model_full_loss() {
    assert_ok(gc::check_baseline_model_loss());
}
