use parafac2_mtl::model::masked_l2_loss;
use parafac2_mtl::tensor::{synth_generate, IrregularTensor, SynthSpec, Synthetic};
use parafac2_mtl::trainer::{
    fit, fit_with, init_model, moving_average, posthoc_heads, predict_scores, project_slices, rank_warnings, Mode,
    StepRule, TrainConfig, TrainerState,
};
use parafac2_mtl::Error;

fn data(seed: u64, noise_sd: f64) -> Synthetic {
    synth_generate(&SynthSpec {
        k: 50,
        seed,
        noise_sd,
        label_noise: 0.1,
        ..Default::default()
    })
    .unwrap()
}

fn unsupervised(seed: u64) -> TrainConfig {
    TrainConfig {
        mode: Mode::Unsupervised,
        seed,
        deterministic: true,
        ..Default::default()
    }
}

#[test]
fn init_gives_orthonormal_q_and_is_seeded() {
    let d = data(1, 0.0);
    let cfg = unsupervised(3);
    let a = init_model(&d.tensor, &cfg).unwrap();
    for k in 0..a.n_slices() {
        assert!(a.orthogonality_error(k) < 1e-10);
    }
    assert_eq!(a, init_model(&d.tensor, &cfg).unwrap());
}

#[test]
fn oversized_rank_warns_but_initializes() {
    let t = IrregularTensor::fully_observed(
        vec![ndarray::Array2::ones((4, 2)), ndarray::Array2::ones((5, 2))],
        vec!["a".into(), "b".into()],
        vec!["x".into(), "y".into()],
    )
    .unwrap();
    let cfg = TrainConfig { rank: 3, ..unsupervised(0) };
    assert_eq!(rank_warnings(&t, 3).len(), 1);
    assert!(init_model(&t, &cfg).is_ok());
}

#[test]
fn zero_step_leaves_state_untouched() {
    let d = data(2, 0.1);
    let mut cfg = TrainConfig { seed: 2, ..Default::default() };
    cfg.penalties.step_size = 0.0;
    let mut st = TrainerState::new(&d.tensor, Some(&d.labels), &cfg).unwrap();
    let (model, heads) = (st.model.clone(), st.heads.clone());
    for _ in 0..2 {
        st.epoch_step(&d.tensor, &cfg).unwrap();
    }
    assert_eq!(st.model, model);
    assert_eq!(st.heads, heads);
}

#[test]
fn memberships_stay_nonnegative() {
    let d = data(3, 0.3);
    let cfg = TrainConfig { seed: 3, epochs_max: 15, ..Default::default() };
    fit_with(&d.tensor, Some(&d.labels), &cfg, |st| {
        assert!(st.model.min_membership() >= 0.0);
        Ok(())
    })
    .unwrap();
}

#[test]
fn first_epoch_lowers_the_loss() {
    let d = data(4, 0.0);
    let cfg = unsupervised(4);
    let mut st = TrainerState::new(&d.tensor, None, &cfg).unwrap();
    let before = masked_l2_loss(&d.tensor, &st.model).unwrap();
    let after = st.epoch_step(&d.tensor, &cfg).unwrap().total;
    assert!(after < before, "{after} !< {before}");
}

#[test]
fn deterministic_runs_repeat_exactly() {
    let d = data(5, 0.1);
    let cfg = TrainConfig { seed: 5, epochs_max: 8, deterministic: true, ..Default::default() };
    let a = fit(&d.tensor, Some(&d.labels), &cfg).unwrap();
    let b = fit(&d.tensor, Some(&d.labels), &cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
    assert_eq!(a.heads, b.heads);
}

#[test]
fn unsupervised_equals_multi_task_with_zero_head_weights() {
    let d = data(6, 0.1);
    let mut zero = TrainConfig { seed: 6, ..Default::default() };
    zero.sdw.enabled = false;
    zero.penalties.rho_static = 0.0;
    zero.penalties.rho_dynamic = 0.0;
    let mut plain = zero.clone();
    plain.mode = Mode::Unsupervised;
    let mut a = TrainerState::new(&d.tensor, Some(&d.labels), &zero).unwrap();
    let mut b = TrainerState::new(&d.tensor, None, &plain).unwrap();
    for _ in 0..3 {
        a.epoch_step(&d.tensor, &zero).unwrap();
        b.epoch_step(&d.tensor, &plain).unwrap();
        assert_eq!(a.model, b.model);
    }
}

fn zeros_in_v(c2: f64) -> usize {
    let d = data(7, 0.1);
    let mut cfg = TrainConfig { epochs_max: 60, tol: 0.0, ..unsupervised(7) };
    cfg.penalties.c2 = c2;
    fit(&d.tensor, None, &cfg).unwrap().model.v.iter().filter(|&&x| x == 0.0).count()
}

#[test]
fn l1_penalty_produces_exact_zeros() {
    assert!(zeros_in_v(0.05) > zeros_in_v(0.0));
}

#[test]
fn moving_average_never_rises_on_noiseless_data() {
    let d = data(8, 0.0);
    let out = fit(&d.tensor, None, &unsupervised(8)).unwrap();
    let totals: Vec<f64> = out.log.iter().map(|r| r.total).collect();
    let slack = 1e-6 * totals[0];
    for pair in moving_average(&totals, 10).windows(2) {
        assert!(pair[1] <= pair[0] + slack, "{} > {}", pair[1], pair[0]);
    }
}

#[test]
fn orthogonality_improves_over_training() {
    let d = data(9, 0.1);
    let out = fit(&d.tensor, None, &unsupervised(9)).unwrap();
    assert!(out.log.last().unwrap().orthogonality < out.log[0].orthogonality);
}

fn largest_membership_gap(a: &parafac2_mtl::model::FactorModel, b: &parafac2_mtl::model::FactorModel) -> f64 {
    a.s.iter()
        .zip(&b.s)
        .flat_map(|(x, y)| (x - y).mapv(f64::abs).to_vec())
        .fold(0.0, f64::max)
}

#[test]
fn projection_recovers_ground_truth_memberships() {
    let d = data(10, 0.0);
    let projected = project_slices(&d.truth, &d.tensor, 500).unwrap();
    let gap = largest_membership_gap(&projected, &d.truth);
    assert!(gap < 1e-3, "largest membership change {gap}");
}

#[test]
fn projection_is_a_fixed_point_after_training() {
    let d = data(10, 0.0);
    let out = fit(&d.tensor, None, &unsupervised(10)).unwrap();
    let once = project_slices(&out.model, &d.tensor, 500).unwrap();
    let twice = project_slices(&once, &d.tensor, 500).unwrap();
    let gap = largest_membership_gap(&once, &twice);
    assert!(gap < 1e-3, "largest membership change {gap}");
}

#[test]
fn ground_truth_model_scores_within_bounds() {
    let d = data(11, 0.2);
    let fit_truth = parafac2_mtl::model::fit_score(&d.tensor, &d.truth).unwrap();
    let mut noise = 0.0;
    let mut energy = 0.0;
    for k in 0..d.tensor.n_slices() {
        let clean = d.truth.u[k].dot(&ndarray::Array2::from_diag(&d.truth.s[k])).dot(&d.truth.v.t());
        let x = d.tensor.slice(k);
        noise += (x - &clean).mapv(|e| e * e).sum();
        energy += x.mapv(|e| e * e).sum();
    }
    assert!((fit_truth - (1.0 - noise / energy)).abs() < 1e-12);

    let cfg = TrainConfig { epochs_max: 50, ..unsupervised(11) };
    let heads = posthoc_heads(
        &d.truth,
        &d.tensor,
        &d.labels,
        &d.labels.static_tasks(),
        &d.labels.dynamic_tasks(),
        &cfg,
    )
    .unwrap();
    for (task, score) in predict_scores(&heads, &d.truth, &d.tensor, &d.labels).unwrap() {
        let v = score.pr_auc.unwrap();
        assert!((0.5..=1.0).contains(&v), "{task}: {v}");
    }
}

#[test]
fn runaway_steps_report_divergence_with_a_finite_checkpoint() {
    let d = data(12, 0.1);
    let mut cfg = TrainConfig { step_rule: StepRule::Constant, ..unsupervised(12) };
    cfg.penalties.step_size = 1e6;
    match fit(&d.tensor, None, &cfg) {
        Err(Error::Divergence { epoch, last_finite, .. }) => {
            assert!(epoch >= 1);
            let model = last_finite.expect("snapshot before the bad epoch").to_model().unwrap();
            assert!(model.is_finite());
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn multi_task_without_labels_is_a_config_error() {
    let d = data(13, 0.0);
    let cfg = TrainConfig::default();
    assert!(matches!(fit(&d.tensor, None, &cfg), Err(Error::Config(_))));
}

#[test]
fn empty_tensor_is_a_config_error() {
    let t = IrregularTensor::new(vec![], vec![], vec!["a".into()], vec![]);
    assert!(matches!(t, Err(Error::Config(_))));
}
