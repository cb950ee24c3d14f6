use pbb_core::bounds::{final_certificate, BoundBudget};
use pbb_core::certification::{certify_both, evaluate_predictors, mc_losses};
use pbb_core::data::synthetic_blobs;
use pbb_core::{
    make_split, train_posterior, train_prior, Dataset, NetworkSpec, ObjectiveKind, PriorMode,
    ProbNetwork, Scalar, TrainConfig, Variant,
};

fn config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs_prior: 20,
        epochs_posterior: 10,
        batch_size: 50,
        sigma0: 0.03,
        prior_lr: 0.01,
        posterior_lr: 0.005,
        seed,
        ..TrainConfig::default()
    }
}

fn blobs() -> (Dataset, Dataset) {
    (
        synthetic_blobs(1000, 2, 2, 6.0, 1).unwrap(),
        synthetic_blobs(500, 2, 2, 6.0, 2).unwrap(),
    )
}

fn trained<T: Scalar>(
    variant: Variant,
    cfg: &TrainConfig,
    data: &Dataset,
) -> (ProbNetwork<T>, pbb_core::SplitPlan) {
    let spec = NetworkSpec::mlp(2, &[16, 16], 2, Some(0.1));
    let split = make_split(data.len(), cfg.prior_fraction, cfg.seed).unwrap();
    let prior = train_prior::<T>(&spec, &split, cfg, data).unwrap();
    let mut net = ProbNetwork::from_prior(spec, prior).unwrap();
    let mut kind = ObjectiveKind::new(variant, 0.025, split.n_total).unwrap();
    train_posterior(&mut net, &mut kind, &split, cfg, data).unwrap();
    (net, split)
}

#[test]
fn learnt_prior_pipeline_gives_a_sound_nonvacuous_certificate() {
    let (train, test) = blobs();
    let cfg = config(3);
    let (net, split) = trained::<f32>(Variant::Quad, &cfg, &train);
    let budget = BoundBudget::new(0.025, 0.01, split.cert_indices.len(), 500).unwrap();
    let (zo, xe) = certify_both(
        &net,
        &split,
        PriorMode::Learnt,
        &train,
        &budget,
        &cfg.loss(),
        5,
    )
    .unwrap();
    assert!(!zo.vacuous && zo.cert_value < 0.2, "{zo:?}");
    assert!(zo.cert_value >= zo.mc_upper && zo.mc_upper >= zo.mc_avg);
    assert!(xe.cert_value >= xe.mc_avg);
    assert_eq!(
        zo.cert_value,
        final_certificate(zo.mc_avg, &budget, zo.kl_div).unwrap()
    );

    let report = evaluate_predictors(&net, &test, 11, &cfg.loss(), 5, false).unwrap();
    assert!(report.stochastic_01 <= zo.cert_value);
}

#[test]
fn every_objective_trains_in_both_precisions() {
    let (train, _) = blobs();
    let cfg = config(4);
    for variant in [
        Variant::Quad,
        Variant::Classic,
        Variant::Lambda { lambda: 1.0 },
        Variant::Bbb { eta: 0.1 },
    ] {
        let (single, split) = trained::<f32>(variant, &cfg, &train);
        let (double, _) = trained::<f64>(variant, &cfg, &train);
        let (a, _) = mc_losses(&single, &train, &split.cert_indices, 20, &cfg.loss(), 1).unwrap();
        let (b, _) = mc_losses(&double, &train, &split.cert_indices, 20, &cfg.loss(), 1).unwrap();
        assert!(a < 0.1 && b < 0.1, "{variant:?}: {a} {b}");
        assert!(single.kl().unwrap() > 0.0);
    }
}

#[test]
fn random_prior_certifies_on_all_data() {
    let (train, _) = blobs();
    let cfg = TrainConfig {
        prior_mode: PriorMode::Random,
        prior_fraction: 0.0,
        ..config(5)
    };
    let (net, split) = trained::<f32>(Variant::Quad, &cfg, &train);
    assert_eq!(split.bound_indices(PriorMode::Random).len(), train.len());
    let budget = BoundBudget::new(0.025, 0.01, train.len(), 100).unwrap();
    let (zo, _) = certify_both(
        &net,
        &split,
        PriorMode::Random,
        &train,
        &budget,
        &cfg.loss(),
        1,
    )
    .unwrap();
    assert!(zo.cert_value > zo.mc_avg);
    let wrong = BoundBudget {
        n_bound: split.cert_indices.len() / 2,
        ..budget
    };
    assert!(certify_both(
        &net,
        &split,
        PriorMode::Random,
        &train,
        &wrong,
        &cfg.loss(),
        1
    )
    .is_err());
}

#[test]
fn runs_are_reproducible_and_seed_sensitive() {
    let (train, _) = blobs();
    let (a, _) = trained::<f32>(Variant::Quad, &config(8), &train);
    let (b, _) = trained::<f32>(Variant::Quad, &config(8), &train);
    let (c, _) = trained::<f32>(Variant::Quad, &config(9), &train);
    assert_eq!(a, b);
    assert_ne!(a, c);
}
