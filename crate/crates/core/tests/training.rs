use meanfield::experiment::{compare_runs, train_run, DatasetKind};
use meanfield::{ActivationKind, RunConfig};

fn moons(kind: ActivationKind, epochs: usize) -> RunConfig {
    RunConfig {
        dataset: DatasetKind::Nonlinear,
        data_size: 200,
        activation: kind,
        epochs,
        checkpoint_every: Some(epochs / 10),
        svg: false,
        ..RunConfig::nonlinear()
    }
}

#[test]
fn trajectories_are_well_formed() {
    for kind in ActivationKind::ALL {
        let run = train_run(&moons(kind, 300)).unwrap();
        assert!(run.trajectory.windows(2).all(|w| w[0].epoch < w[1].epoch));
        for r in &run.trajectory {
            for f in [
                r.acc_train,
                r.acc_test,
                r.alpha,
                r.gamma,
                r.zero_residual_frac,
            ] {
                assert!((0.0..=1.0).contains(&f), "{kind}: {r:?}");
            }
            assert!(r.loss_train.is_finite() && r.loss_test.is_finite());
        }
        for s in &run.spectra {
            assert_eq!(s.eigenvalues.len(), run.param_dim);
            assert!(s.alpha + s.gamma <= 1.0);
        }
    }
}

#[test]
fn swish_units_go_negative_during_training() {
    let run = train_run(&moons(ActivationKind::Swish, 500)).unwrap();
    assert!(run.min_hidden_activation < 0.0);
    let run = train_run(&moons(ActivationKind::ReLU, 100)).unwrap();
    assert_eq!(run.min_hidden_activation, 0.0);
}

#[test]
fn linear_task_is_learned_by_every_activation() {
    for kind in [
        ActivationKind::Swish,
        ActivationKind::ReLU,
        ActivationKind::Sigmoid,
    ] {
        let run = train_run(&RunConfig {
            activation: kind,
            svg: false,
            ..RunConfig::linear()
        })
        .unwrap();
        let last = run.final_record();
        assert_eq!((last.acc_train, last.acc_test), (1.0, 1.0), "{kind}");
        assert!(run.epochs_to_full_accuracy().is_some());
    }
}

#[test]
fn loss_falls_under_training() {
    let run = train_run(&moons(ActivationKind::Swish, 1000)).unwrap();
    let first = run.loss_history[0];
    assert!(run.final_record().loss_train < 0.5 * first);
}

#[test]
fn compare_reports_one_cell_per_run() {
    let cfgs = [
        moons(ActivationKind::Swish, 50),
        moons(ActivationKind::Tanh, 50),
    ];
    let summary = compare_runs(&cfgs, &[0, 1, 2], 0.3, |_| Ok(())).unwrap();
    assert_eq!(summary.cells.len(), 6);
    assert_eq!(summary.activations.len(), 2);
    assert!(summary
        .cells_for(ActivationKind::Tanh)
        .all(|c| c.final_eig_std >= 0.0));
}
