mod common;

use common::tiny_model_config;
use dipa::synth::{generate, ScenarioSpec};
use dipa::training::{train, TrainConfig, TrainOutputs, TrainVariant, Trainer};
use dipa::{DipaError, DipaModel, Execution};

fn data(n: usize) -> Vec<dipa::Instance> {
    generate(
        &ScenarioSpec {
            seed: 1,
            ..ScenarioSpec::default()
        },
        n,
        Execution::Sequential,
    )
    .unwrap()
    .instances
}

fn cfg(execution: Execution) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 8,
        execution,
        ..TrainConfig::default()
    }
}

#[test]
fn fixed_seed_reproduces_the_final_loss_bit_for_bit() {
    let d = data(24);
    let run = |exec| {
        let m = DipaModel::new(tiny_model_config(2, 0), 0.9).unwrap();
        train(m, &d, &cfg(exec), TrainVariant::DipaDefault, None).unwrap()
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Sequential);
    let c = run(Execution::Parallel);
    assert_eq!(
        a.curve.last().unwrap().total.to_bits(),
        b.curve.last().unwrap().total.to_bits()
    );
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.model.params(), c.model.params());
    assert_eq!(a.curve.len(), 2 * 3);
}

#[test]
fn every_variant_trains_and_reports_finite_losses() {
    let d = data(8);
    for v in TrainVariant::ALL {
        let m = DipaModel::new(tiny_model_config(2, 0), 0.9).unwrap();
        let out = train(
            m,
            &d,
            &TrainConfig {
                epochs: 1,
                ..cfg(Execution::Sequential)
            },
            v,
            None,
        )
        .unwrap();
        let last = out.curve.last().unwrap();
        assert!(last.total.is_finite(), "{v}");
        if v == TrainVariant::StandardNll {
            assert_eq!((last.mse, last.nll, last.kl), (0.0, 0.0, 0.0));
        }
    }
}

#[test]
fn variants_set_their_blend_factors() {
    assert_eq!(TrainVariant::ClosestOnly.k_r(0.5), 0.0);
    assert_eq!(TrainVariant::PosteriorOnly.k_r(0.5), 1.0);
    assert_eq!(TrainVariant::DipaDefault.k_r(0.5), 0.5);
    assert_eq!(TrainVariant::WSOnly.k_n(0.9), 0.0);
    assert_eq!(TrainVariant::WNOnly.k_n(0.9), 1.0);
    for v in TrainVariant::ALL {
        assert_eq!(v.name().parse::<TrainVariant>().unwrap(), v);
    }
    assert!("nope".parse::<TrainVariant>().is_err());
    let t = Trainer::new(
        DipaModel::new(tiny_model_config(2, 0), 0.9).unwrap(),
        cfg(Execution::Sequential),
        TrainVariant::WNOnly,
    )
    .unwrap();
    assert_eq!(t.model.k_n, 1.0);
}

#[test]
fn a_step_reduces_the_batch_loss() {
    let d = data(16);
    let mut t = Trainer::new(
        DipaModel::new(tiny_model_config(2, 0), 0.9).unwrap(),
        TrainConfig {
            execution: Execution::Sequential,
            ..TrainConfig::default()
        },
        TrainVariant::DipaDefault,
    )
    .unwrap();
    let first = t.train_step(&d).unwrap().total;
    for _ in 0..20 {
        t.train_step(&d).unwrap();
    }
    let (after, _) = t.batch_gradients(&d).unwrap();
    assert!(after.total < first, "{} !< {first}", after.total);
}

#[test]
fn divergence_saves_the_last_good_parameters() {
    let mut d = data(4);
    d[2].future[5] = [f64::NAN, 0.0];
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs {
        dir: dir.path().to_path_buf(),
    };
    let m = DipaModel::new(tiny_model_config(2, 0), 0.9).unwrap();
    let initial = m.params().clone();
    let err = train(
        m,
        &d,
        &TrainConfig {
            batch_size: 4,
            ..cfg(Execution::Sequential)
        },
        TrainVariant::DipaDefault,
        Some(&out),
    );
    match err {
        Err(DipaError::Divergence { step, detail }) => {
            assert_eq!(step, 1);
            assert!(detail.contains(&d[2].id), "{detail}");
        }
        other => panic!("expected divergence, got {:?}", other.map(|_| ())),
    }
    let saved =
        DipaModel::load_checkpoint(tiny_model_config(2, 0), 0.9, out.last_good_path()).unwrap();
    assert_eq!(saved.params(), &initial);
}

#[test]
fn outputs_are_written() {
    let d = data(8);
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs {
        dir: dir.path().join("run"),
    };
    let m = DipaModel::new(tiny_model_config(2, 0), 0.9).unwrap();
    let c = TrainConfig {
        checkpoint_every: 1,
        ..cfg(Execution::Sequential)
    };
    train(m, &d, &c, TrainVariant::DipaDefault, Some(&out)).unwrap();
    assert!(out.model_path().is_file() && out.epoch_checkpoint_path(2).is_file());
    let csv = std::fs::read_to_string(out.loss_csv_path()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2);
    assert!(csv.starts_with("step,spatial,mse,nll,kl,total"));
}

#[test]
fn invalid_configs_and_empty_data_are_rejected() {
    let m = || DipaModel::new(tiny_model_config(2, 0), 0.9).unwrap();
    assert!(matches!(
        train(
            m(),
            &[],
            &cfg(Execution::Sequential),
            TrainVariant::DipaDefault,
            None
        ),
        Err(DipaError::EmptyDataset)
    ));
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(m(), &data(2), &bad, TrainVariant::DipaDefault, None),
        Err(DipaError::Config(_))
    ));
}
