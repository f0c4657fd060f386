mod common;

use common::{random_instance, tiny_model_config};
use dipa::{DipaModel, ModelConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bits(p: &dipa::MultiModalPrediction) -> Vec<u64> {
    let mut out = Vec::new();
    for mode in &p.modes {
        for s in mode {
            out.extend(
                [
                    s.mu[0],
                    s.mu[1],
                    s.sigma[0][0],
                    s.sigma[0][1],
                    s.sigma[1][1],
                ]
                .map(f64::to_bits),
            );
        }
    }
    out.extend(
        p.w_s
            .weights()
            .iter()
            .chain(p.w_n.weights())
            .map(|w| w.to_bits()),
    );
    out
}

#[test]
fn neighbour_order_does_not_change_predictions_bitwise() {
    let model = DipaModel::new(
        ModelConfig {
            hidden: 16,
            modes: 3,
            ..ModelConfig::default()
        },
        0.9,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..100 {
        let n = 1 + i % 6;
        let inst = random_instance(&mut rng, i, n, 10, 30);
        let base = model.predict(&inst).unwrap();
        let mut shuffled = inst.clone();
        shuffled.neighbours.shuffle(&mut rng);
        assert_eq!(
            bits(&base),
            bits(&model.predict(&shuffled).unwrap()),
            "instance {i}"
        );
    }
}

#[test]
fn masked_neighbours_match_removed_neighbours() {
    let model = DipaModel::new(tiny_model_config(2, 1), 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inst = random_instance(&mut rng, 0, 3, 10, 30);
    let masked = model
        .predict_masked(&inst, &[true, true, false, true])
        .unwrap();
    let mut removed = inst.clone();
    removed.neighbours.remove(1);
    assert_eq!(bits(&masked), bits(&model.predict(&removed).unwrap()));
}

#[test]
fn stage_functions_compose_to_predict() {
    let model = DipaModel::new(tiny_model_config(2, 3), 0.9).unwrap();
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(9), 0, 2, 10, 30);
    let enc = model.encode_agents(&inst).unwrap();
    assert_eq!(enc.len(), 3);
    let enriched = model.interact(&enc, &[true; 3]).unwrap();
    let staged = model.decode(&enriched[0]).unwrap();
    assert_eq!(bits(&staged), bits(&model.predict(&inst).unwrap()));
}

#[test]
fn predictions_are_well_formed() {
    let model = DipaModel::new(tiny_model_config(4, 2), 0.9).unwrap();
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(1), 0, 0, 10, 30);
    let p = model.predict(&inst).unwrap();
    assert_eq!((p.num_modes(), p.num_steps()), (4, 30));
    assert!(p.modes.iter().flatten().all(|s| s.is_spd()));
    for w in [&p.w_s, &p.w_n, &p.w_o] {
        assert!((w.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_model_config(2, 4);
    let model = DipaModel::new(cfg.clone(), 0.9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save_checkpoint(&path).unwrap();
    let back = DipaModel::load_checkpoint(cfg.clone(), 0.9, &path).unwrap();
    let inst = random_instance(&mut ChaCha8Rng::seed_from_u64(2), 0, 2, 10, 30);
    assert_eq!(
        bits(&model.predict(&inst).unwrap()),
        bits(&back.predict(&inst).unwrap())
    );
    let wrong = ModelConfig { hidden: 9, ..cfg };
    assert!(DipaModel::load_checkpoint(wrong, 0.9, &path).is_err());
}

#[test]
fn same_seed_same_weights_different_seed_different_weights() {
    let a = DipaModel::new(tiny_model_config(2, 8), 0.9).unwrap();
    let b = DipaModel::new(tiny_model_config(2, 8), 0.9).unwrap();
    let c = DipaModel::new(tiny_model_config(2, 9), 0.9).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}
