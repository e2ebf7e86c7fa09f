use dwn_core::bits::BitVector;
use dwn_core::infer::{freeze, FrozenModel};
use dwn_core::model::{argmax, init_model, ModelConfig};
use dwn_core::rtlgen::{interpret, lower};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> impl Strategy<Value = ModelConfig> {
    (2usize..=6, 1usize..=2, 1usize..=4, 1usize..=5, 8usize..=40).prop_flat_map(|(arity, layers, classes, g, width)| {
        let luts = (classes * g).max(arity);
        let luts = luts.div_ceil(classes) * classes;
        (1usize..=width.min(luts)).prop_map(move |pool| ModelConfig {
            input_width: width,
            layers,
            num_luts: luts,
            arity,
            num_classes: classes,
            tau: 2.0,
            pool_size: pool,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frozen_and_lowered_models_agree_with_forward(
        cfg in config(),
        seed in any::<u64>(),
        inputs in prop::collection::vec(any::<u64>(), 1..20),
        stages in 0usize..=2,
    ) {
        let m = init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let f = freeze(&m);
        let net = lower(&f, stages.min(cfg.layers + 2)).unwrap();
        for x in inputs {
            let mut bits = BitVector::zeros(cfg.input_width);
            for i in 0..cfg.input_width {
                bits.assign(i, (x.rotate_left(i as u32 * 7) ^ (i as u64)) & 1 == 1);
            }
            let (scores, _) = m.forward_hard(&bits).unwrap();
            let p = f.predict_bits(&bits).unwrap();
            prop_assert_eq!(argmax(&scores), p.label);
            let (label, pop) = interpret(&net, &bits).unwrap();
            prop_assert_eq!(label, p.label);
            prop_assert_eq!(pop, p.popcounts.iter().map(|&v| v as u64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn frozen_file_round_trips(cfg in config(), seed in any::<u64>()) {
        let f = freeze(&init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap());
        let bytes = f.to_bytes();
        let back = FrozenModel::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back, f);
    }

    #[test]
    fn truncated_files_are_rejected(cfg in config(), seed in any::<u64>(), cut in 0.0f64..1.0) {
        let bytes = freeze(&init_model(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()).to_bytes();
        let n = (bytes.len() as f64 * cut) as usize;
        prop_assert!(FrozenModel::from_bytes(&bytes[..n]).is_err());
    }
}
