use std::collections::HashSet;

use latentnas::arch::{random_architecture, Architecture, OpType};
use latentnas::diffmath::{softmax_stable, ParamStoreBuilder, Tape};
use latentnas::encoder::{kl_divergence, GatedSum};
use latentnas::metrics::prior_metrics;
use latentnas::oracle::OracleConfig;
use latentnas::{logistic, Model, ModelConfig, Posterior};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    (any::<u64>(), 1usize..=6).prop_map(|(seed, n)| random_architecture(&mut ChaCha8Rng::seed_from_u64(seed), n))
}

fn tiny_model(seed: u64) -> Model {
    Model::new(ModelConfig { hidden: 6, latent: 3, predictor_hidden: 6, max_nodes: 8 }, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_architectures_are_valid(arch in arch_strategy()) {
        prop_assert!(arch.validate(8).valid);
        prop_assert_eq!(arch.types()[0], OpType::Input);
        prop_assert_eq!(*arch.types().last().unwrap(), OpType::Output);
        prop_assert!(arch.edges().iter().all(|&(u, v)| u < v));
    }

    #[test]
    fn json_round_trip_preserves_identity(arch in arch_strategy()) {
        let back = Architecture::from_json_line(&arch.to_json_line()).unwrap();
        prop_assert_eq!(back.identity_key(), arch.identity_key());
        prop_assert_eq!(back, arch);
    }

    #[test]
    fn edge_order_does_not_matter(arch in arch_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut edges: Vec<_> = arch.edges().iter().copied().collect();
        edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = Architecture::new(arch.types().to_vec(), edges).unwrap();
        prop_assert_eq!(shuffled.identity_key(), arch.identity_key());
    }

    #[test]
    fn oracle_labels_are_fractions(arch in arch_strategy()) {
        let l = OracleConfig::default().label(&arch).unwrap();
        prop_assert!((0.0..=1.0).contains(&l.perf) && (0.0..=1.0).contains(&l.comp));
    }

    #[test]
    fn adding_an_edge_never_lowers_raw_complexity(arch in arch_strategy(), pick in any::<prop::sample::Index>()) {
        let o = OracleConfig::default();
        let n = arch.num_nodes();
        let missing: Vec<(usize, usize)> = (0..n)
            .flat_map(|v| (0..v).map(move |u| (u, v)))
            .filter(|&(u, v)| !arch.has_edge(u, v))
            .collect();
        prop_assume!(!missing.is_empty());
        let extra = missing[pick.index(missing.len())];
        let mut edges: Vec<_> = arch.edges().iter().copied().collect();
        edges.push(extra);
        let bigger = Architecture::new(arch.types().to_vec(), edges).unwrap();
        prop_assert!(o.raw_complexity(&bigger).unwrap() >= o.raw_complexity(&arch).unwrap());
    }

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logvar: Vec<f64> = mu.iter().map(|_| rand::Rng::gen_range(&mut rng, -10.0..10.0)).collect();
        let kl = kl_divergence(&Posterior { mu, logvar });
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-700.0f64..700.0, 1..10)) {
        let p = softmax_stable(&logits).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn logistic_stays_in_unit_interval(x in -1e6f64..1e6) {
        let y = logistic(x);
        prop_assert!((0.0..=1.0).contains(&y) && y.is_finite());
    }

    #[test]
    fn gated_sum_ignores_predecessor_order(seed in any::<u64>(), k in 1usize..6) {
        let mut b = ParamStoreBuilder::new();
        let agg = GatedSum::register(&mut b, "agg", 5);
        let store = b.build::<f64>(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let hs: Vec<Vec<f64>> = (0..k).map(|_| (0..5).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect()).collect();
        let mut tape = Tape::new(&store);
        let fwd: Vec<_> = hs.iter().map(|h| tape.input(h.clone())).collect();
        let rev: Vec<_> = fwd.iter().rev().copied().collect();
        let a = agg.forward(&mut tape, &fwd).unwrap();
        let b = agg.forward(&mut tape, &rev).unwrap();
        prop_assert_eq!(tape.value(a).to_vec(), tape.value(b).to_vec());
    }

    #[test]
    fn decodes_are_total(seed in any::<u64>(), s in prop::collection::vec(-4.0f64..4.0, 3)) {
        let m = tiny_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (arch, trace) = m.generate(&s, &mut rng).unwrap();
        prop_assert!(arch.validate(8).valid);
        prop_assert_eq!(trace.replay().unwrap(), arch);
        prop_assert!(m.greedy_generate(&s).unwrap().validate(8).valid);
    }

    #[test]
    fn reconstruction_losses_are_non_negative(arch in arch_strategy(), seed in any::<u64>()) {
        let m = tiny_model(seed);
        let (ln, le) = m.reconstruction_losses(&arch, &[0.1, -0.2, 0.3]).unwrap();
        prop_assert!(ln >= 0.0 && le >= 0.0);
    }

    #[test]
    fn checkpoint_json_round_trip_is_bitwise(seed in any::<u64>()) {
        let m = tiny_model(seed);
        let mut fresh = tiny_model(seed.wrapping_add(1));
        fresh.params.load_json(&m.params.to_json()).unwrap();
        for id in m.params.ids() {
            let a: Vec<u64> = m.params.value(id).values().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = fresh.params.value(id).values().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn prior_fractions_are_bounded(seed in any::<u64>()) {
        let m = tiny_model(seed);
        let keys: HashSet<String> = (0..20)
            .map(|i| random_architecture(&mut ChaCha8Rng::seed_from_u64(i), 2).identity_key())
            .collect();
        let p = prior_metrics(&m, 30, 2, seed, &keys, true).unwrap();
        prop_assert_eq!(p.validity, 1.0);
        for f in [p.validity, p.uniqueness, p.novelty] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
