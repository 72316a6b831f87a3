//! Shape round-trip over a generated plan family: a mirrored model's output
//! shape equals its input shape for every valid schedule with multiples
//! drawn from {1, 2, 3, 4, 5, 7} and depth at most 5.

use kunet_core::partition::PartitionPlan;
use kunet_core::rng::Rng;
use kunet_core::unet::{build, KernelOverrides, OutputSchedule, Variant};

#[test]
fn forward_shape_round_trip_family() {
    let choices = [1usize, 2, 3, 4, 5, 7];
    let mut rng = Rng::new(4096);
    let mut tried = 0;
    while tried < 25 {
        let l_unit = choices[rng.below(choices.len())];
        let depth = 1 + rng.below(4); // total look-back levels <= 5
        let mut l_multiples = Vec::new();
        for _ in 0..depth {
            l_multiples.push(choices[rng.below(choices.len())]);
        }
        let lookback = l_unit * l_multiples.iter().product::<usize>();
        if lookback > 256 {
            continue;
        }
        tried += 1;
        let plan = PartitionPlan::channel_independent(lookback, l_unit, l_multiples, 2);
        let (mut model, store) = build(
            &plan,
            &OutputSchedule::mirror(&plan),
            Variant::Linear,
            &KernelOverrides::default(),
            tried as u64,
        )
        .unwrap();
        let batch = 1 + rng.below(2);
        let x: Vec<f64> = (0..batch * lookback).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let y = model.predict(&store, &x, batch).unwrap();
        assert_eq!(y.len(), x.len(), "plan {:?}", model.plan);
        assert!(y.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn forward_shape_with_feature_levels() {
    let mut rng = Rng::new(77);
    for seed in 0..5u64 {
        let plan = PartitionPlan {
            lookback: 12,
            features: 6,
            l_unit: 2,
            l_multiples: vec![3, 2],
            m_unit: 2,
            m_multiples: vec![3],
            hidden: 3,
            latent_len: 1,
            latent_width: 3,
        };
        let (mut model, store) = build(
            &plan,
            &OutputSchedule::mirror(&plan),
            Variant::Linear,
            &KernelOverrides::default(),
            seed,
        )
        .unwrap();
        // Slice counts per level: looking from the input, each level sees
        // the product of every later multiple (feature groups included).
        let segs: Vec<usize> = model.encoder.iter().map(|w| w.segments_per_batch).collect();
        assert_eq!(segs, vec![3 * 2 * 3, 2 * 3, 3, 1]);
        let x: Vec<f64> = (0..2 * 12 * 6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y = model.predict(&store, &x, 2).unwrap();
        assert_eq!(y.len(), x.len());
    }
}
