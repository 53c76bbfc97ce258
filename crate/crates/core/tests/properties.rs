use std::collections::HashSet;

use proptest::prelude::*;

use dynaug_core::classifier::{evaluate, ClassifierModel, Mode};
use dynaug_core::numerics::{OptimizerKind, OptimizerState, Rng, Tensor};
use dynaug_core::rankpool::{compute_dynamic_image_traced, DynamicImage, Provenance, RankPoolConfig, RankingObjective};
use dynaug_core::sps::{select, Policy, ScoreMatrix, Statistics};
use dynaug_core::videodata::{sparse_sample_indices, Video};
use dynaug_core::wgan::{GanConfig, GanModel};

fn video_from(t: usize, h: usize, w: usize, pixels: Vec<f64>) -> Video {
    Video::new("v", 0, Tensor::new(vec![t, h, w], pixels).unwrap()).unwrap()
}

/// Random `[T, 3, 3]` video with `2 ≤ T ≤ 8`.
fn small_video() -> impl Strategy<Value = Video> {
    (2usize..=8).prop_flat_map(|t| prop::collection::vec(0.0..=1.0f64, t * 9).prop_map(move |p| video_from(t, 3, 3, p)))
}

fn direction(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, n)
}

/// Pair-loop energy written against the definition.
fn reference_energy(video: &Video, d: &[f64], lambda: f64) -> f64 {
    let t = video.len();
    let means: Vec<Vec<f64>> = (1..=t)
        .map(|s| (0..video.frame_len()).map(|k| (0..s).map(|i| video.frame(i)[k]).sum::<f64>() / s as f64).collect())
        .collect();
    let score = |v: &Vec<f64>| v.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    let mut hinge = 0.0;
    for a in 0..t {
        for b in a + 1..t {
            hinge += (1.0 - score(&means[b]) + score(&means[a])).max(0.0);
        }
    }
    lambda * d.iter().map(|x| x * x).sum::<f64>() + 2.0 / (t * (t - 1)) as f64 * hinge
}

fn image(id: String, label: usize, pixels: Vec<f64>) -> DynamicImage {
    DynamicImage {
        id,
        label,
        provenance: Provenance::GanGenerated,
        source: None,
        pixels: Tensor::new(vec![2, 2], pixels).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn sparse_sample_is_a_subsequence(
        t in 2usize..24,
        fraction in 0.1..=1.0f64,
        seed: u64,
    ) {
        let pixels: Vec<f64> = (0..t * 4).map(|i| (i % 97) as f64 / 97.0).collect();
        let video = video_from(t, 2, 2, pixels);
        let mut rng = Rng::new(seed);
        match sparse_sample_indices(&video, fraction, &mut rng) {
            Ok((sub, idx)) => {
                prop_assert_eq!(sub.len(), (fraction * t as f64).ceil() as usize);
                prop_assert!(idx.windows(2).all(|p| p[0] < p[1]));
                for (k, &i) in idx.iter().enumerate() {
                    prop_assert_eq!(sub.frame(k), video.frame(i));
                }
            }
            Err(_) => prop_assert!((fraction * t as f64).ceil() < 2.0),
        }
    }

    #[test]
    fn energy_is_convex(
        (video, a, b) in small_video().prop_flat_map(|v| (Just(v), direction(9), direction(9))),
        theta in 0.0..=1.0f64,
        lambda in 1e-4..1.0f64,
    ) {
        let obj = RankingObjective::new(&video, lambda);
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| theta * x + (1.0 - theta) * y).collect();
        let lhs = obj.energy(&mix).unwrap();
        let rhs = theta * obj.energy(&a).unwrap() + (1.0 - theta) * obj.energy(&b).unwrap();
        prop_assert!(lhs <= rhs + 1e-9, "{} > {}", lhs, rhs);
    }

    #[test]
    fn energy_matches_the_pair_loop(
        (video, d) in small_video().prop_flat_map(|v| (Just(v), direction(9))),
    ) {
        let got = RankingObjective::new(&video, 1e-3).energy(&d).unwrap();
        let want = reference_energy(&video, &d, 1e-3);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn descent_never_raises_the_energy(video in small_video(), step in 1e-3..10.0f64) {
        let config = RankPoolConfig { step, max_iters: 300, ..RankPoolConfig::default() };
        // a huge first step may be reported as divergence; otherwise the trace is monotone
        if let Ok(out) = compute_dynamic_image_traced(&video, &config) {
            prop_assert!(out.energies.windows(2).all(|p| p[1] <= p[0]));
            prop_assert!(out.image.pixels.is_finite());
        }
    }

    #[test]
    fn optimizer_steps_stay_finite(
        grads in prop::collection::vec(-1e6..1e6f64, 6),
        lr in 1e-6..=1.0f64,
        kind in 0usize..3,
        steps in 1usize..20,
    ) {
        let kind = [OptimizerKind::sgd(0.9), OptimizerKind::adam(), OptimizerKind::rmsprop()][kind];
        let mut w = Tensor::new(vec![2, 3], vec![0.5; 6]).unwrap();
        let g = Tensor::new(vec![2, 3], grads).unwrap();
        let mut opt = OptimizerState::new(kind, lr, &[&w]).unwrap();
        for _ in 0..steps {
            opt.step(&mut [&mut w], &[&g]).unwrap();
        }
        prop_assert!(w.is_finite());
        prop_assert_eq!(opt.accumulator_shapes(), vec![vec![2, 3]]);
    }

    #[test]
    fn generator_output_is_an_image(seed: u64, scale in 0.0..100.0f64) {
        let config = GanConfig { z_dim: 4, hidden: 8, ..GanConfig::default() };
        let gan = GanModel::new(0, 3, 3, config, &mut Rng::new(seed)).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        let z: Vec<f64> = (0..4).map(|_| scale * rng.normal()).collect();
        let out = gan.generate(&z).unwrap();
        prop_assert_eq!(out.shape(), &[3, 3]);
        prop_assert!(out.as_slice().iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn softmax_rows_are_distributions(seed: u64, pixels in prop::collection::vec(-10.0..10.0f64, 4)) {
        let mut rng = Rng::new(seed);
        let mut model = ClassifierModel::new(2, 2, 5, 3, 0.4, &mut rng).unwrap();
        let mut params = model.net.flat_params();
        params.iter_mut().for_each(|p| *p = rng.normal());
        model.net.set_flat_params(&params).unwrap();
        for mode in [Mode::Eval, Mode::Train] {
            let row = model.forward(&pixels, mode, Some(&mut rng)).unwrap();
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn evaluate_ignores_test_order(seed: u64, n in 1usize..30) {
        let mut rng = Rng::new(seed);
        let mut model = ClassifierModel::new(2, 2, 4, 3, 0.0, &mut rng).unwrap();
        let params: Vec<f64> = model.net.flat_params().iter().map(|_| rng.normal()).collect();
        model.net.set_flat_params(&params).unwrap();
        let set: Vec<DynamicImage> = (0..n)
            .map(|i| image(format!("t{i}"), rng.below(3), (0..4).map(|_| rng.uniform()).collect()))
            .collect();
        let mut shuffled: Vec<DynamicImage> = rng.sample_indices(n, n).into_iter().map(|i| set[i].clone()).collect();
        shuffled.reverse();
        prop_assert_eq!(evaluate(&model, &set).unwrap(), evaluate(&model, &shuffled).unwrap());
    }

    #[test]
    fn sps_selection_is_permutation_covariant(seed: u64, k in 2usize..60, n_g in 1usize..70) {
        let mut rng = Rng::new(seed);
        // distinct margins: row i has margin 0.5 + i/(4k)
        let ids: Vec<String> = (0..k).map(|i| format!("g{i}")).collect();
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let m = 0.5 + i as f64 / (4 * k) as f64;
                vec![(1.0 + m) / 2.0, (1.0 - m) / 2.0]
            })
            .collect();
        let perm = rng.sample_indices(k, k);
        let pids: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let prows: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let none = HashSet::new();
        let a = select(&ids, Statistics::Scores(&ScoreMatrix::new(ids.clone(), rows).unwrap()), Policy::SpsMargin, n_g, &none, &mut rng).unwrap();
        let b = select(&pids, Statistics::Scores(&ScoreMatrix::new(pids.clone(), prows).unwrap()), Policy::SpsMargin, n_g, &none, &mut rng).unwrap();
        prop_assert_eq!(a.ids.len(), n_g.min(k));
        prop_assert_eq!(a.ids, b.ids);
    }

    #[test]
    fn repeated_events_grow_the_selection_exactly(seed: u64, k in 1usize..40, n_g in 1usize..15, events in 1usize..6) {
        let mut rng = Rng::new(seed);
        let ids: Vec<String> = (0..k).map(|i| format!("g{i}")).collect();
        let rows: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let a = rng.uniform();
                vec![a, 1.0 - a]
            })
            .collect();
        let scores = ScoreMatrix::new(ids.clone(), rows).unwrap();
        let mut chosen: HashSet<String> = HashSet::new();
        for _ in 0..events {
            let before = chosen.len();
            match select(&ids, Statistics::Scores(&scores), Policy::SpsMargin, n_g, &chosen, &mut rng) {
                Ok(sel) => {
                    for id in sel.ids {
                        prop_assert!(chosen.insert(id));
                    }
                    prop_assert_eq!(chosen.len() - before, n_g.min(k - before));
                }
                Err(_) => prop_assert_eq!(before, k),
            }
        }
    }
}
