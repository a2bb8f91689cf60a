mod common;

use enas_lab::cellspace::{random_architecture, Activation, Architecture};
use enas_lab::childnet::{
    cell_forward, evaluate_ppl, init_pool, lm_step, shared_train_epoch, used_edge_slots, ChildDims, SharedPool,
    TaskData, TokenBatch, TrainConfig,
};
use enas_lab::numkit::{Matrix, Rng};
use proptest::prelude::*;

fn pool(seed: u64, n: usize, vocab: usize) -> SharedPool {
    let dims = ChildDims {
        embed_dim: 4,
        hidden_dim: 6,
    };
    init_pool(&mut Rng::new(seed), common::space(n), dims, vocab).unwrap()
}

fn identity_arch(rng: &mut Rng, n: usize) -> Architecture {
    let mut a = random_architecture(rng, &common::space(n));
    a.nodes.iter_mut().for_each(|d| d.act = Activation::Identity);
    a
}

fn random_vec(rng: &mut Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn identity_cells_are_linear(seed in any::<u64>(), n in 1usize..=6, alpha in -3.0f64..3.0) {
        let p = pool(seed, n, 5);
        let mut rng = Rng::new(seed ^ 3);
        let arch = identity_arch(&mut rng, n);
        let (x, h) = (random_vec(&mut rng, 4), random_vec(&mut rng, 6));
        let (y, _) = cell_forward(&p, &arch, &x, &h).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let hs: Vec<f64> = h.iter().map(|v| alpha * v).collect();
        let (ys, _) = cell_forward(&p, &arch, &xs, &hs).unwrap();
        for (a, b) in ys.iter().zip(&y) {
            prop_assert!((a - alpha * b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_order_free_leaf_mean(seed in any::<u64>(), n in 2usize..=8) {
        let p = pool(seed, n, 5);
        let mut rng = Rng::new(seed ^ 5);
        let arch = random_architecture(&mut rng, &common::space(n));
        let (x, h) = (random_vec(&mut rng, 4), random_vec(&mut rng, 6));
        let (y, nodes) = cell_forward(&p, &arch, &x, &h).unwrap();
        let mean = |order: &[usize]| -> Vec<f64> {
            let mut m = vec![0.0; 6];
            for &leaf in order {
                for (mi, v) in m.iter_mut().zip(&nodes[leaf - 1]) {
                    *mi += v / order.len() as f64;
                }
            }
            m
        };
        let mut leaves: Vec<usize> = arch.leaf_set().into_iter().collect();
        let forward = mean(&leaves);
        leaves.reverse();
        let backward = mean(&leaves);
        for ((a, b), c) in y.iter().zip(&forward).zip(&backward) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((b - c).abs() < 1e-12);
        }
    }

    #[test]
    fn one_step_touches_only_the_sampled_graph(seed in any::<u64>(), n in 2usize..=6) {
        let mut p = pool(seed, n, 7);
        let mut rng = Rng::new(seed ^ 7);
        let arch = random_architecture(&mut rng, &common::space(n));
        let rows: Vec<Vec<usize>> = (0..3).map(|_| (0..5).map(|_| rng.below(7)).collect()).collect();
        let refs: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
        let before = p.clone();
        let step = lm_step(&p, &arch, &TokenBatch::new(&refs).unwrap(), &Matrix::zeros(3, 6)).unwrap();
        step.grads.apply_sgd(&mut p, 0.5, 10.0).unwrap();
        let used = used_edge_slots(&arch);
        for (k, (a, b)) in p.edges.iter().zip(&before.edges).enumerate() {
            if used.contains(&k) {
                continue;
            }
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let mut rng = Rng::new(1);
    for seed in 0..5 {
        let p = init_pool(&mut Rng::new(seed), common::space(4), ChildDims::default(), 10).unwrap();
        let arch = random_architecture(&mut rng, &p.space);
        let rows: Vec<Vec<usize>> = (0..8).map(|_| (0..33).map(|_| rng.below(10)).collect()).collect();
        let refs: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
        let step = lm_step(&p, &arch, &TokenBatch::new(&refs).unwrap(), &Matrix::zeros(8, 64)).unwrap();
        assert!((step.loss - 10f64.ln()).abs() < 0.5, "{}", step.loss);
    }
}

fn fixed_arch_run(seed: u64, epochs: usize) -> (SharedPool, Vec<f64>, f64) {
    let data = TaskData::bundled();
    let arch = Architecture::chain(&[Activation::Tanh, Activation::Tanh, Activation::Sigmoid, Activation::Tanh]);
    let cfg = TrainConfig {
        archs_per_epoch: 1,
        ..TrainConfig::default()
    };
    let mut rng = Rng::new(seed);
    let mut p = init_pool(&mut rng, arch.space(), ChildDims::default(), data.vocab_size()).unwrap();
    let before = p.clone();
    let mut losses = Vec::new();
    for _ in 0..epochs {
        let stats = shared_train_epoch(&mut p, |_| Ok(arch.clone()), &data.train, &cfg, &mut rng).unwrap();
        assert_eq!(stats.skipped, 0);
        losses.push(stats.mean_loss);
    }
    let used = used_edge_slots(&arch);
    for (k, (a, b)) in p.edges.iter().zip(&before.edges).enumerate() {
        assert_eq!(used.contains(&k), a != b, "edge slot {k}");
    }
    let ppl = evaluate_ppl(&p, &arch, &data.valid).unwrap();
    (p, losses, ppl)
}

#[test]
fn fixed_architecture_training_on_bundled_corpus() {
    let vocab = TaskData::bundled().vocab_size() as f64;
    let (pool_a, losses, ppl) = fixed_arch_run(11, 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(ppl >= 1.0 && ppl < vocab, "{ppl} vs {vocab}");

    let (pool_b, losses_b, ppl_b) = fixed_arch_run(11, 1);
    assert_eq!(losses_b[0], losses[0]);
    let (pool_c, _, ppl_c) = fixed_arch_run(11, 1);
    assert_eq!(pool_b, pool_c);
    assert_eq!(ppl_b, ppl_c);
    assert_ne!(pool_a, pool_b);
}
