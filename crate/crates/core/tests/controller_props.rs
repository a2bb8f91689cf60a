mod common;

use enas_lab::cellspace::{decision_schema, random_architecture, Activation, Architecture, SearchSpace, StepKind};
use enas_lab::controller::{
    combined_grad, init_controller, pg_loss_grad, sample_architecture, step_distributions, supervised_grad,
    teacher_forced_log_prob, ControllerDims, ControllerParams, ControllerTrainer, PGConfig, SampleTrace,
};
use enas_lab::numkit::{finite_diff_check, Rng};
use proptest::prelude::*;

fn tiny(seed: u64, n: usize) -> ControllerParams {
    let dims = ControllerDims {
        embed_dim: 5,
        hidden_dim: 8,
    };
    let mut p = init_controller(&mut Rng::new(seed), common::space(n), dims).unwrap();
    let flat: Vec<f64> = p.flatten().iter().map(|w| w * 10.0).collect();
    p.set_flat(&flat);
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn step_distributions_are_normalized_and_masked(seed in any::<u64>(), n in 1usize..=6) {
        let params = tiny(seed, n);
        let mut rng = Rng::new(seed ^ 1);
        let arch = random_architecture(&mut rng, &params.space);
        let dists = step_distributions(&params, &arch).unwrap();
        for (step, p) in decision_schema(&params.space).iter().zip(&dists) {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if step.kind == StepKind::Predecessor {
                prop_assert!(p[step.choices..].iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn sampled_and_forced_agree(seed in any::<u64>(), n in 1usize..=6) {
        let params = tiny(seed, n);
        let (arch, trace) = sample_architecture(&params, &mut Rng::new(seed)).unwrap();
        let forced = teacher_forced_log_prob(&params, &arch).unwrap();
        for (a, b) in forced.per_step.iter().zip(&trace.step_log_probs) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in forced.final_hidden.iter().zip(&trace.final_hidden) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_controller_entropy_is_log_choice_count() {
    for n in 1..=8 {
        let space = SearchSpace { n_nodes: n };
        let params = ControllerParams::zeros(space, ControllerDims::default());
        let (_, trace) = sample_architecture(&params, &mut Rng::new(n as u64)).unwrap();
        let want: f64 = decision_schema(&space).iter().map(|s| (s.choices as f64).ln()).sum();
        let got: f64 = trace.step_entropies.iter().sum();
        assert!((got - want).abs() < 1e-12, "n={n}: {got} vs {want}");
    }
}

#[test]
fn supervised_gradient_matches_finite_differences() {
    let mut rng = Rng::new(77);
    for seed in 0..3 {
        let params = tiny(seed, 3);
        let archs: Vec<Architecture> = (0..5).map(|_| random_architecture(&mut rng, &params.space)).collect();
        let (_, g) = supervised_grad(&params, &archs).unwrap();
        let mut probe = params.clone();
        let err = finite_diff_check(
            |x| {
                probe.set_flat(x);
                supervised_grad(&probe, &archs).unwrap().0
            },
            &params.flatten(),
            &g.flatten(),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}

fn sampled_batch(params: &ControllerParams, rng: &mut Rng, rewards: &[f64]) -> Vec<(SampleTrace, f64)> {
    rewards
        .iter()
        .map(|&r| (sample_architecture(params, rng).unwrap().1, r))
        .collect()
}

#[test]
fn single_step_bandit_learns_tanh() {
    let space = common::space(1);
    let mut trainer = ControllerTrainer::new(init_controller(&mut Rng::new(5), space, ControllerDims::default()).unwrap());
    let cfg = PGConfig {
        lr: 0.01,
        ..PGConfig::default()
    };
    let mut rng = Rng::new(6);
    let mut baseline = 0.0;
    for _ in 0..500 {
        let batch: Vec<(SampleTrace, f64)> = (0..16)
            .map(|_| {
                let (a, t) = sample_architecture(&trainer.params, &mut rng).unwrap();
                let r = if a.activation(1) == Activation::Tanh { 1.0 } else { 0.0 };
                (t, r)
            })
            .collect();
        baseline = trainer.reinforce_update(&batch, baseline, &cfg).unwrap().0;
    }
    let p = step_distributions(&trainer.params, &Architecture::chain(&[Activation::Tanh])).unwrap();
    assert!(p[0][Activation::Tanh.ordinal()] > 0.9, "{:?}", p[0]);
}

#[test]
fn zero_controller_reconstruction_loss() {
    let params = ControllerParams::zeros(common::space(3), ControllerDims::default());
    let archs: Vec<Architecture> = common::enumerate(3).into_iter().step_by(7).collect();
    let (loss, _) = supervised_grad(&params, &archs).unwrap();
    let want = 3.0 * 4f64.ln() + 2f64.ln();
    assert!((loss - want).abs() < 1e-12, "{loss}");
    assert!((want - 4.8520).abs() < 1e-4);
}

#[test]
fn reconstruction_loss_decreases_under_gradient_descent() {
    let mut params = init_controller(&mut Rng::new(8), common::space(4), ControllerDims::default()).unwrap();
    let mut rng = Rng::new(9);
    let archs: Vec<Architecture> = (0..10).map(|_| random_architecture(&mut rng, &params.space)).collect();
    let mut last = f64::INFINITY;
    for step in 0..50 {
        let (loss, g) = supervised_grad(&params, &archs).unwrap();
        assert!(loss < last, "step {step}: {loss} after {last}");
        last = loss;
        let next: Vec<f64> = params.flatten().iter().zip(g.flatten()).map(|(p, g)| p - 0.01 * g).collect();
        params.set_flat(&next);
    }
}

#[test]
fn train_step_reduces_to_reinforce() {
    let params = tiny(3, 4);
    let mut rng = Rng::new(10);
    let batch = sampled_batch(&params, &mut rng, &[0.3, 1.2, 0.7, 0.9]);
    let archs: Vec<Architecture> = (0..6).map(|_| random_architecture(&mut rng, &params.space)).collect();
    let cfg = PGConfig::default();

    let mut plain = ControllerTrainer::new(params.clone());
    let b_plain = plain.reinforce_update(&batch, 0.5, &cfg).unwrap().0;

    let mut absent = ControllerTrainer::new(params.clone());
    let b_absent = absent.train_step(&batch, 0.5, None, &cfg).unwrap().0;
    assert_eq!(absent, plain);
    assert_eq!(b_absent, b_plain);

    let off = PGConfig {
        supervised_coef: 0.0,
        ..cfg
    };
    let mut zero = ControllerTrainer::new(params.clone());
    let (_, stats) = zero.train_step(&batch, 0.5, Some(&archs), &off).unwrap();
    assert_eq!(zero, plain);
    assert_eq!(stats.sup_loss, None);
}

#[test]
fn combined_gradient_is_sum_of_parts() {
    for seed in 0..3 {
        let params = tiny(seed, 4);
        let mut rng = Rng::new(seed + 20);
        let batch = sampled_batch(&params, &mut rng, &[0.2, 1.5, 0.8]);
        let archs: Vec<Architecture> = (0..5).map(|_| random_architecture(&mut rng, &params.space)).collect();
        let cfg = PGConfig {
            supervised_coef: 0.7,
            ..PGConfig::default()
        };
        let (pg_l, pg_g) = pg_loss_grad(&params, &batch, 0.6, &cfg).unwrap();
        let (sup_l, sup_g) = supervised_grad(&params, &archs).unwrap();
        let (l1, l2, g) = combined_grad(&params, &batch, 0.6, Some(&archs), &cfg).unwrap();
        assert_eq!(l1, pg_l);
        assert!((l2.unwrap() - sup_l).abs() < 1e-12);
        for ((c, p), s) in g.flatten().iter().zip(pg_g.flatten()).zip(sup_g.flatten()) {
            assert!((c - (p + 0.7 * s)).abs() < 1e-12);
        }
    }
}
