use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::Tape;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn distribution(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #[test]
    fn kld_is_nonnegative_and_zero_only_on_equality(
        a in prop::collection::vec(0.01f64..1.0, 2..12),
        b in prop::collection::vec(0.01f64..1.0, 12),
    ) {
        let p = distribution(&a);
        let q = distribution(&b[..a.len()]);
        let k = categorical_kld(&p, &q);
        prop_assert!(k >= -1e-15);
        prop_assert!(categorical_kld(&p, &p).abs() < 1e-12);
        if p.iter().zip(&q).any(|(x, y)| (x - y).abs() > 1e-6) {
            prop_assert!(k > 1e-12);
        }
    }
}

#[test]
fn kld_reference_values() {
    let p = [0.5, 0.5];
    let q = [0.25, 0.75];
    let expected = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((categorical_kld(&p, &q) - expected).abs() < 1e-15);
    assert_eq!(categorical_kld(&[1.0, 0.0], &[1.0, 0.0]), 0.0);
}

#[test]
fn simple_one_hot_frequencies_match_weights() {
    let theta = [0.05, 0.3, 0.15, 0.4, 0.1];
    let tape = Tape::new();
    let n = 100_000;
    let t = tape.constant(crate::autodiff::Array::new(vec![n, 5], theta.repeat(n)).unwrap());
    let s = simple_sample(t, &mut rng(4)).unwrap();
    let mut freq = [0.0; 5];
    for row in s.value().data().chunks(5) {
        assert_eq!(row.iter().sum::<f64>(), 1.0);
        for (f, v) in freq.iter_mut().zip(row) {
            *f += v / n as f64;
        }
    }
    for (f, t) in freq.iter().zip(&theta) {
        assert!((f - t).abs() < 0.005, "{f} vs {t}");
    }
}

#[test]
fn targets_are_distributions_and_fixed_per_seed() {
    let p = target_distribution(64, 1.0, 3).unwrap();
    assert_eq!(p.len(), 64);
    assert!(p.iter().all(|&v| v > 0.0));
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(p, target_distribution(64, 1.0, 3).unwrap());
    assert_ne!(p, target_distribution(64, 1.0, 4).unwrap());
    assert!(target_distribution(8, -1.0, 0).is_err());
}

#[test]
fn starting_at_the_target_gives_zero_kld_and_unbiased_gradients() {
    let target = target_distribution(16, 1.0, 0).unwrap();
    let logits: Vec<f64> = target.iter().map(|p| p.ln()).collect();
    let cfg = BenchConfig {
        iterations: 1,
        ..BenchConfig::default()
    };
    let traj = train_sum_unit(&target, &logits, Estimator::Simple, &cfg, &mut rng(1)).unwrap();
    assert!(traj[0].abs() < 1e-12);

    let mean_grad = |logits: &[f64]| {
        let mut r = rng(2);
        let n = 4000;
        let mut acc = vec![0.0; logits.len()];
        let log_target: Vec<f64> = target.iter().map(|p| p.ln()).collect();
        for _ in 0..n {
            let g = batch_gradient(&log_target, logits, Estimator::Simple, 64, &mut r).unwrap();
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v / n as f64;
            }
        }
        acc.iter().map(|v| v.abs()).fold(0.0, f64::max)
    };
    let at_target = mean_grad(&logits);
    let uniform = mean_grad(&[0.0; 16]);
    assert!(at_target < 0.05 * uniform, "{at_target} vs {uniform}");
}

#[test]
fn simple_beats_gumbel_softmax_on_a_small_unit() {
    let cfg = BenchConfig {
        dims: vec![16],
        seeds: vec![0, 1, 2],
        iterations: 400,
        ..BenchConfig::default()
    };
    let r = run_bench(&cfg).unwrap();
    assert_eq!(r.runs.len(), 6);
    assert!(r.runs.iter().all(|run| run.kld.len() == 401));
    let simple = r.final_klds(16, Estimator::Simple);
    let gumbel = r.final_klds(16, Estimator::GumbelSoftmax { tau: 1.0 });
    let (ms, _) = mean_std(&simple);
    let (mg, _) = mean_std(&gumbel);
    assert!(ms < mg, "{ms} vs {mg}");
    assert!(r.runs.iter().all(|run| run.final_kld() < run.kld[0]));
    assert_eq!(r, run_bench(&cfg).unwrap());
    let table = r.trajectory_table();
    assert_eq!(table.lines().count(), 1 + 6 * 401);
    assert!(r
        .summary_table()
        .starts_with("dim,estimator,final_kld_mean,final_kld_std\n16,simple,"));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = |f: &dyn Fn(&mut BenchConfig)| {
        let mut c = BenchConfig::default();
        f(&mut c);
        run_bench(&c).is_err()
    };
    assert!(bad(&|c| c.dims = vec![1]));
    assert!(bad(&|c| c.seeds.clear()));
    assert!(bad(&|c| c.estimators = vec![Estimator::GumbelSoftmax { tau: 0.0 }]));
    assert!(bad(&|c| c.iterations = 0));
}

#[test]
fn gumbel_softmax_gradients_are_finite_and_centered() {
    let mut r = rng(9);
    let g = batch_gradient(
        &[0.2f64.ln(), 0.8f64.ln()],
        &[0.0, 0.0],
        Estimator::GumbelSoftmax { tau: 0.5 },
        8,
        &mut r,
    )
    .unwrap();
    assert_eq!(g.len(), 2);
    assert!(g.iter().all(|v| v.is_finite()));
    assert!((g[0] + g[1]).abs() < 1e-12, "softmax logit gradients sum to zero");
}
