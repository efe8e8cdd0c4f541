use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::circuit::{CircuitBuilder, CircuitMeta, LeafFamily, Unit, VarRole};
use crate::gradcheck::fd_check;
use crate::oracle;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn bernoulli_leaf(p: f64) -> Circuit<f64> {
    let mut b = CircuitBuilder::with_counts(1, 0);
    let u = b.input(0, LeafFamily::Bernoulli);
    let mut c: Circuit<f64> = b.build(CircuitMeta::default()).unwrap();
    c.set_leaf_params(u, &[(p / (1.0 - p)).ln()]).unwrap();
    c
}

/// `0.5 Ber(X; 0.9) N(Z; -1, 1) + 0.5 Ber(X; 0.1) N(Z; 1, 1)`.
fn two_component() -> Circuit<f64> {
    let mut b = CircuitBuilder::with_counts(1, 1);
    let x1 = b.input(0, LeafFamily::Bernoulli);
    let z1 = b.input(1, LeafFamily::Gaussian);
    let p1 = b.product(vec![x1, z1]);
    let x2 = b.input(0, LeafFamily::Bernoulli);
    let z2 = b.input(1, LeafFamily::Gaussian);
    let p2 = b.product(vec![x2, z2]);
    let s = b.sum(vec![p1, p2]);
    let mut c: Circuit<f64> = b.build(CircuitMeta::default()).unwrap();
    c.set_leaf_params(x1, &[(0.9f64 / 0.1).ln()]).unwrap();
    c.set_leaf_params(x2, &[(0.1f64 / 0.9).ln()]).unwrap();
    c.set_leaf_params(z1, &[-1.0, 0.0]).unwrap();
    c.set_leaf_params(z2, &[1.0, 0.0]).unwrap();
    c.set_sum_weights(s, &[0.5, 0.5]).unwrap();
    c
}

/// Data variable and embedding variable independent, `Z ~ N(0, 1)`.
fn independent_z() -> Circuit<f64> {
    let mut b = CircuitBuilder::with_counts(1, 1);
    let x = b.input(0, LeafFamily::Bernoulli);
    let z = b.input(1, LeafFamily::Gaussian);
    b.product(vec![x, z]);
    let mut c: Circuit<f64> = b.build(CircuitMeta::default()).unwrap();
    c.set_leaf_params(x, &[0.3]).unwrap();
    c.set_leaf_params(z, &[0.0, 0.0]).unwrap();
    c
}

fn options(mask: u32, values: u32, n: usize) -> Vec<Option<f64>> {
    (0..n)
        .map(|j| (mask >> j & 1 == 1).then(|| (values >> j & 1) as f64))
        .collect()
}

#[test]
fn all_missing_has_log_probability_zero() {
    let c = oracle::random_circuit(3, 0, &mut rng(1));
    let v = log_marginal_values(&c, &Evidence::all_missing(2, 3), None, None).unwrap();
    for x in v {
        assert!(x.abs() < 1e-12, "{x}");
    }
}

#[test]
fn single_bernoulli_leaf() {
    let c = bernoulli_leaf(0.5);
    let v = log_marginal_values(&c, &Evidence::from_options(&[Some(1.0)]), None, None).unwrap();
    assert!((v[0] - 0.5f64.ln()).abs() < 1e-15);
}

#[test]
fn marginal_with_one_missing_matches_enumeration() {
    let c = oracle::random_circuit(3, 0, &mut rng(7));
    let ev = [Some(1.0), None, Some(0.0)];
    let got = log_marginal_values(&c, &Evidence::from_options(&ev), None, None).unwrap()[0];
    let want = oracle::enumerate_marginal(&c, &ev, &[]).ln();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn observed_value_outside_support_is_an_error() {
    let c = bernoulli_leaf(0.5);
    let r = log_marginal_values(&c, &Evidence::from_options(&[Some(0.5)]), None, None);
    assert!(matches!(r, Err(Error::OutsideSupport { var: 0, .. })));
    let mut b = CircuitBuilder::with_counts(1, 0);
    b.input(0, LeafFamily::Binomial { n: 255 });
    let c: Circuit<f64> = b.build(CircuitMeta::default()).unwrap();
    assert!(log_marginal_values(&c, &Evidence::from_options(&[Some(256.0)]), None, None).is_err());
    assert!(log_marginal_values(&c, &Evidence::from_options(&[Some(-1.0)]), None, None).is_err());
    assert!(log_marginal_values(&c, &Evidence::from_options(&[Some(255.0)]), None, None).is_ok());
}

#[test]
fn binomial_leaf_matches_direct_pmf() {
    let mut b = CircuitBuilder::with_counts(1, 0);
    let u = b.input(0, LeafFamily::Binomial { n: 255 });
    let mut c: Circuit<f64> = b.build(CircuitMeta::default()).unwrap();
    c.set_leaf_params(u, &[-0.4]).unwrap();
    for x in [0.0, 1.0, 77.0, 200.0, 255.0] {
        let got = log_marginal_values(&c, &Evidence::from_options(&[Some(x)]), None, None).unwrap()[0];
        let mut a = vec![None];
        a[0] = Some(x);
        let want = oracle::density(&c, &a).ln();
        assert!((got - want).abs() < 1e-8, "x={x}: {got} vs {want}");
    }
}

#[test]
fn forward_cache_holds_unit_values() {
    let c = two_component();
    let mut cache = ForwardCache {
        rows: 0,
        log_values: vec![],
        log_weights: vec![],
    };
    let ev = Evidence::from_options(&[Some(1.0)]);
    let v = log_marginal_values(&c, &ev, None, Some(&mut cache)).unwrap();
    assert_eq!(cache.rows(), 1);
    assert_eq!(cache.root_values(), v.as_slice());
    assert!((cache.log_value(0, 0) - 0.9f64.ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginals_match_enumeration(seed in 0u64..10_000, mask in 0u32..32, values in 0u32..32) {
        let c = oracle::random_circuit(5, 0, &mut rng(seed));
        let ev = options(mask, values, 5);
        let got = log_marginal_values(&c, &Evidence::from_options(&ev), None, None).unwrap()[0];
        let want = oracle::enumerate_marginal(&c, &ev, &[]).ln();
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }

    #[test]
    fn marginals_with_embeddings_match_enumeration(seed in 0u64..10_000, mask in 0u32..8, values in 0u32..8) {
        let mut r = rng(seed);
        let c = oracle::random_circuit(3, 2, &mut r);
        let z: Vec<f64> = (0..2).map(|_| r.random_range(-2.0..2.0)).collect();
        let ev = options(mask, values, 3);
        let got = log_marginal_values(&c, &Evidence::from_options(&ev), Some(&z), None).unwrap()[0];
        let zo: Vec<Option<f64>> = z.iter().map(|&v| Some(v)).collect();
        let want = oracle::enumerate_marginal(&c, &ev, &zo).ln();
        prop_assert!((got - want).abs() < 1e-9, "{} vs {}", got, want);
    }

    #[test]
    fn simple_sample_gradient_is_identity(seed in 0u64..1000, d in 1usize..6) {
        let mut r = rng(seed);
        let raw: Vec<f64> = (0..d).map(|_| r.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let theta: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let tape = Tape::new();
        let th = tape.param(Array::from_vec(theta));
        let sample = simple_sample(th, &mut r).unwrap();
        let vv = tape.constant(Array::from_vec(v.clone()));
        sample.mul(vv).unwrap().sum_all().backward().unwrap();
        let g = th.grad();
        prop_assert_eq!(g.data(), v.as_slice());
    }

    #[test]
    fn encode_visits_each_embedding_leaf_once(seed in 0u64..1000) {
        let mut r = rng(seed);
        let c = oracle::random_circuit(3, 3, &mut r);
        let ev = Evidence::from_options(&[Some(1.0), None, Some(0.0)]);
        let out = encode_values(&c, &ev, &mut r).unwrap();
        let leaves = &out.trace.leaves[0];
        prop_assert_eq!(leaves.len(), 3);
        for (j, &u) in leaves.iter().enumerate() {
            match &c.units()[u] {
                Unit::Input { var, .. } => {
                    prop_assert_eq!(c.variable(*var).role, VarRole::Embedding);
                    prop_assert_eq!(c.role_position(*var), j);
                    prop_assert_eq!(out.mean[j], c.leaf_params(u)[0]);
                }
                _ => prop_assert!(false, "visited non-input unit"),
            }
        }
        let mut sums: Vec<usize> = out.trace.chosen[0].iter().map(|&(u, _)| u).collect();
        let n = sums.len();
        sums.sort();
        sums.dedup();
        prop_assert_eq!(sums.len(), n, "a sum unit was visited twice");
    }

    #[test]
    fn mpe_matches_tree_enumeration(seed in 0u64..10_000, mask in 0u32..16, values in 0u32..16) {
        let c = oracle::random_circuit(4, 1, &mut rng(seed));
        let ev = options(mask, values, 4);
        let got = mpe(&c, &Evidence::from_options(&ev)).unwrap();
        let (x, z, lv) = oracle::enumerate_mpe(&c, &ev);
        prop_assert!((got.log_value[0] - lv).abs() < 1e-9, "{} vs {}", got.log_value[0], lv);
        prop_assert_eq!(got.x, x);
        prop_assert_eq!(got.z, z);
    }
}

#[test]
fn condition_weights_examples() {
    let r = condition_weights(&[0.5f64, 0.5], &[0.2, 0.8]).unwrap();
    assert!((r.weights[0] - 0.2).abs() < 1e-12 && (r.weights[1] - 0.8).abs() < 1e-12);
    let r = condition_weights(&[0.3f64, 0.7], &[1.0, 1.0]).unwrap();
    assert!((r.weights[0] - 0.3).abs() < 1e-12 && (r.weights[1] - 0.7).abs() < 1e-12);
    let r = condition_weights(&[0.3f64, 0.7], &[0.9, 0.1]).unwrap();
    assert!((r.weights[0] - 0.27 / 0.34).abs() < 1e-12);
    assert!((r.weights[1] - 0.07 / 0.34).abs() < 1e-12);
    assert!(!r.degenerate);
}

#[test]
fn degenerate_evidence_falls_back_to_prior_weights() {
    let r = condition_weights(&[0.3f64, 0.7], &[0.0, 0.0]).unwrap();
    assert!(r.degenerate);
    assert!((r.weights[0] - 0.3).abs() < 1e-12);
    let r = condition_log_weights(&[0.25f64.ln(), 0.75f64.ln()], &[f64::NEG_INFINITY, f64::NEG_INFINITY]);
    assert!(r.degenerate);
    assert!((r.weights[1] - 0.75).abs() < 1e-12);
}

#[test]
fn degenerate_evidence_is_counted_during_encoding() {
    // In single precision the log-likelihood of the evidence under both
    // branches overflows to -inf.
    let mut b = CircuitBuilder::with_counts(2, 1);
    let mut prods = Vec::new();
    let mut data_leaves = Vec::new();
    for _ in 0..2 {
        let x0 = b.input(0, LeafFamily::Bernoulli);
        let x1 = b.input(1, LeafFamily::Bernoulli);
        let z = b.input(2, LeafFamily::Gaussian);
        data_leaves.extend([x0, x1]);
        prods.push(b.product(vec![x0, x1, z]));
    }
    b.sum(prods);
    let mut c: Circuit<f32> = b.build(CircuitMeta::default()).unwrap();
    for u in data_leaves {
        c.set_leaf_params(u, &[3e38]).unwrap();
    }
    let ev = Evidence::from_options(&[Some(0.0), Some(0.0)]);
    let out = encode_values(&c, &ev, &mut rng(0)).unwrap();
    assert_eq!(out.trace.fallbacks, 1);
    assert!(out.z[0].is_finite());
}

#[test]
fn simple_sample_single_category() {
    let tape = Tape::new();
    let th = tape.param(Array::from_vec(vec![1.0]));
    let s = simple_sample(th, &mut rng(0)).unwrap();
    assert_eq!(s.value().data(), &[1.0]);
    s.sum_all().backward().unwrap();
    assert_eq!(th.grad().data(), &[1.0]);
}

#[test]
fn simple_sample_frequency_matches_probability() {
    let mut r = rng(11);
    let tape = Tape::new();
    let th = tape.constant(Array::from_vec(vec![0.3, 0.7]));
    let n = 100_000;
    let mut ones = 0usize;
    for _ in 0..n {
        let s = simple_sample(th, &mut r).unwrap().value();
        assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(s.sum(), 1.0);
        ones += s.data()[1] as usize;
    }
    let f = ones as f64 / n as f64;
    assert!((f - 0.7).abs() < 0.005, "{f}");
}

#[test]
fn simple_sample_rejects_zero_distribution() {
    let tape = Tape::new();
    let th = tape.constant(Array::from_vec(vec![0.0, 0.0]));
    assert!(simple_sample(th, &mut rng(0)).is_err());
}

#[test]
fn simple_sample_batched_rows_are_one_hot() {
    let tape = Tape::new();
    let th = tape.constant(Array::from_f64(&[3, 4], &[0.25; 12]).unwrap());
    let s = simple_sample(th, &mut rng(5)).unwrap().value();
    for row in s.data().chunks(4) {
        assert_eq!(row.iter().sum::<f64>(), 1.0);
    }
}

#[test]
fn encode_independent_embedding_is_standard_normal() {
    let c = independent_z();
    let n = 100_000;
    let ev = Evidence::observed_rows(n, 1, vec![1.0; n]).unwrap();
    let out = encode_values(&c, &ev, &mut rng(3)).unwrap();
    let mean = out.z.iter().sum::<f64>() / n as f64;
    let std = (out.z.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((std - 1.0).abs() < 0.02, "{std}");
}

#[test]
fn encode_branch_frequency_follows_bayes_rule() {
    let c = two_component();
    let n = 100_000;
    let ev = Evidence::observed_rows(n, 1, vec![1.0; n]).unwrap();
    let out = encode_values(&c, &ev, &mut rng(4)).unwrap();
    let first = out.trace.chosen.iter().filter(|p| p[0].1 == 0).count();
    let f = first as f64 / n as f64;
    assert!((f - 0.9).abs() < 0.005, "{f}");
    for (i, p) in out.trace.chosen.iter().enumerate() {
        let want = if p[0].1 == 0 { -1.0 } else { 1.0 };
        assert_eq!(out.mean[i], want);
    }
}

#[test]
fn encode_without_evidence_matches_ancestral_sampling() {
    let c = oracle::random_circuit(3, 2, &mut rng(21));
    let n = 50_000;
    let out = encode_values(&c, &Evidence::all_missing(n, 3), &mut rng(22)).unwrap();
    let (_, zs) = sample_joint(&c, &mut rng(23), n);
    for j in 0..2 {
        let a: Vec<f64> = out.z.iter().skip(j).step_by(2).copied().collect();
        let b: Vec<f64> = zs.iter().skip(j).step_by(2).copied().collect();
        let (d, p) = oracle::ks_two_sample(&a, &b);
        assert!(p > 0.01, "dimension {j}: D={d}, p={p}");
    }
}

#[test]
fn encode_tree_distribution_matches_enumeration() {
    let c = oracle::random_circuit(3, 2, &mut rng(31));
    let data = [Some(1.0), None, Some(0.0)];
    let trees = oracle::induced_trees(&c);
    let zsum = |u: usize| !c.embedding_positions(u).is_empty();
    let mut exact = std::collections::BTreeMap::new();
    let mut total = 0.0;
    for t in &trees {
        let p = oracle::tree_likelihood(&c, t, &data);
        let key: Vec<(usize, usize)> = t.choices.iter().copied().filter(|&(u, _)| zsum(u)).collect();
        *exact.entry(key).or_insert(0.0) += p;
        total += p;
    }
    let n = 100_000;
    let ev = Evidence::from_options(&data).gather_rows(&vec![0; n]);
    let out = encode_values(&c, &ev, &mut rng(32)).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for path in &out.trace.chosen {
        let mut key = path.clone();
        key.sort();
        *counts.entry(key).or_insert(0usize) += 1;
    }
    let mut tv = 0.0;
    let mut keys: Vec<_> = exact.keys().cloned().collect();
    for k in counts.keys() {
        let mut sk = k.clone();
        sk.sort();
        if !keys.iter().any(|e| {
            let mut se = e.clone();
            se.sort();
            se == sk
        }) {
            keys.push(k.clone());
        }
    }
    for k in &keys {
        let mut sk = k.clone();
        sk.sort();
        let p = exact
            .iter()
            .filter(|(e, _)| {
                let mut se = (*e).clone();
                se.sort();
                se == sk
            })
            .map(|(_, v)| v)
            .sum::<f64>()
            / total;
        let q = *counts.get(&sk).unwrap_or(&0) as f64 / n as f64;
        tv += 0.5 * (p - q).abs();
    }
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn encode_is_deterministic_given_seed() {
    let c = oracle::random_circuit(3, 2, &mut rng(41));
    let ev = Evidence::from_options(&[Some(1.0), None, Some(0.0)]).gather_rows(&[0; 8]);
    let a = encode_values(&c, &ev, &mut rng(9)).unwrap();
    let b = encode_values(&c, &ev, &mut rng(9)).unwrap();
    assert_eq!(a.z, b.z);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn tape_encoding_matches_values() {
    let c = oracle::random_circuit(3, 2, &mut rng(42));
    let ev = Evidence::from_options(&[Some(1.0), None, Some(0.0)]).gather_rows(&[0; 4]);
    let tape = Tape::new();
    let vars = bind(&c, &tape);
    let enc = encode(&c, &vars, &ev, &mut rng(9)).unwrap();
    let vals = encode_values(&c, &ev, &mut rng(9)).unwrap();
    assert_eq!(enc.z.shape(), vec![4, 2]);
    assert_eq!(enc.z.value().data(), vals.z.as_slice());
    assert_eq!(enc.mean.value().data(), vals.mean.as_slice());
    assert_eq!(enc.log_std.value().data(), vals.log_std.as_slice());
}

#[test]
fn log_marginal_gradients_match_finite_differences() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let c = oracle::random_circuit(3, 2, &mut r);
        let ev = Evidence::new(
            2,
            3,
            vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            vec![true, false, true, true, true, false],
        )
        .unwrap();
        let z: Vec<f64> = (0..4).map(|_| r.random_range(-1.5..1.5)).collect();
        let inputs = [
            Array::from_vec(c.params.sum_logits.clone()),
            Array::from_vec(c.params.leaf.clone()),
            Array::from_f64(&[2, 2], &z).unwrap(),
        ];
        let err = fd_check(
            &inputs,
            |_, v| {
                let vars = CircuitVars {
                    sum_logits: v[0],
                    leaf: v[1],
                };
                log_marginal(&c, &vars, &ev, Embeddings::Node(v[2])).unwrap().sum_all()
            },
            1e-6,
        );
        assert!(err < 1e-6, "seed {seed}: {err}");
    }
}

#[test]
fn log_marginal_node_matches_values() {
    let c = oracle::random_circuit(3, 1, &mut rng(5));
    let ev = Evidence::from_options(&[Some(1.0), None, Some(1.0)]);
    let tape = Tape::new();
    let vars = bind_frozen(&c, &tape);
    let v = log_marginal(&c, &vars, &ev, Embeddings::Values(&[0.3])).unwrap();
    let w = log_marginal_values(&c, &ev, Some(&[0.3]), None).unwrap();
    assert_eq!(v.value().data(), w.as_slice());
    assert!(!v.requires_grad());
}

/// The encoding as a smooth function of the parameters with every discrete
/// choice and noise draw held fixed and every one-hot selector `s` replaced
/// by `s + theta(params) - theta(params0)`. Its gradient at `params0` is the
/// gradient the encoder reports.
fn surrogate_encoding(
    c: &Circuit<f64>,
    base: &Circuit<f64>,
    state: &encode::EncodeState<f64>,
    data: &[Vec<Option<f64>>],
) -> Vec<f64> {
    let b = data.len();
    let nz = c.num_embedding();
    let mut out = vec![0.0; 3 * b * nz];
    for (i, row) in data.iter().enumerate() {
        let mut assignment = vec![None; c.num_vars()];
        for (j, &v) in c.data_vars().iter().enumerate() {
            assignment[v] = row[j];
        }
        let dens = oracle::unit_densities(c, &assignment);
        let dens0 = oracle::unit_densities(base, &assignment);
        let mut trip: Vec<Vec<[f64; 3]>> = vec![Vec::new(); c.num_units()];
        for (u, unit) in c.units().iter().enumerate() {
            let zp = c.embedding_positions(u);
            if zp.is_empty() {
                continue;
            }
            trip[u] = match unit {
                Unit::Input { .. } => {
                    let p = c.leaf_params(u);
                    let e = state.eps[state.entry_off[u] * b + i];
                    vec![[p[0] + p[1].exp() * e, p[0], p[1]]]
                }
                Unit::Product { children } => {
                    let mut v = vec![[0.0; 3]; zp.len()];
                    for &ch in children {
                        for (j, z) in c.embedding_positions(ch).iter().enumerate() {
                            v[zp.binary_search(z).unwrap()] = trip[ch][j];
                        }
                    }
                    v
                }
                Unit::Sum { children } => {
                    let theta = |circ: &Circuit<f64>, d: &[f64]| {
                        let w = oracle::weights(circ, u);
                        let joint: Vec<f64> = children.iter().zip(&w).map(|(&ch, w)| w * d[ch]).collect();
                        let s: f64 = joint.iter().sum();
                        joint.iter().map(|j| j / s).collect::<Vec<f64>>()
                    };
                    let th = theta(c, &dens);
                    let th0 = theta(base, &dens0);
                    let k = state.chosen[state.sum_idx[u] * b + i] as usize;
                    let mut v = vec![[0.0; 3]; zp.len()];
                    for (m, &ch) in children.iter().enumerate() {
                        let s = if m == k { 1.0 } else { 0.0 } + th[m] - th0[m];
                        for j in 0..zp.len() {
                            for comp in 0..3 {
                                v[j][comp] += s * trip[ch][j][comp];
                            }
                        }
                    }
                    v
                }
            };
        }
        for j in 0..nz {
            for comp in 0..3 {
                out[(comp * b + i) * nz + j] = trip[c.root()][j][comp];
            }
        }
    }
    out
}

#[test]
fn encode_gradients_match_surrogate_finite_differences() {
    for seed in 0..6 {
        let mut r = rng(200 + seed);
        let c = oracle::random_circuit(3, 2, &mut r);
        let rows = vec![vec![Some(1.0), None, Some(0.0)], vec![None, Some(1.0), Some(1.0)]];
        let mut ev = Evidence::all_missing(2, 3);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                ev.set(i, j, *v);
            }
        }
        let state = encode::encode_forward(&c.st, &c.params.sum_logits, &c.params.leaf, &ev, &mut r).unwrap();
        let g: Vec<f64> = (0..3 * 2 * 2).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut gl = vec![0.0; c.params.sum_logits.len()];
        let mut gp = vec![0.0; c.params.leaf.len()];
        encode::encode_backward(&c.st, &c.params.leaf, &ev, &state, &g, &mut gl, &mut gp);
        let f = |circ: &Circuit<f64>| -> f64 {
            surrogate_encoding(circ, &c, &state, &rows)
                .iter()
                .zip(&g)
                .map(|(a, b)| a * b)
                .sum()
        };
        let v0 = surrogate_encoding(&c, &c, &state, &rows);
        assert!(v0
            .iter()
            .zip(state.output(&c.st).data())
            .all(|(a, b)| (a - b).abs() < 1e-12));
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..gl.len() + gp.len() {
            let mut plus = c.clone();
            let mut minus = c.clone();
            if k < gl.len() {
                plus.params.sum_logits[k] += h;
                minus.params.sum_logits[k] -= h;
            } else {
                plus.params.leaf[k - gl.len()] += h;
                minus.params.leaf[k - gl.len()] -= h;
            }
            let num = (f(&plus) - f(&minus)) / (2.0 * h);
            let ana = if k < gl.len() { gl[k] } else { gp[k - gl.len()] };
            worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-3));
        }
        assert!(worst < 1e-5, "seed {seed}: {worst}");
    }
}

#[test]
fn sample_joint_bernoulli_mean() {
    let c = bernoulli_leaf(0.5);
    let (x, _) = sample_joint(&c, &mut rng(1), 100_000);
    let m = x.iter().sum::<f64>() / x.len() as f64;
    assert!((m - 0.5).abs() < 0.005, "{m}");
}

#[test]
fn sample_joint_branch_frequencies_match_weights() {
    let mut b = CircuitBuilder::with_counts(1, 0);
    let a = b.input(0, LeafFamily::Bernoulli);
    let d = b.input(0, LeafFamily::Bernoulli);
    let s = b.sum(vec![a, d]);
    let mut c: Circuit<f64> = b.build(CircuitMeta::default()).unwrap();
    c.set_leaf_params(a, &[40.0]).unwrap();
    c.set_leaf_params(d, &[-40.0]).unwrap();
    c.set_sum_weights(s, &[0.3, 0.7]).unwrap();
    let (x, _) = sample_joint(&c, &mut rng(2), 100_000);
    let f = x.iter().sum::<f64>() / x.len() as f64;
    assert!((f - 0.3).abs() < 0.005, "{f}");
}

#[test]
fn sample_joint_matches_enumerated_joint() {
    let c = oracle::random_circuit(3, 0, &mut rng(3));
    let n = 200_000;
    let (x, _) = sample_joint(&c, &mut rng(4), n);
    let mut counts = [0usize; 8];
    for row in x.chunks(3) {
        let k = row.iter().enumerate().map(|(j, &v)| (v as usize) << j).sum::<usize>();
        counts[k] += 1;
    }
    let emp: Vec<f64> = counts.iter().map(|&k| k as f64 / n as f64).collect();
    let exact: Vec<f64> = (0..8u32)
        .map(|s| oracle::enumerate_marginal(&c, &options(7, s, 3), &[]))
        .collect();
    let tv = oracle::total_variation(&emp, &exact);
    assert!(tv < 0.01, "{tv}");
}

#[test]
fn mpe_single_component_returns_means() {
    let c = independent_z();
    let z = mpe_encode(&c, &Evidence::from_options(&[Some(0.0)])).unwrap();
    assert_eq!(z.data(), &[0.0]);
}

#[test]
fn mpe_two_component_picks_likely_branch() {
    let c = two_component();
    let z = mpe_encode(&c, &Evidence::from_options(&[Some(1.0)])).unwrap();
    assert_eq!(z.data(), &[-1.0]);
    let z = mpe_encode(&c, &Evidence::from_options(&[Some(0.0)])).unwrap();
    assert_eq!(z.data(), &[1.0]);
}

#[test]
fn mpe_on_selective_circuit_is_exact_argmax() {
    // Each branch of the root fixes X0 to a different value, so at most one
    // branch is non-zero for any state and max-product is exact.
    let mut r = rng(8);
    let mut b = CircuitBuilder::with_counts(3, 0);
    let mut prods = Vec::new();
    let mut fixed = Vec::new();
    for _ in 0..2 {
        let x0 = b.input(0, LeafFamily::Bernoulli);
        fixed.push(x0);
        let x1 = b.input(1, LeafFamily::Bernoulli);
        let x2 = b.input(2, LeafFamily::Bernoulli);
        prods.push(b.product(vec![x0, x1, x2]));
    }
    b.sum(prods);
    let mut c: Circuit<f64> = b.build(CircuitMeta::default()).unwrap();
    oracle::randomize(&mut c, &mut r);
    c.set_leaf_params(fixed[0], &[60.0]).unwrap();
    c.set_leaf_params(fixed[1], &[-60.0]).unwrap();
    let got = mpe(&c, &Evidence::all_missing(1, 3)).unwrap();
    let mut best = (0u32, f64::NEG_INFINITY);
    for s in 0..8u32 {
        let p = oracle::enumerate_marginal(&c, &options(7, s, 3), &[]);
        if p > best.1 {
            best = (s, p);
        }
    }
    let want: Vec<f64> = (0..3).map(|j| (best.0 >> j & 1) as f64).collect();
    assert_eq!(got.x, want);
}

#[test]
fn embedding_marginal_of_standard_normal_leaf() {
    let c = independent_z();
    let v = log_embedding_marginal(&c, &[0.0]).unwrap();
    assert!((v[0] + 0.918_938_533_204_672_7).abs() < 1e-12);
}

#[test]
fn embedding_marginal_matches_enumeration() {
    for seed in 0..20 {
        let mut r = rng(300 + seed);
        let c = oracle::random_circuit(3, 2, &mut r);
        let z = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
        let got = log_embedding_marginal(&c, &z).unwrap()[0];
        let want = (0..8u32)
            .map(|s| oracle::enumerate_marginal(&c, &options(7, s, 3), &[Some(z[0]), Some(z[1])]))
            .sum::<f64>()
            .ln();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn embedding_marginal_rejects_non_finite() {
    let c = independent_z();
    assert!(log_embedding_marginal(&c, &[f64::NAN]).is_err());
}

#[test]
fn f32_marginals_track_f64() {
    let c = oracle::random_circuit(4, 0, &mut rng(77));
    let c32: Circuit<f32> = c.cast();
    let ev = [Some(1.0), None, Some(0.0), Some(1.0)];
    let a = log_marginal_values(&c, &Evidence::from_options(&ev), None, None).unwrap()[0];
    let b = log_marginal_values(&c32, &Evidence::from_options(&ev), None, None).unwrap()[0];
    assert!((a - b as f64).abs() < 1e-5);
}
