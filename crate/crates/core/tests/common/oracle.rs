//! Independent reference computations for small circuits: direct
//! probability-space evaluation, exhaustive enumeration over discrete states
//! and induced trees, random circuit generation, and distribution tests.

#![allow(dead_code)]

use apc_core::circuit::{Circuit, CircuitBuilder, CircuitMeta, LeafFamily, Unit, VarRole};
use rand::seq::SliceRandom;
use rand::Rng;

/// Random smooth and decomposable circuit with Bernoulli leaves on `nd` data
/// variables and Gaussian leaves on `nz` embedding variables, with
/// parameters drawn far enough from zero to make every state distinct.
pub fn random_circuit(nd: usize, nz: usize, rng: &mut impl Rng) -> Circuit<f64> {
    let mut b = CircuitBuilder::with_counts(nd, nz);
    let vars: Vec<usize> = (0..nd + nz).collect();
    grow(&mut b, &vars, nd, rng, 0);
    let mut c: Circuit<f64> = b
        .build(CircuitMeta::default())
        .expect("generator builds valid circuits");
    randomize(&mut c, rng);
    c
}

fn grow(b: &mut CircuitBuilder, vars: &[usize], nd: usize, rng: &mut impl Rng, depth: usize) -> usize {
    let family = |v: usize| {
        if v < nd {
            LeafFamily::Bernoulli
        } else {
            LeafFamily::Gaussian
        }
    };
    if vars.len() == 1 {
        let k = rng.random_range(1..=2);
        let leaves: Vec<usize> = (0..k).map(|_| b.input(vars[0], family(vars[0]))).collect();
        return if k == 1 { leaves[0] } else { b.sum(leaves) };
    }
    let nprod = if depth >= 2 { 1 } else { rng.random_range(2..=3) };
    let mut prods = Vec::new();
    for _ in 0..nprod {
        let mut vs = vars.to_vec();
        vs.shuffle(rng);
        let parts = if vs.len() >= 3 && rng.random_bool(0.3) { 3 } else { 2 };
        let mut cuts: Vec<usize> = (1..vs.len()).collect();
        cuts.shuffle(rng);
        let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
        cuts.sort();
        let mut children = Vec::new();
        let mut start = 0;
        for &cut in cuts.iter().chain(std::iter::once(&vs.len())) {
            let mut part = vs[start..cut].to_vec();
            part.sort();
            children.push(grow(b, &part, nd, rng, depth + 1));
            start = cut;
        }
        prods.push(b.product(children));
    }
    b.sum(prods)
}

pub fn randomize(c: &mut Circuit<f64>, rng: &mut impl Rng) {
    for l in c.params.sum_logits.iter_mut() {
        *l = rng.random_range(-1.5..1.5);
    }
    let units = c.units().to_vec();
    for (u, unit) in units.iter().enumerate() {
        if let Unit::Input { family, .. } = unit {
            let p = match family {
                LeafFamily::Gaussian => vec![rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.3)],
                _ => vec![rng.random_range(-2.0..2.0)],
            };
            c.set_leaf_params(u, &p).unwrap();
        }
    }
}

fn leaf_density(family: LeafFamily, p: &[f64], x: f64) -> f64 {
    match family {
        LeafFamily::Bernoulli => {
            let q = 1.0 / (1.0 + (-p[0]).exp());
            if x == 1.0 {
                q
            } else {
                1.0 - q
            }
        }
        LeafFamily::Binomial { n } => {
            let q = 1.0 / (1.0 + (-p[0]).exp());
            let k = x as u32;
            let mut coef = 1.0;
            for i in 0..k {
                coef *= (n - i) as f64 / (i + 1) as f64;
            }
            coef * q.powi(k as i32) * (1.0 - q).powi((n - k) as i32)
        }
        LeafFamily::Gaussian => {
            let s = p[1].exp();
            let d = (x - p[0]) / s;
            (-0.5 * d * d).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
        }
    }
}

/// Density of every unit for a complete or partial assignment, indexed by
/// global variable. `None` entries contribute a factor of one, which is
/// exact marginalization for normalized leaves.
pub fn unit_densities(c: &Circuit<f64>, assignment: &[Option<f64>]) -> Vec<f64> {
    let mut val = vec![0.0; c.num_units()];
    for (u, unit) in c.units().iter().enumerate() {
        val[u] = match unit {
            Unit::Input { var, family } => match assignment[*var] {
                Some(x) => leaf_density(*family, c.leaf_params(u), x),
                None => 1.0,
            },
            Unit::Product { children } => children.iter().map(|&k| val[k]).product(),
            Unit::Sum { children } => weights(c, u).iter().zip(children).map(|(w, &k)| w * val[k]).sum(),
        };
    }
    val
}

pub fn density(c: &Circuit<f64>, assignment: &[Option<f64>]) -> f64 {
    unit_densities(c, assignment)[c.root()]
}

pub fn weights(c: &Circuit<f64>, u: usize) -> Vec<f64> {
    let l = c.sum_logits(u);
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Sums the complete-assignment density over every binary completion of the
/// missing data variables. Embedding variables must be given or the circuit
/// must have none.
pub fn enumerate_marginal(c: &Circuit<f64>, data: &[Option<f64>], z: &[Option<f64>]) -> f64 {
    let missing: Vec<usize> = (0..data.len()).filter(|&j| data[j].is_none()).collect();
    let mut total = 0.0;
    for bits in 0..(1usize << missing.len()) {
        let mut full = data.to_vec();
        for (k, &j) in missing.iter().enumerate() {
            full[j] = Some(((bits >> k) & 1) as f64);
        }
        let mut assignment = vec![None; c.num_vars()];
        for (j, &v) in c.data_vars().iter().enumerate() {
            assignment[v] = full[j];
        }
        for (j, &v) in c.embedding_vars().iter().enumerate() {
            assignment[v] = z[j];
            assert!(z[j].is_some(), "enumeration needs embedding values");
        }
        total += density(c, &assignment);
    }
    total
}

/// An induced tree: the chosen child at every sum unit it contains, its
/// weight product, and its leaves.
#[derive(Clone, Debug)]
pub struct InducedTree {
    pub choices: Vec<(usize, usize)>,
    pub weight: f64,
    pub leaves: Vec<usize>,
}

pub fn induced_trees(c: &Circuit<f64>) -> Vec<InducedTree> {
    fn rec(c: &Circuit<f64>, u: usize) -> Vec<InducedTree> {
        match &c.units()[u] {
            Unit::Input { .. } => vec![InducedTree {
                choices: vec![],
                weight: 1.0,
                leaves: vec![u],
            }],
            Unit::Sum { children } => {
                let w = weights(c, u);
                let mut out = Vec::new();
                for (k, &ch) in children.iter().enumerate() {
                    for mut t in rec(c, ch) {
                        t.choices.insert(0, (u, k));
                        t.weight *= w[k];
                        out.push(t);
                    }
                }
                out
            }
            Unit::Product { children } => {
                let mut acc = vec![InducedTree {
                    choices: vec![],
                    weight: 1.0,
                    leaves: vec![],
                }];
                for &ch in children {
                    let sub = rec(c, ch);
                    let mut next = Vec::new();
                    for a in &acc {
                        for s in &sub {
                            let mut t = a.clone();
                            t.choices.extend(s.choices.iter().cloned());
                            t.weight *= s.weight;
                            t.leaves.extend(s.leaves.iter().cloned());
                            next.push(t);
                        }
                    }
                    acc = next;
                }
                acc
            }
        }
    }
    rec(c, c.root())
}

/// Likelihood of partial data evidence under one induced tree.
pub fn tree_likelihood(c: &Circuit<f64>, t: &InducedTree, data: &[Option<f64>]) -> f64 {
    let mut p = t.weight;
    for &u in &t.leaves {
        if let Unit::Input { var, family } = &c.units()[u] {
            if c.variable(*var).role == VarRole::Data {
                if let Some(x) = data[c.role_position(*var)] {
                    p *= leaf_density(*family, c.leaf_params(u), x);
                }
            }
        }
    }
    p
}

/// Exhaustive maximizer of `p(x, tree)` over binary data completions and
/// induced trees, with Gaussian leaves at their means. Returns the data
/// completion, the embedding values, and the maximal log density.
pub fn enumerate_mpe(c: &Circuit<f64>, data: &[Option<f64>]) -> (Vec<f64>, Vec<f64>, f64) {
    let trees = induced_trees(c);
    let missing: Vec<usize> = (0..data.len()).filter(|&j| data[j].is_none()).collect();
    let mut best = (vec![], vec![], f64::NEG_INFINITY);
    for bits in 0..(1usize << missing.len()) {
        let mut full = data.to_vec();
        for (k, &j) in missing.iter().enumerate() {
            full[j] = Some(((bits >> k) & 1) as f64);
        }
        for t in &trees {
            let mut p = tree_likelihood(c, t, &full);
            let mut z = vec![0.0; c.num_embedding()];
            for &u in &t.leaves {
                if let Unit::Input { var, family } = &c.units()[u] {
                    if c.variable(*var).role == VarRole::Embedding {
                        let prm = c.leaf_params(u);
                        z[c.role_position(*var)] = prm[0];
                        p *= leaf_density(*family, prm, prm[0]);
                    }
                }
            }
            if p.ln() > best.2 {
                best = (full.iter().map(|v| v.unwrap()).collect(), z, p.ln());
            }
        }
    }
    best
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Two-sample Kolmogorov-Smirnov test; returns `(statistic, p_value)` using
/// the asymptotic Kolmogorov distribution.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1.0f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
