//! Central finite-difference check of tape gradients.

#![allow(dead_code)]

use rand::Rng;

use apc_core::autodiff::{Array, Tape, Var};

pub fn rand_array(shape: &[usize], rng: &mut impl Rng) -> Array<f64> {
    let n: usize = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Max relative error between tape gradients and central differences of a
/// scalar function of `inputs`. Relative error is `|a - n| / max(|a|, |n|, 1e-3)`.
pub fn fd_check<F>(inputs: &[Array<f64>], f: F, h: f64) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|a| tape.param(a.clone())).collect();
    f(&tape, &vars).backward().unwrap();
    let analytic: Vec<Array<f64>> = vars.iter().map(|v| v.grad()).collect();
    let eval = |xs: &[Array<f64>]| {
        let t = Tape::new();
        let vs: Vec<_> = xs.iter().map(|a| t.constant(a.clone())).collect();
        f(&t, &vs).item()
    };
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}
