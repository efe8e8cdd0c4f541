use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_len(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a],
            rhs: vec![b],
        });
    }
    Ok(())
}

/// Mean squared error over every entry.
pub fn mse<T: Scalar>(pred: &[T], truth: &[T]) -> Result<f64> {
    same_len(pred.len(), truth.len(), "mse")?;
    let s: f64 = pred.iter().zip(truth).map(|(a, b)| (a.f64() - b.f64()).powi(2)).sum();
    Ok(s / pred.len() as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter keeping only positions where the window fits.
fn filter_valid(img: &[f64], height: usize, width: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (height - k + 1, width - k + 1);
    let mut rows = vec![0.0; height * ow];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|j| g[j] * img[y * width + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of two single-channel images with values in
/// `[0, 1]`, using an 11×11 Gaussian window (σ = 1.5) over positions where
/// the window fits entirely inside the image.
pub fn ssim<T: Scalar>(a: &[T], b: &[T], height: usize, width: usize) -> Result<f64> {
    same_len(a.len(), b.len(), "ssim")?;
    same_len(a.len(), height * width, "ssim")?;
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {height}x{width}"
        )));
    }
    let g = gaussian_window();
    let a: Vec<f64> = a.iter().map(|v| v.f64()).collect();
    let b: Vec<f64> = b.iter().map(|v| v.f64()).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let f = |img: &[f64]| filter_valid(img, height, width, &g);
    let (mu_a, mu_b) = (f(&a), f(&b));
    let (aa, bb, ab) = (f(&prod(&a, &a)), f(&prod(&b, &b)), f(&prod(&a, &b)));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Average SSIM over row-major batches of images.
pub fn mean_ssim<T: Scalar>(a: &[T], b: &[T], height: usize, width: usize) -> Result<f64> {
    same_len(a.len(), b.len(), "ssim")?;
    let n = height * width;
    if n == 0 || !a.len().is_multiple_of(n) {
        return Err(Error::invalid("batch is not a whole number of images"));
    }
    let rows = a.len() / n;
    let mut s = 0.0;
    for r in 0..rows {
        s += ssim(&a[r * n..(r + 1) * n], &b[r * n..(r + 1) * n], height, width)?;
    }
    Ok(s / rows as f64)
}

/// Midranks (1-based) of `xs`, ties sharing their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Probability that a positive scores above a negative, ties counting half.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::invalid("AUROC needs both positive and negative scores"));
    }
    if positive.iter().chain(negative).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("AUROC score".into()));
    }
    let all: Vec<f64> = positive.iter().chain(negative).copied().collect();
    let r = ranks(&all);
    let (np, nn) = (positive.len() as f64, negative.len() as f64);
    let rank_sum: f64 = r[..positive.len()].iter().sum();
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len(), "spearman")?;
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::invalid("Spearman correlation of a constant sequence"));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Trapezoidal area under `y(x)` for increasing `x`.
pub fn curve_area(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len(), "curve area")?;
    Ok(x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum())
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
