use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Smallest bandwidth the median heuristic will return.
pub const MIN_BANDWIDTH: f64 = 1e-6;
/// Pooled samples larger than this are thinned before taking the median.
pub const MEDIAN_SAMPLE_CAP: usize = 1000;

/// Gaussian kernel bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdConfig {
    Sigma(f64),
    #[default]
    MedianHeuristic,
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MmdConfig::Sigma(s) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::config(alloc::format!("kernel bandwidth must be > 0, got {s}")))
            }
            _ => Ok(()),
        }
    }

    pub fn resolve(&self, xs: &Matrix, xt: &Matrix) -> Result<f64> {
        self.validate()?;
        match *self {
            MmdConfig::Sigma(s) => Ok(s),
            MmdConfig::MedianHeuristic => median_bandwidth(xs, xt),
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn kernel(a: &[f64], b: &[f64], inv_two_sigma_sq: f64) -> f64 {
    libm::exp(-sq_dist(a, b) * inv_two_sigma_sq)
}

/// Gaussian kernel matrix `K[i][j] = exp(-‖xᵢ − yⱼ‖² / 2σ²)`.
pub fn gaussian_kernel(x: &Matrix, y: &Matrix, sigma: f64) -> Result<Matrix> {
    check_pair(x, y)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    Ok(Matrix::from_fn(x.rows(), y.rows(), |i, j| kernel(x.row(i), y.row(j), inv)))
}

fn check_pair(xs: &Matrix, xt: &Matrix) -> Result<()> {
    if xs.rows() == 0 || xt.rows() == 0 {
        return Err(Error::Empty("mmd needs two non-empty samples".into()));
    }
    if xs.cols() != xt.cols() {
        return Err(Error::shape(alloc::format!("samples have {} and {} columns", xs.cols(), xt.cols())));
    }
    Ok(())
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

fn sorted_rows(m: &Matrix) -> Vec<&[f64]> {
    let mut rows: Vec<&[f64]> = (0..m.rows()).map(|r| m.row(r)).collect();
    rows.sort_by(|a, b| cmp_rows(a, b));
    rows
}

/// Both samples with rows sorted, the "smaller" sample first. Evaluating on
/// this canonical form makes the estimate independent of row order and of
/// argument order, bit for bit.
fn canonical<'a>(xs: &'a Matrix, xt: &'a Matrix) -> (Vec<&'a [f64]>, Vec<&'a [f64]>) {
    let a = sorted_rows(xs);
    let b = sorted_rows(xt);
    let order = a.len().cmp(&b.len()).then_with(|| {
        a.iter().zip(&b).map(|(x, y)| cmp_rows(x, y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    });
    if order == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// Kernel mean with Neumaier-compensated summation: the three means of an
/// estimate nearly cancel, so their rounding error shows up directly.
fn mean_kernel(a: &[&[f64]], b: &[&[f64]], inv: f64) -> f64 {
    let mut total = 0.0;
    let mut carry = 0.0;
    for x in a {
        for y in b {
            let v = kernel(x, y, inv);
            let t = total + v;
            carry += if libm::fabs(total) >= libm::fabs(v) { (total - t) + v } else { (v - t) + total };
            total = t;
        }
    }
    (total + carry) / (a.len() as f64 * b.len() as f64)
}

/// Biased (V-statistic) squared MMD with a Gaussian kernel, clamped at 0.
pub fn mmd(xs: &Matrix, xt: &Matrix, cfg: &MmdConfig) -> Result<f64> {
    check_pair(xs, xt)?;
    let sigma = cfg.resolve(xs, xt)?;
    Ok(mmd_with_sigma(xs, xt, sigma))
}

pub(crate) fn mmd_with_sigma(xs: &Matrix, xt: &Matrix, sigma: f64) -> f64 {
    let (a, b) = canonical(xs, xt);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let value = mean_kernel(&a, &a, inv) + mean_kernel(&b, &b, inv) - 2.0 * mean_kernel(&a, &b, inv);
    value.max(0.0)
}

/// Unclamped squared MMD and its gradient with respect to every row of both
/// samples, for a fixed bandwidth.
pub fn mmd_with_grad(zs: &Matrix, zt: &Matrix, sigma: f64) -> Result<(f64, Matrix, Matrix)> {
    check_pair(zs, zt)?;
    let (ns, nt) = (zs.rows() as f64, zt.rows() as f64);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let inv_sq = 1.0 / (sigma * sigma);
    let mut gs = Matrix::zeros(zs.rows(), zs.cols());
    let mut gt = Matrix::zeros(zt.rows(), zt.cols());
    let (mut kss, mut ktt, mut kst) = (0.0, 0.0, 0.0);

    // ∂k(a, b)/∂a = −k(a, b)·(a − b)/σ²
    let within = |z: &Matrix, g: &mut Matrix, n: f64| {
        let mut sum = 0.0;
        let coeff = 2.0 / (n * n);
        for i in 0..z.rows() {
            for j in 0..z.rows() {
                let k = kernel(z.row(i), z.row(j), inv);
                sum += k;
                let scale = -coeff * k * inv_sq;
                for (c, gv) in g.row_mut(i).iter_mut().enumerate() {
                    *gv += scale * (z[(i, c)] - z[(j, c)]);
                }
            }
        }
        sum / (n * n)
    };
    kss += within(zs, &mut gs, ns);
    ktt += within(zt, &mut gt, nt);

    let coeff = 2.0 / (ns * nt);
    for i in 0..zs.rows() {
        for j in 0..zt.rows() {
            let k = kernel(zs.row(i), zt.row(j), inv);
            kst += k;
            let scale = coeff * k * inv_sq;
            for c in 0..zs.cols() {
                let d = zs[(i, c)] - zt[(j, c)];
                gs.row_mut(i)[c] += scale * d;
                gt.row_mut(j)[c] -= scale * d;
            }
        }
    }
    let value = kss + ktt - 2.0 * kst / (ns * nt);
    Ok((value, gs, gt))
}

/// Median pairwise Euclidean distance over the pooled sample.
pub fn median_bandwidth(xs: &Matrix, xt: &Matrix) -> Result<f64> {
    if xs.cols() != xt.cols() {
        return Err(Error::shape(alloc::format!("samples have {} and {} columns", xs.cols(), xt.cols())));
    }
    let (a, b) = canonical(xs, xt);
    let pooled: Vec<&[f64]> = a.into_iter().chain(b).collect();
    let n = pooled.len();
    if n < 2 {
        return Err(Error::Empty("median bandwidth needs at least two points".into()));
    }
    let points: Vec<&[f64]> = if n > MEDIAN_SAMPLE_CAP {
        (0..MEDIAN_SAMPLE_CAP).map(|i| pooled[i * n / MEDIAN_SAMPLE_CAP]).collect()
    } else {
        pooled
    };
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(libm::sqrt(sq_dist(points[i], points[j])));
        }
    }
    let median = median_of(&mut dists);
    if dists.iter().all(|d| *d == 0.0) {
        log::warn!("median bandwidth: all {} pooled points are identical", points.len());
    }
    Ok(median.max(MIN_BANDWIDTH))
}

fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    }
}

/// Relevance of a client sample to the reference: `exp(−MMD)` in (0, 1].
pub fn relevance(client: &Matrix, reference: &Matrix, cfg: &MmdConfig) -> Result<f64> {
    Ok(libm::exp(-mmd(client, reference, cfg)?))
}
