use alloc::format;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mmd::{gaussian_kernel, MmdConfig};
use crate::error::{Error, Result};
use crate::linalg::{generalized_eigh, Matrix};
use crate::rng;
use crate::thermal::subsample_indices;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TcaConfig {
    /// Number of transfer components kept.
    pub components: usize,
    /// Regularizer added to the domain-distance term.
    pub mu: f64,
    pub bandwidth: MmdConfig,
    /// Each domain is subsampled to at most this many points before fitting.
    pub max_per_domain: usize,
}

impl Default for TcaConfig {
    fn default() -> Self {
        Self { components: 8, mu: 1.0, bandwidth: MmdConfig::MedianHeuristic, max_per_domain: 200 }
    }
}

/// A fitted transfer-component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcaMap {
    /// Pooled source-then-target points the kernel is evaluated against.
    pub training_points: Matrix,
    /// `n × m` projection; columns are transfer components.
    pub w: Matrix,
    pub sigma: f64,
    pub mu: f64,
    pub m: usize,
    pub eigenvalues: Vec<f64>,
}

/// The two matrices of the TCA eigenproblem `A·w = λ·B·w` for the pooled
/// kernel `k`: `A = K·H·K` (variance kept) and `B = K·L·K + μI` (domain
/// distance plus regularizer).
pub fn tca_system(k: &Matrix, n_source: usize, mu: f64) -> Result<(Matrix, Matrix)> {
    let n = k.rows();
    if n_source == 0 || n_source >= n {
        return Err(Error::config(format!("need points from both domains, got {n_source} of {n}")));
    }
    let n_target = n - n_source;
    // L = e·eᵀ with e = (1/ns, …, −1/nt, …), so K·L·K = (K·e)(K·e)ᵀ.
    let e: Vec<f64> =
        (0..n).map(|i| if i < n_source { 1.0 / n_source as f64 } else { -1.0 / n_target as f64 }).collect();
    let ke: Vec<f64> = (0..n).map(|i| crate::linalg::dot(k.row(i), &e)).collect();
    let b = Matrix::from_fn(n, n, |i, j| ke[i] * ke[j] + if i == j { mu } else { 0.0 });

    // K·H = K − rowmean(K)·1ᵀ
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).iter().sum::<f64>() / n as f64).collect();
    let kh = Matrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i]);
    let a = kh.matmul(k)?.symmetrized();
    Ok((a, b))
}

pub fn tca_fit(xs: &Matrix, xt: &Matrix, m: usize, mu: f64, cfg: &MmdConfig) -> Result<TcaMap> {
    if xs.rows() == 0 || xt.rows() == 0 {
        return Err(Error::Empty("tca needs points from both domains".into()));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::config(format!("mu must be > 0, got {mu}")));
    }
    let pooled = xs.vstack(xt)?;
    let n = pooled.rows();
    if m == 0 || m > n {
        return Err(Error::config(format!("component count {m} must be in 1..={n}")));
    }
    if (1..n).all(|r| pooled.row(r) == pooled.row(0)) {
        return Err(Error::DegenerateKernel);
    }
    let sigma = cfg.resolve(xs, xt)?;
    let k = gaussian_kernel(&pooled, &pooled, sigma)?;
    let (a, b) = tca_system(&k, xs.rows(), mu)?;
    let eig = generalized_eigh(&a, &b, m)?;
    Ok(TcaMap { training_points: pooled, w: eig.vectors, sigma, mu, m, eigenvalues: eig.values })
}

/// Fits on seeded subsamples of at most `cfg.max_per_domain` points per
/// domain.
pub fn tca_fit_subsampled(xs: &Matrix, xt: &Matrix, cfg: &TcaConfig, seed: u64) -> Result<TcaMap> {
    let s = xs.select_rows(&subsample_indices(xs.rows(), cfg.max_per_domain, rng::derive_seed(seed, 1)));
    let t = xt.select_rows(&subsample_indices(xt.rows(), cfg.max_per_domain, rng::derive_seed(seed, 2)));
    tca_fit(&s, &t, cfg.components, cfg.mu, &cfg.bandwidth)
}

/// Projects `x` onto the transfer components: `k(x, training_points)·W`.
pub fn tca_transform(map: &TcaMap, x: &Matrix) -> Result<Matrix> {
    if x.cols() != map.training_points.cols() {
        return Err(Error::shape(format!(
            "tca map was fitted on {} columns, got {}",
            map.training_points.cols(),
            x.cols()
        )));
    }
    Ok(gaussian_kernel(x, &map.training_points, map.sigma)?.matmul(&map.w)?)
}

/// A seeded 2-D domain-shift pair: a standard Gaussian source and a target
/// shifted by (1.5, 1.0) with its second axis stretched by 1.5.
pub fn shifted_gaussian_pair(n: usize, seed: u64) -> (Matrix, Matrix) {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng::stream(seed, "shifted-gaussians");
    let xs = Matrix::from_fn(n, 2, |_, _| unit.sample(&mut rng));
    let xt = Matrix::from_fn(n, 2, |_, c| if c == 0 { 1.5 + unit.sample(&mut rng) } else { 1.0 + 1.5 * unit.sample(&mut rng) });
    (xs, xt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transfer::mmd;
    use alloc::vec;

    #[test]
    fn identical_domains_embed_identically() {
        let (xs, _) = shifted_gaussian_pair(30, 4);
        let map = tca_fit(&xs, &xs, 4, 1.0, &MmdConfig::MedianHeuristic).unwrap();
        let zs = tca_transform(&map, &xs).unwrap();
        assert!(mmd(&zs, &zs.clone(), &MmdConfig::MedianHeuristic).unwrap() < 1e-8);
    }

    #[test]
    fn shifted_gaussians_get_closer() {
        for seed in 0..5 {
            let (xs, xt) = shifted_gaussian_pair(100, seed);
            let map = tca_fit(&xs, &xt, 4, 1.0, &MmdConfig::MedianHeuristic).unwrap();
            let before = mmd(&xs, &xt, &MmdConfig::MedianHeuristic).unwrap();
            let after = mmd(
                &tca_transform(&map, &xs).unwrap(),
                &tca_transform(&map, &xt).unwrap(),
                &MmdConfig::MedianHeuristic,
            )
            .unwrap();
            assert!(after < before, "seed {seed}: {after} >= {before}");
        }
    }

    #[test]
    fn full_rank_fit_satisfies_eigen_equation() {
        let (xs, xt) = shifted_gaussian_pair(8, 9);
        let map = tca_fit(&xs, &xt, 16, 1e3, &MmdConfig::Sigma(1.0)).unwrap();
        let k = gaussian_kernel(&map.training_points, &map.training_points, 1.0).unwrap();
        let (a, b) = tca_system(&k, 8, 1e3).unwrap();
        for j in 0..16 {
            let w = Matrix::column(&map.w.col_vec(j));
            let lhs = a.matmul(&w).unwrap();
            let rhs = b.matmul(&w).unwrap().scale(map.eigenvalues[j]);
            assert!(lhs.sub(&rhs).unwrap().frobenius_norm() <= 1e-6, "component {j}");
        }
    }

    #[test]
    fn training_points_map_to_kernel_times_w() {
        let (xs, xt) = shifted_gaussian_pair(10, 1);
        let map = tca_fit(&xs, &xt, 3, 1.0, &MmdConfig::MedianHeuristic).unwrap();
        let k = gaussian_kernel(&map.training_points, &map.training_points, map.sigma).unwrap();
        assert_eq!(tca_transform(&map, &map.training_points).unwrap(), k.matmul(&map.w).unwrap());
    }

    #[test]
    fn duplicate_rows_map_to_duplicate_outputs() {
        let (xs, xt) = shifted_gaussian_pair(10, 2);
        let map = tca_fit(&xs, &xt, 2, 1.0, &MmdConfig::MedianHeuristic).unwrap();
        let z = tca_transform(&map, &xs.select_rows(&[3, 3])).unwrap();
        assert_eq!(z.row(0), z.row(1));
    }

    #[test]
    fn single_point_map_is_monotone_in_distance() {
        let map = TcaMap {
            training_points: Matrix::new(1, 2, vec![0.0, 0.0]).unwrap(),
            w: Matrix::new(1, 1, vec![2.0]).unwrap(),
            sigma: 1.0,
            mu: 1.0,
            m: 1,
            eigenvalues: vec![1.0],
        };
        let x = Matrix::from_fn(5, 2, |r, c| if c == 0 { r as f64 * 0.5 } else { 0.0 });
        let z = tca_transform(&map, &x).unwrap();
        for r in 0..5 {
            let d = r as f64 * 0.5;
            assert!((z[(r, 0)] - 2.0 * libm::exp(-d * d / 2.0)).abs() < 1e-15);
        }
        assert!((1..5).all(|r| z[(r, 0)] < z[(r - 1, 0)]));
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let same = Matrix::from_fn(3, 2, |_, _| 1.0);
        assert_eq!(tca_fit(&same, &same, 1, 1.0, &MmdConfig::MedianHeuristic), Err(Error::DegenerateKernel));
        let (xs, xt) = shifted_gaussian_pair(3, 0);
        assert!(tca_fit(&xs, &xt, 7, 1.0, &MmdConfig::MedianHeuristic).is_err());
        assert!(tca_fit(&xs, &xt, 2, 0.0, &MmdConfig::MedianHeuristic).is_err());
        let map = tca_fit(&xs, &xt, 2, 1.0, &MmdConfig::MedianHeuristic).unwrap();
        assert!(tca_transform(&map, &Matrix::zeros(2, 3)).is_err());
    }
}
