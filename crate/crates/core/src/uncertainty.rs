//! Ellipsoidal uncertainty tubes: `Σ_{k+1} = A_k Σ_k A_kᵀ + C_k W_k C_kᵀ`.

use crate::dynamics::DiscreteStep;
use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Eigenvalues down to this (negative) level are clamped to zero.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UncertaintyError {
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix has eigenvalue {0:.3e} below tolerance")]
    IndefiniteBeyondTolerance(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric PSD square root.
pub fn psd_sqrt(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>, UncertaintyError> {
    if !sigma.is_square() {
        return Err(UncertaintyError::DimensionMismatch(format!("{}x{} is not square", sigma.nrows(), sigma.ncols())));
    }
    let scale = sigma.amax().max(1.0);
    let asym = (sigma - sigma.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(UncertaintyError::NotSymmetric(asym));
    }
    if sigma.iter().all(|&v| v == 0.0) {
        return Ok(sigma.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(sigma));
    let lmin = eig.eigenvalues.min();
    if lmin < -PSD_TOL {
        return Err(UncertaintyError::IndefiniteBeyondTolerance(lmin));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok(symmetrize(&root))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTube {
    pub sigma0: DMatrix<f64>,
    /// Process-noise shape per interval, `N` entries.
    pub w: Vec<DMatrix<f64>>,
    /// `Σ_0..Σ_N`; just `[Σ_0]` before propagation.
    pub sigma: Vec<DMatrix<f64>>,
}

impl UncertaintyTube {
    pub fn new(sigma0: DMatrix<f64>, w: Vec<DMatrix<f64>>) -> Self {
        Self { sigma: vec![sigma0.clone()], sigma0, w }
    }

    pub fn zero(nx: usize, n: usize) -> Self {
        Self::new(DMatrix::zeros(nx, nx), vec![DMatrix::zeros(nx, nx); n])
    }

    pub fn horizon(&self) -> usize {
        self.w.len()
    }

    pub fn is_zero(&self) -> bool {
        self.sigma0.iter().all(|&v| v == 0.0) && self.w.iter().all(|w| w.iter().all(|&v| v == 0.0))
    }

    /// Same tube with every shape matrix scaled by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            sigma0: &self.sigma0 * s,
            w: self.w.iter().map(|w| w * s).collect(),
            sigma: self.sigma.iter().map(|m| m * s).collect(),
        }
    }
}

/// Forward pass of the linearized ellipsoid dynamics along `steps`.
pub fn propagate(tube: &UncertaintyTube, steps: &[DiscreteStep]) -> Result<UncertaintyTube, UncertaintyError> {
    if steps.len() != tube.w.len() {
        return Err(UncertaintyError::DimensionMismatch(format!(
            "{} steps for {} noise matrices",
            steps.len(),
            tube.w.len()
        )));
    }
    let nx = tube.sigma0.nrows();
    let mut sigma = Vec::with_capacity(steps.len() + 1);
    let s0 = symmetrize(&tube.sigma0);
    sigma.push(s0);
    for (k, (step, w)) in steps.iter().zip(&tube.w).enumerate() {
        if step.a.nrows() != nx || step.c.nrows() != nx || w.nrows() != step.c.ncols() {
            return Err(UncertaintyError::DimensionMismatch(format!("stage {k}")));
        }
        let prev = &sigma[k];
        let next = &step.a * prev * step.a.transpose() + &step.c * w * step.c.transpose();
        sigma.push(symmetrize(&next));
    }
    Ok(UncertaintyTube { sigma0: tube.sigma0.clone(), w: tube.w.clone(), sigma })
}

/// Process noise specification.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    /// Isotropic noise given as the max eigenvalue for a 50 ms interval, scaled linearly with dt.
    Per50ms { w_per_50ms: f64 },
    /// Full matrix, used as is for every interval.
    Full { w: Vec<Vec<f64>> },
}

impl NoiseSpec {
    pub fn matrix(&self, nx: usize, dt: f64) -> Result<DMatrix<f64>, UncertaintyError> {
        match self {
            NoiseSpec::Per50ms { w_per_50ms } => Ok(DMatrix::identity(nx, nx) * (w_per_50ms * dt / 0.05)),
            NoiseSpec::Full { w } => {
                if w.len() != nx || w.iter().any(|r| r.len() != nx) {
                    return Err(UncertaintyError::DimensionMismatch(format!("W must be {nx}x{nx}")));
                }
                Ok(DMatrix::from_fn(nx, nx, |i, j| w[i][j]))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step(a: DMatrix<f64>, c: DMatrix<f64>) -> DiscreteStep {
        let n = a.nrows();
        DiscreteStep { x_next: nalgebra::DVector::zeros(n), a, b: DMatrix::zeros(n, 2), c }
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &l * l.transpose()
    }

    #[test]
    fn additive_recursion() {
        let n = 4;
        let tube = UncertaintyTube::new(DMatrix::zeros(n, n), vec![DMatrix::identity(n, n) * 0.01; 6]);
        let steps = vec![step(DMatrix::identity(n, n), DMatrix::identity(n, n)); 6];
        let out = propagate(&tube, &steps).unwrap();
        for (k, s) in out.sigma.iter().enumerate() {
            assert!((s - DMatrix::identity(n, n) * (0.01 * k as f64)).amax() < 1e-15);
        }
    }

    #[test]
    fn contraction() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s0 = random_psd(&mut rng, n);
        let tube = UncertaintyTube::new(s0.clone(), vec![DMatrix::zeros(n, n); 5]);
        let steps = vec![step(DMatrix::identity(n, n) * 0.5, DMatrix::identity(n, n)); 5];
        let out = propagate(&tube, &steps).unwrap();
        for (k, s) in out.sigma.iter().enumerate() {
            let expected = symmetrize(&s0) * 0.25f64.powi(k as i32);
            assert!((s - expected).amax() < 1e-14);
        }
    }

    #[test]
    fn matches_direct_recomputation() {
        let n = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let steps: Vec<_> = (0..8)
            .map(|_| step(DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)), DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))))
            .collect();
        let w: Vec<_> = (0..8).map(|_| random_psd(&mut rng, n)).collect();
        let s0 = random_psd(&mut rng, n);
        let out = propagate(&UncertaintyTube::new(s0.clone(), w.clone()), &steps).unwrap();
        let mut s = symmetrize(&s0);
        for k in 0..8 {
            assert_eq!(out.sigma[k], s);
            s = symmetrize(&(&steps[k].a * &s * steps[k].a.transpose() + &steps[k].c * &w[k] * steps[k].c.transpose()));
            let growth = &out.sigma[k + 1] - &steps[k].a * &out.sigma[k] * steps[k].a.transpose();
            assert!(min_eigenvalue(&growth) >= -1e-10);
            assert!((&out.sigma[k + 1] - out.sigma[k + 1].transpose()).amax() <= 1e-12);
        }
        assert_eq!(out.sigma[8], s);
    }

    #[test]
    fn dimension_mismatch() {
        let tube = UncertaintyTube::zero(3, 4);
        let steps = vec![step(DMatrix::identity(3, 3), DMatrix::identity(3, 3)); 3];
        assert!(matches!(propagate(&tube, &steps), Err(UncertaintyError::DimensionMismatch(_))));
    }

    #[test]
    fn sqrt_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 0.0]));
        let r = psd_sqrt(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 0.0]))).amax() < 1e-14);
        let i = DMatrix::<f64>::identity(4, 4);
        assert!((psd_sqrt(&i).unwrap() - &i).amax() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let s = random_psd(&mut rng, 6);
            let r = psd_sqrt(&s).unwrap();
            assert!((&r * &r - &s).amax() <= 1e-10);
            assert!(min_eigenvalue(&r) >= -1e-12);
        }
    }

    #[test]
    fn sqrt_errors() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(psd_sqrt(&asym), Err(UncertaintyError::NotSymmetric(_))));
        let indef = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(psd_sqrt(&indef), Err(UncertaintyError::IndefiniteBeyondTolerance(_))));
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let r = psd_sqrt(&tiny).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn linear_system_samples_stay_in_tube() {
        // exact for linear dynamics: x+ = A x + C w with w ∈ E(0, W)
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.8..0.8));
        let c = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let w = random_psd(&mut rng, n) * 0.1;
        let s0 = random_psd(&mut rng, n) * 0.1;
        let horizon = 6;
        let tube = UncertaintyTube::new(s0.clone(), vec![w.clone(); horizon]);
        let out = propagate(&tube, &vec![step(a.clone(), c.clone()); horizon]).unwrap();
        let (s0_root, w_root) = (psd_sqrt(&s0).unwrap(), psd_sqrt(&w).unwrap());
        let unit = |rng: &mut ChaCha8Rng| {
            let v = nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let norm = v.norm();
            v / norm
        };
        for _ in 0..1000 {
            // every sequence in the joint ellipsoid: split a unit vector across the stages
            let weights: Vec<f64> = (0..=horizon).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = weights.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut x: nalgebra::DVector<f64> = &s0_root * unit(&mut rng) * (weights[0] / total);
            for k in 0..horizon {
                x = &a * x + &c * (&w_root * unit(&mut rng) * (weights[k + 1] / total));
                let inv = out.sigma[k + 1].clone().try_inverse().unwrap();
                let m = (x.transpose() * inv * &x)[(0, 0)];
                assert!(m <= 1.0 + 1e-9, "stage {}: {}", k + 1, m);
            }
        }
    }

    #[test]
    fn noise_spec_scaling() {
        let spec = NoiseSpec::Per50ms { w_per_50ms: 2.5e-4 };
        let w = spec.matrix(5, 0.2).unwrap();
        assert!((w[(0, 0)] - 1e-3).abs() < 1e-18);
        assert_eq!(w[(0, 1)], 0.0);
    }
}
