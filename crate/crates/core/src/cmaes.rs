//! (μ/μ_w, λ) CMA-ES with rank-one and rank-μ covariance updates and
//! cumulative step-size adaptation. Fitness is maximized.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Smallest eigenvalue kept after a covariance repair.
const MIN_EIGENVALUE: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CmaConfig {
    pub dimension: usize,
    pub population_size: usize,
    /// Defaults to the zero vector when `None`.
    #[serde(default)]
    pub initial_mean: Option<Vec<f64>>,
    pub initial_step_size: f64,
}

impl CmaConfig {
    pub fn new(dimension: usize, population_size: usize, initial_step_size: f64) -> Self {
        Self {
            dimension,
            population_size,
            initial_mean: None,
            initial_step_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(invalid("CMA-ES dimension must be at least 1"));
        }
        if self.population_size < 2 {
            return Err(invalid("CMA-ES population size must be at least 2"));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return Err(invalid("CMA-ES initial step size must be positive"));
        }
        if let Some(m) = &self.initial_mean {
            if m.len() != self.dimension {
                return Err(invalid(format!(
                    "initial mean has {} entries, dimension is {}",
                    m.len(),
                    self.dimension
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(invalid("initial mean must be finite"));
            }
        }
        Ok(())
    }
}

/// Strategy parameters derived from `n` and `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl Parameters {
    pub fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaState {
    pub params: Parameters,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    /// Eigenvectors of `cov` (columns).
    pub basis: DMatrix<f64>,
    /// Square roots of the eigenvalues of `cov`.
    pub scales: DVector<f64>,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub generation: u64,
    /// Covariance repairs performed so far.
    pub repairs: u64,
}

impl CmaState {
    pub fn new(cfg: &CmaConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.dimension;
        let mean = match &cfg.initial_mean {
            Some(m) => DVector::from_column_slice(m),
            None => DVector::zeros(n),
        };
        Ok(Self {
            params: Parameters::new(n, cfg.population_size),
            mean,
            sigma: cfg.initial_step_size,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            generation: 0,
            repairs: 0,
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn population_size(&self) -> usize {
        self.params.lambda
    }

    fn check_finite(&self) -> Result<()> {
        let finite = self.sigma.is_finite()
            && self.mean.iter().all(|v| v.is_finite())
            && self.cov.iter().all(|v| v.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::Numerical("CMA-ES state is not finite".into()))
        }
    }

    /// Draws `λ` candidates `m + σ·B·D·z`, `z ~ N(0, I)`.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.check_finite()?;
        let n = self.dimension();
        let bd = &self.basis * DMatrix::from_diagonal(&self.scales);
        let mut out = Vec::with_capacity(self.params.lambda);
        for _ in 0..self.params.lambda {
            let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = &self.mean + (&bd * z) * self.sigma;
            out.push(x.as_slice().to_vec());
        }
        Ok(out)
    }

    /// Updates the distribution from `λ` candidates and their fitnesses
    /// (higher is better). Ties keep the candidates' original order.
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        let p = &self.params;
        let n = self.dimension();
        if candidates.len() != p.lambda || fitness.len() != p.lambda {
            return Err(invalid(format!(
                "tell needs {} candidates and fitnesses, got {} and {}",
                p.lambda,
                candidates.len(),
                fitness.len()
            )));
        }
        if let Some(i) = fitness.iter().position(|f| !f.is_finite()) {
            return Err(Error::NonFiniteFitness {
                index: i,
                value: fitness[i],
            });
        }
        if let Some(i) = candidates.iter().position(|c| c.len() != n) {
            return Err(invalid(format!("candidate {i} has the wrong dimension")));
        }

        let mut order: Vec<usize> = (0..p.lambda).collect();
        order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]));

        let steps: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }

        self.mean += &y_w * self.sigma;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let inv_scales = self.scales.map(|d| 1.0 / d);
        let bt_y = self.basis.transpose() * &y_w;
        let c_inv_sqrt_y = &self.basis * bt_y.component_mul(&inv_scales);
        self.path_sigma = &self.path_sigma * (1.0 - p.c_sigma)
            + c_inv_sqrt_y * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();

        let gen = self.generation as f64 + 1.0;
        let ps_norm = self.path_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - p.c_sigma).powf(2.0 * gen)).sqrt()
            < (1.4 + 2.0 / (n as f64 + 1.0)) * p.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.path_c = &self.path_c * (1.0 - p.c_c) + &y_w * (h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let delta_h = (1.0 - h) * p.c_c * (2.0 - p.c_c);
        let mut cov = &self.cov * (1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h);
        cov.ger(p.c_1, &self.path_c, &self.path_c, 1.0);
        for (w, y) in p.weights.iter().zip(&steps) {
            cov.ger(p.c_mu * w, y, y, 1.0);
        }
        // Enforce exact symmetry.
        let cov = (&cov + cov.transpose()) * 0.5;

        self.sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.cov = cov;
        self.generation += 1;
        self.decompose()?;
        self.check_finite()
    }

    fn decompose(&mut self) -> Result<()> {
        let eig = SymmetricEigen::new(self.cov.clone());
        let mut values = eig.eigenvalues;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("covariance eigendecomposition failed".into()));
        }
        if values.iter().any(|&v| v <= MIN_EIGENVALUE) {
            log::warn!(
                "covariance lost positive definiteness at generation {}; clamping eigenvalues",
                self.generation
            );
            self.repairs += 1;
            values = values.map(|v| v.max(MIN_EIGENVALUE));
            self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
            self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        }
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.scales.iter().map(|d| d * d).fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(
        cfg: &CmaConfig,
        seed: u64,
        generations: usize,
        f: impl Fn(&[f64]) -> f64,
        stop: impl Fn(&CmaState, f64) -> bool,
    ) -> (CmaState, f64, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = CmaState::new(cfg).unwrap();
        let mut best = f64::NEG_INFINITY;
        for g in 0..generations {
            let xs = st.ask(&mut rng).unwrap();
            let fs: Vec<f64> = xs.iter().map(|x| f(x)).collect();
            best = fs.iter().copied().fold(best, f64::max);
            st.tell(&xs, &fs).unwrap();
            assert!(st.min_eigenvalue() > 0.0);
            if stop(&st, best) {
                return (st, best, g + 1);
            }
        }
        (st, best, generations)
    }

    fn sphere(x: &[f64]) -> f64 {
        -x.iter().map(|v| v * v).sum::<f64>()
    }

    pub(crate) fn rosenbrock(x: &[f64]) -> f64 {
        -x.windows(2)
            .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
            .sum::<f64>()
    }

    #[test]
    fn default_weights() {
        let p = Parameters::new(150, 50);
        assert_eq!(p.mu, 25);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.weights.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn sphere_converges() {
        let mut cfg = CmaConfig::new(10, 10, 0.5);
        cfg.initial_mean = Some(vec![1.0; 10]);
        for seed in 0..3 {
            let (st, _, gens) = run(&cfg, seed, 300, sphere, |s, _| s.mean.norm() < 1e-4);
            assert!(st.mean.norm() < 1e-4, "seed {seed}: {} after {gens}", st.mean.norm());
        }
    }

    #[test]
    fn rosenbrock_converges() {
        let cfg = CmaConfig::new(5, 16, 0.5);
        for seed in 0..5 {
            let (_, best, gens) = run(&cfg, seed, 2000, rosenbrock, |_, b| b > -1e-6);
            assert!(best > -1e-6, "seed {seed}: {best} after {gens}");
        }
    }

    #[test]
    fn tiny_sigma_collapses_to_mean() {
        let mut cfg = CmaConfig::new(4, 6, 1e-300);
        cfg.initial_mean = Some(vec![1.0, -2.0, 3.0, 0.5]);
        let st = CmaState::new(&cfg).unwrap();
        for x in st.ask(&mut ChaCha8Rng::seed_from_u64(0)).unwrap() {
            assert_eq!(x, vec![1.0, -2.0, 3.0, 0.5]);
        }
        assert_eq!(CmaState::new(&CmaConfig::new(150, 50, 0.1)).unwrap().ask(&mut ChaCha8Rng::seed_from_u64(0)).unwrap().len(), 50);
    }

    #[test]
    fn one_dimensional_spread() {
        let st = CmaState::new(&CmaConfig::new(1, 10_000, 0.1)).unwrap();
        let xs: Vec<f64> = st.ask(&mut ChaCha8Rng::seed_from_u64(3)).unwrap().into_iter().map(|v| v[0]).collect();
        let std = crate::stats::sample_std(&xs);
        assert!((std - 0.1).abs() < 0.005, "{std}");
    }

    #[test]
    fn shift_invariance() {
        let cfg = CmaConfig::new(5, 8, 0.3);
        let mut a = CmaState::new(&cfg).unwrap();
        let mut b = a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let xs = a.ask(&mut rng).unwrap();
            let fa: Vec<f64> = xs.iter().map(|x| rosenbrock(x)).collect();
            let fb: Vec<f64> = fa.iter().map(|f| f + 1234.5).collect();
            a.tell(&xs, &fa).unwrap();
            b.tell(&xs, &fb).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn equal_fitness_keeps_covariance_positive() {
        let mut st = CmaState::new(&CmaConfig::new(6, 12, 0.2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let xs = st.ask(&mut rng).unwrap();
            st.tell(&xs, &[1.0; 12]).unwrap();
            assert!(st.min_eigenvalue() > 0.0);
            assert_eq!(st.cov, st.cov.transpose());
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut st = CmaState::new(&CmaConfig::new(2, 4, 0.1)).unwrap();
        let xs = st.ask(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        match st.tell(&xs, &[0.0, 1.0, f64::NAN, 2.0]) {
            Err(Error::NonFiniteFitness { index: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(st.tell(&xs[..3], &[0.0; 3]).is_err());
        assert!(CmaState::new(&CmaConfig::new(2, 1, 0.1)).is_err());
        assert!(CmaState::new(&CmaConfig::new(2, 4, 0.0)).is_err());
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut st = CmaState::new(&CmaConfig::new(3, 6, 0.2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let xs = st.ask(&mut rng).unwrap();
            let fs: Vec<f64> = xs.iter().map(|x| sphere(x)).collect();
            st.tell(&xs, &fs).unwrap();
        }
        let back: CmaState = serde_json::from_str(&serde_json::to_string(&st).unwrap()).unwrap();
        assert_eq!(back, st);
    }
}
