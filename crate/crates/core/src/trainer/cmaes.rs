//! (μ/μ_w, λ) CMA-ES with cumulative step-size adaptation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MacaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesConfig {
    #[serde(default = "default_population")]
    pub population: usize,
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    /// Policy-update rounds each candidate drives before it is scored.
    #[serde(default = "default_rounds")]
    pub rounds_per_candidate: usize,
}

fn default_population() -> usize {
    8
}
fn default_sigma0() -> f64 {
    0.5
}
fn default_rounds() -> usize {
    5
}

impl Default for CmaesConfig {
    fn default() -> Self {
        Self {
            population: default_population(),
            sigma0: default_sigma0(),
            rounds_per_candidate: default_rounds(),
        }
    }
}

/// Search distribution `N(mean, σ² C)` plus evolution paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoeffOptimState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub sigma: f64,
    pub generation: u64,
    pub population: usize,
    sigma0: f64,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    /// Number of covariance resets after lost positive-definiteness.
    pub resets: u32,
}

impl CoeffOptimState {
    pub fn new(mean: Vec<f64>, sigma0: f64, population: usize) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(MacaError::invalid("CMA-ES needs at least one dimension"));
        }
        if population < 4 {
            return Err(MacaError::invalid(format!("population {population} below 4")));
        }
        if !(sigma0 > 0.0 && sigma0.is_finite()) || mean.iter().any(|x| !x.is_finite()) {
            return Err(MacaError::invalid("CMA-ES needs a finite mean and positive step size"));
        }
        let mu = population / 2;
        let raw: Vec<f64> = (0..mu)
            .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(Self {
            mean: DVector::from_vec(mean),
            covariance: DMatrix::identity(n, n),
            sigma: sigma0,
            generation: 0,
            population,
            sigma0,
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            resets: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn eigen(&mut self) -> (DMatrix<f64>, DVector<f64>) {
        let eig = SymmetricEigen::new(self.covariance.clone());
        let ok =
            eig.eigenvalues.iter().all(|&v| v > 0.0 && v.is_finite()) && eig.eigenvectors.iter().all(|v| v.is_finite());
        if ok {
            return (eig.eigenvectors, eig.eigenvalues.map(f64::sqrt));
        }
        log::warn!(
            "CMA-ES covariance lost positive definiteness at generation {}; resetting",
            self.generation
        );
        self.reset_distribution();
        let n = self.dim();
        (DMatrix::identity(n, n), DVector::from_element(n, 1.0))
    }

    fn reset_distribution(&mut self) {
        let n = self.dim();
        self.covariance = DMatrix::identity(n, n);
        self.p_sigma = DVector::zeros(n);
        self.p_c = DVector::zeros(n);
        self.sigma = self.sigma0;
        self.resets += 1;
    }

    /// Samples `population` candidates from the current distribution.
    pub fn ask<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Vec<f64>> {
        let (b, d) = self.eigen();
        let n = self.dim();
        (0..self.population)
            .map(|_| {
                let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let y = &b * d.component_mul(&z);
                (&self.mean + self.sigma * y).iter().copied().collect()
            })
            .collect()
    }

    /// Updates the distribution from candidates and their fitness (lower is
    /// better).
    pub fn tell(&mut self, candidates: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        let n = self.dim();
        if candidates.len() != self.population || fitness.len() != self.population {
            return Err(MacaError::shape(format!(
                "expected {} candidates and fitness values",
                self.population
            )));
        }
        if candidates.iter().any(|c| c.len() != n) {
            return Err(MacaError::shape("candidate dimension"));
        }
        if fitness.iter().any(|f| f.is_nan()) {
            return Err(MacaError::NonFinite("CMA-ES fitness".into()));
        }
        let mut order: Vec<usize> = (0..self.population).collect();
        order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));

        let old = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..self.weights.len()]
            .iter()
            .map(|&k| (DVector::from_column_slice(&candidates[k]) - &old) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w += *w * y;
        }
        self.mean = &old + self.sigma * &y_w;

        let (b, d) = self.eigen();
        let inv_sqrt = &b * DMatrix::from_diagonal(&d.map(|x| 1.0 / x)) * b.transpose();
        let cs = self.c_sigma;
        self.p_sigma = (1.0 - cs) * &self.p_sigma + (cs * (2.0 - cs) * self.mu_eff).sqrt() * (&inv_sqrt * &y_w);
        let ps_norm = self.p_sigma.norm();
        let gen = (self.generation + 1) as i32;
        let h_sigma = ps_norm / (1.0 - (1.0 - cs).powi(2 * gen)).sqrt() / self.chi_n < 1.4 + 2.0 / (n as f64 + 1.0);
        let cc = self.c_c;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = (1.0 - cc) * &self.p_c + h * (cc * (2.0 - cc) * self.mu_eff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu += *w * y * y.transpose();
        }
        let rank_one = &self.p_c * self.p_c.transpose() + (1.0 - h) * cc * (2.0 - cc) * &self.covariance;
        self.covariance = (1.0 - self.c_1 - self.c_mu) * &self.covariance + self.c_1 * rank_one + self.c_mu * rank_mu;
        // keep exact symmetry against rounding drift
        self.covariance = (&self.covariance + self.covariance.transpose()) * 0.5;

        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        self.generation += 1;
        if !self.sigma.is_finite() || self.sigma <= 0.0 || self.mean.iter().any(|x| !x.is_finite()) {
            return Err(MacaError::NonFinite("CMA-ES state".into()));
        }
        Ok(())
    }

    /// Runs one generation against `fitness`, returning the best candidate
    /// and its value.
    pub fn ask_tell<R, F>(&mut self, rng: &mut R, mut fitness: F) -> Result<(Vec<f64>, f64)>
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64]) -> Result<f64>,
    {
        let candidates = self.ask(rng);
        let values = candidates.iter().map(|c| fitness(c)).collect::<Result<Vec<_>>>()?;
        self.tell(&candidates, &values)?;
        let best = (0..values.len())
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap();
        Ok((candidates[best].clone(), values[best]))
    }

    /// Smallest covariance eigenvalue, for positive-definiteness checks.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.covariance.clone()).eigenvalues.min()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn minimize(f: impl Fn(&[f64]) -> f64, x0: Vec<f64>, gens: usize, seed: u64) -> CoeffOptimState {
        let mut state = CoeffOptimState::new(x0, 0.5, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..gens {
            state.ask_tell(&mut rng, |x| Ok(f(x))).unwrap();
        }
        state
    }

    #[test]
    fn sphere_converges() {
        let s = minimize(|x| x.iter().map(|v| v * v).sum(), vec![1.0; 6], 200, 1);
        assert!(s.mean.norm() <= 1e-6, "mean norm {}", s.mean.norm());
        assert!(s.min_eigenvalue() > 0.0);
    }

    #[test]
    fn shifted_quadratic_converges_to_shift() {
        let c = [0.3, -1.2, 2.0];
        let s = minimize(
            |x| x.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum(),
            vec![0.0; 3],
            200,
            2,
        );
        for (m, t) in s.mean.iter().zip(&c) {
            assert!((m - t).abs() < 1e-6);
        }
    }

    #[test]
    fn rosenbrock_2d() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let s = minimize(f, vec![-1.0, 1.0], 600, 3);
        assert!(
            (s.mean[0] - 1.0).abs() < 1e-3 && (s.mean[1] - 1.0).abs() < 1e-3,
            "{:?}",
            s.mean
        );
    }

    #[test]
    fn small_population_rejected() {
        assert!(CoeffOptimState::new(vec![0.0; 2], 0.5, 3).is_err());
    }

    #[test]
    fn broken_covariance_is_reset() {
        let mut s = CoeffOptimState::new(vec![0.0; 2], 0.5, 4).unwrap();
        s.covariance[(0, 0)] = -1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = s.ask(&mut rng);
        assert_eq!(c.len(), 4);
        assert_eq!(s.resets, 1);
        assert!(s.min_eigenvalue() > 0.0);
    }
}
