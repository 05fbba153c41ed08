use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ACTION_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    OrnsteinUhlenbeck,
    Gaussian,
}

/// Exploration noise configuration. `sigma` decays linearly from
/// `sigma_start` to `sigma_end` over the training budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub kind: NoiseKind,
    pub theta: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            kind: NoiseKind::OrnsteinUhlenbeck,
            theta: 0.15,
            sigma_start: 0.2,
            sigma_end: 0.02,
        }
    }
}

impl NoiseParams {
    /// Linear schedule; `progress` is clamped to `[0, 1]`.
    pub fn sigma_at(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.sigma_start + (self.sigma_end - self.sigma_start) * p
    }
}

/// Per-run exploration process in the unit action space.
#[derive(Clone, Debug)]
pub struct NoiseState {
    pub kind: NoiseKind,
    pub theta: f64,
    pub sigma: f64,
    state: [f64; ACTION_DIM],
    rng: ChaCha8Rng,
}

impl NoiseState {
    pub fn new(params: &NoiseParams, seed: u64) -> Self {
        NoiseState {
            kind: params.kind,
            theta: params.theta,
            sigma: params.sigma_start.max(0.0),
            state: [0.0; ACTION_DIM],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn set_sigma(&mut self, sigma: f64) {
        self.sigma = sigma.max(0.0);
    }

    /// Zero the OU state (start of an episode).
    pub fn reset(&mut self) {
        self.state = [0.0; ACTION_DIM];
    }

    pub fn state(&self) -> [f64; ACTION_DIM] {
        self.state
    }

    /// Advance the process one step and return the perturbation.
    pub fn sample(&mut self) -> [f64; ACTION_DIM] {
        for x in self.state.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *x = match self.kind {
                // dx = theta * (0 - x) + sigma * N(0, 1), unit time step
                NoiseKind::OrnsteinUhlenbeck => *x - self.theta * *x + self.sigma * z,
                NoiseKind::Gaussian => self.sigma * z,
            };
        }
        self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_silent() {
        for kind in [NoiseKind::OrnsteinUhlenbeck, NoiseKind::Gaussian] {
            let params = NoiseParams {
                kind,
                sigma_start: 0.0,
                ..NoiseParams::default()
            };
            let mut n = NoiseState::new(&params, 3);
            for _ in 0..100 {
                assert_eq!(n.sample(), [0.0; ACTION_DIM]);
            }
        }
    }

    #[test]
    fn ou_reverts_towards_zero() {
        let mut n = NoiseState::new(&NoiseParams::default(), 1);
        n.state = [5.0; ACTION_DIM];
        n.set_sigma(0.0);
        let s = n.sample();
        assert!(s.iter().all(|&v| (v - 5.0 * 0.85).abs() < 1e-12));
    }

    #[test]
    fn ou_stationary_spread() {
        // Stationary variance of x' = (1 - theta) x + sigma z is
        // sigma^2 / (1 - (1 - theta)^2).
        let params = NoiseParams::default();
        let mut n = NoiseState::new(&params, 9);
        let (mut sum, mut sq, mut count) = (0.0, 0.0, 0.0);
        for i in 0..60_000 {
            let x = n.sample()[0];
            if i >= 1_000 {
                sum += x;
                sq += x * x;
                count += 1.0;
            }
        }
        let var = sq / count - (sum / count).powi(2);
        let expected = 0.04 / (1.0 - 0.85f64.powi(2));
        assert!((var - expected).abs() / expected < 0.1, "{var} vs {expected}");
    }

    #[test]
    fn linear_schedule() {
        let p = NoiseParams::default();
        assert_eq!(p.sigma_at(0.0), 0.2);
        assert!((p.sigma_at(1.0) - 0.02).abs() < 1e-15);
        assert!((p.sigma_at(0.5) - 0.11).abs() < 1e-15);
        assert!((p.sigma_at(7.0) - 0.02).abs() < 1e-15);
    }
}
