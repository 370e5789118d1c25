use serde::Serialize;

use super::DenoiserError;

pub const DEFAULT_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Variance-preserving schedule: `z_t = α_t z + σ_t ε` with `α_t² + σ_t² = 1`.
///
/// Step 0 is noise-free; betas rise linearly from `BETA_START` at step 1 to
/// `BETA_END` at step `T − 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS)
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Self {
        assert!(steps >= 2, "schedule needs at least two steps");
        let mut betas = vec![0.0; steps];
        for (t, b) in betas.iter_mut().enumerate().skip(1) {
            let frac = if steps > 2 { (t - 1) as f64 / (steps - 2) as f64 } else { 0.0 };
            *b = BETA_START + frac * (BETA_END - BETA_START);
        }
        let mut cum = 1.0;
        let mut alphas = Vec::with_capacity(steps);
        let mut sigmas = Vec::with_capacity(steps);
        for &b in &betas {
            cum *= 1.0 - b;
            let a = cum.sqrt();
            alphas.push(a);
            sigmas.push((1.0 - a * a).max(0.0).sqrt());
        }
        Self {
            betas,
            alphas,
            sigmas,
        }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn max_level(&self) -> usize {
        self.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t]
    }

    /// Variance of the noise injected at level `δ`.
    pub fn injected_variance(&self, delta: usize) -> Result<f64, DenoiserError> {
        let t = self.noise_level_to_timestep(delta)?;
        Ok(self.sigmas[t] * self.sigmas[t])
    }

    /// Noise levels map one-to-one onto schedule indices.
    pub fn noise_level_to_timestep(&self, delta: usize) -> Result<usize, DenoiserError> {
        if delta > self.max_level() {
            return Err(DenoiserError::InvalidNoiseLevel {
                delta,
                max: self.max_level(),
            });
        }
        Ok(delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_identities() {
        let s = NoiseSchedule::default();
        assert_eq!(s.len(), 1000);
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        for t in 0..s.len() {
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-12);
            if t > 0 {
                assert!(s.alpha(t) < s.alpha(t - 1));
                assert!(s.sigma(t) > s.sigma(t - 1));
            }
        }
        assert!((s.betas[1] - BETA_START).abs() < 1e-18);
        assert!((s.betas[999] - BETA_END).abs() < 1e-15);
    }

    #[test]
    fn noise_level_mapping() {
        let s = NoiseSchedule::default();
        assert_eq!(s.noise_level_to_timestep(0).unwrap(), 0);
        assert_eq!(s.noise_level_to_timestep(200).unwrap(), 200);
        assert!(s.noise_level_to_timestep(1000).is_err());
    }
}
