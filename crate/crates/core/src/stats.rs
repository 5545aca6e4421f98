//! Small sample-statistics helpers shared by the simulators and probes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }

    /// Two-sided normal-approximation interval at `z` standard errors.
    pub fn interval(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.stderr, self.mean + z * self.stderr)
    }
}

/// Binomial proportion with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub fraction: f64,
    pub stderr: f64,
}

impl Proportion {
    pub fn new(successes: usize, trials: usize) -> Self {
        let fraction = if trials == 0 {
            f64::NAN
        } else {
            successes as f64 / trials as f64
        };
        let stderr = if trials == 0 {
            f64::NAN
        } else {
            (fraction * (1.0 - fraction) / trials as f64).sqrt()
        };
        Self {
            successes,
            trials,
            fraction,
            stderr,
        }
    }
}

/// z-value of a two-sided 99% normal interval.
pub const Z99: f64 = 2.575_829_303_548_901;
