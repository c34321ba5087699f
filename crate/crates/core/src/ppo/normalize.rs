use serde::{Deserialize, Serialize};

/// Floor for the running standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension running mean and variance (Welford).
///
/// Updated only while collecting training rollouts; evaluation reads the
/// frozen values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        RunningStats {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, obs: &[f64]) {
        self.count += 1.0;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(obs) {
            let d = x - *m;
            *m += d / self.count;
            *s += d * (x - *m);
        }
    }

    /// Population standard deviation per dimension.
    pub fn std(&self) -> Vec<f64> {
        if self.count == 0.0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|s| (s / self.count).sqrt()).collect()
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        let std = self.std();
        obs.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((x, m), s)| (x - m) / s.max(STD_FLOOR))
            .collect()
    }
}
