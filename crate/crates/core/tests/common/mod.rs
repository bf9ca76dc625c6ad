#![allow(dead_code)]

use glacier_da::config::RunConfig;
use glacier_da::enkf::{self, FilterConfig, ObservationSet};
use glacier_da::experiments::NoiseModel;
use glacier_da::osse::TwinSetup;
use nalgebra::{DMatrix, DVector};

/// Scalar linear-Gaussian system `x' = a x + w`, `y = x + v`.
pub struct Scalar {
    pub a: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
    pub ys: Vec<f64>,
}

impl Scalar {
    pub fn standard() -> Self {
        Self {
            a: 0.9,
            q: 0.2,
            r: 0.5,
            m0: 1.0,
            p0: 1.0,
            ys: vec![1.3, 0.7, 1.1, 1.6, 0.9, 1.2, 1.4, 0.8, 1.0, 1.5],
        }
    }

    /// Textbook Kalman filter, one observation per unit step.
    pub fn kalman(&self) -> Vec<(f64, f64)> {
        let (mut m, mut p) = (self.m0, self.p0);
        self.ys
            .iter()
            .map(|&y| {
                m *= self.a;
                p = self.a * self.a * p + self.q;
                let k = p / (p + self.r);
                m += k * (y - m);
                p *= 1.0 - k;
                (m, p)
            })
            .collect()
    }

    /// Stochastic EnKF posterior mean and variance after each observation.
    pub fn enkf(&self, n: usize, seed: u64) -> Vec<(f64, f64)> {
        let mut cfg = FilterConfig::new(n, seed, 1);
        cfg.model_noise_cov = DMatrix::from_element(1, 1, self.q);
        let ens = enkf::init_ensemble(&[self.m0], &[self.p0.sqrt()], 0.0, &cfg).unwrap();
        let a = self.a;
        let prop = move |x: &mut [f64], _t0: f64, _t1: f64| -> glacier_da::Result<()> {
            x[0] *= a;
            Ok(())
        };
        let times: Vec<f64> = (0..=self.ys.len()).map(|k| k as f64).collect();
        let obs: Vec<ObservationSet> = self
            .ys
            .iter()
            .enumerate()
            .map(|(k, &y)| {
                ObservationSet::identity(
                    DVector::from_element(1, y),
                    DMatrix::from_element(1, 1, self.r),
                    (k + 1) as f64,
                )
            })
            .collect();
        enkf::assimilation_cycle(ens, &prop, &times, &obs, &cfg, false)
            .unwrap()
            .into_iter()
            .skip(1)
            .map(|c| (c.mean[0], c.covariance[(0, 0)]))
            .collect()
    }
}

pub fn default_setup() -> (TwinSetup, NoiseModel) {
    let cfg = RunConfig::defaults();
    (cfg.twin_setup(), cfg.schedule.noise)
}

pub fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

/// Self-convergence order from end states at `dt`, `dt/2`, `dt/4`.
pub fn convergence_order(coarse: f64, mid: f64, fine: f64) -> f64 {
    ((coarse - mid) / (mid - fine)).abs().log2()
}
