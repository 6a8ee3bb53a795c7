#![allow(dead_code)]

use std::time::Instant;

use clqr_core::lti_sim::{
    exploration_noise, simulate, LtiSystem, NoiseConfig, SnapshotRecord, TimeGrid,
};
use clqr_core::policy::LqrWeights;
use clqr_core::{Clock, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct WallClock(Instant);

impl WallClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Gaussian `A` shifted so its spectral abscissa is `-margin`, Gaussian `B`.
pub fn stable_system(rng: &mut ChaCha8Rng, n: usize, m: usize, margin: f64) -> LtiSystem {
    let a = gaussian(rng, n, n) / (n as f64).sqrt();
    let abscissa = clqr_core::linalg::spectral_abscissa(&a).unwrap();
    let a = a - DMatrix::identity(n, n) * (abscissa + margin);
    LtiSystem::new(a, gaussian(rng, n, m), None).unwrap()
}

pub fn unit_weights(n: usize, m: usize) -> LqrWeights {
    LqrWeights::new(DMatrix::identity(n, n), DMatrix::identity(m, m)).unwrap()
}

pub fn unit_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &v / v.norm()
}

/// Exploration over `intervals` coarse steps of `dt`, each split into
/// `substeps` RK4 steps, with noise on for the whole run.
pub fn explore(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    seed: u64,
    intervals: usize,
    dt: f64,
    substeps: usize,
) -> SnapshotRecord {
    let horizon = dt * intervals as f64;
    let cfg = NoiseConfig {
        num_sines: 30,
        beta: 1.0,
        freq_range: [-8.0, 8.0],
        window: [0.0, horizon + dt],
        seed,
        channels: None,
    };
    let noise = exploration_noise(&cfg, sys.m()).unwrap();
    let grid = TimeGrid::uniform(dt, intervals, substeps).unwrap();
    simulate(sys, &noise, x0, &grid).unwrap()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
