//! LEO double-coelliptic example shared by the integration tests.
#![allow(dead_code)]

use driftsafe::dynamics::{OrbitContext, MU_EARTH};
use driftsafe::stochastics::{GatesParams, NavProfile};
use driftsafe::uq::{DispersionConfig, Waypoint};
use nalgebra::{Matrix6, Vector3, Vector6};

pub fn leo() -> OrbitContext {
    OrbitContext::from_semimajor_axis(6_738e3, MU_EARTH).unwrap()
}

pub fn waypoints() -> Vec<Waypoint> {
    let min = 60.0;
    vec![
        Waypoint::new("CT", Vector3::new(-4000.0, -17500.0, 0.0), Some(Vector3::new(0.0, 6.849, 0.0)), None, Some(0.5 * min)),
        Waypoint::new(
            "NSR",
            Vector3::new(-1400.0, -7500.0, 0.0),
            Some(Vector3::new(0.0, 2.397, 0.0)),
            Some(35.5 * min),
            Some(0.0),
        ),
        Waypoint::new(
            "AI",
            Vector3::new(-1400.0, -750.0, 0.0),
            Some(Vector3::new(0.741, 2.716, 0.0)),
            Some(46.875 * min),
            Some(0.0),
        ),
        Waypoint::new("HP750", Vector3::new(0.0, 750.0, 0.0), Some(Vector3::zeros()), Some(36.0 * min), None),
    ]
}

/// Burn vectors (m/s) and times (min) of the published maneuver table.
pub const BURN_TABLE: [([f64; 3], f64, f64); 4] = [
    ([0.5415, 0.7494, 0.0], 0.9245, 0.5),
    ([-0.6195, 0.7345, 0.0], 0.9609, 35.5),
    ([0.739, 0.3187, 0.0], 0.8048, 82.375),
    ([0.1795, 0.4804, 0.0], 0.5129, 118.375),
];

pub fn gates() -> GatesParams {
    GatesParams { sigma_s: 2e-3, sigma_p: 3e-4, sigma_r: 3e-4, sigma_a: 3e-4 }
}

pub fn p_x0() -> Matrix6<f64> {
    let (r, v) = (40.0f64, 0.05f64);
    Matrix6::from_diagonal(&Vector6::new(r * r, r * r, r * r, v * v, v * v, v * v))
}

/// Nav error decaying from the published initial 3σ RSS (non-authoritative history).
pub fn nav() -> NavProfile {
    NavProfile::exponential_decay((233.46, 0.2249), (15.0, 0.01), 900.0, 8000.0, 60.0, 3.6 * 3600.0).unwrap()
}

pub fn config() -> DispersionConfig {
    DispersionConfig::new(p_x0(), nav(), gates())
}

/// Dispersions used by the optimization scenarios: the published initial
/// delivery error with nav held at the example's floor.
pub fn opt_config() -> DispersionConfig {
    let nav = NavProfile::isotropic(15.0, 0.01, 3.6 * 3600.0).unwrap();
    DispersionConfig::new(p_x0(), nav, gates())
}

pub mod stats {
    use driftsafe::stochastics::*;
    use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Variance of `chains` independent ECRV chains started stationary and
    /// stepped through an irregular schedule; the worst component is returned.
    pub fn ecrv_stationary_variance(chains: usize, tau: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sq = Vector6::zeros();
        for _ in 0..chains {
            let mut state = EcrvState { z: standard_normal6(&mut rng), tau };
            for dt in [10.0, 60.0, 600.0, 3600.0, 1.0, 7200.0] {
                state = ecrv_step(&state, dt, &standard_normal6(&mut rng)).unwrap();
            }
            sq += state.z.component_mul(&state.z);
        }
        let var = sq / chains as f64;
        var.iter().fold(1.0f64, |w, v| if (v - 1.0).abs() > (w - 1.0).abs() { *v } else { w })
    }

    /// Sample correlation between z₀ and z after one step of `dt` and after
    /// two steps of `dt/2`, over `chains` independent chains.
    pub fn ecrv_split_correlations(chains: usize, dt: f64, tau: f64, seed: u64) -> (f64, f64, f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut one, mut two, mut v1, mut v2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..chains {
            let z0 = standard_normal6(&mut rng);
            let start = EcrvState { z: z0, tau };
            let a = ecrv_step(&start, dt, &standard_normal6(&mut rng)).unwrap();
            let half = ecrv_step(&start, dt / 2.0, &standard_normal6(&mut rng)).unwrap();
            let b = ecrv_step(&half, dt / 2.0, &standard_normal6(&mut rng)).unwrap();
            one += z0.dot(&a.z);
            two += z0.dot(&b.z);
            v1 += a.z.norm_squared();
            v2 += b.z.norm_squared();
        }
        let n = (6 * chains) as f64;
        (one / n, two / n, v1 / n, v2 / n)
    }

    /// Relative Frobenius error of the sampled Gates covariance.
    pub fn gates_frobenius_error(dv: &Vector3<f64>, p: &GatesParams, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut acc = Matrix3::zeros();
        for _ in 0..samples {
            let e = gates_sample(dv, &GatesDraws::sample(p, &mut rng));
            acc += e * e.transpose();
        }
        let sampled = acc / samples as f64;
        let exact = gates_covariance(dv, p);
        (sampled - exact).norm() / exact.norm()
    }

    /// Fraction of nav-error components inside their own 3σ, and the largest
    /// relative error of the sample covariance diagonal.
    pub fn nav_containment(p: &Matrix6<f64>, samples: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inside = 0usize;
        let mut acc = Matrix6::zeros();
        for _ in 0..samples {
            let e = nav_error(&standard_normal6(&mut rng), p).unwrap();
            acc += e * e.transpose();
            inside += (0..6).filter(|&i| e[i].abs() <= 3.0 * p[(i, i)].sqrt()).count();
        }
        let cov = acc / samples as f64;
        let diag = (0..6).map(|i| (cov[(i, i)] / p[(i, i)] - 1.0).abs()).fold(0.0, f64::max);
        (inside as f64 / (6 * samples) as f64, diag)
    }
}
