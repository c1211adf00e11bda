//! Sampled estimate of how far two references that are safe at consecutive
//! constraint times can approach each other in between.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::qp::OptimizationConfig;
use crate::{NominalState, Vec3};

/// Admissible motion of a single UAV over one constraint interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginModel {
    pub d_hat_min: f64,
    pub theta: Vec3,
    pub t_c: f64,
    pub t_s: f64,
    pub velocity_max: Vec3,
    pub acceleration_max: Vec3,
    pub jerk_max: Vec3,
}

impl MarginModel {
    pub fn from_config(c: &OptimizationConfig) -> Self {
        Self {
            d_hat_min: c.d_hat_min,
            theta: c.theta,
            t_c: c.t_c,
            t_s: c.t_s,
            velocity_max: c.state_box.velocity_max,
            acceleration_max: c.state_box.acceleration_max,
            jerk_max: c.jerk_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginEstimate {
    /// Largest encroachment seen; a lower bound on the true maximum.
    pub estimate: f64,
    /// Straight-line bound for the same velocity limits, ignoring
    /// acceleration; an upper bound when the relative velocity is constant.
    pub chord_bound: f64,
    pub samples: usize,
}

/// Encroachment below `d_hat` along a straight chord whose ends both lie at
/// scaled distance `d_hat` and that spans scaled length `length`.
pub fn chord_encroachment(d_hat: f64, length: f64) -> f64 {
    let half = length / 2.0;
    if half >= d_hat {
        d_hat
    } else {
        d_hat - (d_hat * d_hat - half * half).sqrt()
    }
}

pub fn constant_velocity_bound(model: &MarginModel) -> f64 {
    let rel = (model.velocity_max * 2.0).component_div(&model.theta).norm() * model.t_c;
    chord_encroachment(model.d_hat_min, rel)
}

const SUBSTEPS: usize = 64;

/// Monte-Carlo search: random admissible states and jerk schedules for two
/// UAVs, placed so that both interval endpoints sit on the safety sphere.
pub fn estimate_continuous_margin(model: &MarginModel, samples: usize, seed: u64) -> MarginEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = ((model.t_c / model.t_s).round() as usize).max(1);
    let mut best: f64 = 0.0;
    let uniform = |rng: &mut ChaCha8Rng, bound: &Vec3| {
        Vec3::from_fn(|a, _| if bound[a] > 0.0 { rng.random_range(-bound[a]..=bound[a]) } else { 0.0 })
    };
    for _ in 0..samples.max(1) {
        let mut paths = Vec::with_capacity(2);
        let mut admissible = true;
        for _ in 0..2 {
            let mut s = NominalState {
                position: Vec3::zeros(),
                velocity: uniform(&mut rng, &model.velocity_max),
                acceleration: uniform(&mut rng, &model.acceleration_max),
            };
            let jerks: Vec<Vec3> = (0..steps).map(|_| uniform(&mut rng, &model.jerk_max)).collect();
            let dt = model.t_c / SUBSTEPS as f64;
            let mut path = vec![s.position];
            for q in 0..SUBSTEPS {
                let u = jerks[(q * steps / SUBSTEPS).min(steps - 1)];
                s = s.propagate(&u, dt);
                let within = (0..3).all(|a| {
                    s.velocity[a].abs() <= model.velocity_max[a] + 1e-12
                        && s.acceleration[a].abs() <= model.acceleration_max[a] + 1e-12
                });
                admissible &= within;
                path.push(s.position);
            }
            paths.push(path);
        }
        if !admissible {
            continue;
        }
        // relative path in scaled coordinates, then place its chord on the sphere
        let rel: Vec<Vec3> = paths[1]
            .iter()
            .zip(&paths[0])
            .map(|(b, a)| (b - a).component_div(&model.theta))
            .collect();
        let delta = rel[SUBSTEPS] - rel[0];
        let d = model.d_hat_min;
        let half = delta.norm() / 2.0;
        let perp_len = (d * d - half * half).max(0.0).sqrt();
        let perp = random_perpendicular(&delta, &mut rng) * perp_len;
        let start = -delta / 2.0 + perp - rel[0];
        let min = rel
            .iter()
            .map(|r| (r + start).norm())
            .fold(f64::INFINITY, f64::min);
        best = best.max(d - min);
    }
    MarginEstimate {
        estimate: best.clamp(0.0, model.d_hat_min),
        chord_bound: constant_velocity_bound(model),
        samples,
    }
}

fn random_perpendicular(v: &Vec3, rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let r = Vec3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
        let p = if v.norm() > 1e-12 {
            r - v * (r.dot(v) / v.norm_squared())
        } else {
            r
        };
        if p.norm() > 1e-6 {
            return p.normalize();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_only_has_no_margin() {
        let mut m = MarginModel::from_config(&OptimizationConfig::default());
        m.velocity_max = Vec3::zeros();
        m.acceleration_max = Vec3::zeros();
        m.jerk_max = Vec3::zeros();
        let e = estimate_continuous_margin(&m, 200, 1);
        assert!(e.estimate.abs() < 1e-12);
        assert_eq!(e.chord_bound, 0.0);
    }

    #[test]
    fn constant_velocity_stays_under_chord_bound() {
        let mut m = MarginModel::from_config(&OptimizationConfig::default());
        m.velocity_max = Vec3::repeat(0.3);
        m.acceleration_max = Vec3::zeros();
        m.jerk_max = Vec3::zeros();
        let e = estimate_continuous_margin(&m, 5000, 2);
        assert!(e.estimate > 0.0);
        assert!(e.estimate <= e.chord_bound + 1e-12, "{e:?}");
        // the bound is nearly attained by head-on relative motion
        assert!(e.estimate > 0.5 * e.chord_bound);
    }

    #[test]
    fn default_config_is_positive_and_finite() {
        let m = MarginModel::from_config(&OptimizationConfig::default());
        let e = estimate_continuous_margin(&m, 2000, 3);
        assert!(e.estimate > 0.0 && e.estimate.is_finite());
        assert!(e.estimate <= m.d_hat_min);
    }

    #[test]
    fn chord_geometry() {
        assert_eq!(chord_encroachment(1.0, 0.0), 0.0);
        assert!((chord_encroachment(1.0, 1.2) - 0.2).abs() < 1e-12);
        assert_eq!(chord_encroachment(1.0, 3.0), 1.0);
    }
}
