//! Intrinsic tailness metrics of a single trajectory: kinematic dynamism,
//! geometric complexity and temporal irregularity.
//!
//! Expectations over time average only the frames on which the quantity is
//! defined. Trajectories too short for a metric report 0 and raise a flag.

use serde::{Deserialize, Serialize};

use crate::geom;
use crate::trajectory::{derive_kinematics, KinematicSeries, Trajectory, EPS_SPEED};

/// Number of intrinsic metrics.
pub const INTRINSIC_DIM: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicMetrics {
    #[serde(rename = "C_v")]
    pub c_v: f64,
    #[serde(rename = "C_j")]
    pub c_j: f64,
    #[serde(rename = "C_omega")]
    pub c_omega: f64,
    #[serde(rename = "C_alpha")]
    pub c_alpha: f64,
    #[serde(rename = "C_vd")]
    pub c_vd: f64,
    #[serde(rename = "C_kappa")]
    pub c_kappa: f64,
    #[serde(rename = "C_dkappa")]
    pub c_dkappa: f64,
    #[serde(rename = "C_dgamma")]
    pub c_dgamma: f64,
}

impl IntrinsicMetrics {
    pub const NAMES: [&'static str; INTRINSIC_DIM] = [
        "C_v", "C_j", "C_omega", "C_alpha", "C_vd", "C_kappa", "C_dkappa", "C_dgamma",
    ];

    pub fn to_array(&self) -> [f64; INTRINSIC_DIM] {
        [
            self.c_v,
            self.c_j,
            self.c_omega,
            self.c_alpha,
            self.c_vd,
            self.c_kappa,
            self.c_dkappa,
            self.c_dgamma,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntrinsicFlags {
    /// Fewer than 3 states: jerk, angular acceleration and curvature rate are 0.
    pub too_short_for_second_differences: bool,
    /// Fewer than 3 states: autocovariance fluctuation is 0.
    pub too_short_for_autocovariance: bool,
    /// No frame pair fast enough to define a movement-direction rate.
    pub no_movement_direction: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KinematicDynamism {
    pub c_v: f64,
    pub c_j: f64,
    pub c_omega: f64,
    pub c_alpha: f64,
    pub c_vd: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GeometricComplexity {
    pub c_kappa: f64,
    pub c_dkappa: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TemporalIrregularity {
    pub c_dgamma: f64,
    /// Autocovariance at lags `0..T_h`.
    pub gamma: Vec<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicReport {
    pub metrics: IntrinsicMetrics,
    pub flags: IntrinsicFlags,
}

fn rms(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    (values.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

fn mean_abs(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|x| x.abs()).sum::<f64>() / values.len() as f64
}

pub fn kinematic_dynamism(traj: &Trajectory) -> KinematicDynamism {
    kinematic_dynamism_of(&derive_kinematics(traj))
}

pub fn kinematic_dynamism_of(k: &KinematicSeries) -> KinematicDynamism {
    let phi_rates: Vec<f64> = k.phi_rate.iter().flatten().copied().collect();
    KinematicDynamism {
        c_v: rms(k.accel.iter().map(|&a| geom::norm(a))),
        c_j: rms(k.jerk.iter().map(|&j| geom::norm(j))),
        c_omega: rms(k.omega.iter().copied()),
        c_alpha: rms(k.alpha.iter().copied()),
        c_vd: rms(phi_rates.into_iter()),
        degenerate: k.jerk.is_empty(),
    }
}

/// Unsigned curvature at frames 1.., zero where the speed is below
/// [`EPS_SPEED`].
pub fn curvature(k: &KinematicSeries) -> Vec<f64> {
    k.accel
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let v = k.vel[i + 1];
            let speed = k.speed[i + 1];
            if speed < EPS_SPEED {
                0.0
            } else {
                geom::cross(v, a).abs() / (speed * speed * speed)
            }
        })
        .collect()
}

pub fn geometric_complexity(traj: &Trajectory) -> GeometricComplexity {
    geometric_complexity_of(&derive_kinematics(traj))
}

pub fn geometric_complexity_of(k: &KinematicSeries) -> GeometricComplexity {
    let kappa = curvature(k);
    let dkappa: Vec<f64> = kappa.windows(2).map(|w| (w[1] - w[0]) / k.dt).collect();
    GeometricComplexity {
        c_kappa: mean_abs(&kappa),
        c_dkappa: mean_abs(&dkappa),
    }
}

/// Velocity autocovariance with a shrinking overlap: lag `tau` averages the
/// `n - tau` available pairs of deviations from the window mean.
pub fn autocovariance(vel: &[geom::Vec2]) -> Vec<f64> {
    let n = vel.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = vel
        .iter()
        .fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
    let mean = geom::scale(mean, 1.0 / n as f64);
    let dev: Vec<geom::Vec2> = vel.iter().map(|&v| geom::sub(v, mean)).collect();
    (0..n)
        .map(|tau| {
            let pairs = n - tau;
            let sum: f64 = (0..pairs).map(|t| geom::dot(dev[t], dev[t + tau])).sum();
            sum / pairs as f64
        })
        .collect()
}

pub fn temporal_irregularity(traj: &Trajectory) -> TemporalIrregularity {
    temporal_irregularity_of(&derive_kinematics(traj))
}

pub fn temporal_irregularity_of(k: &KinematicSeries) -> TemporalIrregularity {
    let gamma = autocovariance(&k.vel);
    let n = gamma.len();
    if n < 3 {
        return TemporalIrregularity {
            c_dgamma: 0.0,
            gamma,
            degenerate: true,
        };
    }
    let total: f64 = gamma.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    TemporalIrregularity {
        c_dgamma: total / (n - 1) as f64,
        gamma,
        degenerate: false,
    }
}

pub fn intrinsic_metrics(traj: &Trajectory) -> IntrinsicReport {
    let k = derive_kinematics(traj);
    let dynamism = kinematic_dynamism_of(&k);
    let geometry = geometric_complexity_of(&k);
    let temporal = temporal_irregularity_of(&k);
    IntrinsicReport {
        metrics: IntrinsicMetrics {
            c_v: dynamism.c_v,
            c_j: dynamism.c_j,
            c_omega: dynamism.c_omega,
            c_alpha: dynamism.c_alpha,
            c_vd: dynamism.c_vd,
            c_kappa: geometry.c_kappa,
            c_dkappa: geometry.c_dkappa,
            c_dgamma: temporal.c_dgamma,
        },
        flags: IntrinsicFlags {
            too_short_for_second_differences: dynamism.degenerate,
            too_short_for_autocovariance: temporal.degenerate,
            no_movement_direction: k.phi_rate.iter().all(Option::is_none),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{AgentKind, AgentState};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn traj_1d(vx: &[f64], dt: f64) -> Trajectory {
        let states = vx
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                AgentState::new(i as f64 * dt, [0.0, 0.0], [v, 0.0], 0.0, AgentKind::Vehicle)
            })
            .collect();
        Trajectory::new("a", states).unwrap()
    }

    fn circle(radius: f64, speed: f64, dt: f64, frames: usize) -> Trajectory {
        let w = speed / radius;
        let states = (0..frames)
            .map(|i| {
                let t = i as f64 * dt;
                let th = w * t;
                AgentState::new(
                    t,
                    [radius * th.cos(), radius * th.sin()],
                    [-speed * th.sin(), speed * th.cos()],
                    th + PI / 2.0,
                    AgentKind::Vehicle,
                )
            })
            .collect();
        Trajectory::new("c", states).unwrap()
    }

    #[test]
    fn constant_velocity_is_all_zero() {
        let r = intrinsic_metrics(&traj_1d(&[5.0; 10], 0.1));
        assert_eq!(r.metrics, IntrinsicMetrics::default());
    }

    #[test]
    fn alternating_velocity_has_unit_volatility() {
        let d = kinematic_dynamism(&traj_1d(&[0.0, 1.0, 0.0, 1.0, 0.0], 1.0));
        assert_eq!(d.c_v, 1.0);
        assert_eq!(d.c_j, 2.0);
    }

    #[test]
    fn circle_heading_rate_and_curvature() {
        let t = circle(10.0, 5.0, 0.1, 50);
        let d = kinematic_dynamism(&t);
        assert!((d.c_omega - 0.5).abs() < 1e-9);
        assert!(d.c_alpha < 1e-9);
        let c = circle(20.0, 5.0, 0.1, 100);
        let g = geometric_complexity(&c);
        assert!((g.c_kappa - 0.05).abs() / 0.05 < 0.01);
        assert!(g.c_dkappa < 0.05 * 0.01);
    }

    #[test]
    fn straight_line_has_no_curvature() {
        let g = geometric_complexity(&traj_1d(&[1.0, 2.0, 4.0, 8.0], 0.5));
        assert_eq!(g.c_kappa, 0.0);
        assert_eq!(g.c_dkappa, 0.0);
    }

    #[test]
    fn stationary_agent_guarded() {
        let r = intrinsic_metrics(&traj_1d(&[0.0; 5], 0.1));
        assert_eq!(r.metrics.c_kappa, 0.0);
        assert!(r.flags.no_movement_direction);
        assert!(r.metrics.to_array().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn alternating_autocovariance_fluctuation() {
        let u = 1.5;
        let v: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { u } else { -u }).collect();
        let t = temporal_irregularity(&traj_1d(&v, 0.1));
        assert!((t.c_dgamma - 2.0 * u * u).abs() < 1e-12);
    }

    #[test]
    fn impulse_matches_double_loop() {
        let mut v = vec![2.0; 9];
        v[4] = 5.0;
        let t = temporal_irregularity(&traj_1d(&v, 0.1));
        // direct double loop
        let n = v.len();
        let mean: f64 = v.iter().sum::<f64>() / n as f64;
        let mut g = vec![0.0; n];
        for (tau, gt) in g.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n - tau {
                s += (v[i] - mean) * (v[i + tau] - mean);
            }
            *gt = s / (n - tau) as f64;
        }
        let mut c = 0.0;
        for tau in 1..n {
            c += (g[tau] - g[tau - 1]).abs();
        }
        c /= (n - 1) as f64;
        assert_eq!(t.gamma.len(), n);
        for (a, b) in t.gamma.iter().zip(&g) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        assert!((t.c_dgamma - c).abs() <= 1e-12 * c.abs().max(1.0));
    }

    #[test]
    fn short_trajectory_flags() {
        let r = intrinsic_metrics(&traj_1d(&[0.0, 3.0], 1.0));
        assert!(r.flags.too_short_for_second_differences);
        assert!(r.flags.too_short_for_autocovariance);
        assert_eq!(r.metrics.c_v, 3.0);
        assert_eq!(r.metrics.c_j, 0.0);
        assert_eq!(r.metrics.c_dgamma, 0.0);
    }

    #[test]
    fn velocity_scaling_response() {
        let base = circle(20.0, 5.0, 0.1, 40);
        let s = 2.5;
        let scaled_states: Vec<AgentState> = base
            .states()
            .iter()
            .map(|st| AgentState {
                v: geom::scale(st.v, s),
                ..*st
            })
            .collect();
        let scaled = Trajectory::new("c", scaled_states).unwrap();
        let a = intrinsic_metrics(&base).metrics;
        let b = intrinsic_metrics(&scaled).metrics;
        assert!((b.c_v - s * a.c_v).abs() < 1e-9 * b.c_v);
        assert!((b.c_dgamma - s * s * a.c_dgamma).abs() < 1e-9 * b.c_dgamma.max(1.0));
        assert!((b.c_kappa - a.c_kappa / s).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn rigid_motion_invariance(
            raw in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -PI..PI), 3..12),
            beta in -PI..PI, tx in -500.0..500.0f64, ty in -500.0..500.0f64,
        ) {
            let make = |rot: f64, off: [f64; 2]| {
                let states = raw.iter().enumerate().map(|(i, &(vx, vy, h))| {
                    let p = geom::rotate([i as f64, 0.5 * i as f64], rot);
                    AgentState::new(i as f64 * 0.1, [p[0] + off[0], p[1] + off[1]],
                        geom::rotate([vx, vy], rot), h + rot, AgentKind::Vehicle)
                }).collect();
                intrinsic_metrics(&Trajectory::new("a", states).unwrap()).metrics
            };
            let a = make(0.0, [0.0, 0.0]);
            let b = make(beta, [tx, ty]);
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0);
            prop_assert!(close(a.c_v, b.c_v));
            prop_assert!(close(a.c_j, b.c_j));
            prop_assert!(close(a.c_kappa, b.c_kappa));
            prop_assert!(close(a.c_dkappa, b.c_dkappa));
            prop_assert!(close(a.c_dgamma, b.c_dgamma));
            prop_assert!(a.to_array().iter().all(|&x| x >= 0.0 && x.is_finite()));
        }
    }
}
