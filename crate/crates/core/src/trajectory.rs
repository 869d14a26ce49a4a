//! Agents, trajectories and scenes, plus backward-difference kinematics.
//!
//! Velocities are taken as given and never re-derived from positions. Every
//! derived series starts at the first frame where its backward difference
//! exists: acceleration and angular velocity from frame 1, jerk and angular
//! acceleration from frame 2.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec2};

/// Tolerance on the spacing of consecutive timestamps, in seconds.
pub const DT_TOLERANCE: f64 = 1e-6;

/// Speeds below this (m/s) have no usable movement direction.
pub const EPS_SPEED: f64 = 0.1;

/// Default radius (m) of the neighbour set around the target.
pub const DEFAULT_NEIGHBOR_RADIUS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Other,
}

impl AgentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Vehicle => "vehicle",
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::Other => "other",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "vehicle" => Ok(AgentKind::Vehicle),
            "pedestrian" => Ok(AgentKind::Pedestrian),
            "other" => Ok(AgentKind::Other),
            other => Err(Error::validation(format!("unknown agent kind {other:?}"))),
        }
    }
}

/// Kinematic state of one agent at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub t: f64,
    pub p: Vec2,
    pub v: Vec2,
    pub heading: f64,
    pub kind: AgentKind,
}

impl AgentState {
    pub fn new(t: f64, p: Vec2, v: Vec2, heading: f64, kind: AgentKind) -> Self {
        Self {
            t,
            p,
            v,
            heading,
            kind,
        }
    }

    fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.p.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.heading.is_finite()
    }
}

/// Returns the index of the first state whose gap to its predecessor differs
/// from `dt` by more than [`DT_TOLERANCE`], or is not strictly positive.
pub(crate) fn first_irregular_gap(times: &[f64], dt: f64) -> Option<usize> {
    times
        .windows(2)
        .position(|w| {
            let gap = w[1] - w[0];
            gap <= 0.0 || (gap - dt).abs() > DT_TOLERANCE
        })
        .map(|i| i + 1)
}

/// Most frequent of the given timestamp gaps, bucketed at the tolerance.
/// Ties resolve to the smaller gap.
pub(crate) fn modal_gap(gaps: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut counts: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for gap in gaps {
        let key = (gap / DT_TOLERANCE).round() as i64;
        let e = counts.entry(key).or_insert((0, gap));
        e.0 += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.0.cmp(&a.0)))
        .map(|(_, (_, gap))| gap)
}

/// Time-ordered, uniformly sampled states of a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    agent_id: String,
    states: Vec<AgentState>,
    dt: f64,
}

impl Trajectory {
    /// Builds a trajectory, inferring `dt` from the modal timestamp gap.
    ///
    /// Headings are wrapped into (-pi, pi].
    pub fn new(agent_id: impl Into<String>, states: Vec<AgentState>) -> Result<Self> {
        let agent_id = agent_id.into();
        if states.len() < 2 {
            return Err(Error::validation(format!(
                "trajectory {agent_id} needs at least 2 states, got {}",
                states.len()
            )));
        }
        let dt = modal_gap(states.windows(2).map(|w| w[1].t - w[0].t)).unwrap_or(0.0);
        Self::with_dt(agent_id, states, dt)
    }

    pub fn with_dt(
        agent_id: impl Into<String>,
        mut states: Vec<AgentState>,
        dt: f64,
    ) -> Result<Self> {
        let agent_id = agent_id.into();
        if states.len() < 2 {
            return Err(Error::validation(format!(
                "trajectory {agent_id} needs at least 2 states, got {}",
                states.len()
            )));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::validation(format!(
                "trajectory {agent_id}: dt must be positive, got {dt}"
            )));
        }
        if let Some(i) = states.iter().position(|s| !s.is_finite()) {
            return Err(Error::validation(format!(
                "trajectory {agent_id}: non-finite value in state {i}"
            )));
        }
        let times: Vec<f64> = states.iter().map(|s| s.t).collect();
        if let Some(i) = first_irregular_gap(&times, dt) {
            return Err(Error::validation(format!(
                "trajectory {agent_id}: gap {} before state {i} (t = {}) deviates from dt = {dt}",
                times[i] - times[i - 1],
                times[i]
            )));
        }
        for s in &mut states {
            s.heading = geom::wrap_angle(s.heading);
        }
        Ok(Self {
            agent_id,
            states,
            dt,
        })
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn states(&self) -> &[AgentState] {
        &self.states
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn kind(&self) -> AgentKind {
        self.states[0].kind
    }

    pub fn start_time(&self) -> f64 {
        self.states[0].t
    }
}

/// All agents of one scene plus the designated target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    scene_id: String,
    agents: BTreeMap<String, Trajectory>,
    target_id: String,
    neighbor_radius: f64,
}

impl Scene {
    pub fn new(
        scene_id: impl Into<String>,
        agents: Vec<Trajectory>,
        target_id: impl Into<String>,
        neighbor_radius: f64,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        let target_id = target_id.into();
        if !(neighbor_radius.is_finite() && neighbor_radius > 0.0) {
            return Err(Error::validation(format!(
                "scene {scene_id}: neighbor radius must be positive, got {neighbor_radius}"
            )));
        }
        let mut map = BTreeMap::new();
        for traj in agents {
            let id = traj.agent_id.clone();
            if map.insert(id.clone(), traj).is_some() {
                return Err(Error::validation(format!(
                    "scene {scene_id}: duplicate agent {id}"
                )));
            }
        }
        let target = map.get(&target_id).ok_or_else(|| {
            Error::validation(format!("scene {scene_id}: target {target_id} not present"))
        })?;
        let (dt, len, t0) = (target.dt, target.len(), target.start_time());
        for traj in map.values() {
            if (traj.dt - dt).abs() > DT_TOLERANCE
                || traj.len() != len
                || (traj.start_time() - t0).abs() > DT_TOLERANCE
            {
                return Err(Error::validation(format!(
                    "scene {scene_id}: agent {} does not share the target's time range",
                    traj.agent_id
                )));
            }
        }
        Ok(Self {
            scene_id,
            agents: map,
            target_id,
            neighbor_radius,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn target_id(&self) -> &str {
        &self.target_id
    }

    pub fn target(&self) -> &Trajectory {
        &self.agents[&self.target_id]
    }

    pub fn agents(&self) -> impl Iterator<Item = &Trajectory> {
        self.agents.values()
    }

    pub fn agent(&self, id: &str) -> Option<&Trajectory> {
        self.agents.get(id)
    }

    /// Every agent except the target, in agent-id order.
    pub fn others(&self) -> impl Iterator<Item = &Trajectory> {
        self.agents
            .values()
            .filter(move |t| t.agent_id != self.target_id)
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_frames(&self) -> usize {
        self.target().len()
    }

    pub fn dt(&self) -> f64 {
        self.target().dt
    }

    pub fn neighbor_radius(&self) -> f64 {
        self.neighbor_radius
    }

    pub fn with_neighbor_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::validation(format!(
                "neighbor radius must be positive, got {radius}"
            )));
        }
        self.neighbor_radius = radius;
        Ok(self)
    }
}

/// Backward-difference kinematic series of one trajectory.
///
/// `vel`, `speed` and `phi` have one entry per frame; `accel`, `omega` and
/// `phi_rate` start at frame 1; `jerk` and `alpha` start at frame 2.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicSeries {
    pub dt: f64,
    pub vel: Vec<Vec2>,
    pub speed: Vec<f64>,
    pub accel: Vec<Vec2>,
    pub jerk: Vec<Vec2>,
    pub omega: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Movement direction; `None` where the speed is below [`EPS_SPEED`].
    pub phi: Vec<Option<f64>>,
    /// Movement-direction rate; `None` unless both frames have a direction.
    pub phi_rate: Vec<Option<f64>>,
}

pub fn derive_kinematics(traj: &Trajectory) -> KinematicSeries {
    let dt = traj.dt;
    let states = &traj.states;
    let vel: Vec<Vec2> = states.iter().map(|s| s.v).collect();
    let speed: Vec<f64> = vel.iter().map(|&v| geom::norm(v)).collect();

    let accel: Vec<Vec2> = vel
        .windows(2)
        .map(|w| geom::scale(geom::sub(w[1], w[0]), 1.0 / dt))
        .collect();
    let jerk: Vec<Vec2> = accel
        .windows(2)
        .map(|w| geom::scale(geom::sub(w[1], w[0]), 1.0 / dt))
        .collect();

    let omega: Vec<f64> = states
        .windows(2)
        .map(|w| geom::wrap_angle(w[1].heading - w[0].heading) / dt)
        .collect();
    let alpha: Vec<f64> = omega.windows(2).map(|w| (w[1] - w[0]) / dt).collect();

    let phi: Vec<Option<f64>> = vel
        .iter()
        .zip(&speed)
        .map(|(v, &s)| (s >= EPS_SPEED).then(|| v[1].atan2(v[0])))
        .collect();
    let phi_rate = phi
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => Some(geom::wrap_angle(b - a) / dt),
            _ => None,
        })
        .collect();

    KinematicSeries {
        dt,
        vel,
        speed,
        accel,
        jerk,
        omega,
        alpha,
        phi,
        phi_rate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn constant_velocity_has_zero_derivatives() {
        let k = derive_kinematics(&traj_1d(&[5.0; 6], 0.1));
        assert!(k.accel.iter().all(|a| a == &[0.0, 0.0]));
        assert!(k.jerk.iter().all(|a| a == &[0.0, 0.0]));
        assert!(k.omega.iter().all(|&w| w == 0.0));
        assert_eq!(k.accel.len(), 5);
        assert_eq!(k.jerk.len(), 4);
    }

    #[test]
    fn backward_difference_per_step() {
        let k = derive_kinematics(&traj_1d(&[0.0, 1.0, 0.0, 1.0], 1.0));
        let ax: Vec<f64> = k.accel.iter().map(|a| a[0]).collect();
        assert_eq!(ax, vec![1.0, -1.0, 1.0]);
    }

    #[test]
    fn heading_difference_is_wrapped() {
        let states = vec![
            AgentState::new(0.0, [0.0, 0.0], [1.0, 0.0], 3.1, AgentKind::Vehicle),
            AgentState::new(1.0, [1.0, 0.0], [1.0, 0.0], -3.1, AgentKind::Vehicle),
        ];
        let k = derive_kinematics(&Trajectory::new("a", states).unwrap());
        assert!((k.omega[0] - (2.0 * PI - 6.2)).abs() < 1e-12);
        assert!((k.omega[0] - 0.0832).abs() < 1e-4);
        assert!(k.jerk.is_empty() && k.alpha.is_empty());
    }

    #[test]
    fn rejects_short_and_irregular() {
        let s = AgentState::new(0.0, [0.0; 2], [0.0; 2], 0.0, AgentKind::Other);
        assert!(Trajectory::new("a", vec![s]).is_err());
        let mut s2 = s;
        s2.t = 0.5;
        let mut s3 = s;
        s3.t = 1.2;
        assert!(Trajectory::new("a", vec![s, s2, s3]).is_err());
        let mut bad = s2;
        bad.p[0] = f64::NAN;
        assert!(Trajectory::new("a", vec![s, bad]).is_err());
    }

    #[test]
    fn scene_requires_target_and_shared_range() {
        let a = traj_1d(&[1.0, 1.0, 1.0], 0.1);
        let b = traj_1d(&[1.0, 1.0], 0.1);
        let mut b = b;
        b.agent_id = "b".into();
        assert!(Scene::new("s", vec![a.clone()], "zz", 50.0).is_err());
        assert!(Scene::new("s", vec![a.clone(), b], "a", 50.0).is_err());
        assert!(Scene::new("s", vec![a], "a", 50.0).is_ok());
    }

    #[test]
    fn slow_frames_have_no_direction() {
        let k = derive_kinematics(&traj_1d(&[0.0, 0.05, 1.0], 1.0));
        assert_eq!(k.phi[0], None);
        assert_eq!(k.phi_rate, vec![None, None]);
        assert_eq!(k.phi[2], Some(0.0));
    }

    type RawState = (f64, f64, f64, f64, f64, f64);

    fn arb_traj() -> impl Strategy<Value = (Vec<RawState>, f64)> {
        (
            prop::collection::vec(
                (
                    -50.0..50.0f64,
                    -50.0..50.0f64,
                    -20.0..20.0f64,
                    -20.0..20.0f64,
                    -PI..PI,
                    0.0..1.0f64,
                ),
                3..12,
            ),
            0.05..1.0f64,
        )
    }

    fn build(raw: &[(f64, f64, f64, f64, f64, f64)], dt: f64, t0: f64, rot: f64) -> Trajectory {
        let states = raw
            .iter()
            .enumerate()
            .map(|(i, &(x, y, vx, vy, h, _))| {
                AgentState::new(
                    t0 + i as f64 * dt,
                    geom::rotate([x, y], rot),
                    geom::rotate([vx, vy], rot),
                    h + rot,
                    AgentKind::Vehicle,
                )
            })
            .collect();
        Trajectory::with_dt("a", states, dt).unwrap()
    }

    proptest! {
        #[test]
        fn time_translation_invariance((raw, dt) in arb_traj(), shift in -1000.0..1000.0f64) {
            let a = derive_kinematics(&build(&raw, dt, 0.0, 0.0));
            let b = derive_kinematics(&build(&raw, dt, shift, 0.0));
            prop_assert_eq!(a.accel, b.accel);
            prop_assert_eq!(a.omega, b.omega);
            prop_assert_eq!(a.jerk, b.jerk);
        }

        #[test]
        fn rotation_equivariance((raw, dt) in arb_traj(), beta in -PI..PI) {
            let a = derive_kinematics(&build(&raw, dt, 0.0, 0.0));
            let b = derive_kinematics(&build(&raw, dt, 0.0, beta));
            for (x, y) in a.accel.iter().zip(&b.accel) {
                let r = geom::rotate(*x, beta);
                prop_assert!((r[0] - y[0]).abs() < 1e-6 && (r[1] - y[1]).abs() < 1e-6);
                prop_assert!((geom::norm(*x) - geom::norm(*y)).abs() < 1e-6);
            }
            for (x, y) in a.jerk.iter().zip(&b.jerk) {
                prop_assert!((geom::norm(*x) - geom::norm(*y)).abs() < 1e-5 * (1.0 + geom::norm(*x)));
            }
            for (x, y) in a.phi.iter().zip(&b.phi) {
                if let (Some(x), Some(y)) = (x, y) {
                    prop_assert!(geom::wrap_angle(y - x - beta).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn omega_within_wrapped_bounds((raw, dt) in arb_traj()) {
            let k = derive_kinematics(&build(&raw, dt, 0.0, 0.0));
            for w in k.omega {
                prop_assert!(w > -PI / dt - 1e-12 && w <= PI / dt + 1e-12);
            }
        }
    }
}
