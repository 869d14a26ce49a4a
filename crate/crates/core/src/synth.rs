//! Analytically solvable synthetic scenes with closed-form metric targets.
//!
//! Velocities and headings are emitted analytically rather than differenced
//! from positions, so any oracle mismatch comes from the metric code itself.
//! The seed picks a rigid rotation and translation of the whole scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec2};
use crate::trajectory::{AgentKind, AgentState, Scene, Trajectory, DEFAULT_NEIGHBOR_RADIUS};

/// Motion pattern of a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioKind {
    /// One agent at constant speed.
    Constant { speed: f64 },
    /// One agent on a circle of `radius` at constant `speed`.
    Circle { radius: f64, speed: f64 },
    /// One agent braking from `speed` at constant `decel` to rest, then
    /// holding.
    Brake { speed: f64, decel: f64 },
    /// Two agents approaching head-on, each at half of `closing_speed`,
    /// starting `gap` apart.
    Crossing { closing_speed: f64, gap: f64 },
    /// `agents` agents on a square lattice of pitch `spacing`, all moving at
    /// the same velocity.
    Grid {
        agents: usize,
        spacing: f64,
        speed: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub kind: ScenarioKind,
    pub frames: usize,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scene_id: Option<String>,
}

/// Closed-form metric values where they exist.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleValues {
    #[serde(rename = "C_v", skip_serializing_if = "Option::is_none")]
    pub c_v: Option<f64>,
    #[serde(rename = "C_j", skip_serializing_if = "Option::is_none")]
    pub c_j: Option<f64>,
    #[serde(rename = "C_omega", skip_serializing_if = "Option::is_none")]
    pub c_omega: Option<f64>,
    #[serde(rename = "C_alpha", skip_serializing_if = "Option::is_none")]
    pub c_alpha: Option<f64>,
    #[serde(rename = "C_vd", skip_serializing_if = "Option::is_none")]
    pub c_vd: Option<f64>,
    #[serde(rename = "C_kappa", skip_serializing_if = "Option::is_none")]
    pub c_kappa: Option<f64>,
    #[serde(rename = "C_dkappa", skip_serializing_if = "Option::is_none")]
    pub c_dkappa: Option<f64>,
    #[serde(rename = "C_dgamma", skip_serializing_if = "Option::is_none")]
    pub c_dgamma: Option<f64>,
    #[serde(rename = "R_ittc", skip_serializing_if = "Option::is_none")]
    pub r_ittc: Option<f64>,
    #[serde(rename = "R_mac", skip_serializing_if = "Option::is_none")]
    pub r_mac: Option<f64>,
    #[serde(rename = "R_ad", skip_serializing_if = "Option::is_none")]
    pub r_ad: Option<f64>,
    #[serde(rename = "R_ni", skip_serializing_if = "Option::is_none")]
    pub r_ni: Option<f64>,
    /// Target ITTC on the first frame.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ittc_frame0: Option<f64>,
    /// Time at which a braking agent comes to rest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_time: Option<f64>,
}

impl OracleValues {
    fn zero_intrinsic() -> Self {
        Self {
            c_v: Some(0.0),
            c_j: Some(0.0),
            c_omega: Some(0.0),
            c_alpha: Some(0.0),
            c_vd: Some(0.0),
            c_kappa: Some(0.0),
            c_dkappa: Some(0.0),
            c_dgamma: Some(0.0),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub scene: Scene,
    pub oracle: OracleValues,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(Error::usage(format!("{name} must be positive, got {x}")))
    }
}

fn non_negative(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "{name} must be non-negative, got {x}"
        )))
    }
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, frames: usize, dt: f64, seed: u64) -> Self {
        Self {
            kind,
            frames,
            dt,
            seed,
            scene_id: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::usage(format!(
                "frames must be at least 2, got {}",
                self.frames
            )));
        }
        positive("dt", self.dt)?;
        let horizon = (self.frames - 1) as f64 * self.dt;
        match self.kind {
            ScenarioKind::Constant { speed } => non_negative("speed", speed),
            ScenarioKind::Circle { radius, speed } => {
                positive("radius", radius)?;
                non_negative("speed", speed)
            }
            ScenarioKind::Brake { speed, decel } => {
                non_negative("speed", speed)?;
                positive("decel", decel)
            }
            ScenarioKind::Crossing { closing_speed, gap } => {
                non_negative("closing speed", closing_speed)?;
                positive("gap", gap)?;
                if closing_speed * horizon >= gap {
                    return Err(Error::usage(format!(
                        "agents {gap} m apart closing at {closing_speed} m/s meet within the {horizon} s window"
                    )));
                }
                Ok(())
            }
            ScenarioKind::Grid {
                agents,
                spacing,
                speed,
            } => {
                if agents == 0 {
                    return Err(Error::usage("grid needs at least one agent"));
                }
                positive("spacing", spacing)?;
                non_negative("speed", speed)
            }
        }
    }

    pub fn scene_id(&self) -> String {
        self.scene_id.clone().unwrap_or_else(|| {
            let name = match self.kind {
                ScenarioKind::Constant { .. } => "constant",
                ScenarioKind::Circle { .. } => "circle",
                ScenarioKind::Brake { .. } => "brake",
                ScenarioKind::Crossing { .. } => "crossing",
                ScenarioKind::Grid { .. } => "grid",
            };
            format!("{name}-{}", self.seed)
        })
    }
}

/// Rigid transform drawn from the seed.
struct Placement {
    angle: f64,
    offset: Vec2,
}

impl Placement {
    fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let offset = [
            rng.random_range(-100.0..100.0),
            rng.random_range(-100.0..100.0),
        ];
        Self { angle, offset }
    }

    fn state(&self, t: f64, p: Vec2, v: Vec2, heading: f64) -> AgentState {
        let p = geom::rotate(p, self.angle);
        AgentState::new(
            t,
            [p[0] + self.offset[0], p[1] + self.offset[1]],
            geom::rotate(v, self.angle),
            geom::wrap_angle(heading + self.angle),
            AgentKind::Vehicle,
        )
    }
}

fn times(spec: &ScenarioSpec) -> impl Iterator<Item = f64> + '_ {
    (0..spec.frames).map(|i| i as f64 * spec.dt)
}

fn single(
    spec: &ScenarioSpec,
    place: &Placement,
    motion: impl Fn(f64) -> (Vec2, Vec2, f64),
) -> Result<Vec<Trajectory>> {
    let states = times(spec)
        .map(|t| {
            let (p, v, h) = motion(t);
            place.state(t, p, v, h)
        })
        .collect();
    Ok(vec![Trajectory::with_dt("0", states, spec.dt)?])
}

/// Builds the scene and its closed-form targets.
pub fn generate(spec: &ScenarioSpec) -> Result<Generated> {
    spec.validate()?;
    let place = Placement::from_seed(spec.seed);
    let frames = spec.frames as f64;
    let dt = spec.dt;
    let (agents, oracle) = match spec.kind {
        ScenarioKind::Constant { speed } => {
            let agents = single(spec, &place, |t| ([speed * t, 0.0], [speed, 0.0], 0.0))?;
            (
                agents,
                OracleValues {
                    r_ittc: Some(0.0),
                    r_mac: Some(0.0),
                    r_ad: Some(0.0),
                    r_ni: Some(0.0),
                    ..OracleValues::zero_intrinsic()
                },
            )
        }
        ScenarioKind::Circle { radius, speed } => {
            let w = speed / radius;
            let agents = single(spec, &place, |t| {
                let th = w * t;
                let (s, c) = th.sin_cos();
                (
                    [radius * c, radius * s],
                    [-speed * s, speed * c],
                    th + std::f64::consts::FRAC_PI_2,
                )
            })?;
            let oracle = OracleValues {
                c_omega: Some(w),
                c_alpha: Some(0.0),
                c_vd: Some(w),
                c_kappa: Some(if speed > 0.0 { 1.0 / radius } else { 0.0 }),
                c_dkappa: Some(0.0),
                ..OracleValues::default()
            };
            (agents, oracle)
        }
        ScenarioKind::Brake { speed, decel } => {
            let stop = speed / decel;
            let agents = single(spec, &place, |t| {
                let tc = t.min(stop);
                let x = speed * tc - 0.5 * decel * tc * tc;
                ([x, 0.0], [(speed - decel * tc).max(0.0), 0.0], 0.0)
            })?;
            // With the stop on a frame boundary the acceleration is -decel on
            // exactly round(stop / dt) differences and a single jump of decel
            // appears in the jerk series.
            let steps = stop / dt;
            let aligned = (steps - steps.round()).abs() < 1e-9 && steps.round() <= frames - 1.0;
            let (c_v, c_j) = if aligned {
                let n = steps.round();
                let c_v = decel * (n / (frames - 1.0)).sqrt();
                let c_j = if n >= 1.0 && n <= frames - 2.0 && spec.frames >= 3 {
                    decel / dt / (frames - 2.0).sqrt()
                } else {
                    0.0
                };
                (Some(c_v), Some(c_j))
            } else {
                (None, None)
            };
            let oracle = OracleValues {
                c_v,
                c_j,
                c_omega: Some(0.0),
                c_alpha: Some(0.0),
                c_kappa: Some(0.0),
                c_dkappa: Some(0.0),
                stop_time: Some(stop),
                ..OracleValues::default()
            };
            (agents, oracle)
        }
        ScenarioKind::Crossing { closing_speed, gap } => {
            let half = 0.5 * closing_speed;
            let states = |x0: f64, vx: f64, h: f64| -> Vec<AgentState> {
                times(spec)
                    .map(|t| place.state(t, [x0 + vx * t, 0.0], [vx, 0.0], h))
                    .collect()
            };
            let agents = vec![
                Trajectory::with_dt("0", states(-0.5 * gap, half, 0.0), dt)?,
                Trajectory::with_dt("1", states(0.5 * gap, -half, std::f64::consts::PI), dt)?,
            ];
            let per_frame: Vec<f64> = times(spec)
                .map(|t| closing_speed / (gap - closing_speed * t))
                .collect();
            let mean = per_frame.iter().sum::<f64>() / frames;
            let within = gap <= DEFAULT_NEIGHBOR_RADIUS;
            let oracle = OracleValues {
                r_ittc: within.then_some(mean),
                r_mac: Some(mean),
                r_ad: within.then(|| {
                    1.0 / (std::f64::consts::PI * DEFAULT_NEIGHBOR_RADIUS * DEFAULT_NEIGHBOR_RADIUS)
                }),
                r_ni: Some(0.0),
                ittc_frame0: Some(per_frame[0]),
                ..OracleValues::zero_intrinsic()
            };
            (agents, oracle)
        }
        ScenarioKind::Grid {
            agents: n,
            spacing,
            speed,
        } => {
            let cols = (n as f64).sqrt().ceil() as usize;
            let cells: Vec<Vec2> = (0..n)
                .map(|i| [(i % cols) as f64 * spacing, (i / cols) as f64 * spacing])
                .collect();
            let agents = cells
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let states = times(spec)
                        .map(|t| place.state(t, [c[0] + speed * t, c[1]], [speed, 0.0], 0.0))
                        .collect();
                    Trajectory::with_dt(i.to_string(), states, dt)
                })
                .collect::<Result<Vec<_>>>()?;
            let within = cells[1..]
                .iter()
                .filter(|c| geom::norm(**c) <= DEFAULT_NEIGHBOR_RADIUS)
                .count();
            let oracle = OracleValues {
                r_ittc: Some(0.0),
                r_mac: Some(0.0),
                r_ad: Some(
                    within as f64
                        / (std::f64::consts::PI
                            * DEFAULT_NEIGHBOR_RADIUS
                            * DEFAULT_NEIGHBOR_RADIUS),
                ),
                r_ni: Some(0.0),
                ..OracleValues::zero_intrinsic()
            };
            (agents, oracle)
        }
    };
    let scene = Scene::new(spec.scene_id(), agents, "0", DEFAULT_NEIGHBOR_RADIUS)?;
    Ok(Generated { scene, oracle })
}

/// Braking family of increasing severity whose stops land on frame
/// boundaries.
pub fn brake_family(
    speed: f64,
    decels: &[f64],
    frames: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<Generated>> {
    decels
        .iter()
        .enumerate()
        .map(|(i, &decel)| {
            let mut spec =
                ScenarioSpec::new(ScenarioKind::Brake { speed, decel }, frames, dt, seed);
            spec.scene_id = Some(format!("brake-{i}"));
            generate(&spec)
        })
        .collect()
}
