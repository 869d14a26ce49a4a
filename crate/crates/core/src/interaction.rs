//! Interactive tailness metrics of a target agent within its scene.
//!
//! Local risk: inverse time-to-collision and RSS-style longitudinal and
//! lateral safe-distance deficits. Global risk: multi-agent conflict, agent
//! density and neighbourhood instability.
//!
//! The neighbour set is re-evaluated per frame: every non-target agent within
//! the scene's neighbour radius of the target. Longitudinal and lateral axes
//! follow the target's instantaneous heading.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{self, Vec2};
use crate::intrinsic::kinematic_dynamism;
use crate::trajectory::{AgentKind, AgentState, Scene};

/// Number of interactive metrics.
pub const INTERACTIVE_DIM: usize = 6;

/// Separations below this (m) are treated as coincident.
pub const EPS_DIST: f64 = 0.01;

/// Reaction times, acceleration bounds and risk-curve shapes for the
/// safe-distance model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssParams {
    pub rho: f64,
    pub rho_ped: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub a_lat_max: f64,
    pub b_lat_min: f64,
    pub mu_lat: f64,
    pub alpha_lon: f64,
    pub beta_lon: f64,
    pub alpha_lat: f64,
    pub beta_lat: f64,
}

impl Default for RssParams {
    fn default() -> Self {
        Self {
            rho: 0.5,
            rho_ped: 1.0,
            a_max: 3.0,
            b_min: 4.0,
            b_max: 8.0,
            a_lat_max: 0.9,
            b_lat_min: 1.2,
            mu_lat: 0.5,
            alpha_lon: 1.0,
            beta_lon: 1.0,
            alpha_lat: 1.0,
            beta_lat: 1.0,
        }
    }
}

impl RssParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("rho", self.rho),
            ("rho_ped", self.rho_ped),
            ("a_max", self.a_max),
            ("b_min", self.b_min),
            ("b_max", self.b_max),
            ("a_lat_max", self.a_lat_max),
            ("b_lat_min", self.b_lat_min),
            ("mu_lat", self.mu_lat),
            ("alpha_lon", self.alpha_lon),
            ("beta_lon", self.beta_lon),
            ("alpha_lat", self.alpha_lat),
            ("beta_lat", self.beta_lat),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(format!(
                    "RSS parameter {name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractiveMetrics {
    #[serde(rename = "R_ittc")]
    pub r_ittc: f64,
    #[serde(rename = "R_lon")]
    pub r_lon: f64,
    #[serde(rename = "R_lat")]
    pub r_lat: f64,
    #[serde(rename = "R_mac")]
    pub r_mac: f64,
    #[serde(rename = "R_ad")]
    pub r_ad: f64,
    #[serde(rename = "R_ni")]
    pub r_ni: f64,
}

impl InteractiveMetrics {
    pub const NAMES: [&'static str; INTERACTIVE_DIM] =
        ["R_ittc", "R_lon", "R_lat", "R_mac", "R_ad", "R_ni"];

    pub fn to_array(&self) -> [f64; INTERACTIVE_DIM] {
        [
            self.r_ittc,
            self.r_lon,
            self.r_lat,
            self.r_mac,
            self.r_ad,
            self.r_ni,
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionFlags {
    /// Agent pairs skipped because their separation was below [`EPS_DIST`].
    pub coincident_pairs: usize,
    /// Frames on which the target had no neighbour.
    pub frames_without_neighbors: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionReport {
    pub metrics: InteractiveMetrics,
    pub flags: InteractionFlags,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GlobalRisk {
    pub r_mac: f64,
    pub r_ad: f64,
    pub r_ni: f64,
}

/// Clamped closing rate over squared separation; `None` for coincident
/// agents.
pub fn pair_ittc(a: &AgentState, b: &AgentState) -> Option<f64> {
    let dp = geom::sub(b.p, a.p);
    let dist_sq = geom::norm_sq(dp);
    if dist_sq < EPS_DIST * EPS_DIST {
        return None;
    }
    let closing = -geom::dot(geom::sub(b.v, a.v), dp);
    Some(closing.max(0.0) / dist_sq)
}

/// Minimum safe longitudinal gap behind a lead agent.
///
/// `v_ego` and `v_other` are speeds along the ego's axis; the other agent's
/// braking term only applies to vehicles.
pub fn safe_longitudinal_distance(
    v_ego: f64,
    v_other: f64,
    other_kind: AgentKind,
    p: &RssParams,
) -> f64 {
    let v_other = if other_kind == AgentKind::Vehicle {
        v_other
    } else {
        0.0
    };
    let rho = p.rho;
    let d =
        v_ego * rho + 0.5 * p.a_max * rho * rho + (v_ego + rho * p.a_max).powi(2) / (2.0 * p.b_min)
            - v_other * v_other / (2.0 * p.b_max);
    d.max(0.0)
}

/// Minimum safe lateral gap.
///
/// Lateral velocities are measured along the axis pointing from ego to the
/// other agent, so a positive `v_ego` closes the gap and a positive `v_other`
/// opens it. Pedestrians react after `rho_ped`; the braking term of the other
/// agent only applies to vehicles.
pub fn safe_lateral_distance(
    v_ego: f64,
    v_other: f64,
    other_kind: AgentKind,
    p: &RssParams,
) -> f64 {
    let rho = p.rho;
    let rho_eff = if other_kind == AgentKind::Pedestrian {
        p.rho_ped
    } else {
        p.rho
    };
    let v_ego_reacted = v_ego + p.a_lat_max * rho;
    let v_other_reacted = v_other - p.a_lat_max * rho_eff;
    let v_other_veh = if other_kind == AgentKind::Vehicle {
        v_other_reacted
    } else {
        0.0
    };
    let ego_term =
        (v_ego + v_ego_reacted) / 2.0 * rho + v_ego_reacted * v_ego_reacted / (2.0 * p.b_lat_min);
    let other_term = (v_other + v_other_reacted) / 2.0 * rho_eff
        - v_other_veh * v_other_veh / (2.0 * p.b_lat_min);
    p.mu_lat + (ego_term - other_term).max(0.0)
}

/// Maps a safe-distance deficit to a risk in [0, 1).
pub fn deficit_risk(required: f64, actual: f64, alpha: f64, beta: f64) -> f64 {
    if required <= 0.0 {
        return 0.0;
    }
    let deficit = (required - actual).max(0.0);
    if deficit == 0.0 {
        return 0.0;
    }
    1.0 - (1.0 + deficit / (beta * required)).powf(-alpha)
}

fn heading_axes(heading: f64) -> (Vec2, Vec2) {
    let (s, c) = heading.sin_cos();
    ([c, s], [-s, c])
}

/// Longitudinal risk between the target state and one neighbour state.
pub fn pair_longitudinal_risk(ego: &AgentState, other: &AgentState, p: &RssParams) -> f64 {
    let (lon, _) = heading_axes(ego.heading);
    let v_ego = geom::dot(ego.v, lon);
    let v_other = geom::dot(other.v, lon);
    let gap = geom::dot(geom::sub(other.p, ego.p), lon).abs();
    let required = safe_longitudinal_distance(v_ego, v_other, other.kind, p);
    deficit_risk(required, gap, p.alpha_lon, p.beta_lon)
}

/// Lateral risk between the target state and one neighbour state.
pub fn pair_lateral_risk(ego: &AgentState, other: &AgentState, p: &RssParams) -> f64 {
    let (_, lat) = heading_axes(ego.heading);
    let offset = geom::dot(geom::sub(other.p, ego.p), lat);
    let axis = if offset < 0.0 {
        geom::scale(lat, -1.0)
    } else {
        lat
    };
    let v_ego = geom::dot(ego.v, axis);
    let v_other = geom::dot(other.v, axis);
    let required = safe_lateral_distance(v_ego, v_other, other.kind, p);
    deficit_risk(required, offset.abs(), p.alpha_lat, p.beta_lat)
}

/// Per-frame neighbour states of the target.
fn neighbors_at<'a>(scene: &'a Scene, frame: usize) -> impl Iterator<Item = &'a AgentState> + 'a {
    let ego = scene.target().states()[frame];
    let radius = scene.neighbor_radius();
    scene
        .others()
        .map(move |t| &t.states()[frame])
        .filter(move |s| geom::norm(geom::sub(s.p, ego.p)) <= radius)
}

/// Mean over frames of the per-frame maximum of `risk` over neighbours.
fn mean_max_over_neighbors(
    scene: &Scene,
    mut risk: impl FnMut(&AgentState, &AgentState) -> f64,
) -> f64 {
    let frames = scene.num_frames();
    let total: f64 = (0..frames)
        .map(|f| {
            let ego = &scene.target().states()[f];
            neighbors_at(scene, f)
                .map(|n| risk(ego, n))
                .fold(0.0, f64::max)
        })
        .sum();
    total / frames as f64
}

pub fn ittc_risk(scene: &Scene) -> f64 {
    ittc_risk_flagged(scene).0
}

fn ittc_risk_flagged(scene: &Scene) -> (f64, usize) {
    let mut coincident = 0;
    let r = mean_max_over_neighbors(scene, |ego, n| match pair_ittc(ego, n) {
        Some(x) => x,
        None => {
            coincident += 1;
            0.0
        }
    });
    (r, coincident)
}

pub fn rss_longitudinal(scene: &Scene, params: &RssParams) -> f64 {
    mean_max_over_neighbors(scene, |ego, n| pair_longitudinal_risk(ego, n, params))
}

pub fn rss_lateral(scene: &Scene, params: &RssParams) -> f64 {
    mean_max_over_neighbors(scene, |ego, n| pair_lateral_risk(ego, n, params))
}

pub fn global_scene_risk(scene: &Scene) -> GlobalRisk {
    global_scene_risk_with_radius(scene, scene.neighbor_radius())
}

/// Global risk with an explicit density radius. The neighbour set used for
/// instability is the union over frames of per-frame neighbours.
pub fn global_scene_risk_with_radius(scene: &Scene, density_radius: f64) -> GlobalRisk {
    global_scene_risk_flagged(scene, density_radius).0
}

fn global_scene_risk_flagged(scene: &Scene, density_radius: f64) -> (GlobalRisk, usize) {
    let frames = scene.num_frames();
    let agents: Vec<&[AgentState]> = scene.agents().map(|t| t.states()).collect();
    let n = agents.len();
    let mut coincident = 0;

    let r_mac = if n < 2 {
        0.0
    } else {
        let pairs = (n * (n - 1) / 2) as f64;
        let total: f64 = (0..frames)
            .map(|f| {
                let mut sum = 0.0;
                for i in 0..n {
                    for j in i + 1..n {
                        match pair_ittc(&agents[i][f], &agents[j][f]) {
                            Some(x) => sum += x,
                            None => coincident += 1,
                        }
                    }
                }
                sum / pairs
            })
            .sum();
        total / frames as f64
    };

    let area = std::f64::consts::PI * density_radius * density_radius;
    let target = scene.target().states();
    let r_ad = (0..frames)
        .map(|f| {
            scene
                .others()
                .filter(|t| geom::norm(geom::sub(t.states()[f].p, target[f].p)) <= density_radius)
                .count() as f64
                / area
        })
        .sum::<f64>()
        / frames as f64;

    let radius = scene.neighbor_radius();
    let neighbours: Vec<f64> = scene
        .others()
        .filter(|t| {
            t.states()
                .iter()
                .zip(target)
                .any(|(s, e)| geom::norm(geom::sub(s.p, e.p)) <= radius)
        })
        .map(|t| kinematic_dynamism(t).c_v)
        .collect();
    let r_ni = if neighbours.is_empty() {
        0.0
    } else {
        neighbours.iter().sum::<f64>() / neighbours.len() as f64
    };

    (GlobalRisk { r_mac, r_ad, r_ni }, coincident)
}

pub fn interaction_metrics(scene: &Scene, params: &RssParams) -> InteractionReport {
    let (r_ittc, coincident_local) = ittc_risk_flagged(scene);
    let (global, _) = global_scene_risk_flagged(scene, scene.neighbor_radius());
    let frames_without_neighbors = (0..scene.num_frames())
        .filter(|&f| neighbors_at(scene, f).next().is_none())
        .count();
    InteractionReport {
        metrics: InteractiveMetrics {
            r_ittc,
            r_lon: rss_longitudinal(scene, params),
            r_lat: rss_lateral(scene, params),
            r_mac: global.r_mac,
            r_ad: global.r_ad,
            r_ni: global.r_ni,
        },
        flags: InteractionFlags {
            coincident_pairs: coincident_local,
            frames_without_neighbors,
        },
    }
}
