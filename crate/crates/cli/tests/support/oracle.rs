//! Direct-summation reference implementation of the fourteen scene metrics,
//! written from the definitions with explicit loops over raw states and no
//! calls into the metric modules.

#![allow(clippy::needless_range_loop)]

use std::f64::consts::PI;

use tailscope::{AgentKind, AgentState, RssParams, Scene};

const EPS_SPEED: f64 = 0.1;
const EPS_DIST: f64 = 0.01;

fn wrap(d: f64) -> f64 {
    d.sin().atan2(d.cos())
}

fn hyp(x: f64, y: f64) -> f64 {
    (x * x + y * y).sqrt()
}

/// The eight intrinsic metrics of one agent.
pub fn intrinsic(s: &[AgentState], dt: f64) -> [f64; 8] {
    let n = s.len();
    let mut ax = Vec::new();
    let mut ay = Vec::new();
    for k in 1..n {
        ax.push((s[k].v[0] - s[k - 1].v[0]) / dt);
        ay.push((s[k].v[1] - s[k - 1].v[1]) / dt);
    }

    let mut sq = 0.0;
    for k in 0..ax.len() {
        sq += ax[k] * ax[k] + ay[k] * ay[k];
    }
    let c_v = if ax.is_empty() {
        0.0
    } else {
        (sq / ax.len() as f64).sqrt()
    };

    let mut sq = 0.0;
    let mut count = 0;
    for k in 1..ax.len() {
        let jx = (ax[k] - ax[k - 1]) / dt;
        let jy = (ay[k] - ay[k - 1]) / dt;
        sq += jx * jx + jy * jy;
        count += 1;
    }
    let c_j = if count == 0 {
        0.0
    } else {
        (sq / count as f64).sqrt()
    };

    let mut omega = Vec::new();
    for k in 1..n {
        omega.push(wrap(s[k].heading - s[k - 1].heading) / dt);
    }
    let mut sq = 0.0;
    for w in &omega {
        sq += w * w;
    }
    let c_omega = if omega.is_empty() {
        0.0
    } else {
        (sq / omega.len() as f64).sqrt()
    };
    let mut sq = 0.0;
    let mut count = 0;
    for k in 1..omega.len() {
        let a = (omega[k] - omega[k - 1]) / dt;
        sq += a * a;
        count += 1;
    }
    let c_alpha = if count == 0 {
        0.0
    } else {
        (sq / count as f64).sqrt()
    };

    let mut sq = 0.0;
    let mut count = 0;
    for k in 1..n {
        let (p, q) = (s[k - 1].v, s[k].v);
        if hyp(p[0], p[1]) >= EPS_SPEED && hyp(q[0], q[1]) >= EPS_SPEED {
            let r = wrap(q[1].atan2(q[0]) - p[1].atan2(p[0])) / dt;
            sq += r * r;
            count += 1;
        }
    }
    let c_vd = if count == 0 {
        0.0
    } else {
        (sq / count as f64).sqrt()
    };

    let mut kappa = Vec::new();
    for k in 1..n {
        let v = s[k].v;
        let speed = hyp(v[0], v[1]);
        if speed < EPS_SPEED {
            kappa.push(0.0);
        } else {
            let a = [ax[k - 1], ay[k - 1]];
            kappa.push((v[0] * a[1] - v[1] * a[0]).abs() / (speed * speed * speed));
        }
    }
    let mut sum = 0.0;
    for x in &kappa {
        sum += x.abs();
    }
    let c_kappa = if kappa.is_empty() {
        0.0
    } else {
        sum / kappa.len() as f64
    };
    let mut sum = 0.0;
    let mut count = 0;
    for k in 1..kappa.len() {
        sum += ((kappa[k] - kappa[k - 1]) / dt).abs();
        count += 1;
    }
    let c_dkappa = if count == 0 { 0.0 } else { sum / count as f64 };

    let c_dgamma = if n < 3 {
        0.0
    } else {
        let (mut mx, mut my) = (0.0, 0.0);
        for st in s {
            mx += st.v[0];
            my += st.v[1];
        }
        mx /= n as f64;
        my /= n as f64;
        let mut gamma = vec![0.0; n];
        for (tau, g) in gamma.iter_mut().enumerate() {
            let mut acc = 0.0;
            for t in 0..n - tau {
                acc += (s[t].v[0] - mx) * (s[t + tau].v[0] - mx)
                    + (s[t].v[1] - my) * (s[t + tau].v[1] - my);
            }
            *g = acc / (n - tau) as f64;
        }
        let mut total = 0.0;
        for tau in 1..n {
            total += (gamma[tau] - gamma[tau - 1]).abs();
        }
        total / (n - 1) as f64
    };

    [
        c_v, c_j, c_omega, c_alpha, c_vd, c_kappa, c_dkappa, c_dgamma,
    ]
}

fn ittc(a: &AgentState, b: &AgentState) -> f64 {
    let (dx, dy) = (b.p[0] - a.p[0], b.p[1] - a.p[1]);
    let d2 = dx * dx + dy * dy;
    if d2 < EPS_DIST * EPS_DIST {
        return 0.0;
    }
    let closing = -((b.v[0] - a.v[0]) * dx + (b.v[1] - a.v[1]) * dy);
    if closing > 0.0 {
        closing / d2
    } else {
        0.0
    }
}

fn risk(required: f64, gap: f64, alpha: f64, beta: f64) -> f64 {
    if required <= 0.0 || gap >= required {
        return 0.0;
    }
    1.0 - (1.0 + (required - gap) / (beta * required)).powf(-alpha)
}

fn lon_risk(e: &AgentState, o: &AgentState, p: &RssParams) -> f64 {
    let (ux, uy) = (e.heading.cos(), e.heading.sin());
    let ve = e.v[0] * ux + e.v[1] * uy;
    let vo = if o.kind == AgentKind::Vehicle {
        o.v[0] * ux + o.v[1] * uy
    } else {
        0.0
    };
    let gap = ((o.p[0] - e.p[0]) * ux + (o.p[1] - e.p[1]) * uy).abs();
    let r = p.rho;
    let mut d =
        ve * r + p.a_max * r * r / 2.0 + (ve + r * p.a_max) * (ve + r * p.a_max) / (2.0 * p.b_min)
            - vo * vo / (2.0 * p.b_max);
    if d < 0.0 {
        d = 0.0;
    }
    risk(d, gap, p.alpha_lon, p.beta_lon)
}

fn lat_risk(e: &AgentState, o: &AgentState, p: &RssParams) -> f64 {
    let (mut nx, mut ny) = (-e.heading.sin(), e.heading.cos());
    let mut off = (o.p[0] - e.p[0]) * nx + (o.p[1] - e.p[1]) * ny;
    if off < 0.0 {
        nx = -nx;
        ny = -ny;
        off = -off;
    }
    let vi = e.v[0] * nx + e.v[1] * ny;
    let vj = o.v[0] * nx + o.v[1] * ny;
    let r = p.rho;
    let rj = if o.kind == AgentKind::Pedestrian {
        p.rho_ped
    } else {
        p.rho
    };
    let vi_r = vi + p.a_lat_max * r;
    let vj_r = vj - p.a_lat_max * rj;
    let brake_j = if o.kind == AgentKind::Vehicle {
        vj_r * vj_r / (2.0 * p.b_lat_min)
    } else {
        0.0
    };
    let inner = (vi + vi_r) / 2.0 * r + vi_r * vi_r / (2.0 * p.b_lat_min)
        - ((vj + vj_r) / 2.0 * rj - brake_j);
    let d = p.mu_lat + if inner > 0.0 { inner } else { 0.0 };
    risk(d, off, p.alpha_lat, p.beta_lat)
}

/// The six interactive metrics of the scene target.
pub fn interactive(scene: &Scene, p: &RssParams) -> [f64; 6] {
    let all: Vec<&[AgentState]> = scene.agents().map(|t| t.states()).collect();
    let ego = scene.target().states();
    let others: Vec<&[AgentState]> = scene
        .agents()
        .filter(|t| t.agent_id() != scene.target_id())
        .map(|t| t.states())
        .collect();
    let frames = ego.len();
    let radius = scene.neighbor_radius();
    let near = |o: &AgentState, e: &AgentState| hyp(o.p[0] - e.p[0], o.p[1] - e.p[1]) <= radius;

    let (mut sum_ittc, mut sum_lon, mut sum_lat, mut sum_ad) = (0.0, 0.0, 0.0, 0.0);
    for f in 0..frames {
        let (mut m_ittc, mut m_lon, mut m_lat) = (0.0f64, 0.0f64, 0.0f64);
        let mut count = 0;
        for o in &others {
            if near(&o[f], &ego[f]) {
                m_ittc = m_ittc.max(ittc(&ego[f], &o[f]));
                m_lon = m_lon.max(lon_risk(&ego[f], &o[f], p));
                m_lat = m_lat.max(lat_risk(&ego[f], &o[f], p));
                count += 1;
            }
        }
        sum_ittc += m_ittc;
        sum_lon += m_lon;
        sum_lat += m_lat;
        sum_ad += count as f64 / (PI * radius * radius);
    }
    let nf = frames as f64;

    let n = all.len();
    let r_mac = if n < 2 {
        0.0
    } else {
        let mut total = 0.0;
        for f in 0..frames {
            let mut s = 0.0;
            for i in 0..n {
                for j in i + 1..n {
                    s += ittc(&all[i][f], &all[j][f]);
                }
            }
            total += s / (n * (n - 1) / 2) as f64;
        }
        total / nf
    };

    let mut ni_sum = 0.0;
    let mut ni_count = 0;
    for o in &others {
        if (0..frames).any(|f| near(&o[f], &ego[f])) {
            ni_sum += intrinsic(o, scene.dt())[0];
            ni_count += 1;
        }
    }
    let r_ni = if ni_count == 0 {
        0.0
    } else {
        ni_sum / ni_count as f64
    };

    [
        sum_ittc / nf,
        sum_lon / nf,
        sum_lat / nf,
        r_mac,
        sum_ad / nf,
        r_ni,
    ]
}
