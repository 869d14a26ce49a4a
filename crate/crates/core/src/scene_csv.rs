//! Scene CSV ingestion and export.
//!
//! Header: `scene_id,agent_id,frame,t,x,y,vx,vy,heading,kind`, optionally
//! followed by `target` (value `1` on exactly one agent per scene).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::trajectory::{
    first_irregular_gap, modal_gap, AgentKind, AgentState, Scene, Trajectory,
    DEFAULT_NEIGHBOR_RADIUS,
};

const COLUMNS: [&str; 10] = [
    "scene_id", "agent_id", "frame", "t", "x", "y", "vx", "vy", "heading", "kind",
];

struct Row {
    line: u64,
    frame: i64,
    state: AgentState,
    target: bool,
}

/// Orders agent ids numerically when both parse as integers, else lexically.
fn agent_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        _ => a.cmp(b),
    }
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<&'r str> {
    rec.get(idx).map(str::trim).ok_or_else(|| Error::Parse {
        line,
        message: format!("missing column {name}"),
    })
}

fn number(rec: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let raw = field(rec, idx, name, line)?;
    raw.parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("column {name}: {raw:?} is not a number"),
    })
}

/// Parses every scene in a CSV stream, using the default neighbour radius.
pub fn parse_scene_csv<R: Read>(reader: R) -> Result<Vec<Scene>> {
    parse_scene_csv_with_radius(reader, DEFAULT_NEIGHBOR_RADIUS)
}

pub fn parse_scene_csv_with_radius<R: Read>(reader: R, neighbor_radius: f64) -> Result<Vec<Scene>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut idx = [0usize; 10];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing header column {name}"),
            })?;
    }
    let target_idx = headers.iter().position(|h| h.trim() == "target");

    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<Row>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let scene_id = field(&rec, idx[0], "scene_id", line)?.to_string();
        let agent_id = field(&rec, idx[1], "agent_id", line)?.to_string();
        if scene_id.is_empty() || agent_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty scene_id or agent_id".into(),
            });
        }
        let frame_raw = field(&rec, idx[2], "frame", line)?;
        let frame = frame_raw.parse::<i64>().map_err(|_| Error::Parse {
            line,
            message: format!("column frame: {frame_raw:?} is not an integer"),
        })?;
        let t = number(&rec, idx[3], "t", line)?;
        let x = number(&rec, idx[4], "x", line)?;
        let y = number(&rec, idx[5], "y", line)?;
        let vx = number(&rec, idx[6], "vx", line)?;
        let vy = number(&rec, idx[7], "vy", line)?;
        let heading = number(&rec, idx[8], "heading", line)?;
        let kind: AgentKind = field(&rec, idx[9], "kind", line)?
            .parse()
            .map_err(|e: Error| Error::validation(format!("line {line}: {e}")))?;
        let target = match target_idx {
            Some(i) => match rec.get(i).map(str::trim) {
                Some("1") => true,
                Some("0") | Some("") | None => false,
                Some(other) => {
                    return Err(Error::Parse {
                        line,
                        message: format!("column target: expected 0 or 1, got {other:?}"),
                    })
                }
            },
            None => false,
        };
        let state = AgentState::new(t, [x, y], [vx, vy], heading, kind);
        grouped
            .entry(scene_id)
            .or_default()
            .entry(agent_id)
            .or_default()
            .push(Row {
                line,
                frame,
                state,
                target,
            });
    }

    grouped
        .into_iter()
        .map(|(scene_id, agents)| {
            build_scene(scene_id, agents, target_idx.is_some(), neighbor_radius)
        })
        .collect()
}

fn build_scene(
    scene_id: String,
    agents: BTreeMap<String, Vec<Row>>,
    has_target_column: bool,
    neighbor_radius: f64,
) -> Result<Scene> {
    let mut agents: Vec<(String, Vec<Row>)> = agents.into_iter().collect();
    for (agent_id, rows) in &mut agents {
        rows.sort_by_key(|r| r.frame);
        if let Some(w) = rows.windows(2).find(|w| w[0].frame == w[1].frame) {
            return Err(Error::Parse {
                line: w[1].line,
                message: format!(
                    "scene {scene_id} agent {agent_id}: duplicate frame {}",
                    w[1].frame
                ),
            });
        }
        if let Some(w) = rows.windows(2).find(|w| w[0].state.kind != w[1].state.kind) {
            return Err(Error::validation(format!(
                "scene {scene_id} agent {agent_id}: kind changes at frame {}",
                w[1].frame
            )));
        }
    }

    let gaps = agents
        .iter()
        .flat_map(|(_, rows)| rows.windows(2).map(|w| w[1].state.t - w[0].state.t));
    let dt = modal_gap(gaps).ok_or_else(|| {
        Error::validation(format!(
            "scene {scene_id}: every agent needs at least 2 frames"
        ))
    })?;

    let target_id = if has_target_column {
        let flagged: Vec<&str> = agents
            .iter()
            .filter(|(_, rows)| rows.iter().any(|r| r.target))
            .map(|(id, _)| id.as_str())
            .collect();
        match flagged.as_slice() {
            [one] => one.to_string(),
            [] => {
                return Err(Error::validation(format!(
                    "scene {scene_id}: no agent flagged as target"
                )))
            }
            many => {
                return Err(Error::validation(format!(
                    "scene {scene_id}: {} agents flagged as target",
                    many.len()
                )))
            }
        }
    } else {
        agents
            .iter()
            .map(|(id, _)| id.as_str())
            .min_by(|a, b| agent_order(a, b))
            .expect("grouped scenes are nonempty")
            .to_string()
    };

    let mut trajectories = Vec::with_capacity(agents.len());
    for (agent_id, rows) in agents {
        let times: Vec<f64> = rows.iter().map(|r| r.state.t).collect();
        if let Some(i) = first_irregular_gap(&times, dt) {
            return Err(Error::validation(format!(
                "scene {scene_id} agent {agent_id}: frame {} (line {}, t = {}) breaks the uniform dt = {dt}",
                rows[i].frame, rows[i].line, times[i]
            )));
        }
        let states = rows.into_iter().map(|r| r.state).collect();
        trajectories.push(Trajectory::with_dt(agent_id, states, dt)?);
    }
    Scene::new(scene_id, trajectories, target_id, neighbor_radius)
}

/// Writes scenes in the CSV format read by [`parse_scene_csv`], including the
/// `target` column. Floats use the shortest representation that round-trips.
pub fn write_scene_csv<W: Write>(scenes: &[Scene], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    header.push("target");
    w.write_record(&header).map_err(csv_io)?;
    for scene in scenes {
        for traj in scene.agents() {
            let is_target = if traj.agent_id() == scene.target_id() {
                "1"
            } else {
                "0"
            };
            for (frame, s) in traj.states().iter().enumerate() {
                w.write_record([
                    scene.scene_id().to_string(),
                    traj.agent_id().to_string(),
                    frame.to_string(),
                    s.t.to_string(),
                    s.p[0].to_string(),
                    s.p[1].to_string(),
                    s.v[0].to_string(),
                    s.v[1].to_string(),
                    s.heading.to_string(),
                    s.kind.to_string(),
                    is_target.to_string(),
                ])
                .map_err(csv_io)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "scene_id,agent_id,frame,t,x,y,vx,vy,heading,kind\n";

    #[test]
    fn minimal_two_rows() {
        let csv = format!("{HEADER}s1,7,0,0.0,0,0,1,0,0,vehicle\ns1,7,1,0.5,0.5,0,1,0,0,vehicle\n");
        let scenes = parse_scene_csv(csv.as_bytes()).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].dt(), 0.5);
        assert_eq!(scenes[0].num_agents(), 1);
        assert_eq!(scenes[0].target().len(), 2);
    }

    #[test]
    fn non_uniform_gap_names_the_frame() {
        let csv = format!(
            "{HEADER}s,a,0,0.0,0,0,1,0,0,vehicle\ns,a,1,0.5,0,0,1,0,0,vehicle\ns,a,2,1.2,0,0,1,0,0,vehicle\n"
        );
        let err = parse_scene_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("frame 2"), "{err}");
    }

    #[test]
    fn unknown_kind_is_validation_error() {
        let csv = format!("{HEADER}s,a,0,0,0,0,0,0,0,bicycle\ns,a,1,1,0,0,0,0,0,bicycle\n");
        assert!(matches!(
            parse_scene_csv(csv.as_bytes()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = format!("{HEADER}s,a,0,0,0,0,0,0,0,vehicle\ns,a,1,abc,0,0,0,0,0,vehicle\n");
        match parse_scene_csv(csv.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = format!("{HEADER}s,a,0,0,0\n");
        assert!(matches!(
            parse_scene_csv(short.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn lowest_agent_id_is_target_numerically() {
        let mut csv = HEADER.to_string();
        for id in ["10", "9"] {
            for f in 0..2 {
                csv.push_str(&format!("s,{id},{f},{f},0,0,0,0,0,vehicle\n"));
            }
        }
        let scenes = parse_scene_csv(csv.as_bytes()).unwrap();
        assert_eq!(scenes[0].target_id(), "9");
    }

    #[test]
    fn target_column_picks_flagged_agent() {
        let mut csv = "scene_id,agent_id,frame,t,x,y,vx,vy,heading,kind,target\n".to_string();
        for (id, flag) in [("a", 0), ("b", 1)] {
            for f in 0..2 {
                csv.push_str(&format!("s,{id},{f},{f},0,0,0,0,0,vehicle,{flag}\n"));
            }
        }
        assert_eq!(parse_scene_csv(csv.as_bytes()).unwrap()[0].target_id(), "b");
        let none = csv.replace(",1\n", ",0\n");
        assert!(parse_scene_csv(none.as_bytes()).is_err());
    }

    #[test]
    fn rows_are_sorted_by_frame() {
        let csv = format!("{HEADER}s,a,1,0.1,1,0,0,0,0,vehicle\ns,a,0,0.0,0,0,0,0,0,vehicle\n");
        let scenes = parse_scene_csv(csv.as_bytes()).unwrap();
        assert_eq!(scenes[0].target().states()[0].p[0], 0.0);
    }
}
