//! Trajectory files.
//!
//! A trajectory is written as CSV with columns `t,x,y,u`, one row per
//! (time level, interior node), preceded by a `# config_hash: <hex>`
//! comment line. Floats use the shortest representation that parses back
//! to the same bits, so export followed by import is lossless.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::grid::{Domain1D, Field, TimeGrid, Trajectory};

pub const TRAJECTORY_COLUMNS: [&str; 4] = ["t", "x", "y", "u"];
const HASH_PREFIX: &str = "# config_hash:";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    x: f64,
    y: f64,
    u: f64,
}

/// JSON sidecar describing a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryMeta {
    pub schema_version: u32,
    pub config_hash: String,
    pub columns: Vec<String>,
    pub length: f64,
    pub n_interior: usize,
    pub horizon: f64,
    pub n_steps: usize,
    pub epsilon: f64,
    pub k: f64,
}

/// Contents of an imported trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFile {
    pub config_hash: Option<String>,
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub y: Trajectory,
    pub u: Trajectory,
}

pub fn write_trajectory_csv<W: Write>(
    mut out: W,
    dom: &Domain1D,
    tg: &TimeGrid,
    traj: &ForwardTrajectory,
    config_hash: &str,
) -> Result<()> {
    if traj.y.len() != tg.n_steps() + 1 {
        return Err(Error::DimensionMismatch {
            expected: tg.n_steps() + 1,
            got: traj.y.len(),
        });
    }
    writeln!(out, "{HASH_PREFIX} {config_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    for (n, (y, vel)) in traj.y.frames().iter().zip(&traj.velocity).enumerate() {
        for i in 0..dom.n() {
            w.serialize(Row {
                t: tg.t(n),
                x: dom.x(i),
                y: y[i],
                u: vel.u[i],
            })
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<TrajectoryFile> {
    let mut reader = BufReader::new(input);
    let mut config_hash = None;
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(rest) = line.strip_prefix(HASH_PREFIX) {
            config_hash = Some(rest.trim().to_string());
        } else if !line.starts_with('#') {
            body.push_str(&line);
        }
    }
    reader.read_to_string(&mut body)?;
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != TRAJECTORY_COLUMNS {
        return Err(Error::Format(format!(
            "expected columns {TRAJECTORY_COLUMNS:?}, found {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let rows: Vec<Row> = rdr
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    let t0 = rows[0].t;
    let width = rows
        .iter()
        .take_while(|r| r.t.to_bits() == t0.to_bits())
        .count();
    if !rows.len().is_multiple_of(width) {
        return Err(Error::Format(format!(
            "{} rows do not split into frames of {width} nodes",
            rows.len()
        )));
    }
    let nodes: Vec<f64> = rows[..width].iter().map(|r| r.x).collect();
    let mut times = Vec::new();
    let mut y = Vec::new();
    let mut u = Vec::new();
    for (k, chunk) in rows.chunks(width).enumerate() {
        let t = chunk[0].t;
        if chunk.iter().any(|r| r.t.to_bits() != t.to_bits()) {
            return Err(Error::Format(format!("frame {k} mixes time levels")));
        }
        if chunk
            .iter()
            .zip(&nodes)
            .any(|(r, x)| r.x.to_bits() != x.to_bits())
        {
            return Err(Error::Format(format!("frame {k} has different nodes")));
        }
        if times.last().is_some_and(|p: &f64| *p >= t) {
            return Err(Error::Format(format!(
                "time levels not increasing at frame {k}"
            )));
        }
        times.push(t);
        y.push(Field::from(chunk.iter().map(|r| r.y).collect::<Vec<_>>()));
        u.push(Field::from(chunk.iter().map(|r| r.u).collect::<Vec<_>>()));
    }
    Ok(TrajectoryFile {
        config_hash,
        times,
        nodes,
        y: Trajectory::new(y)?,
        u: Trajectory::new(u)?,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{Control, ForwardSolver, ModelParams};
    use std::f64::consts::PI;

    fn run() -> (Domain1D, TimeGrid, ForwardTrajectory) {
        let dom = Domain1D::new(1.3, 12).unwrap();
        let tg = TimeGrid::new(0.7, 9).unwrap();
        let s = ForwardSolver::new(dom, tg, ModelParams::new(0.1, 1.0).unwrap());
        let y0 = dom.sample(|x| (PI * x / 1.3).sin().powi(3) / 3.0);
        let t = s.solve(&y0, &Control::zeros(9, 12)).unwrap();
        (dom, tg, t)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (dom, tg, t) = run();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &dom, &tg, &t, "abc123").unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back.config_hash.as_deref(), Some("abc123"));
        assert_eq!(back.times.len(), 10);
        for n in 0..10 {
            assert_eq!(back.times[n].to_bits(), tg.t(n).to_bits());
            for i in 0..12 {
                assert_eq!(back.y.frame(n)[i].to_bits(), t.y.frame(n)[i].to_bits());
                assert_eq!(back.u.frame(n)[i].to_bits(), t.velocity[n].u[i].to_bits());
            }
        }
        let mut again = Vec::new();
        write_trajectory_csv(&mut again, &dom, &tg, &t, "abc123").unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn header_and_first_row() {
        let (dom, tg, t) = run();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &dom, &tg, &t, "h").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# config_hash: h"));
        assert_eq!(lines.next(), Some("t,x,y,u"));
        assert_eq!(text.lines().count(), 2 + 10 * 12);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(read_trajectory_csv("a,b\n1,2\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,x,y,u\n".as_bytes()).is_err());
        assert!(read_trajectory_csv("t,x,y,u\n0,0.1,1,1\n0,0.2,1,oops\n".as_bytes()).is_err());
        // second frame uses other nodes
        let bad = "t,x,y,u\n0,0.1,1,1\n0,0.2,1,1\n1,0.1,1,1\n1,0.3,1,1\n";
        assert!(matches!(
            read_trajectory_csv(bad.as_bytes()),
            Err(Error::Format(_))
        ));
        // ragged last frame
        let bad = "t,x,y,u\n0,0.1,1,1\n0,0.2,1,1\n1,0.1,1,1\n";
        assert!(read_trajectory_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn meta_rejects_unknown_keys() {
        let meta = TrajectoryMeta {
            schema_version: 1,
            config_hash: "x".into(),
            columns: TRAJECTORY_COLUMNS.iter().map(|s| s.to_string()).collect(),
            length: 1.0,
            n_interior: 4,
            horizon: 1.0,
            n_steps: 2,
            epsilon: 0.1,
            k: 1.0,
        };
        let mut v = serde_json::to_value(&meta).unwrap();
        assert_eq!(
            serde_json::from_value::<TrajectoryMeta>(v.clone()).unwrap(),
            meta
        );
        v["extra"] = serde_json::json!(1);
        assert!(serde_json::from_value::<TrajectoryMeta>(v).is_err());
    }
}
