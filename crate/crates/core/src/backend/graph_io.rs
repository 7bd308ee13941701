//! Line-oriented pose-graph text format.
//!
//! ```text
//! # comment
//! VERTEX id x y z yaw
//! EDGE ODOMETRY i j dx dy dz dyaw  I00 I01 I02 I03 I11 I12 I13 I22 I23 I33
//! EDGE LOOP i j dx dy dz dyaw  I00 ... I33
//! EDGE REGISTRATION i j precision
//! ```
//!
//! The ten trailing numbers of a relative edge are the upper triangle of
//! its information matrix, row by row. Registration edges are written
//! without their samples.

use std::io::{BufRead, Write};

use nalgebra::Matrix4;

use super::{BackendError, EdgeKind, PoseGraphEdge};
use crate::submap::SubmapPose;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseGraphFile {
    pub vertices: Vec<(usize, SubmapPose)>,
    pub edges: Vec<PoseGraphEdge>,
}

fn kind_name(kind: EdgeKind) -> &'static str {
    match kind {
        EdgeKind::Odometry => "ODOMETRY",
        EdgeKind::LoopClosure => "LOOP",
        EdgeKind::Registration => "REGISTRATION",
    }
}

pub fn write_pose_graph<W: Write>(graph: &PoseGraphFile, mut out: W) -> Result<(), BackendError> {
    for (id, p) in &graph.vertices {
        let [x, y, z, yaw] = p.to_array();
        writeln!(out, "VERTEX {id} {x:e} {y:e} {z:e} {yaw:e}")?;
    }
    for e in &graph.edges {
        write!(out, "EDGE {} {} {}", kind_name(e.kind), e.i, e.j)?;
        if e.kind == EdgeKind::Registration {
            writeln!(out, " {:e}", e.precision)?;
            continue;
        }
        for v in e.measurement.to_array() {
            write!(out, " {v:e}")?;
        }
        for r in 0..4 {
            for c in r..4 {
                write!(out, " {:e}", e.information[(r, c)])?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_pose_graph<R: BufRead>(input: R) -> Result<PoseGraphFile, BackendError> {
    let mut graph = PoseGraphFile::default();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let err = |msg: &str| BackendError::Parse {
            line: k + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() || f[0].starts_with('#') {
            continue;
        }
        let num = |i: usize| -> Result<f64, BackendError> {
            f.get(i)
                .ok_or_else(|| err("missing field"))?
                .parse::<f64>()
                .map_err(|_| err(&format!("bad number '{}'", f[i])))
        };
        let id = |i: usize| -> Result<usize, BackendError> {
            f.get(i)
                .ok_or_else(|| err("missing field"))?
                .parse::<usize>()
                .map_err(|_| err(&format!("bad id '{}'", f[i])))
        };
        match f[0] {
            "VERTEX" => {
                if f.len() != 6 {
                    return Err(err("VERTEX takes 5 fields"));
                }
                graph
                    .vertices
                    .push((id(1)?, SubmapPose::new(num(2)?, num(3)?, num(4)?, num(5)?)));
            }
            "EDGE" => {
                let kind = match f.get(1).copied() {
                    Some("ODOMETRY") => EdgeKind::Odometry,
                    Some("LOOP") => EdgeKind::LoopClosure,
                    Some("REGISTRATION") => EdgeKind::Registration,
                    _ => return Err(err("unknown edge kind")),
                };
                let (i, j) = (id(2)?, id(3)?);
                if kind == EdgeKind::Registration {
                    if f.len() != 5 {
                        return Err(err("REGISTRATION edge takes 4 fields"));
                    }
                    graph.edges.push(PoseGraphEdge::registration(i, j, num(4)?, Vec::new()));
                    continue;
                }
                if f.len() != 18 {
                    return Err(err("relative edge takes 17 fields"));
                }
                let m = SubmapPose::new(num(4)?, num(5)?, num(6)?, num(7)?);
                let mut info = Matrix4::zeros();
                let mut at = 8;
                for r in 0..4 {
                    for c in r..4 {
                        info[(r, c)] = num(at)?;
                        info[(c, r)] = info[(r, c)];
                        at += 1;
                    }
                }
                graph.edges.push(PoseGraphEdge {
                    kind,
                    ..PoseGraphEdge::odometry(i, j, m, info)
                });
            }
            other => return Err(err(&format!("unknown record '{other}'"))),
        }
    }
    Ok(graph)
}
