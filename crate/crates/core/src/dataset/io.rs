use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use super::{DatasetError, DatasetFrameRecord, Trajectory};
use crate::backend::{read_pose_graph, write_pose_graph, PoseGraphEdge, PoseGraphFile};
use crate::submap::SubmapPose;

const HEADER: &str = "timestamp,x,y,z,yaw";

fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("frames").join(format!("{index:06}.bin"))
}

fn open(path: &Path) -> Result<File, DatasetError> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => DatasetError::MissingFile(path.to_path_buf()),
        _ => e.into(),
    })
}

fn parse_pose_row(line: &str) -> Result<(f64, SubmapPose), String> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != 5 {
        return Err(format!("expected 5 fields, found {}", f.len()));
    }
    let mut v = [0.0f64; 5];
    for (k, s) in f.iter().enumerate() {
        v[k] = s.parse().map_err(|_| format!("bad number '{s}'"))?;
        if !v[k].is_finite() {
            return Err(format!("non-finite value '{s}'"));
        }
    }
    Ok((v[0], SubmapPose::new(v[1], v[2], v[3], v[4])))
}

fn write_pose_row<W: Write>(out: &mut W, t: f64, p: &SubmapPose) -> std::io::Result<()> {
    let [x, y, z, yaw] = p.to_array();
    writeln!(out, "{t},{x},{y},{z},{yaw}")
}

/// Streams frames of a dataset directory in file order. Rows that fail to
/// parse, frames whose point file is broken and non-increasing timestamps
/// are reported as `Err` items; iteration continues past them.
pub struct DatasetReader {
    dir: PathBuf,
    poses_path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: usize,
    index: usize,
    last_timestamp: Option<f64>,
    header_seen: bool,
}

/// Opens a dataset directory for streaming.
pub fn read_dataset(dir: &Path) -> Result<DatasetReader, DatasetError> {
    let poses_path = dir.join("poses.csv");
    let lines = BufReader::new(open(&poses_path)?).lines();
    Ok(DatasetReader {
        dir: dir.to_path_buf(),
        poses_path,
        lines,
        line_no: 0,
        index: 0,
        last_timestamp: None,
        header_seen: false,
    })
}

impl DatasetReader {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn parse_error(&self, msg: String) -> DatasetError {
        DatasetError::Parse {
            file: self.poses_path.clone(),
            line: self.line_no,
            msg,
        }
    }
}

impl Iterator for DatasetReader {
    type Item = Result<DatasetFrameRecord, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !self.header_seen {
                self.header_seen = true;
                if line.replace(' ', "") == HEADER {
                    continue;
                }
                return Some(Err(self.parse_error(format!("expected header '{HEADER}'"))));
            }
            let index = self.index;
            self.index += 1;
            let (timestamp, pose) = match parse_pose_row(line) {
                Ok(r) => r,
                Err(msg) => return Some(Err(self.parse_error(msg))),
            };
            if self.last_timestamp.is_some_and(|last| timestamp <= last) {
                return Some(Err(DatasetError::NonIncreasingTimestamp {
                    file: self.poses_path.clone(),
                    line: self.line_no,
                    timestamp,
                }));
            }
            self.last_timestamp = Some(timestamp);
            return Some(read_frame_file(&frame_path(&self.dir, index)).map(|(points, colors)| DatasetFrameRecord {
                timestamp,
                odometry_pose: pose,
                points,
                colors,
            }));
        }
    }
}

type FramePayload = (Vec<[f32; 3]>, Option<Vec<[u8; 3]>>);

fn read_frame_file(path: &Path) -> Result<FramePayload, DatasetError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(DatasetError::MissingFile(path.to_path_buf())),
        Err(e) => return Err(e.into()),
    };
    decode_frame(&bytes).ok_or_else(|| DatasetError::CountMismatch {
        file: path.to_path_buf(),
        expected: bytes
            .get(..4)
            .map_or(0, |h| u32::from_le_bytes(h.try_into().unwrap()) as usize),
        actual: bytes.len().saturating_sub(4),
    })
}

fn decode_frame(bytes: &[u8]) -> Option<FramePayload> {
    let count = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let body = &bytes[4..];
    let coords = count.checked_mul(12)?;
    let has_colors = match body.len() {
        n if n == coords => false,
        n if Some(n) == coords.checked_add(count * 3) => true,
        _ => return None,
    };
    let points = body[..coords]
        .chunks_exact(12)
        .map(|c| std::array::from_fn(|k| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap())))
        .collect();
    let colors = has_colors.then(|| body[coords..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
    Some((points, colors))
}

fn encode_frame(record: &DatasetFrameRecord) -> Result<Vec<u8>, DatasetError> {
    let n = record.points.len();
    let mut buf = Vec::with_capacity(4 + 15 * n);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for p in &record.points {
        for c in p {
            buf.extend_from_slice(&c.to_le_bytes());
        }
    }
    if let Some(colors) = &record.colors {
        if colors.len() != n {
            return Err(DatasetError::ColorCountMismatch {
                points: n,
                colors: colors.len(),
            });
        }
        buf.extend(colors.iter().flatten());
    }
    Ok(buf)
}

/// Writes frames one at a time into a dataset directory.
pub struct DatasetWriter {
    dir: PathBuf,
    poses: BufWriter<File>,
    index: usize,
    last_timestamp: Option<f64>,
}

impl DatasetWriter {
    pub fn create(dir: &Path) -> Result<Self, DatasetError> {
        fs::create_dir_all(dir.join("frames"))?;
        let mut poses = BufWriter::new(File::create(dir.join("poses.csv"))?);
        writeln!(poses, "{HEADER}")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            poses,
            index: 0,
            last_timestamp: None,
        })
    }

    pub fn write_frame(&mut self, record: &DatasetFrameRecord) -> Result<(), DatasetError> {
        if self.last_timestamp.is_some_and(|t| record.timestamp <= t) {
            return Err(DatasetError::NonIncreasingTimestamp {
                file: self.dir.join("poses.csv"),
                line: self.index + 2,
                timestamp: record.timestamp,
            });
        }
        fs::write(frame_path(&self.dir, self.index), encode_frame(record)?)?;
        write_pose_row(&mut self.poses, record.timestamp, &record.odometry_pose)?;
        self.last_timestamp = Some(record.timestamp);
        self.index += 1;
        Ok(())
    }

    pub fn write_loops(&self, loops: &[PoseGraphEdge]) -> Result<(), DatasetError> {
        let graph = PoseGraphFile {
            vertices: Vec::new(),
            edges: loops.to_vec(),
        };
        let mut out = BufWriter::new(File::create(self.dir.join("loops.txt"))?);
        write_pose_graph(&graph, &mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_ground_truth(&self, trajectory: &Trajectory) -> Result<(), DatasetError> {
        write_trajectory(&self.dir.join("ground_truth.csv"), trajectory)
    }

    pub fn finish(mut self) -> Result<(), DatasetError> {
        self.poses.flush()?;
        Ok(())
    }
}

/// Writes a whole dataset. `loops` and `ground_truth` are optional files.
pub fn write_dataset<'a>(
    dir: &Path,
    frames: impl IntoIterator<Item = &'a DatasetFrameRecord>,
    loops: Option<&[PoseGraphEdge]>,
    ground_truth: Option<&Trajectory>,
) -> Result<(), DatasetError> {
    let mut w = DatasetWriter::create(dir)?;
    for f in frames {
        w.write_frame(f)?;
    }
    if let Some(l) = loops {
        w.write_loops(l)?;
    }
    if let Some(gt) = ground_truth {
        w.write_ground_truth(gt)?;
    }
    w.finish()
}

/// Loop-closure edges between frame indices; a missing file means none.
pub fn read_loops(dir: &Path) -> Result<Vec<PoseGraphEdge>, DatasetError> {
    let path = dir.join("loops.txt");
    if !path.exists() {
        return Ok(Vec::new());
    }
    let graph = read_pose_graph(BufReader::new(open(&path)?)).map_err(|e| match e {
        crate::backend::BackendError::Parse { line, msg } => DatasetError::Parse { file: path.clone(), line, msg },
        other => other.into(),
    })?;
    Ok(graph.edges)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, DatasetError> {
    let mut t = Trajectory::new();
    let mut header_seen = false;
    for (k, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let err = |msg: String| DatasetError::Parse {
            file: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            header_seen = true;
            if line.replace(' ', "") == HEADER {
                continue;
            }
            return Err(err(format!("expected header '{HEADER}'")));
        }
        let (s, p) = parse_pose_row(line).map_err(err)?;
        if t.samples.last().is_some_and(|&(last, _)| s <= last) {
            return Err(DatasetError::NonIncreasingTimestamp {
                file: path.to_path_buf(),
                line: k + 1,
                timestamp: s,
            });
        }
        t.samples.push((s, p));
    }
    Ok(t)
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HEADER}")?;
    for (t, p) in &trajectory.samples {
        write_pose_row(&mut out, *t, p)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::information_from_sigmas;

    fn fixture() -> Vec<DatasetFrameRecord> {
        vec![
            DatasetFrameRecord {
                timestamp: 0.0,
                odometry_pose: SubmapPose::identity(),
                points: vec![[1.0, 2.0, 3.0], [-0.5, 0.25, 1e-7]],
                colors: Some(vec![[255, 0, 7], [1, 2, 3]]),
            },
            DatasetFrameRecord {
                timestamp: 0.1,
                odometry_pose: SubmapPose::new(0.1, 0.2, 1.0 / 3.0, -3.0),
                points: vec![],
                colors: None,
            },
            DatasetFrameRecord {
                timestamp: 0.30000000000000004,
                odometry_pose: SubmapPose::new(1e-300, -2.5, 0.0, std::f64::consts::PI),
                points: vec![[f32::MIN_POSITIVE, f32::MAX, -0.0]],
                colors: None,
            },
        ]
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let frames = fixture();
        let gt: Trajectory = frames.iter().map(|f| (f.timestamp, f.odometry_pose)).collect();
        let loops = vec![PoseGraphEdge::loop_closure(
            0,
            2,
            SubmapPose::new(0.3, 0.1, 0.0, 0.2),
            information_from_sigmas(0.02, 0.005),
        )];
        write_dataset(dir.path(), &frames, Some(&loops), Some(&gt)).unwrap();
        let back: Vec<_> = read_dataset(dir.path()).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in back.iter().zip(&frames) {
            assert_eq!(a.timestamp.to_bits(), b.timestamp.to_bits());
            assert_eq!(a.odometry_pose.to_array().map(f64::to_bits), b.odometry_pose.to_array().map(f64::to_bits));
            let bits = |p: &Vec<[f32; 3]>| p.iter().map(|q| q.map(f32::to_bits)).collect::<Vec<_>>();
            assert_eq!(bits(&a.points), bits(&b.points));
            assert_eq!(a.colors, b.colors);
        }
        assert_eq!(read_loops(dir.path()).unwrap(), loops);
        assert_eq!(read_trajectory(&dir.path().join("ground_truth.csv")).unwrap(), gt);
    }

    #[test]
    fn handwritten_fixture() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("frames")).unwrap();
        fs::write(dir.path().join("poses.csv"), "timestamp, x, y, z, yaw\n0.5,1,2,3,0.25\n\n1.0,0,0,0,0\n1.5,-1,0,0,-1\n").unwrap();
        for (k, n) in [1u32, 2, 0].into_iter().enumerate() {
            let mut b = n.to_le_bytes().to_vec();
            for i in 0..3 * n {
                b.extend_from_slice(&(i as f32 * 0.5).to_le_bytes());
            }
            fs::write(frame_path(dir.path(), k), b).unwrap();
        }
        let frames: Vec<_> = read_dataset(dir.path()).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(frames.len(), 3);
        assert_eq!(frames[0].timestamp, 0.5);
        assert_eq!(frames[0].odometry_pose, SubmapPose::new(1.0, 2.0, 3.0, 0.25));
        assert_eq!(frames[0].points, vec![[0.0, 0.5, 1.0]]);
        assert_eq!(frames[1].points, vec![[0.0, 0.5, 1.0], [1.5, 2.0, 2.5]]);
        assert!(frames[2].points.is_empty());
        assert!(frames.iter().all(|f| f.colors.is_none()));
        assert!(read_loops(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn empty_poses_file_is_an_empty_stream() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("poses.csv"), "").unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap().count(), 0);
        fs::write(dir.path().join("poses.csv"), "timestamp,x,y,z,yaw\n").unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn reports_errors_and_keeps_going() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(DatasetError::MissingFile(_))));
        fs::create_dir_all(dir.path().join("frames")).unwrap();
        fs::write(
            dir.path().join("poses.csv"),
            "timestamp,x,y,z,yaw\n0,0,0,0,0\n1,0,zero,0,0\n0,0,0,0,0\n2,0,0,0,0\n3,0,0,0,0\n",
        )
        .unwrap();
        fs::write(frame_path(dir.path(), 0), 2u32.to_le_bytes()).unwrap();
        fs::write(frame_path(dir.path(), 3), 0u32.to_le_bytes()).unwrap();
        let items: Vec<_> = read_dataset(dir.path()).unwrap().collect();
        assert_eq!(items.len(), 5);
        assert!(matches!(items[0], Err(DatasetError::CountMismatch { expected: 2, actual: 0, .. })));
        assert!(matches!(items[1], Err(DatasetError::Parse { line: 3, .. })));
        assert!(matches!(items[2], Err(DatasetError::NonIncreasingTimestamp { line: 4, .. })));
        assert!(items[3].is_ok());
        assert!(matches!(items[4], Err(DatasetError::MissingFile(_))));
    }

    #[test]
    fn writer_rejects_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(dir.path()).unwrap();
        let mut f = fixture().remove(0);
        w.write_frame(&f).unwrap();
        assert!(w.write_frame(&f).is_err());
        f.timestamp = 1.0;
        f.colors = Some(vec![]);
        assert!(matches!(w.write_frame(&f), Err(DatasetError::ColorCountMismatch { .. })));
    }
}
