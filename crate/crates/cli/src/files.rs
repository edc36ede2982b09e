//! Plain-text data files: whitespace-separated columns, `#` comments.
//!
//! | file             | columns                                        |
//! |------------------|------------------------------------------------|
//! | trajectory       | `timestamp tx ty tz qx qy qz qw`               |
//! | `imu.txt`        | `timestamp gx gy gz ax ay az`                  |
//! | `frames.txt`     | `frame_id timestamp`                           |
//! | `observations.txt` | `frame_ts frame_id cam_id landmark_id u v [depth]` |
//!
//! Numbers are written in shortest round-trip form, so reading a file back
//! reproduces the values exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};
use railodo_core::simulator::{Frame, Observation};
use railodo_core::{ImuSample, Pose};

use crate::CliError;

pub const IMU_FILE: &str = "imu.txt";
pub const FRAMES_FILE: &str = "frames.txt";
pub const OBSERVATIONS_FILE: &str = "observations.txt";
pub const SENSORS_FILE: &str = "sensors.conf";
pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// Data lines of `text` split into numeric columns, with 1-based line numbers.
fn rows<'a>(text: &'a str, source: &'a str) -> impl Iterator<Item = Result<(usize, Vec<f64>), CliError>> + 'a {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            return None;
        }
        let parsed: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        Some(
            parsed
                .map(|v| (i + 1, v))
                .map_err(|_| CliError::Input(format!("{source}:{}: non-numeric field in '{line}'", i + 1))),
        )
    })
}

fn expect_columns(source: &str, line: usize, v: &[f64], allowed: &[usize]) -> Result<(), CliError> {
    if allowed.contains(&v.len()) {
        Ok(())
    } else {
        Err(CliError::Input(format!("{source}:{line}: expected {allowed:?} columns, found {}", v.len())))
    }
}

pub fn format_trajectory(samples: &[(f64, Pose)]) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for (t, p) in samples {
        let q = p.rotation.quaternion();
        let x = p.translation;
        let _ = writeln!(s, "{t} {} {} {} {} {} {} {}", x.x, x.y, x.z, q.i, q.j, q.k, q.w);
    }
    s
}

pub fn parse_trajectory(text: &str, source: &str) -> Result<Vec<(f64, Pose)>, CliError> {
    rows(text, source)
        .map(|r| {
            let (line, v) = r?;
            expect_columns(source, line, &v, &[8])?;
            let q = Quaternion::new(v[7], v[4], v[5], v[6]);
            if !(q.norm() > 0.5) {
                return Err(CliError::Input(format!("{source}:{line}: quaternion far from unit")));
            }
            let rotation = if (q.norm() - 1.0).abs() < 1e-12 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::new_normalize(q)
            };
            Ok((v[0], Pose::new(rotation, Vector3::new(v[1], v[2], v[3]))))
        })
        .collect()
}

pub fn format_imu(samples: &[ImuSample]) -> String {
    let mut s = String::from("# timestamp gx gy gz ax ay az\n");
    for m in samples {
        let (g, a) = (m.gyro, m.accel);
        let _ = writeln!(s, "{} {} {} {} {} {} {}", m.timestamp, g.x, g.y, g.z, a.x, a.y, a.z);
    }
    s
}

pub fn parse_imu(text: &str, source: &str) -> Result<Vec<ImuSample>, CliError> {
    rows(text, source)
        .map(|r| {
            let (line, v) = r?;
            expect_columns(source, line, &v, &[7])?;
            Ok(ImuSample { timestamp: v[0], gyro: Vector3::new(v[1], v[2], v[3]), accel: Vector3::new(v[4], v[5], v[6]) })
        })
        .collect()
}

pub fn format_frames(frames: &[Frame]) -> String {
    let mut s = String::from("# frame_id timestamp\n");
    for f in frames {
        let _ = writeln!(s, "{} {}", f.id, f.timestamp);
    }
    s
}

fn index(source: &str, line: usize, x: f64) -> Result<u64, CliError> {
    if x >= 0.0 && x.fract() == 0.0 && x < 9.0e15 {
        Ok(x as u64)
    } else {
        Err(CliError::Input(format!("{source}:{line}: expected a non-negative integer, found {x}")))
    }
}

pub fn parse_frames(text: &str, source: &str) -> Result<Vec<Frame>, CliError> {
    let frames: Vec<Frame> = rows(text, source)
        .map(|r| {
            let (line, v) = r?;
            expect_columns(source, line, &v, &[2])?;
            Ok(Frame { id: index(source, line, v[0])? as usize, timestamp: v[1] })
        })
        .collect::<Result<_, CliError>>()?;
    if frames.iter().enumerate().any(|(i, f)| f.id != i) {
        return Err(CliError::Input(format!("{source}: frame ids must count up from 0")));
    }
    Ok(frames)
}

/// Observations carry no ground truth association; the reader sets
/// `true_landmark_id` to the reported id.
pub fn format_observations(obs: &[Observation]) -> String {
    let mut s = String::from("# frame_ts frame_id cam_id landmark_id u v [depth]\n");
    for o in obs {
        let _ = write!(s, "{} {} {} {} {} {}", o.timestamp, o.frame_id, o.camera, o.landmark_id, o.pixel.x, o.pixel.y);
        if let Some(d) = o.depth {
            let _ = write!(s, " {d}");
        }
        s.push('\n');
    }
    s
}

pub fn parse_observations(text: &str, source: &str) -> Result<Vec<Observation>, CliError> {
    rows(text, source)
        .map(|r| {
            let (line, v) = r?;
            expect_columns(source, line, &v, &[6, 7])?;
            let camera = index(source, line, v[2])?;
            if camera > 1 {
                return Err(CliError::Input(format!("{source}:{line}: camera id must be 0 or 1")));
            }
            let id = index(source, line, v[3])?;
            Ok(Observation {
                frame_id: index(source, line, v[1])? as usize,
                timestamp: v[0],
                camera: camera as u8,
                landmark_id: id,
                true_landmark_id: id,
                pixel: Vector2::new(v[4], v[5]),
                depth: v.get(6).copied(),
            })
        })
        .collect()
}
