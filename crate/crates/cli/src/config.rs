//! Flat `key = value` configuration with dotted sections.
//!
//! One entry per line, `#` starts a comment. Lists are comma separated.
//! Track and speed elements use colon-separated fields, entries separated
//! by `;`:
//!
//! ```text
//! seed = 1
//! path = straight:150; arc:1500:7; straight:250
//! profile = ramp:0:14:10; hold:14:60
//! imu.rate_hz = 300
//! estimator.mode = stereo-inertial
//! ```
//!
//! Arc angles are in degrees, signed, positive to the left.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use railodo_core::estimator::{EstimatorConfig, Mode};
use railodo_core::evaluation::EvalConfig;
use railodo_core::simulator::{
    AliasingSpec, CalibrationPerturbation, ImuSpec, PathSpec, ScenarioConfig, SpeedProfileSpec,
};
use railodo_core::{ImuNoise, PixelRect, Pose};

use crate::CliError;

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key/value file. Keys are looked up once; [`KeyValues::finish`]
/// reports any key in an owned section that nothing consumed.
#[derive(Clone, Debug)]
pub struct KeyValues {
    source: String,
    entries: BTreeMap<String, Entry>,
    used: std::cell::RefCell<Vec<String>>,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Input(format!("{source}:{}: expected 'key = value', found '{line}'", i + 1)));
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(CliError::Input(format!("{source}:{}: invalid key '{key}'", i + 1)));
            }
            let entry = Entry { value: value.trim().to_string(), line: i + 1 };
            if let Some(prev) = entries.insert(key.to_string(), entry) {
                return Err(CliError::Input(format!(
                    "{source}:{}: key '{key}' already set on line {}",
                    i + 1,
                    prev.line
                )));
            }
        }
        Ok(Self { source: source.to_string(), entries, used: Default::default() })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().push(key.to_string());
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn error(&self, key: &str, what: &str) -> CliError {
        let line = self.entries.get(key).map_or(0, |e| e.line);
        CliError::Input(format!("{}:{line}: key '{key}': {what}", self.source))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| self.error(key, &format!("cannot parse '{v}'"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?
            .ok_or_else(|| CliError::Input(format!("{}: missing required key '{key}'", self.source)))
    }

    pub fn set<T: FromStr>(&self, key: &str, target: &mut T) -> Result<(), CliError> {
        if let Some(v) = self.get(key)? {
            *target = v;
        }
        Ok(())
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some).map_err(|m| self.error(key, &m)),
        }
    }

    fn vector(&self, key: &str) -> Result<Option<Vector3<f64>>, CliError> {
        match self.list::<f64>(key)? {
            None => Ok(None),
            Some(v) if v.len() == 3 => Ok(Some(Vector3::new(v[0], v[1], v[2]))),
            Some(_) => Err(self.error(key, "expected three comma-separated numbers")),
        }
    }

    fn with<T>(&self, key: &str, f: impl FnOnce(&str) -> Result<T, String>) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => f(v).map(Some).map_err(|m| self.error(key, &m)),
        }
    }

    /// Fails on keys that belong to one of `sections` but were never read.
    /// The empty section stands for undotted keys.
    pub fn finish(&self, sections: &[&str]) -> Result<(), CliError> {
        let used = self.used.borrow();
        for (key, entry) in &self.entries {
            let section = key.split_once('.').map_or("", |(s, _)| s);
            if sections.contains(&section) && !used.iter().any(|u| u == key) {
                return Err(CliError::Input(format!("{}:{}: unknown key '{key}'", self.source, entry.line)));
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| format!("cannot parse list element '{x}'")))
        .collect()
}

pub fn parse_mask(s: &str) -> Result<PixelRect, String> {
    let v: Vec<f64> = parse_list(s)?;
    if v.len() != 4 || !(v[0] <= v[2] && v[1] <= v[3]) {
        return Err(format!("mask '{s}' must be 'u0,v0,u1,v1' with u0 <= u1 and v0 <= v1"));
    }
    Ok(PixelRect { u0: v[0], v0: v[1], u1: v[2], v1: v[3] })
}

fn fields(element: &str) -> Result<(String, Vec<f64>), String> {
    let mut parts = element.split(':').map(str::trim);
    let kind = parts.next().unwrap_or("").to_string();
    let values = parts.map(|p| p.parse().map_err(|_| format!("bad number '{p}' in '{element}'"))).collect::<Result<_, _>>()?;
    Ok((kind, values))
}

pub fn parse_path(s: &str) -> Result<PathSpec, String> {
    let mut spec = PathSpec::default();
    for element in s.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        spec = match fields(element)? {
            (k, v) if k == "straight" && v.len() == 1 => spec.straight(v[0]),
            (k, v) if k == "arc" && v.len() == 2 => spec.arc(v[0], v[1].to_radians()),
            _ => return Err(format!("path element '{element}' must be 'straight:L' or 'arc:R:DEG'")),
        };
    }
    Ok(spec)
}

pub fn parse_profile(s: &str) -> Result<SpeedProfileSpec, String> {
    let mut spec = SpeedProfileSpec::default();
    for element in s.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        spec = match fields(element)? {
            (k, v) if k == "hold" && v.len() == 2 => spec.hold(v[0], v[1]),
            (k, v) if k == "ramp" && v.len() == 3 => spec.ramp(v[0], v[1], v[2]),
            _ => return Err(format!("profile element '{element}' must be 'hold:V:T' or 'ramp:V0:V1:T'")),
        };
    }
    Ok(spec)
}

fn parse_dropouts(s: &str) -> Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| match fields(&format!("d:{x}"))? {
            (_, v) if v.len() == 2 => Ok((v[0], v[1])),
            _ => Err(format!("dropout '{x}' must be 't0:t1'")),
        })
        .collect()
}

pub const SCENARIO_SECTIONS: [&str; 7] = ["", "camera", "stereo", "imu", "landmarks", "aliasing", "calibration"];

/// Builds a scenario from the simulator keys of `kv`; `seed` is mandatory.
pub fn scenario_from(kv: &KeyValues) -> Result<ScenarioConfig, CliError> {
    let mut c = ScenarioConfig::with_seed(kv.require("seed")?);
    if let Some(p) = kv.with("path", parse_path)? {
        c.path = p;
    }
    if let Some(p) = kv.with("profile", parse_profile)? {
        c.profile = p;
    }
    kv.set("camera.rate_hz", &mut c.camera_rate_hz)?;
    kv.set("camera.fx", &mut c.intrinsics.fx)?;
    kv.set("camera.fy", &mut c.intrinsics.fy)?;
    kv.set("camera.cx", &mut c.intrinsics.cx)?;
    kv.set("camera.cy", &mut c.intrinsics.cy)?;
    kv.set("camera.width", &mut c.intrinsics.width)?;
    kv.set("camera.height", &mut c.intrinsics.height)?;
    kv.set("camera.pixel_sigma", &mut c.pixel_sigma)?;
    kv.set("stereo.baseline", &mut c.baseline)?;
    kv.set("stereo.max_range_factor", &mut c.max_range_factor)?;
    if kv.get::<bool>("imu.noiseless")?.unwrap_or(false) {
        c.imu = ImuSpec::noiseless(c.imu.rate_hz);
    }
    kv.set("imu.rate_hz", &mut c.imu.rate_hz)?;
    kv.set("imu.gyro_density", &mut c.imu.noise.gyro_density)?;
    kv.set("imu.accel_density", &mut c.imu.noise.accel_density)?;
    kv.set("imu.gyro_walk", &mut c.imu.noise.gyro_walk)?;
    kv.set("imu.accel_walk", &mut c.imu.noise.accel_walk)?;
    if let Some(b) = kv.vector("imu.gyro_bias")? {
        c.imu.initial_bias.gyro = b;
    }
    if let Some(b) = kv.vector("imu.accel_bias")? {
        c.imu.initial_bias.accel = b;
    }
    kv.set("landmarks.density", &mut c.landmark_density)?;
    kv.set("landmarks.max_range", &mut c.max_range)?;
    let mut aliasing = AliasingSpec::default();
    kv.set("aliasing.period", &mut aliasing.period)?;
    kv.set("aliasing.mismatch_prob", &mut aliasing.mismatch_prob)?;
    c.aliasing = aliasing;
    if let Some(d) = kv.with("dropouts", parse_dropouts)? {
        c.dropouts = d;
    }
    c.mask = kv.with("mask", parse_mask)?;
    let mut cal = CalibrationPerturbation::default();
    if let Some(r) = kv.vector("calibration.rotation_deg")? {
        cal.rotation = r.map(f64::to_radians);
    }
    if let Some(t) = kv.vector("calibration.translation")? {
        cal.translation = t;
    }
    c.calibration = cal;
    kv.finish(&SCENARIO_SECTIONS)?;
    c.validate().map_err(|e| CliError::Input(format!("{}: {e}", kv.source)))?;
    Ok(c)
}

/// Estimator settings from the `estimator.` keys, defaults elsewhere.
pub fn estimator_from(kv: &KeyValues) -> Result<EstimatorConfig, CliError> {
    let mode: Mode = kv.get("estimator.mode")?.unwrap_or(Mode::StereoInertial);
    let mut c = EstimatorConfig::with_mode(mode);
    kv.set("estimator.window_size", &mut c.window_size)?;
    kv.set("estimator.max_iterations", &mut c.max_iterations)?;
    kv.set("estimator.huber_px", &mut c.huber_px)?;
    kv.set("estimator.depth_weight", &mut c.depth_weight)?;
    kv.set("estimator.depth_cutoff_factor", &mut c.depth_cutoff_factor)?;
    kv.set("estimator.pixel_sigma", &mut c.pixel_sigma)?;
    kv.set("estimator.max_features", &mut c.max_features)?;
    kv.set("estimator.min_parallax_deg", &mut c.min_parallax_deg)?;
    kv.set("estimator.velocity_prior_sigma", &mut c.velocity_prior_sigma)?;
    kv.set("estimator.gyro_bias_prior_sigma", &mut c.gyro_bias_prior_sigma)?;
    kv.set("estimator.accel_bias_prior_sigma", &mut c.accel_bias_prior_sigma)?;
    if let Some(m) = kv.with("estimator.mask", parse_mask)? {
        c.mask = Some(m);
    }
    kv.finish(&["estimator"])?;
    c.validate().map_err(|e| CliError::Input(format!("{}: {e}", kv.source)))?;
    Ok(c)
}

pub fn evaluation_from(kv: &KeyValues) -> Result<EvalConfig, CliError> {
    let mut c = EvalConfig::default();
    if let Some(l) = kv.list("evaluation.segment_lengths")? {
        c.segment_lengths = l;
    }
    kv.set("evaluation.max_dt", &mut c.max_dt)?;
    kv.set("evaluation.align_fraction", &mut c.align_fraction)?;
    kv.finish(&["evaluation"])?;
    Ok(c)
}

/// Sensor description written next to a simulated log: everything the
/// estimator needs that is not a measurement stream.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorInfo {
    pub intrinsics: railodo_core::CameraIntrinsics,
    pub rig: railodo_core::StereoRig,
    pub body_cam0: Pose,
    pub imu_noise: ImuNoise,
    pub imu_rate_hz: f64,
    pub camera_rate_hz: f64,
    /// Initial velocity in the first body frame.
    pub initial_velocity: Vector3<f64>,
}

fn pose_text(p: &Pose) -> String {
    let q = p.rotation.quaternion();
    let t = p.translation;
    format!("{},{},{},{},{},{},{}", t.x, t.y, t.z, q.i, q.j, q.k, q.w)
}

fn parse_pose(s: &str) -> Result<Pose, String> {
    let v: Vec<f64> = parse_list(s)?;
    if v.len() != 7 {
        return Err("expected 'tx,ty,tz,qx,qy,qz,qw'".into());
    }
    let q = Quaternion::new(v[6], v[3], v[4], v[5]);
    if (q.norm() - 1.0).abs() > 1e-6 {
        return Err("quaternion is not unit".into());
    }
    Ok(Pose::new(UnitQuaternion::new_normalize(q), Vector3::new(v[0], v[1], v[2])))
}

impl SensorInfo {
    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let n = &self.imu_noise;
        let v = &self.initial_velocity;
        [
            format!("camera.fx = {}", k.fx),
            format!("camera.fy = {}", k.fy),
            format!("camera.cx = {}", k.cx),
            format!("camera.cy = {}", k.cy),
            format!("camera.width = {}", k.width),
            format!("camera.height = {}", k.height),
            format!("camera.rate_hz = {}", self.camera_rate_hz),
            "# body-from-cam0 and cam0-from-cam1 as tx,ty,tz,qx,qy,qz,qw".into(),
            format!("camera.body_cam0 = {}", pose_text(&self.body_cam0)),
            format!("stereo.cam0_cam1 = {}", pose_text(&self.rig.t_cam0_cam1)),
            format!("imu.rate_hz = {}", self.imu_rate_hz),
            format!("imu.gyro_density = {}", n.gyro_density),
            format!("imu.accel_density = {}", n.accel_density),
            format!("imu.gyro_walk = {}", n.gyro_walk),
            format!("imu.accel_walk = {}", n.accel_walk),
            format!("initial.velocity = {},{},{}", v.x, v.y, v.z),
        ]
        .join("\n")
            + "\n"
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self, CliError> {
        let intrinsics = railodo_core::CameraIntrinsics::new(
            kv.require("camera.fx")?,
            kv.require("camera.fy")?,
            kv.require("camera.cx")?,
            kv.require("camera.cy")?,
            kv.require("camera.width")?,
            kv.require("camera.height")?,
        )
        .map_err(|e| CliError::Input(format!("{}: {e}", kv.source)))?;
        let pose = |key: &str| kv.with(key, parse_pose)?.ok_or_else(|| kv.error(key, "missing"));
        let rig = railodo_core::StereoRig::new(pose("stereo.cam0_cam1")?)
            .map_err(|e| CliError::Input(format!("{}: {e}", kv.source)))?;
        let info = Self {
            intrinsics,
            rig,
            body_cam0: pose("camera.body_cam0")?,
            imu_noise: ImuNoise {
                gyro_density: kv.require("imu.gyro_density")?,
                accel_density: kv.require("imu.accel_density")?,
                gyro_walk: kv.require("imu.gyro_walk")?,
                accel_walk: kv.require("imu.accel_walk")?,
            },
            imu_rate_hz: kv.require("imu.rate_hz")?,
            camera_rate_hz: kv.require("camera.rate_hz")?,
            initial_velocity: kv.vector("initial.velocity")?.ok_or_else(|| kv.error("initial.velocity", "missing"))?,
        };
        kv.finish(&["camera", "stereo", "imu", "initial"])?;
        Ok(info)
    }
}
