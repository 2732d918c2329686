//! Pinhole camera transforms and the ground-plane depth prior.
//!
//! Coordinates follow the platform convention: the platform frame is y-up
//! with the camera platform at `y = 0` and the ground plane at `y = -H`.
//! Camera frames are x-right, y-down, z-forward. A pose `(R, T)` maps
//! platform-frame points into the camera frame as `p_cam = R * p + T`, and
//! depths are camera-frame z values.
//!
//! Converting to the shared world frame (ground at `y = 0`) only shifts the
//! vertical coordinate by `+H`; horizontal coordinates are shared.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for orthonormality and determinant checks on rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let intr = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Calibration("non-finite intrinsics".into()));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Calibration(format!(
                "focal lengths must be positive (fx={}, fy={}); K is not invertible",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::Calibration(format!(
                "cx={} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::Calibration(format!(
                "cy={} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }
}

/// Extrinsic pose and altitude of a platform camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    /// Platform-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// Platform-to-camera translation in meters.
    pub translation: Vector3<f64>,
    /// Altitude above the ground plane in meters.
    pub altitude: f64,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>, altitude: f64) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
            altitude,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity(altitude: f64) -> Result<Self> {
        Self::new(Matrix3::identity(), Vector3::zeros(), altitude)
    }

    /// Builds a pose from a unit quaternion `(w, x, y, z)` for the rotation.
    pub fn from_quaternion(q: [f64; 4], translation: Vector3<f64>, altitude: f64) -> Result<Self> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Calibration(format!(
                "quaternion norm {norm} is not 1"
            )));
        }
        let rot = UnitQuaternion::from_quaternion(quat).to_rotation_matrix();
        Self::new(*rot.matrix(), translation, altitude)
    }

    /// Camera at platform-frame position `eye` looking at `target`.
    ///
    /// `eye` normally has `y = 0` (the platform itself); `target` is usually
    /// a ground point at `y = -altitude`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, altitude: f64) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Calibration("eye and target coincide".into()))?;
        let up = Vector3::y();
        let right = match forward.cross(&up).try_normalize(1e-9) {
            Some(r) => r,
            // Looking straight down or up: anchor the image x-axis on world -x.
            None => forward.cross(&Vector3::z()).normalize(),
        };
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation, altitude)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().any(|v| !v.is_finite()) || self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Calibration("non-finite pose".into()));
        }
        let ortho_err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho_err > ROTATION_TOLERANCE {
            return Err(Error::Calibration(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {ortho_err:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(Error::Calibration(format!("rotation determinant {det} != 1")));
        }
        if !(self.altitude > 0.0 && self.altitude.is_finite()) {
            return Err(Error::Calibration(format!(
                "altitude must be positive, got {}",
                self.altitude
            )));
        }
        Ok(())
    }

    /// Camera center in the platform frame.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

/// Precomputed `M = R⁻¹K⁻¹` and `N = R⁻¹(−T)` for back-projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionCache {
    pub m: Matrix3<f64>,
    pub n: Vector3<f64>,
}

pub fn build_projection_cache(intr: &CameraIntrinsics, pose: &CameraPose) -> Result<ProjectionCache> {
    intr.validate()?;
    pose.validate()?;
    let k_inv = intr
        .matrix()
        .try_inverse()
        .ok_or_else(|| Error::Calibration("intrinsic matrix is singular".into()))?;
    // R is orthonormal, so its inverse is the transpose.
    let r_inv = pose.rotation.transpose();
    Ok(ProjectionCache {
        m: r_inv * k_inv,
        n: r_inv * (-pose.translation),
    })
}

/// Result of the ground-plane depth prior for one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthBound {
    /// Depth (camera z) at which the pixel's ray meets the ground, or `d_max`.
    pub depth: f64,
    /// Set when the ray does not meet the ground in front of the camera.
    pub clamped: bool,
}

/// Horizon handling for [`ProjectionCache::depth_upper_bound`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthPrior {
    /// Depth reported for rays at or above the horizon (meters).
    pub d_max: f64,
    /// Smallest denominator magnitude treated as a ground-hitting ray.
    pub epsilon: f64,
}

impl Default for DepthPrior {
    fn default() -> Self {
        Self {
            d_max: 300.0,
            epsilon: 1e-9,
        }
    }
}

impl ProjectionCache {
    /// Unnormalized ray direction `M·(u, v, 1)`; its camera-frame z is 1.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        self.m * Vector3::new(u, v, 1.0)
    }

    /// `M·(u, v, 1)·d + N`.
    pub fn pixel_to_world(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        self.ray_direction(u, v) * d + self.n
    }

    /// Depth at which the ray through `(u, v)` meets the plane `y = -altitude`.
    pub fn depth_upper_bound(&self, u: f64, v: f64, altitude: f64, prior: &DepthPrior) -> DepthBound {
        let m = &self.m;
        let denom = m[(1, 0)] * u + m[(1, 1)] * v + m[(1, 2)];
        let clamped = DepthBound {
            depth: prior.d_max,
            clamped: true,
        };
        if denom.abs() < prior.epsilon {
            return clamped;
        }
        let depth = (-altitude - self.n[1]) / denom;
        if depth <= 0.0 || !depth.is_finite() {
            return clamped;
        }
        DepthBound {
            depth,
            clamped: false,
        }
    }
}

/// Projects a platform-frame point to `(u, v, depth)`.
pub fn world_to_pixel(p: &Vector3<f64>, intr: &CameraIntrinsics, pose: &CameraPose) -> Result<Vector3<f64>> {
    let cam = pose.rotation * p + pose.translation;
    if cam.z <= 0.0 {
        return Err(Error::NotVisible { depth: cam.z });
    }
    Ok(Vector3::new(
        intr.fx * cam.x / cam.z + intr.cx,
        intr.fy * cam.y / cam.z + intr.cy,
        cam.z,
    ))
}

/// On-disk calibration record for one platform.
///
/// Exactly one of `rotation` (9 row-major floats) or `quaternion`
/// (`w, x, y, z`) must be present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<[f64; 9]>,
    #[serde(rename = "q", default, skip_serializing_if = "Option::is_none")]
    pub quaternion: Option<[f64; 4]>,
    #[serde(rename = "T")]
    pub translation: [f64; 3],
    #[serde(rename = "H")]
    pub altitude: f64,
}

impl CalibrationRecord {
    pub fn from_camera(intr: &CameraIntrinsics, pose: &CameraPose) -> Self {
        let r = &pose.rotation;
        Self {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            rotation: Some([
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ]),
            quaternion: None,
            translation: [pose.translation.x, pose.translation.y, pose.translation.z],
            altitude: pose.altitude,
        }
    }

    pub fn to_camera(&self) -> Result<(CameraIntrinsics, CameraPose)> {
        let intr = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)?;
        let t = Vector3::from(self.translation);
        let pose = match (&self.rotation, &self.quaternion) {
            (Some(r), None) => CameraPose::new(Matrix3::from_row_slice(r), t, self.altitude)?,
            (None, Some(q)) => CameraPose::from_quaternion(*q, t, self.altitude)?,
            _ => {
                return Err(Error::Calibration(
                    "exactly one of R or q must be given".into(),
                ))
            }
        };
        Ok((intr, pose))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("calibration record serializes")
    }
}

/// Independent ground-intersection oracle used to validate the depth prior.
///
/// Marches the pixel ray from the camera center with doubling steps until it
/// crosses `y = -altitude`, then bisects the bracket to machine precision.
/// Returns `None` when the ray never descends.
pub fn ray_march_ground_depth(
    intr: &CameraIntrinsics,
    pose: &CameraPose,
    u: f64,
    v: f64,
) -> Option<f64> {
    let center = pose.camera_center();
    let dir_cam = Vector3::new((u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0);
    let dir = pose.rotation.transpose() * dir_cam;
    let plane = -pose.altitude;
    let height_at = |t: f64| center.y + dir.y * t;
    if height_at(0.0) <= plane || dir.y >= 0.0 {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while height_at(hi) > plane {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if height_at(mid) > plane {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometryCheckReport {
    pub trials: usize,
    /// Trials whose ray met the ground and were compared against the oracle.
    pub compared: usize,
    /// Trials whose ray missed the ground; all of these must be clamped.
    pub horizon_rays: usize,
    pub horizon_violations: usize,
    pub max_relative_error: f64,
    /// `(trial index, u, v, altitude, relative error)` of the worst comparison.
    pub worst: Option<(usize, f64, f64, f64, f64)>,
}

impl GeometryCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.horizon_violations == 0 && self.max_relative_error < tolerance
    }
}

/// Compares the closed-form depth prior with [`ray_march_ground_depth`] over
/// random oblique poses and pixels.
pub fn geometry_check(trials: usize, seed: u64) -> GeometryCheckReport {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let prior = DepthPrior::default();
    let mut report = GeometryCheckReport {
        trials,
        compared: 0,
        horizon_rays: 0,
        horizon_violations: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    let intr = CameraIntrinsics::new(800.0, 800.0, 352.0, 128.0, 704, 256)
        .expect("static intrinsics are valid");
    for trial in 0..trials {
        let altitude = rng.random_range(10.0..150.0);
        let eye = Vector3::new(rng.random_range(-5.0..5.0), 0.0, rng.random_range(-5.0..5.0));
        // Look somewhere between straight down and slightly above the horizon.
        let pitch = rng.random_range(-0.2..1.5_f64);
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let forward = Vector3::new(yaw.cos() * pitch.cos(), -pitch.sin(), yaw.sin() * pitch.cos());
        let pose = match CameraPose::look_at(eye, eye + forward, altitude) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let cache = build_projection_cache(&intr, &pose).expect("validated pose");
        let u = rng.random_range(0.0..intr.width as f64);
        let v = rng.random_range(0.0..intr.height as f64);
        let bound = cache.depth_upper_bound(u, v, altitude, &prior);
        match ray_march_ground_depth(&intr, &pose, u, v) {
            Some(expected) if expected.is_finite() && expected > 0.0 && !bound.clamped => {
                let rel = (bound.depth - expected).abs() / expected;
                report.compared += 1;
                if rel > report.max_relative_error || report.worst.is_none() {
                    report.max_relative_error = report.max_relative_error.max(rel);
                    report.worst = Some((trial, u, v, altitude, rel));
                }
            }
            Some(_) => {
                // Near-grazing ray the prior clamped although it descends;
                // only acceptable when the denominator is below epsilon.
                let denom = (cache.m.row(1) * Vector3::new(u, v, 1.0))[0];
                if denom.abs() >= prior.epsilon {
                    report.horizon_violations += 1;
                }
                report.horizon_rays += 1;
            }
            None => {
                report.horizon_rays += 1;
                if !bound.clamped {
                    report.horizon_violations += 1;
                }
            }
        }
    }
    report
}
